"""Command-line surface for reproducible split-evidence runs.

Subcommands cover the whole workflow: generate synthetic fixtures, plan a
data split, run a single worker by hand, combine worker result files,
drive the full pipeline in one process, run the jump sampler over feature
subsets, and sweep scenarios into a timing/accuracy report.  `worker` and
`combine` exist separately so a file-exchange deployment (workers on
different machines moving only JSON) stays operable by hand.

Every artifact a run writes is reproducible byte-for-byte from the inputs
and flags; all randomness flows from the single ``--seed`` value.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import cluster
from .diagnostics import SCENARIOS, make_synthetic
from .errors import (
    CombinationError,
    ConfigurationError,
    DecodeError,
    DomainError,
    EstimatorError,
    QuadratureError,
    SpdError,
    UnexploredModelError,
    WorkerError,
)
from .evidence import EvidenceEstimate, ModelComparison, compare_models
from .models import ModelSpec, load_csv, model_spec_from_json, model_spec_to_json, save_csv
from .rjmcmc import (
    ModelIndicator,
    distributed_log_bf,
    rjmcmc_sample,
    write_rj_output,
)
from .sharding import ShardPlan, read_plan, stratified_split, uniform_split, write_plan

CLI_MODES = ("approx", "conditional", "exact")
EVIDENCE_CHOICES = ("chib", "importance", "laplace")


@dataclass(frozen=True)
class RunConfig:
    """Validated file-level configuration for the full pipeline."""

    data: str
    models: Tuple[str, ...]
    out: str
    splits: int = 1
    strategy: str = "uniform"
    kmeans_k: int = 10
    mode: str = "approx"
    evidence: str = "importance"
    samples: int = 10_000
    burn_in: int = 2_000
    evidence_samples: int = 10_000
    seed: int = 0
    parallelism: int = 1
    verbose: bool = False

    def __post_init__(self):
        if not os.path.isfile(self.data):
            raise ConfigurationError(f"data file not found: {self.data}")
        if not self.models:
            raise ConfigurationError("at least one model file is required")
        for path in self.models:
            if not os.path.isfile(path):
                raise ConfigurationError(f"model file not found: {path}")
        if self.splits < 1:
            raise ConfigurationError("splits must be at least 1")
        if self.strategy not in ("uniform", "stratified"):
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")
        if self.mode not in CLI_MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.evidence not in EVIDENCE_CHOICES:
            raise ConfigurationError(f"unknown evidence method {self.evidence!r}")
        if not self.samples > self.burn_in >= 0:
            raise ConfigurationError("need samples > burn_in >= 0")
        if self.parallelism < 1:
            raise ConfigurationError("parallelism must be at least 1")


_CONFIG_KEYS = (
    "data",
    "models",
    "out",
    "splits",
    "strategy",
    "kmeans_k",
    "mode",
    "evidence",
    "samples",
    "burn_in",
    "evidence_samples",
    "seed",
    "parallelism",
    "verbose",
)


def _error_code(exc: Exception) -> str:
    if isinstance(exc, (ConfigurationError, DecodeError, FileNotFoundError)):
        return "E_INPUT"
    if isinstance(exc, WorkerError):
        return "E_WORKER"
    if isinstance(exc, CombinationError):
        return "E_COMBINE"
    if isinstance(exc, EstimatorError):
        return "E_ESTIMATOR"
    if isinstance(exc, (QuadratureError, SpdError)):
        return "E_NUMERIC"
    if isinstance(exc, UnexploredModelError):
        return "E_UNEXPLORED"
    if isinstance(exc, DomainError):
        return "E_DOMAIN"
    return "E_INTERNAL"


def _load_models(paths: Sequence[str]) -> List[ModelSpec]:
    models = []
    seen = set()
    for path in paths:
        with open(path) as handle:
            spec = model_spec_from_json(handle.read())
        if spec.model_id in seen:
            raise ConfigurationError(f"duplicate model id {spec.model_id!r}")
        if os.sep in spec.model_id or spec.model_id in ("", ".", ".."):
            raise ConfigurationError(f"model id {spec.model_id!r} is not a safe name")
        seen.add(spec.model_id)
        models.append(spec)
    return models


def _build_plan(data, splits: int, strategy: str, kmeans_k: int, seed: int) -> ShardPlan:
    if strategy == "uniform":
        return uniform_split(data.X.shape[0], splits, seed=seed)
    return stratified_split(data.X, data.y, splits, kmeans_k=kmeans_k, seed=seed)


def _cluster_config(cfg: RunConfig, stream_dir: Optional[str]) -> cluster.RunConfig:
    mode = "exact_oracle" if cfg.mode == "exact" else cfg.mode
    evidence = "chib" if cfg.mode == "conditional" else cfg.evidence
    return cluster.RunConfig(
        mode=mode,
        evidence_method=evidence,
        n_samples=cfg.samples,
        burn_in=cfg.burn_in,
        evidence_samples=cfg.evidence_samples,
        master_seed=cfg.seed,
        parallelism=cfg.parallelism,
        stream_dir=stream_dir,
    )


def _f(value) -> float:
    return float(value)


def _evidence_json(
    n_splits: int,
    comparison: ModelComparison,
    estimates: Sequence[EvidenceEstimate],
) -> str:
    models = {}
    for i, model_id in enumerate(comparison.model_ids):
        est = estimates[i]
        models[model_id] = {
            "log_evidence": _f(est.log_value),
            "std_err": None if est.mc_std_err is None else _f(est.mc_std_err),
            "method": est.method,
            "n_samples": int(est.n_samples_used),
            "ess": None if est.ess is None else _f(est.ess),
            "warnings": list(est.warnings),
            "log_prior_prob": _f(comparison.log_prior_probs[i]),
            "posterior_prob": _f(comparison.posterior_probs[i]),
        }
    obj = {
        "schema_version": 1,
        "n_splits": int(n_splits),
        "model_ids": list(comparison.model_ids),
        "models": models,
        "log_bf_matrix": [
            [_f(v) for v in row] for row in np.asarray(comparison.log_bf_matrix)
        ],
        "posterior_probs": [_f(v) for v in comparison.posterior_probs],
    }
    return json.dumps(obj, separators=(",", ":")) + "\n"


def _opt_float(value) -> str:
    return "" if value is None else repr(float(value))


def _write_report_csv(
    path: str,
    comparison: ModelComparison,
    estimates: Sequence[EvidenceEstimate],
    per_model_results: Dict[str, Sequence[cluster.WorkerResult]],
) -> None:
    """Tidy long-format report: one metric per row, blank where not applicable."""
    rows: List[Tuple[str, str, str, str, str]] = []
    ids = list(comparison.model_ids)
    for i, model_id in enumerate(ids):
        est = estimates[i]
        rows.append(("log_evidence", model_id, "", "", repr(_f(est.log_value))))
        rows.append(("std_err", model_id, "", "", _opt_float(est.mc_std_err)))
        rows.append(
            ("posterior_prob", model_id, "", "", repr(_f(comparison.posterior_probs[i])))
        )
    matrix = np.asarray(comparison.log_bf_matrix)
    for i, first in enumerate(ids):
        for j, second in enumerate(ids):
            if i != j:
                rows.append(("log_bf", first, second, "", repr(_f(matrix[i, j]))))
    for model_id in ids:
        for result in per_model_results.get(model_id, ()):
            sid = str(result.shard_id)
            payload = len(cluster.encode_worker_result(result))
            rows.append(("n_obs", model_id, "", sid, str(result.n_obs)))
            rows.append(
                ("acceptance_rate", model_id, "", sid, _opt_float(result.acceptance_rate))
            )
            rows.append(("ess", model_id, "", sid, _opt_float(result.ess)))
            rows.append(("payload_bytes", model_id, "", sid, str(payload)))
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["record", "model_id", "second_model_id", "shard_id", "value"])
        writer.writerows(rows)


def _print_summary(
    n_splits: int,
    label: str,
    comparison: ModelComparison,
    estimates: Sequence[EvidenceEstimate],
) -> None:
    print(f"combined over {n_splits} shard(s) [{label}]")
    for i, model_id in enumerate(comparison.model_ids):
        est = estimates[i]
        prob = _f(comparison.posterior_probs[i])
        se = "exact" if est.mc_std_err is None else f"se {est.mc_std_err:.6f}"
        print(
            f"model {model_id}: log evidence {est.log_value:.6f} "
            f"({se}) posterior prob {prob:.6f}"
        )
    best = comparison.model_ids[int(np.argmax(comparison.posterior_probs))]
    print(f"preferred model: {best}")


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_synth(args) -> int:
    data, models = make_synthetic(args.scenario, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    data_path = os.path.join(args.out, "data.csv")
    save_csv(data, data_path)
    print(f"wrote {data_path} ({data.X.shape[0]} rows, {data.X.shape[1]} features)")
    for model in models:
        path = os.path.join(args.out, f"model_{model.model_id}.json")
        with open(path, "w") as handle:
            handle.write(model_spec_to_json(model))
        print(f"wrote {path}")
    return 0


def _cmd_shard(args) -> int:
    data = load_csv(args.data)
    plan = _build_plan(data, args.splits, args.strategy, args.kmeans_k, args.seed)
    write_plan(plan, args.out)
    sizes = ",".join(str(s) for s in plan.sizes())
    print(f"wrote {args.out} ({plan.strategy} split into {plan.n_splits}: sizes {sizes})")
    return 0


def _cmd_worker(args) -> int:
    data = load_csv(args.data)
    models = _load_models([args.model])
    plan = read_plan(args.plan)
    if not 0 <= args.shard_id < plan.n_splits:
        raise ConfigurationError(
            f"shard id {args.shard_id} outside 0..{plan.n_splits - 1}"
        )
    mode = "exact_oracle" if args.mode == "exact" else args.mode
    evidence = args.evidence
    if mode == "conditional":
        evidence = "chib"
    elif evidence == "chib":
        raise ConfigurationError("the chib estimator needs conditional mode")
    stream_path = args.stream_out
    if mode == "conditional" and stream_path is None:
        stream_path = os.path.join(
            os.path.dirname(os.path.abspath(args.out)), f"cond_{args.shard_id}.ndjson"
        )
    shard = plan.shards(data)[args.shard_id]
    task = cluster.WorkerTask(
        shard=shard,
        model=models[0],
        n_splits=plan.n_splits,
        mode=mode,
        n_samples=args.samples,
        burn_in=args.burn_in,
        evidence_method=evidence,
        evidence_samples=args.evidence_samples,
        seed=cluster.worker_seed(args.seed, args.shard_id),
        stream_path=stream_path,
    )
    result = cluster.run_worker(task)
    cluster.write_worker_result(result, args.out)
    print(f"wrote {args.out} (shard {args.shard_id}, {result.n_obs} rows)")
    return 0


def _combine_results(
    models: Sequence[ModelSpec],
    results: Sequence[cluster.WorkerResult],
) -> Tuple[int, ModelComparison, List[EvidenceEstimate], Dict[str, List[cluster.WorkerResult]]]:
    by_model: Dict[str, List[cluster.WorkerResult]] = {}
    for result in results:
        by_model.setdefault(result.model_id, []).append(result)
    known = {model.model_id for model in models}
    stray = sorted(set(by_model) - known)
    if stray:
        raise ConfigurationError(f"results reference unknown model(s): {stray}")
    missing = sorted(known - set(by_model))
    if missing:
        raise ConfigurationError(f"no results for model(s): {missing}")
    estimates = []
    for model in models:
        group = sorted(by_model[model.model_id], key=lambda r: r.shard_id)
        estimates.append(cluster.combine_worker_results(model, group))
        by_model[model.model_id] = group
    n_splits = results[0].n_splits
    comparison = compare_models([m.model_id for m in models], estimates)
    return n_splits, comparison, estimates, by_model


def _cmd_combine(args) -> int:
    models = _load_models(args.model)
    results = [cluster.read_worker_result(path) for path in args.results]
    if not results:
        raise ConfigurationError("no result files given")
    n_splits, comparison, estimates, by_model = _combine_results(models, results)
    with open(args.out, "w") as handle:
        handle.write(_evidence_json(n_splits, comparison, estimates))
    if args.report is not None:
        _write_report_csv(args.report, comparison, estimates, by_model)
    _print_summary(n_splits, results[0].evidence_method, comparison, estimates)
    return 0


def _merge_run_config(args) -> RunConfig:
    merged: Dict[str, object] = {}
    if args.config is not None:
        with open(args.config) as handle:
            try:
                loaded = json.load(handle)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"config file is not valid JSON: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigurationError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(_CONFIG_KEYS))
        if unknown:
            raise ConfigurationError(f"unknown config key(s): {unknown}")
        merged.update(loaded)
    # flags override the file
    overrides = {
        "data": args.data,
        "models": tuple(args.model) if args.model else None,
        "out": args.out,
        "splits": args.splits,
        "strategy": args.strategy,
        "kmeans_k": args.kmeans_k,
        "mode": args.mode,
        "evidence": args.evidence,
        "samples": args.samples,
        "burn_in": args.burn_in,
        "evidence_samples": args.evidence_samples,
        "seed": args.seed,
        "parallelism": args.parallelism,
    }
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    if args.verbose:
        merged["verbose"] = True
    for key in ("data", "models", "out"):
        if key not in merged:
            raise ConfigurationError(f"missing required setting {key!r}")
    merged["models"] = tuple(merged["models"])
    if "evidence" not in merged:
        merged["evidence"] = (
            "chib" if merged.get("mode") == "conditional" else "importance"
        )
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ConfigurationError(f"bad config value: {exc}")


def _cmd_run(args) -> int:
    cfg = _merge_run_config(args)
    data = load_csv(cfg.data)
    models = _load_models(cfg.models)
    os.makedirs(cfg.out, exist_ok=True)
    plan = _build_plan(data, cfg.splits, cfg.strategy, cfg.kmeans_k, cfg.seed)
    write_plan(plan, os.path.join(cfg.out, "plan.json"))

    estimates: List[EvidenceEstimate] = []
    per_model_results: Dict[str, List[cluster.WorkerResult]] = {}
    sizes = plan.sizes()
    for model in models:
        model_dir = os.path.join(cfg.out, model.model_id)
        os.makedirs(model_dir, exist_ok=True)
        stream_dir = model_dir if cfg.mode == "conditional" else None
        ccfg = _cluster_config(cfg, stream_dir)
        if cfg.verbose:
            for sid in range(plan.n_splits):
                sys.stderr.write(
                    f"access model={model.model_id} shard={sid} rows={sizes[sid]}\n"
                )
        results = cluster.run_cluster(data, plan, model, ccfg)
        for result in results:
            cluster.write_worker_result(
                result, os.path.join(model_dir, f"result_{result.shard_id}.json")
            )
        estimates.append(cluster.combine_worker_results(model, results))
        per_model_results[model.model_id] = list(results)

    comparison = compare_models([m.model_id for m in models], estimates)
    with open(os.path.join(cfg.out, "evidence.json"), "w") as handle:
        handle.write(_evidence_json(plan.n_splits, comparison, estimates))
    _write_report_csv(
        os.path.join(cfg.out, "report.csv"), comparison, estimates, per_model_results
    )
    _print_summary(plan.n_splits, cfg.mode, comparison, estimates)
    return 0


def _cmd_rjmcmc(args) -> int:
    data = load_csv(args.data)
    base = _load_models([args.model])[0]
    indicators = []
    for bits in args.indicator or ():
        indicator = ModelIndicator.from_bits(bits)
        if indicator.n_features != base.dim:
            raise ConfigurationError(
                f"indicator {bits!r} does not cover {base.dim} features"
            )
        indicators.append(indicator)
    os.makedirs(args.out, exist_ok=True)
    plan = _build_plan(data, args.splits, args.strategy, args.kmeans_k, args.seed)
    write_plan(plan, os.path.join(args.out, "plan.json"))

    outputs = []
    for shard in plan.shards(data):
        out = rjmcmc_sample(
            base,
            shard,
            plan.n_splits,
            n_iter=args.samples,
            burn_in=args.burn_in,
            seed=cluster.worker_seed(args.seed, shard.shard_id),
            min_visits=args.min_visits,
        )
        write_rj_output(out, os.path.join(args.out, f"rj_result_{shard.shard_id}.json"))
        outputs.append(out)

    log_bf = {}
    for i, first in enumerate(indicators):
        for second in indicators[i + 1 :]:
            key = f"{first.bits}|{second.bits}"
            log_bf[key] = _f(
                distributed_log_bf(outputs, first, second, base, plan.n_splits)
            )
    if indicators:
        tracked = indicators
    else:
        ranked = {}
        for out in outputs:
            for indicator, count in out.visit_counts.items():
                ranked[indicator] = ranked.get(indicator, 0) + count
        tracked = sorted(ranked, key=lambda ind: (-ranked[ind], ind.bits))[:5]
    summary = {
        "schema_version": 1,
        "n_splits": plan.n_splits,
        "seed": args.seed,
        "n_iterations": args.samples,
        "burn_in": args.burn_in,
        "indicators": [ind.bits for ind in tracked],
        "visit_counts": {
            ind.bits: [out.count(ind) for out in outputs] for ind in tracked
        },
        "log_bf": log_bf,
    }
    summary_path = os.path.join(args.out, "rj_summary.json")
    with open(summary_path, "w") as handle:
        handle.write(json.dumps(summary, separators=(",", ":")) + "\n")
    print(f"wrote {summary_path}")
    for key, value in log_bf.items():
        print(f"log BF {key}: {value:.4f}")
    return 0


def _diagnose_seed(seed: int, n_splits: int, repetition: int) -> int:
    stream = np.random.SeedSequence(seed, spawn_key=(n_splits, repetition))
    return int(stream.generate_state(1, np.uint64)[0])


def _cmd_diagnose(args) -> int:
    data, models = make_synthetic(args.scenario, seed=args.seed)
    if args.model:
        wanted = set(args.model)
        known = {m.model_id for m in models}
        missing = sorted(wanted - known)
        if missing:
            raise ConfigurationError(
                f"scenario {args.scenario} has no model(s) {missing}"
            )
        models = [m for m in models if m.model_id in wanted]
    try:
        split_values = [int(tok) for tok in args.splits.split(",") if tok]
    except ValueError:
        raise ConfigurationError(f"bad --splits list {args.splits!r}")
    if not split_values or any(s < 1 for s in split_values):
        raise ConfigurationError("splits must be positive integers")
    if args.repetitions < 1:
        raise ConfigurationError("repetitions must be at least 1")

    rows = []
    for n_splits in split_values:
        for rep in range(args.repetitions):
            master = _diagnose_seed(args.seed, n_splits, rep)
            plan = uniform_split(data.X.shape[0], n_splits, seed=master)
            for model in models:
                cfg = cluster.RunConfig(
                    mode=args.mode if args.mode != "exact" else "exact_oracle",
                    evidence_method="chib"
                    if args.mode == "conditional"
                    else args.evidence,
                    n_samples=args.samples,
                    burn_in=args.burn_in,
                    evidence_samples=args.evidence_samples,
                    master_seed=master,
                    parallelism=args.parallelism,
                )
                started = time.perf_counter()
                results = cluster.run_cluster(data, plan, model, cfg)
                estimate = cluster.combine_worker_results(model, results)
                elapsed_ms = int(round((time.perf_counter() - started) * 1000))
                rows.append(
                    (
                        args.scenario,
                        model.model_id,
                        str(n_splits),
                        str(rep),
                        repr(_f(estimate.log_value)),
                        estimate.method,
                        str(elapsed_ms),
                    )
                )
    with open(args.out, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            [
                "scenario",
                "model_id",
                "n_splits",
                "repetition",
                "log_evidence",
                "method",
                "wall_time_ms",
            ]
        )
        writer.writerows(rows)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitevidence",
        description="distributed model evidence over data shards",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset and its model files")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("shard", help="plan a data split and write it to JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--splits", type=int, required=True)
    p.add_argument("--strategy", choices=("uniform", "stratified"), default="uniform")
    p.add_argument("--kmeans-k", dest="kmeans_k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_shard)

    p = sub.add_parser("worker", help="run one shard's sampler and write its result")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--shard-id", dest="shard_id", type=int, required=True)
    p.add_argument("--mode", choices=CLI_MODES, default="approx")
    p.add_argument("--evidence", choices=EVIDENCE_CHOICES, default="importance")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=2_000)
    p.add_argument("--evidence-samples", dest="evidence_samples", type=int,
                   default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stream-out", dest="stream_out", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_worker)

    p = sub.add_parser("combine", help="combine worker result files into evidence")
    p.add_argument("--model", action="append", required=True)
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--report", default=None, help="also write a report CSV here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_combine)

    p = sub.add_parser("run", help="full pipeline: shard, sample, combine, report")
    p.add_argument("--config", default=None, help="JSON file mirroring the run config")
    p.add_argument("--data", default=None)
    p.add_argument("--model", action="append", default=None)
    p.add_argument("--splits", type=int, default=None)
    p.add_argument("--strategy", choices=("uniform", "stratified"), default=None)
    p.add_argument("--kmeans-k", dest="kmeans_k", type=int, default=None)
    p.add_argument("--mode", choices=CLI_MODES, default=None)
    p.add_argument("--evidence", choices=EVIDENCE_CHOICES, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    p.add_argument("--evidence-samples", dest="evidence_samples", type=int,
                   default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--parallelism", type=int, default=None)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("rjmcmc", help="jump over feature subsets on every shard")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="base model including every feature")
    p.add_argument("--splits", type=int, default=1)
    p.add_argument("--strategy", choices=("uniform", "stratified"), default="uniform")
    p.add_argument("--kmeans-k", dest="kmeans_k", type=int, default=10)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-visits", dest="min_visits", type=int, default=500)
    p.add_argument(
        "--indicator",
        action="append",
        help="bitstring of a model to track (repeatable); pairs get Bayes factors",
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_rjmcmc)

    p = sub.add_parser("diagnose", help="sweep split counts and write a report CSV")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--splits", required=True, help="comma list, e.g. 1,2,4")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--model", action="append", default=None)
    p.add_argument("--mode", choices=CLI_MODES, default="approx")
    p.add_argument("--evidence", choices=EVIDENCE_CHOICES, default="importance")
    p.add_argument("--samples", type=int, default=2_000)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=500)
    p.add_argument("--evidence-samples", dest="evidence_samples", type=int,
                   default=2_000)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_diagnose)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        payload = {"error": {"code": _error_code(exc), "message": str(exc)}}
        sys.stderr.write(json.dumps(payload) + "\n")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
