"""One-round coordinator/worker execution over shards.

Each worker receives exactly one shard, samples its subposterior, and
returns a compact summary: Gaussian moments, a local log evidence, and in
conditional mode the per-draw Gaussian full conditionals.  Workers never
see another shard's rows and never exchange messages; the coordinator
fans out, waits, and combines.  Approx-mode payloads are O(p^2) per worker
regardless of shard size or chain length; conditional-mode payloads grow
as O(N p^2) with the chain length N.

Results serialize to a canonical JSON form (fixed key order, shortest
round-trip floats, trailing newline) so identical runs are byte-identical.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    DecodeError,
    SchemaVersionError,
    SpdError,
    WorkerError,
)
from .evidence import (
    EvidenceEstimate,
    approx_isub,
    chib_log_evidence,
    combine_evidence,
    conditional_isub,
    importance_log_evidence,
    laplace_metropolis_log_evidence,
)
from .gaussian import GaussianMoments, chol_spd
from .models import (
    Dataset,
    LinearKnownVar,
    LogisticLikelihood,
    ModelSpec,
    NormalPrior,
    Shard,
    log_alpha,
)
from .samplers import (
    ConditionalGaussianStream,
    chain_moments,
    laplace_fit,
    pg_gibbs_logistic,
    read_stream,
    rwmh_chain,
    subposterior_closure,
    write_stream,
)

SCHEMA_VERSION = 1

MODES = ("approx", "conditional", "exact_oracle")
EVIDENCE_METHODS = ("chib", "importance", "laplace")

# sub-role indices for per-worker seed derivation
_ROLE_SAMPLER = 0
_ROLE_EVIDENCE = 1


def worker_seed(master_seed: int, shard_id: int) -> int:
    """Stable per-shard seed; adding shards never perturbs existing ones."""
    return derived_seed(master_seed, shard_id, _ROLE_SAMPLER)


def derived_seed(master_seed: int, shard_id: int, role: int) -> int:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(shard_id), int(role)))
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass
class RunConfig:
    """Knobs shared by every worker in a run."""

    mode: str = "approx"
    evidence_method: str = "importance"
    n_samples: int = 10_000
    burn_in: int = 2_000
    evidence_samples: int = 10_000
    master_seed: int = 0
    parallelism: int = 1
    stream_dir: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.evidence_method not in EVIDENCE_METHODS:
            raise ConfigurationError(
                f"unknown evidence method {self.evidence_method!r}; "
                f"choose from {EVIDENCE_METHODS}"
            )
        if self.mode == "conditional" and self.evidence_method != "chib":
            raise ConfigurationError("conditional mode uses the chib estimator")
        if self.mode == "approx" and self.evidence_method == "chib":
            raise ConfigurationError(
                "the chib estimator needs conditional mode (PG-Gibbs draws)"
            )
        if self.parallelism < 1:
            raise ConfigurationError("parallelism must be at least 1")
        if self.n_samples < 1 or self.burn_in < 0:
            raise ConfigurationError("need n_samples >= 1 and burn_in >= 0")


@dataclass
class WorkerTask:
    """Everything one worker needs; holds only its own shard."""

    shard: Shard
    model: ModelSpec
    n_splits: int
    mode: str
    n_samples: int
    burn_in: int
    evidence_method: str
    evidence_samples: int
    seed: int
    stream_path: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.mode == "conditional":
            ok = isinstance(self.model.likelihood, LogisticLikelihood) and isinstance(
                self.model.prior, NormalPrior
            )
            if not ok:
                raise ConfigurationError(
                    "conditional mode requires a logistic likelihood with a "
                    "Gaussian prior"
                )


@dataclass(eq=False)
class WorkerResult:
    """Summary a worker sends back; the only thing that leaves the shard."""

    shard_id: int
    model_id: str
    n_obs: int
    dim: int
    n_splits: int
    n_samples: int
    seed: int
    mean: np.ndarray
    cov: np.ndarray
    evidence_method: str
    log_local_evidence: float
    evidence_std_err: Optional[float]
    acceptance_rate: Optional[float] = None
    ess: Optional[float] = None
    conditional_stream_path: Optional[str] = None
    schema_version: int = SCHEMA_VERSION
    # runtime-only: the in-memory stream in conditional mode; never serialized
    stream: Optional[ConditionalGaussianStream] = field(
        default=None, repr=False, compare=False
    )

    def __eq__(self, other):
        if not isinstance(other, WorkerResult):
            return NotImplemented
        return (
            self.schema_version == other.schema_version
            and self.shard_id == other.shard_id
            and self.model_id == other.model_id
            and self.n_obs == other.n_obs
            and self.dim == other.dim
            and self.n_splits == other.n_splits
            and self.n_samples == other.n_samples
            and self.seed == other.seed
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.cov, other.cov)
            and self.evidence_method == other.evidence_method
            and self.log_local_evidence == other.log_local_evidence
            and self.evidence_std_err == other.evidence_std_err
            and self.acceptance_rate == other.acceptance_rate
            and self.ess == other.ess
            and self.conditional_stream_path == other.conditional_stream_path
        )

    def moments(self) -> GaussianMoments:
        return GaussianMoments(mean=self.mean, cov=self.cov)

    def local_estimate(self) -> EvidenceEstimate:
        method = {"laplace": "laplace_metropolis"}.get(
            self.evidence_method, self.evidence_method
        )
        return EvidenceEstimate(
            log_value=self.log_local_evidence,
            mc_std_err=self.evidence_std_err,
            method=method,
            n_samples_used=self.n_samples,
            ess=self.ess,
        )


def run_worker(task: WorkerTask) -> WorkerResult:
    """Sample one subposterior and summarize it; deterministic given the task."""
    try:
        return _run_worker_inner(task)
    except WorkerError:
        raise
    except Exception as exc:
        raise WorkerError(f"shard {task.shard.shard_id}: {exc}") from exc


def _run_worker_inner(task: WorkerTask) -> WorkerResult:
    shard = task.shard
    model = task.model
    n_splits = task.n_splits
    common = dict(
        shard_id=shard.shard_id,
        model_id=model.model_id,
        n_obs=int(shard.X.shape[0]),
        dim=model.theta_dim,
        n_splits=n_splits,
        seed=task.seed,
    )

    if task.mode == "exact_oracle":
        # analytic bypass for conjugate linear models, used to exercise the
        # protocol without Monte Carlo noise
        from .diagnostics import exact_local_evidence, exact_local_moments

        if not isinstance(model.likelihood, LinearKnownVar):
            raise ConfigurationError(
                "exact_oracle mode requires a linear likelihood with known noise"
            )
        mom = exact_local_moments(model, shard, n_splits)
        value = exact_local_evidence(model, shard, n_splits)
        return WorkerResult(
            n_samples=0,
            mean=mom.mean,
            cov=mom.cov,
            evidence_method="exact_oracle",
            log_local_evidence=float(value),
            evidence_std_err=None,
            **common,
        )

    if task.mode == "conditional":
        chain, stream = pg_gibbs_logistic(
            model,
            shard,
            n_splits,
            n_iter=task.n_samples,
            burn_in=task.burn_in,
            seed=task.seed,
        )
        mom = chain_moments(chain)
        est = chib_log_evidence(model, shard, n_splits, chain, stream)
        stream_path = None
        if task.stream_path is not None:
            write_stream(stream, task.stream_path)
            stream_path = str(task.stream_path)
        return WorkerResult(
            n_samples=chain.n_retained,
            mean=mom.mean,
            cov=mom.cov,
            evidence_method="chib",
            log_local_evidence=est.log_value,
            evidence_std_err=est.mc_std_err,
            acceptance_rate=chain.acceptance_rate,
            conditional_stream_path=stream_path,
            stream=stream,
            **common,
        )

    # approx mode: adaptive random-walk chain started at the Laplace fit
    fit = laplace_fit(model, shard, n_splits)
    target = subposterior_closure(model, shard, n_splits)
    chain = rwmh_chain(
        target,
        fit.mean,
        n_iter=task.n_samples,
        burn_in=task.burn_in,
        seed=task.seed,
        init_cov=fit.cov,
    )
    mom = chain_moments(chain)
    if task.evidence_method == "importance":
        est = importance_log_evidence(
            model,
            shard,
            n_splits,
            mom,
            n_samples=task.evidence_samples,
            seed=derived_seed_from_task(task),
        )
        ess = est.ess
    elif task.evidence_method == "laplace":
        est = laplace_metropolis_log_evidence(model, shard, n_splits, mom)
        ess = None
    else:
        raise ConfigurationError(
            f"evidence method {task.evidence_method!r} is not valid in approx mode"
        )
    return WorkerResult(
        n_samples=chain.n_retained,
        mean=mom.mean,
        cov=mom.cov,
        evidence_method=task.evidence_method,
        log_local_evidence=est.log_value,
        evidence_std_err=est.mc_std_err,
        acceptance_rate=chain.acceptance_rate,
        ess=ess,
        **common,
    )


def derived_seed_from_task(task: WorkerTask) -> int:
    # the evidence stage gets its own stream so changing the chain length
    # does not shift the importance draws
    return derived_seed(task.seed, task.shard.shard_id, _ROLE_EVIDENCE)


def make_tasks(
    data: Dataset,
    plan,
    model: ModelSpec,
    config: RunConfig,
) -> List[WorkerTask]:
    shards = plan.shards(data)
    tasks = []
    for shard in shards:
        stream_path = None
        if config.mode == "conditional" and config.stream_dir is not None:
            stream_path = f"{config.stream_dir}/cond_{shard.shard_id}.ndjson"
        tasks.append(
            WorkerTask(
                shard=shard,
                model=model,
                n_splits=plan.n_splits,
                mode=config.mode,
                n_samples=config.n_samples,
                burn_in=config.burn_in,
                evidence_method=config.evidence_method,
                evidence_samples=config.evidence_samples,
                seed=worker_seed(config.master_seed, shard.shard_id),
                stream_path=stream_path,
            )
        )
    return tasks


def run_cluster(
    data: Dataset,
    plan,
    model: ModelSpec,
    config: RunConfig,
) -> List[WorkerResult]:
    """Fan out one task per shard, fan in; exactly one result per shard.

    Workers run in a thread pool (degree ``config.parallelism``); results
    come back ordered by shard id regardless of scheduling.  Any failure
    aborts the whole run with a per-shard report.
    """
    tasks = make_tasks(data, plan, model, config)
    results: List[Optional[WorkerResult]] = [None] * len(tasks)
    failures: Dict[int, str] = {}
    if config.parallelism == 1:
        for i, task in enumerate(tasks):
            try:
                results[i] = run_worker(task)
            except WorkerError as exc:
                failures[task.shard.shard_id] = str(exc)
    else:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            futures = [pool.submit(run_worker, task) for task in tasks]
            for i, future in enumerate(futures):
                try:
                    results[i] = future.result()
                except WorkerError as exc:
                    failures[tasks[i].shard.shard_id] = str(exc)
    if failures:
        report = "; ".join(f"shard {sid}: {msg}" for sid, msg in sorted(failures.items()))
        raise WorkerError(f"{len(failures)} worker(s) failed: {report}")
    return sorted(results, key=lambda r: r.shard_id)


def _resolve_stream(result: WorkerResult) -> ConditionalGaussianStream:
    if result.stream is not None:
        return result.stream
    if result.conditional_stream_path is not None:
        return read_stream(result.conditional_stream_path)
    raise WorkerError(
        f"shard {result.shard_id}: conditional combination needs a stream, "
        "but the result carries neither an in-memory stream nor a file path"
    )


def combine_worker_results(
    model: ModelSpec,
    results: Sequence[WorkerResult],
    conditional: Optional[bool] = None,
) -> EvidenceEstimate:
    """Recombine per-shard results into the full-data log evidence.

    Conditional combination is used when every result carries a stream
    (or explicitly via ``conditional=True``); otherwise the Gaussian
    moment summaries close the integral.
    """
    if len(results) == 0:
        raise WorkerError("no worker results to combine")
    n_splits = results[0].n_splits
    ordered = sorted(results, key=lambda r: r.shard_id)
    if [r.shard_id for r in ordered] != list(range(n_splits)):
        raise WorkerError(
            f"expected shards 0..{n_splits - 1}, got {[r.shard_id for r in ordered]}"
        )
    for r in ordered:
        if r.model_id != model.model_id:
            raise WorkerError(
                f"shard {r.shard_id} result is for model {r.model_id!r}, "
                f"not {model.model_id!r}"
            )
        if r.n_splits != n_splits:
            raise WorkerError("results disagree on the split count")

    if conditional is None:
        conditional = all(
            r.stream is not None or r.conditional_stream_path is not None
            for r in ordered
        )
    locals_ = [r.local_estimate() for r in ordered]
    if conditional:
        streams = [_resolve_stream(r) for r in ordered]
        log_isub = conditional_isub(streams)
        method = "combined_conditional"
    else:
        log_isub = approx_isub([r.moments() for r in ordered])
        method = "combined_approx"
    return combine_evidence(
        log_alpha(model, n_splits), locals_, log_isub, n_splits, method=method
    )


# ---------------------------------------------------------------------------
# canonical serialization

_RESULT_KEYS = (
    "schema_version",
    "shard_id",
    "model_id",
    "n_obs",
    "dim",
    "n_splits",
    "n_samples",
    "seed",
    "mean",
    "cov_row_major",
    "log_local_evidence",
    "acceptance_rate",
    "ess",
    "conditional_stream_path",
)


def encode_worker_result(result: WorkerResult) -> bytes:
    """Canonical JSON bytes: fixed key order, repr floats, trailing newline."""
    obj = {
        "schema_version": result.schema_version,
        "shard_id": result.shard_id,
        "model_id": result.model_id,
        "n_obs": result.n_obs,
        "dim": result.dim,
        "n_splits": result.n_splits,
        "n_samples": result.n_samples,
        "seed": result.seed,
        "mean": [float(v) for v in result.mean],
        "cov_row_major": [float(v) for v in np.asarray(result.cov).ravel()],
        "log_local_evidence": {
            "method": result.evidence_method,
            "value": float(result.log_local_evidence),
            "std_err": None
            if result.evidence_std_err is None
            else float(result.evidence_std_err),
        },
        "acceptance_rate": None
        if result.acceptance_rate is None
        else float(result.acceptance_rate),
        "ess": None if result.ess is None else float(result.ess),
        "conditional_stream_path": result.conditional_stream_path,
    }
    return (json.dumps(obj, separators=(",", ":")) + "\n").encode("utf-8")


def _expect(obj, key, kinds, what):
    if key not in obj:
        raise DecodeError(f"{what} missing key {key!r}")
    value = obj[key]
    if not isinstance(value, kinds):
        raise DecodeError(f"{what} key {key!r} has wrong type {type(value).__name__}")
    return value


def decode_worker_result(payload: bytes) -> WorkerResult:
    try:
        obj = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"worker result is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise DecodeError("worker result must be a JSON object")
    version = _expect(obj, "schema_version", int, "worker result")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported schema_version {version}; this build reads {SCHEMA_VERSION}"
        )
    missing = [k for k in _RESULT_KEYS if k not in obj]
    if missing:
        raise DecodeError(f"worker result missing keys {missing}")

    shard_id = _expect(obj, "shard_id", int, "worker result")
    model_id = _expect(obj, "model_id", str, "worker result")
    n_obs = _expect(obj, "n_obs", int, "worker result")
    dim = _expect(obj, "dim", int, "worker result")
    n_splits = _expect(obj, "n_splits", int, "worker result")
    n_samples = _expect(obj, "n_samples", int, "worker result")
    seed = _expect(obj, "seed", int, "worker result")
    if n_obs < 1:
        raise DecodeError("worker result n_obs must be at least 1")
    if dim < 1:
        raise DecodeError("worker result dim must be at least 1")

    mean = _expect(obj, "mean", list, "worker result")
    cov_flat = _expect(obj, "cov_row_major", list, "worker result")
    if len(mean) != dim:
        raise DecodeError(f"mean has {len(mean)} entries, expected {dim}")
    if len(cov_flat) != dim * dim:
        raise DecodeError(
            f"cov_row_major has {len(cov_flat)} entries, expected {dim * dim}"
        )
    try:
        mean_arr = np.array([float(v) for v in mean])
        cov_arr = np.array([float(v) for v in cov_flat]).reshape(dim, dim)
    except (TypeError, ValueError) as exc:
        raise DecodeError(f"non-numeric moment entry: {exc}") from exc
    if not np.all(np.isfinite(mean_arr)) or not np.all(np.isfinite(cov_arr)):
        raise DecodeError("moments contain non-finite values")
    try:
        chol_spd(cov_arr, what="decoded covariance")
    except SpdError as exc:
        raise DecodeError(f"worker result covariance rejected: {exc}") from exc

    ev = _expect(obj, "log_local_evidence", dict, "worker result")
    for key in ("method", "value", "std_err"):
        if key not in ev:
            raise DecodeError(f"log_local_evidence missing key {key!r}")
    method = ev["method"]
    allowed = ("chib", "importance", "laplace", "exact_oracle")
    if method not in allowed:
        raise DecodeError(f"unknown local evidence method {method!r}")
    value = ev["value"]
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise DecodeError("log_local_evidence value must be a number")
    value = float(value)
    if not math.isfinite(value):
        raise DecodeError("log_local_evidence value must be finite")
    std_err = ev["std_err"]
    if std_err is not None and (
        not isinstance(std_err, (int, float)) or isinstance(std_err, bool)
    ):
        raise DecodeError("log_local_evidence std_err must be a number or null")

    acceptance = obj["acceptance_rate"]
    if acceptance is not None and not isinstance(acceptance, (int, float)):
        raise DecodeError("acceptance_rate must be a number or null")
    ess = obj["ess"]
    if ess is not None and not isinstance(ess, (int, float)):
        raise DecodeError("ess must be a number or null")
    stream_path = obj["conditional_stream_path"]
    if stream_path is not None and not isinstance(stream_path, str):
        raise DecodeError("conditional_stream_path must be a string or null")

    return WorkerResult(
        shard_id=shard_id,
        model_id=model_id,
        n_obs=n_obs,
        dim=dim,
        n_splits=n_splits,
        n_samples=n_samples,
        seed=seed,
        mean=mean_arr,
        cov=cov_arr,
        evidence_method=method,
        log_local_evidence=value,
        evidence_std_err=None if std_err is None else float(std_err),
        acceptance_rate=None if acceptance is None else float(acceptance),
        ess=None if ess is None else float(ess),
        conditional_stream_path=stream_path,
        schema_version=version,
    )


def write_worker_result(result: WorkerResult, path) -> None:
    with open(path, "wb") as handle:
        handle.write(encode_worker_result(result))


def read_worker_result(path) -> WorkerResult:
    with open(path, "rb") as handle:
        return decode_worker_result(handle.read())
