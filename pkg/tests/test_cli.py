"""Command-line surface: artifact layout, byte-level reproducibility,
config merging, the hand-operated worker/combine flow, and structured
error reporting."""
import csv
import json
import os
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from splitevidence import cli
from splitevidence.models import (
    Dataset,
    LinearKnownVar,
    LogisticLikelihood,
    ModelSpec,
    NormalPrior,
    model_spec_from_json,
    model_spec_to_json,
    save_csv,
)
from splitevidence.sharding import read_plan


@pytest.fixture(scope="module")
def conjugate_fixture(tmp_path_factory):
    root = tmp_path_factory.mktemp("conjugate")
    code = cli.main(
        ["synth", "--scenario", "linear_conjugate", "--seed", "0", "--out", str(root)]
    )
    assert code == 0
    return {"data": str(root / "data.csv"), "model": str(root / "model_m1.json")}


@pytest.fixture(scope="module")
def logistic_fixture(tmp_path_factory):
    root = tmp_path_factory.mktemp("logistic")
    rng = np.random.default_rng(12)
    X = rng.standard_normal((300, 2))
    logits = X @ np.array([1.0, -0.5])
    y = (rng.random(300) < 1.0 / (1.0 + np.exp(-logits))).astype(float)
    data_path = root / "data.csv"
    save_csv(Dataset(X=X, y=y), data_path)
    base = ModelSpec(
        model_id="m_a",
        likelihood=LogisticLikelihood(),
        prior=NormalPrior(mean=np.zeros(2), cov=np.eye(2)),
        dim=2,
    )
    model_path = root / "model_a.json"
    model_path.write_text(model_spec_to_json(base))
    twin_path = root / "model_b.json"
    twin_path.write_text(model_spec_to_json(replace(base, model_id="m_b")))
    return {
        "data": str(data_path),
        "model": str(model_path),
        "twin": str(twin_path),
    }


def _read_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)["error"]


class TestSynthAndShard:
    def test_synth_writes_data_and_models(self, tmp_path):
        out = tmp_path / "fixtures"
        assert cli.main(
            ["synth", "--scenario", "rj_mixture", "--seed", "3", "--out", str(out)]
        ) == 0
        assert (out / "data.csv").is_file()
        for model_id in ("full", "m1", "m2", "m3"):
            assert (out / f"model_{model_id}.json").is_file()

    def test_synth_is_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            cli.main(
                ["synth", "--scenario", "linear_conjugate", "--seed", "5", "--out", str(out)]
            )
        assert (a / "data.csv").read_bytes() == (b / "data.csv").read_bytes()
        assert (a / "model_m1.json").read_bytes() == (b / "model_m1.json").read_bytes()

    def test_shard_writes_loadable_plan(self, conjugate_fixture, tmp_path):
        plan_path = tmp_path / "plan.json"
        assert cli.main(
            [
                "shard",
                "--data", conjugate_fixture["data"],
                "--splits", "4",
                "--seed", "2",
                "--out", str(plan_path),
            ]
        ) == 0
        plan = read_plan(plan_path)
        assert plan.n_splits == 4
        assert sum(plan.sizes()) == 2000

    def test_shard_stratified(self, logistic_fixture, tmp_path):
        plan_path = tmp_path / "plan.json"
        assert cli.main(
            [
                "shard",
                "--data", logistic_fixture["data"],
                "--splits", "3",
                "--strategy", "stratified",
                "--kmeans-k", "4",
                "--seed", "2",
                "--out", str(plan_path),
            ]
        ) == 0
        assert read_plan(plan_path).strategy == "stratified"


class TestRunPipeline:
    def test_exact_mode_matches_oracle(self, conjugate_fixture, tmp_path):
        from splitevidence.diagnostics import exact_evidence_conjugate_gaussian
        from splitevidence.models import design, load_csv, whole_shard

        out = tmp_path / "run"
        assert cli.main(
            [
                "run",
                "--data", conjugate_fixture["data"],
                "--model", conjugate_fixture["model"],
                "--splits", "1",
                "--mode", "exact",
                "--seed", "0",
                "--out", str(out),
            ]
        ) == 0
        report = json.loads((out / "evidence.json").read_text())
        data = load_csv(conjugate_fixture["data"])
        model = model_spec_from_json(open(conjugate_fixture["model"]).read())
        oracle = exact_evidence_conjugate_gaussian(
            design(model, whole_shard(data)),
            data.y,
            model.prior.mean,
            model.prior.cov,
            model.likelihood.noise_var,
        )
        assert report["models"]["m1"]["log_evidence"] == pytest.approx(
            oracle, abs=1e-6
        )

    def test_artifact_layout(self, conjugate_fixture, tmp_path):
        out = tmp_path / "run"
        cli.main(
            [
                "run",
                "--data", conjugate_fixture["data"],
                "--model", conjugate_fixture["model"],
                "--splits", "3",
                "--mode", "exact",
                "--seed", "1",
                "--out", str(out),
            ]
        )
        assert (out / "plan.json").is_file()
        assert (out / "evidence.json").is_file()
        assert (out / "report.csv").is_file()
        for sid in range(3):
            assert (out / "m1" / f"result_{sid}.json").is_file()

    def test_rerun_is_byte_identical(self, conjugate_fixture, tmp_path):
        out = tmp_path / "run"
        flags = [
            "run",
            "--data", conjugate_fixture["data"],
            "--model", conjugate_fixture["model"],
            "--splits", "2",
            "--mode", "approx",
            "--samples", "500",
            "--burn-in", "150",
            "--evidence-samples", "600",
            "--seed", "7",
            "--out", str(out),
        ]
        assert cli.main(flags) == 0
        first = {
            name: (out / name).read_bytes()
            for name in ("plan.json", "evidence.json", "report.csv")
        }
        first_results = {
            sid: (out / "m1" / f"result_{sid}.json").read_bytes() for sid in range(2)
        }
        assert cli.main(flags) == 0
        for name, payload in first.items():
            assert (out / name).read_bytes() == payload, name
        for sid, payload in first_results.items():
            assert (out / "m1" / f"result_{sid}.json").read_bytes() == payload

    def test_equal_models_split_posterior_mass(
        self, logistic_fixture, tmp_path, capsys
    ):
        out = tmp_path / "run"
        assert cli.main(
            [
                "run",
                "--data", logistic_fixture["data"],
                "--model", logistic_fixture["model"],
                "--model", logistic_fixture["twin"],
                "--splits", "2",
                "--mode", "approx",
                "--samples", "400",
                "--burn-in", "100",
                "--evidence-samples", "500",
                "--seed", "4",
                "--out", str(out),
            ]
        ) == 0
        report = json.loads((out / "evidence.json").read_text())
        # identical specs under two names: same seeds, same estimates
        assert report["posterior_probs"] == [0.5, 0.5]
        matrix = report["log_bf_matrix"]
        assert matrix[0][1] == -matrix[1][0]
        assert "posterior prob 0.500000" in capsys.readouterr().out

    def test_report_csv_shape(self, conjugate_fixture, tmp_path):
        out = tmp_path / "run"
        cli.main(
            [
                "run",
                "--data", conjugate_fixture["data"],
                "--model", conjugate_fixture["model"],
                "--splits", "1",
                "--mode", "exact",
                "--seed", "0",
                "--out", str(out),
            ]
        )
        with open(out / "report.csv") as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == ["record", "model_id", "second_model_id", "shard_id", "value"]
        shard_rows = [r for r in rows if r[0] == "n_obs"]
        assert len(shard_rows) == 1
        assert shard_rows[0][3] == "0"
        payload_rows = [r for r in rows if r[0] == "payload_bytes"]
        assert len(payload_rows) == 1 and int(payload_rows[0][4]) > 0

    def test_verbose_access_log_isolates_shards(self, conjugate_fixture, tmp_path, capsys):
        out = tmp_path / "run"
        assert cli.main(
            [
                "run",
                "--data", conjugate_fixture["data"],
                "--model", conjugate_fixture["model"],
                "--splits", "3",
                "--mode", "exact",
                "--seed", "0",
                "--verbose",
                "--out", str(out),
            ]
        ) == 0
        access = [
            line
            for line in capsys.readouterr().err.splitlines()
            if line.startswith("access ")
        ]
        assert len(access) == 3
        plan = read_plan(out / "plan.json")
        sizes = plan.sizes()
        for sid, line in enumerate(access):
            assert line.count("shard=") == 1
            assert f"shard={sid} " in line
            assert line.endswith(f"rows={sizes[sid]}")

    def test_config_file_with_flag_override(self, conjugate_fixture, tmp_path):
        base = {
            "data": conjugate_fixture["data"],
            "models": [conjugate_fixture["model"]],
            "splits": 2,
            "mode": "exact",
            "seed": 1,
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(base))
        out_a = tmp_path / "a"
        assert cli.main(
            ["run", "--config", str(cfg_path), "--seed", "2", "--out", str(out_a)]
        ) == 0
        out_b = tmp_path / "b"
        assert cli.main(
            [
                "run",
                "--data", conjugate_fixture["data"],
                "--model", conjugate_fixture["model"],
                "--splits", "2",
                "--mode", "exact",
                "--seed", "2",
                "--out", str(out_b),
            ]
        ) == 0
        assert (out_a / "evidence.json").read_bytes() == (
            out_b / "evidence.json"
        ).read_bytes()
        assert (out_a / "plan.json").read_bytes() == (out_b / "plan.json").read_bytes()


class TestWorkerCombineByHand:
    def test_matches_run_pipeline_approx(self, conjugate_fixture, tmp_path):
        out = tmp_path / "auto"
        flags = ["--samples", "400", "--burn-in", "100", "--evidence-samples", "500"]
        assert cli.main(
            [
                "run",
                "--data", conjugate_fixture["data"],
                "--model", conjugate_fixture["model"],
                "--splits", "2",
                "--mode", "approx",
                *flags,
                "--seed", "9",
                "--out", str(out),
            ]
        ) == 0
        hand = tmp_path / "hand"
        hand.mkdir()
        plan_path = hand / "plan.json"
        assert cli.main(
            [
                "shard",
                "--data", conjugate_fixture["data"],
                "--splits", "2",
                "--seed", "9",
                "--out", str(plan_path),
            ]
        ) == 0
        assert plan_path.read_bytes() == (out / "plan.json").read_bytes()
        results = []
        for sid in range(2):
            result_path = hand / f"result_{sid}.json"
            assert cli.main(
                [
                    "worker",
                    "--data", conjugate_fixture["data"],
                    "--model", conjugate_fixture["model"],
                    "--plan", str(plan_path),
                    "--shard-id", str(sid),
                    "--mode", "approx",
                    *flags,
                    "--seed", "9",
                    "--out", str(result_path),
                ]
            ) == 0
            results.append(str(result_path))
            assert result_path.read_bytes() == (
                out / "m1" / f"result_{sid}.json"
            ).read_bytes()
        evidence_path = hand / "evidence.json"
        assert cli.main(
            [
                "combine",
                "--model", conjugate_fixture["model"],
                "--results", *results,
                "--out", str(evidence_path),
            ]
        ) == 0
        assert evidence_path.read_bytes() == (out / "evidence.json").read_bytes()

    def test_conditional_flow_round_trips_streams(self, logistic_fixture, tmp_path):
        out = tmp_path / "auto"
        flags = ["--samples", "400", "--burn-in", "100"]
        assert cli.main(
            [
                "run",
                "--data", logistic_fixture["data"],
                "--model", logistic_fixture["model"],
                "--splits", "2",
                "--mode", "conditional",
                *flags,
                "--seed", "11",
                "--out", str(out),
            ]
        ) == 0
        assert (out / "m_a" / "cond_0.ndjson").is_file()
        assert (out / "m_a" / "cond_1.ndjson").is_file()

        hand = tmp_path / "hand"
        hand.mkdir()
        plan_path = hand / "plan.json"
        cli.main(
            [
                "shard",
                "--data", logistic_fixture["data"],
                "--splits", "2",
                "--seed", "11",
                "--out", str(plan_path),
            ]
        )
        results = []
        for sid in range(2):
            result_path = hand / f"result_{sid}.json"
            assert cli.main(
                [
                    "worker",
                    "--data", logistic_fixture["data"],
                    "--model", logistic_fixture["model"],
                    "--plan", str(plan_path),
                    "--shard-id", str(sid),
                    "--mode", "conditional",
                    *flags,
                    "--seed", "11",
                    "--out", str(result_path),
                ]
            ) == 0
            assert (hand / f"cond_{sid}.ndjson").is_file()
            results.append(str(result_path))
        evidence_path = hand / "evidence.json"
        assert cli.main(
            [
                "combine",
                "--model", logistic_fixture["model"],
                "--results", *results,
                "--out", str(evidence_path),
            ]
        ) == 0
        hand_value = json.loads(evidence_path.read_text())["models"]["m_a"][
            "log_evidence"
        ]
        auto_value = json.loads((out / "evidence.json").read_text())["models"]["m_a"][
            "log_evidence"
        ]
        # streams round-trip exactly, so the combination is bit-equal
        assert hand_value == auto_value

    def test_combine_writes_report(self, conjugate_fixture, tmp_path):
        plan_path = tmp_path / "plan.json"
        cli.main(
            [
                "shard",
                "--data", conjugate_fixture["data"],
                "--splits", "1",
                "--seed", "0",
                "--out", str(plan_path),
            ]
        )
        result_path = tmp_path / "result_0.json"
        cli.main(
            [
                "worker",
                "--data", conjugate_fixture["data"],
                "--model", conjugate_fixture["model"],
                "--plan", str(plan_path),
                "--shard-id", "0",
                "--mode", "exact",
                "--seed", "0",
                "--out", str(result_path),
            ]
        )
        report_path = tmp_path / "report.csv"
        assert cli.main(
            [
                "combine",
                "--model", conjugate_fixture["model"],
                "--results", str(result_path),
                "--report", str(report_path),
                "--out", str(tmp_path / "evidence.json"),
            ]
        ) == 0
        with open(report_path) as handle:
            rows = list(csv.reader(handle))
        assert rows[0][0] == "record"
        assert any(r[0] == "log_evidence" for r in rows)


class TestRjmcmcCommand:
    def test_writes_summary_and_is_deterministic(self, tmp_path):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((60, 2))
        y = X @ np.array([0.3, 0.2]) + rng.standard_normal(60)
        data_path = tmp_path / "data.csv"
        save_csv(Dataset(X=X, y=y), data_path)
        spec = ModelSpec(
            model_id="lin",
            likelihood=LinearKnownVar(noise_var=1.0),
            prior=NormalPrior(mean=np.zeros(2), cov=np.eye(2)),
            dim=2,
        )
        model_path = tmp_path / "model.json"
        model_path.write_text(model_spec_to_json(spec))
        out = tmp_path / "rj"
        flags = [
            "rjmcmc",
            "--data", str(data_path),
            "--model", str(model_path),
            "--splits", "2",
            "--samples", "4000",
            "--burn-in", "500",
            "--min-visits", "50",
            "--seed", "9",
            "--indicator", "11",
            "--indicator", "10",
            "--out", str(out),
        ]
        assert cli.main(flags) == 0
        summary = json.loads((out / "rj_summary.json").read_text())
        assert summary["n_splits"] == 2
        assert "11|10" in summary["log_bf"]
        assert (out / "rj_result_0.json").is_file()
        assert (out / "rj_result_1.json").is_file()
        first = (out / "rj_summary.json").read_bytes()
        assert cli.main(flags) == 0
        assert (out / "rj_summary.json").read_bytes() == first


class TestDiagnoseCommand:
    def test_writes_report_rows(self, tmp_path):
        out = tmp_path / "report.csv"
        assert cli.main(
            [
                "diagnose",
                "--scenario", "linear_conjugate",
                "--splits", "1,2",
                "--repetitions", "2",
                "--samples", "300",
                "--burn-in", "100",
                "--evidence-samples", "400",
                "--seed", "0",
                "--out", str(out),
            ]
        ) == 0
        with open(out) as handle:
            rows = list(csv.reader(handle))
        assert rows[0] == [
            "scenario",
            "model_id",
            "n_splits",
            "repetition",
            "log_evidence",
            "method",
            "wall_time_ms",
        ]
        assert len(rows) == 1 + 4
        assert {r[2] for r in rows[1:]} == {"1", "2"}
        assert all(r[5] == "combined_approx" for r in rows[1:])
        values = [float(r[4]) for r in rows[1:]]
        assert all(np.isfinite(values))


class TestErrorReporting:
    def test_missing_data_file(self, conjugate_fixture, tmp_path, capsys):
        code = cli.main(
            [
                "run",
                "--data", str(tmp_path / "nope.csv"),
                "--model", conjugate_fixture["model"],
                "--out", str(tmp_path / "out"),
            ]
        )
        assert code != 0
        error = _read_error(capsys)
        assert error["code"] == "E_INPUT"
        assert "nope.csv" in error["message"]

    def test_chib_outside_conditional_mode(self, conjugate_fixture, tmp_path, capsys):
        code = cli.main(
            [
                "run",
                "--data", conjugate_fixture["data"],
                "--model", conjugate_fixture["model"],
                "--mode", "approx",
                "--evidence", "chib",
                "--out", str(tmp_path / "out"),
            ]
        )
        assert code != 0
        assert _read_error(capsys)["code"] == "E_INPUT"

    def test_samples_must_exceed_burn_in(self, conjugate_fixture, tmp_path, capsys):
        code = cli.main(
            [
                "run",
                "--data", conjugate_fixture["data"],
                "--model", conjugate_fixture["model"],
                "--samples", "100",
                "--burn-in", "100",
                "--out", str(tmp_path / "out"),
            ]
        )
        assert code != 0
        assert _read_error(capsys)["code"] == "E_INPUT"

    def test_worker_shard_out_of_range(self, conjugate_fixture, tmp_path, capsys):
        plan_path = tmp_path / "plan.json"
        cli.main(
            [
                "shard",
                "--data", conjugate_fixture["data"],
                "--splits", "2",
                "--seed", "0",
                "--out", str(plan_path),
            ]
        )
        code = cli.main(
            [
                "worker",
                "--data", conjugate_fixture["data"],
                "--model", conjugate_fixture["model"],
                "--plan", str(plan_path),
                "--shard-id", "5",
                "--mode", "exact",
                "--seed", "0",
                "--out", str(tmp_path / "r.json"),
            ]
        )
        assert code != 0
        assert _read_error(capsys)["code"] == "E_INPUT"

    def test_bad_splits_list_in_diagnose(self, tmp_path, capsys):
        code = cli.main(
            [
                "diagnose",
                "--scenario", "linear_conjugate",
                "--splits", "1,x",
                "--out", str(tmp_path / "r.csv"),
            ]
        )
        assert code != 0
        assert _read_error(capsys)["code"] == "E_INPUT"

    def test_unknown_config_key(self, conjugate_fixture, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"data": conjugate_fixture["data"], "bogus": 1}))
        code = cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code != 0
        error = _read_error(capsys)
        assert error["code"] == "E_INPUT"
        assert "bogus" in error["message"]


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        out = tmp_path / "fixtures"
        proc = subprocess.run(
            [
                sys.executable,
                "-m",
                "splitevidence.cli",
                "synth",
                "--scenario", "linear_conjugate",
                "--seed", "0",
                "--out", str(out),
            ],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert (out / "data.csv").is_file()

    def test_module_invocation_error_path(self, tmp_path):
        proc = subprocess.run(
            [
                sys.executable,
                "-m",
                "splitevidence.cli",
                "shard",
                "--data", str(tmp_path / "missing.csv"),
                "--splits", "2",
                "--out", str(tmp_path / "plan.json"),
            ],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 1
        assert json.loads(proc.stderr.strip())["error"]["code"] == "E_INPUT"
