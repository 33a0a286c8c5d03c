"""Config-driven runs: schema validation, exit codes, artifacts, reports."""

import json
import math
from pathlib import Path

import pytest

from pstlab.cli import (
    EXIT_IO,
    EXIT_OK,
    EXIT_SCHEMA,
    ConfigError,
    apply_overrides,
    emit_report,
    main,
    parse_time_value,
    run_config,
)


def write_config(tmp_path: Path, payload: dict, name: str = "config.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


def small_sp_config(tmp_path: Path, **extra) -> Path:
    payload = {
        "experiment": "sp_series",
        "chain": {"n": 3},
        "plan": {"total_time": "2pi", "steps": 16},
        "noise": {},
        "seed": 1,
        "output_dir": str(tmp_path / "out"),
    }
    payload.update(extra)
    return write_config(tmp_path, payload)


class TestTimeParsing:
    @pytest.mark.parametrize("text,value", [
        ("2pi", 2 * math.pi),
        ("0.5pi", 0.5 * math.pi),
        ("pi", math.pi),
        (1.5, 1.5),
        ("1.5", 1.5),
    ])
    def test_accepted_forms(self, text, value):
        assert parse_time_value(text) == pytest.approx(value)

    def test_rejects_garbage(self):
        with pytest.raises(ConfigError):
            parse_time_value("twopi")


class TestOverrides:
    def test_dotted_paths(self):
        cfg = {"chain": {"n": 4}}
        out = apply_overrides(cfg, ["chain.n=3", "noise.zeta=0.2", "seed=7"])
        assert out["chain"]["n"] == 3
        assert out["noise"]["zeta"] == 0.2
        assert out["seed"] == 7

    def test_strings_pass_through(self):
        out = apply_overrides({}, ["plan.total_time=0.5pi"])
        assert out["plan"]["total_time"] == "0.5pi"

    def test_malformed_override(self):
        with pytest.raises(ConfigError):
            apply_overrides({}, ["chain.n"])


class TestRunConfig:
    def test_sp_series_outputs(self, tmp_path):
        cfg = small_sp_config(tmp_path)
        manifest_path = run_config(cfg)
        manifest = json.loads(manifest_path.read_text())
        assert manifest["experiment"] == "sp_series"
        csv_path = Path(manifest["outputs"]["series_csv"])
        lines = csv_path.read_text().strip().split("\n")
        assert lines[0] == "t,site,sp"
        assert len(lines) == 1 + 17  # header + k = 0..16
        assert manifest["results"]["sp_star"] is not None

    def test_headline_row_count(self, tmp_path):
        """The default 80-step plan emits 81 rows."""
        cfg = write_config(tmp_path, {
            "experiment": "sp_series",
            "noise": {},
            "output_dir": str(tmp_path / "out"),
        })
        manifest = json.loads(run_config(cfg).read_text())
        lines = Path(manifest["outputs"]["series_csv"]).read_text().strip().split("\n")
        assert len(lines) == 1 + 81

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = small_sp_config(tmp_path, shots=128)
        first = Path(json.loads(run_config(cfg).read_text())["outputs"]["series_csv"]).read_bytes()
        second = Path(json.loads(run_config(cfg).read_text())["outputs"]["series_csv"]).read_bytes()
        assert first == second

    def test_run_id_stable(self, tmp_path):
        cfg = small_sp_config(tmp_path)
        a = json.loads(run_config(cfg).read_text())["run_id"]
        b = json.loads(run_config(cfg).read_text())["run_id"]
        assert a == b

    def test_overrides_change_chain(self, tmp_path):
        cfg = small_sp_config(tmp_path)
        manifest = json.loads(run_config(cfg, overrides=["chain.n=4"]).read_text())
        assert manifest["config"]["chain"]["n"] == 4

    def test_ideal_run_via_null_noise(self, tmp_path):
        cfg = write_config(tmp_path, {
            "experiment": "sp_series",
            "chain": {"n": 3},
            "plan": {"steps": 16},
            "noise": None,
            "output_dir": str(tmp_path / "out"),
        })
        manifest = json.loads(run_config(cfg).read_text())
        # 16-step plan: coarse grid and larger Trotter error cap the peak
        assert manifest["results"]["sp_star"] >= 0.9

    def test_rescale_experiment(self, tmp_path):
        cfg = write_config(tmp_path, {
            "experiment": "rescale",
            "chain": {"n": 3},
            "plan": {"steps": 40},
            "noise": {},
            "output_dir": str(tmp_path / "out"),
        })
        manifest = json.loads(run_config(cfg).read_text())
        assert set(manifest["fitted"]) == {"alpha", "beta", "s"}
        assert manifest["results"]["corrected"]["sp_star"] >= manifest["results"]["noisy"]["sp_star"]
        assert Path(manifest["outputs"]["corrected_csv"]).exists()

    def test_grid_search_experiment(self, tmp_path):
        cfg = write_config(tmp_path, {
            "experiment": "grid_search",
            "grid": {"lo": 2.8, "hi": 3.0, "step": 0.1},
            "plan": {"steps": 16},
            "noise": {},
            "output_dir": str(tmp_path / "out"),
        })
        manifest = json.loads(run_config(cfg).read_text())
        lines = Path(manifest["outputs"]["grid_csv"]).read_text().strip().split("\n")
        assert lines[0] == "rank,j0,peak_sp,t_star"
        assert len(lines) == 1 + 3

    def test_arbitrary_transfer_experiment(self, tmp_path):
        cfg = write_config(tmp_path, {
            "experiment": "arbitrary_transfer",
            "chain": {"n": 3},
            "plan": {"steps": 12},
            "noise": None,
            "output_dir": str(tmp_path / "out"),
        })
        manifest = json.loads(run_config(cfg).read_text())
        header = Path(manifest["outputs"]["tomography_csv"]).read_text().split("\n")[0]
        assert header == "t,site,sp,x,y,z,fidelity,fidelity_phase_corrected"


class TestExitCodes:
    def test_ok(self, tmp_path):
        cfg = small_sp_config(tmp_path)
        assert main(["run", "--config", str(cfg)]) == EXIT_OK

    def test_single_site_chain_is_schema_violation(self, tmp_path):
        cfg = small_sp_config(tmp_path)
        code = main(["run", "--config", str(cfg), "--set", "chain.n=1"])
        assert code == EXIT_SCHEMA

    def test_unknown_experiment(self, tmp_path):
        cfg = write_config(tmp_path, {"experiment": "teleport"})
        assert main(["run", "--config", str(cfg)]) == EXIT_SCHEMA

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert main(["run", "--config", str(path)]) == EXIT_SCHEMA

    def test_missing_file_is_io_error(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "absent.json")]) == EXIT_IO

    def test_unknown_noise_key(self, tmp_path):
        cfg = small_sp_config(tmp_path, noise={"t3": 1.0})
        assert main(["run", "--config", str(cfg)]) == EXIT_SCHEMA

    def test_seed_flag_overrides(self, tmp_path):
        cfg = small_sp_config(tmp_path, shots=64)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(["run", "--config", str(cfg), "--seed", "5", "--out", str(out_a)]) == EXIT_OK
        assert main(["run", "--config", str(cfg), "--seed", "6", "--out", str(out_b)]) == EXIT_OK
        a = (out_a / "series.csv").read_text()
        b = (out_b / "series.csv").read_text()
        assert a != b


class TestReport:
    def test_single_manifest_passthrough(self, tmp_path):
        cfg = small_sp_config(tmp_path)
        manifest_path = run_config(cfg)
        outputs = emit_report([manifest_path], out=tmp_path / "rep")
        report = (tmp_path / "rep" / "report.csv").read_text().strip().split("\n")
        assert report[0].startswith("t,")
        payload = json.loads((tmp_path / "rep" / "report.json").read_text())
        assert len(payload["summary"]) == 1

    def test_ideal_noisy_corrected_improvement(self, tmp_path):
        noisy_cfg = write_config(tmp_path, {
            "experiment": "rescale",
            "chain": {"n": 4},
            "plan": {"steps": 40},
            "noise": {},
            "output_dir": str(tmp_path / "resc"),
        }, name="rescale.json")
        manifest_path = run_config(noisy_cfg)
        emit_report([manifest_path], out=tmp_path / "rep")
        payload = json.loads((tmp_path / "rep" / "report.json").read_text())
        rows = {row["label"]: row for row in payload["summary"]}
        assert {"noisy", "ideal", "corrected"} <= set(rows)
        assert rows["noisy"]["improvement"] == pytest.approx(0.0)
        assert rows["corrected"]["improvement"] > 0.1
        assert rows["corrected"]["improvement_pct"] > 10

    def test_grid_manifest_passthrough(self, tmp_path):
        cfg = write_config(tmp_path, {
            "experiment": "grid_search",
            "grid": {"lo": 2.9, "hi": 3.0, "step": 0.1},
            "plan": {"steps": 16},
            "noise": {},
            "output_dir": str(tmp_path / "grid"),
        })
        manifest_path = run_config(cfg)
        emit_report([manifest_path], out=tmp_path / "rep")
        lines = (tmp_path / "rep" / "report.csv").read_text().strip().split("\n")
        assert lines[0] == "rank,j0,peak_sp,t_star"

    def test_requires_manifest(self):
        with pytest.raises(ConfigError):
            emit_report([])
