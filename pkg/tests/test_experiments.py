"""Tests for configuration loading, report files and the experiment runner."""

import json

import pytest

from config import ExperimentConfig, Thresholds, build_config, load_config_file
import experiments
from errors import AllReplicatesAborted, ConfigError, MassExplosion
from experiments import ExperimentRunner, laplace_oracle, run_experiment, simulate_dump
from reports import (
    FAILED_MARKER,
    check_manifest,
    clear_failed,
    mark_failed,
    read_report_csv,
    write_manifest,
    write_rows_csv,
    write_summary_json,
)


def exploding(task):
    raise MassExplosion(31, 30, 0.25)


def explode_first(task):
    if task[1] == 0:
        exploding(task)
    return experiments._mp_task(task)


def small_config(tmp_path, **changes):
    data = {
        "kind": "mp",
        "sim": {"n_particles": 30, "c": 0.0, "dt": 1 / 16, "seed": 3},
        "fields": ["const:1"],
        "replicates": 30,
        "output_dir": str(tmp_path),
    }
    data.update(changes)
    return build_config(data)


class TestConfig:

    def test_defaults(self, monkeypatch):
        monkeypatch.delenv("SUPERLAB_OUTPUT_DIR", raising=False)
        config = build_config()
        assert config.kind == "mp"
        assert config.sim.n_particles == 2000
        assert config.replicates == 200
        assert config.output_dir == "runs"
        assert config.thresholds == Thresholds()
        assert config.refinement == [config.sim.dt]
        assert config.horizon == config.sim.T

    def test_output_dir_from_environment(self, monkeypatch):
        monkeypatch.setenv("SUPERLAB_OUTPUT_DIR", "/tmp/elsewhere")
        assert build_config().output_dir == "/tmp/elsewhere"

    def test_overrides_merge_into_nested_sections(self):
        config = build_config(
            {"sim": {"n_particles": 100, "c": 0.5}, "replicates": 50},
            {"sim": {"c": 2.0, "seed": None}, "replicates": None, "thresholds": {"qv_tolerance": 0.2}},
        )
        assert config.sim.n_particles == 100
        assert config.sim.c == 2.0
        assert config.sim.seed == 42
        assert config.replicates == 50
        assert config.thresholds.qv_tolerance == 0.2
        assert config.thresholds.se_multiplier == 3.0

    @pytest.mark.parametrize("data", [
        {"particles": 10},
        {"sim": {"N": 10}},
        {"thresholds": {"strict": True}},
    ])
    def test_unknown_keys_are_rejected(self, data):
        with pytest.raises(ConfigError):
            build_config(data)

    @pytest.mark.parametrize("data", [
        {"kind": "nonsense"},
        {"sim": {"n_particles": 0}},
        {"sim": {"dt": 0.3}},
        {"phi": "tan:1"},
        {"kind": "ito-state", "functional": "path-product"},
        {"replicates": 0},
        {"levels": [2, -1]},
        {"t": 5.0},
        {"workers": 0},
        {"dt_levels": [1 / 64, 0.4]},
        {"kind": "ito-state", "functional": "exp-martingale", "phi": "cos:1"},
        {"kind": "representation", "phi": "const:1+cos:1:2"},
        {"kind": "laplace-oracle", "phi": "const:-1"},
        {"thresholds": {"max_abort_fraction": 1.5}},
    ])
    def test_validation_errors(self, data):
        with pytest.raises(ConfigError):
            build_config(data)

    def test_config_errors_are_value_errors(self):
        with pytest.raises(ValueError):
            build_config({"replicates": -3})

    def test_comma_separated_fields(self):
        config = build_config({"fields": "const:1,cos:1,,sin:2"})
        assert config.fields == ["const:1", "cos:1", "sin:2"]

    def test_path_families_allowed_for_functional_runs(self):
        assert build_config({"kind": "ito-functional", "functional": "path-product"}).functional == "path-product"

    def test_load_yaml_file(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("kind: representation\nsim:\n  n_particles: 500\n  c: 1.5\nphi: const:1+cos:1:0.5\n")
        config = build_config(load_config_file(path))
        assert config.kind == "representation"
        assert config.sim.n_particles == 500
        assert config.sim.c == 1.5
        assert config.phi == "const:1+cos:1:0.5"

    def test_load_json_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"kind": "dyadic-convergence", "levels": [1, 3]}))
        assert build_config(load_config_file(path)).levels == [1, 3]

    def test_empty_file_means_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert load_config_file(path) == {}

    def test_bad_files(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config_file(tmp_path / "missing.yaml")
        listing = tmp_path / "list.yaml"
        listing.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_config_file(listing)

    def test_to_dict_is_json_serializable(self):
        data = ExperimentConfig().to_dict()
        assert data["sim"]["n_particles"] == 2000
        json.dumps(data)


class TestReports:

    def test_cells(self, tmp_path):
        path = write_rows_csv(tmp_path / "rows.csv", ["a", "b", "c", "d"], [[True, None, 0.1, 3], [False, 1e-20, "x", -2]])
        assert path.read_text().splitlines() == ["a,b,c,d", "true,,0.1,3", "false,1e-20,x,-2"]

    def test_summary_json_nulls_non_finite(self, tmp_path):
        path = write_summary_json(tmp_path / "s.json", {"b": float("nan"), "a": [1.0, float("inf")]})
        assert json.loads(path.read_text()) == {"a": [1.0, None], "b": None}
        assert path.read_text().index('"a"') < path.read_text().index('"b"')

    def test_manifest_detects_tampering(self, tmp_path):
        data = write_rows_csv(tmp_path / "data.csv", ["x"], [[1]])
        write_manifest(tmp_path, [data], {"kind": "test"})
        assert check_manifest(tmp_path) == []

        data.write_text("x\n2\n")
        assert check_manifest(tmp_path) == ["data.csv: hash mismatch"]
        data.unlink()
        assert check_manifest(tmp_path) == ["data.csv: missing"]

    def test_missing_manifest(self, tmp_path):
        problems = check_manifest(tmp_path)
        assert len(problems) == 1
        assert "not found" in problems[0]

    def test_failed_marker(self, tmp_path):
        marker = mark_failed(tmp_path, "mean_M failed")
        assert marker.read_text() == "mean_M failed\n"
        clear_failed(tmp_path)
        assert not marker.exists()
        clear_failed(tmp_path)


class TestRunner:

    def test_conserved_mass_passes(self, tmp_path):
        result = run_experiment(small_config(tmp_path))
        assert result.passed
        assert result.output_dir == tmp_path / "mp"
        assert result.summary["flags"] == {"abort_fraction": True, "mean_M[const:1]": True}
        assert result.summary["abort_fraction"] == 0.0
        assert result.summary["mp[const:1]"]["mean_m"] == 0.0
        assert result.summary["mp[const:1]"]["qv_ratio"] is None
        names = sorted(p.name for p in result.output_dir.iterdir())
        assert names == ["manifest.json", "mp.csv", "replicates.csv", "summary.json"]
        assert check_manifest(result.output_dir) == []

    def test_failed_flags_leave_a_marker(self, tmp_path):
        config = small_config(tmp_path, fields=["cos:1"], thresholds={"se_multiplier": 0.0})
        result = run_experiment(config)
        assert not result.passed
        marker = result.output_dir / FAILED_MARKER
        assert "mean_M[cos:1]" in marker.read_text()

    def test_rerun_clears_marker(self, tmp_path):
        run_experiment(small_config(tmp_path, fields=["cos:1"], thresholds={"se_multiplier": 0.0}))
        result = run_experiment(small_config(tmp_path))
        assert result.passed
        assert not (result.output_dir / FAILED_MARKER).exists()

    def test_too_few_replicates_fails_the_run(self, tmp_path):
        config = small_config(tmp_path, replicates=5)
        with pytest.raises(ValueError):
            ExperimentRunner(config).run()
        assert (tmp_path / "mp" / FAILED_MARKER).exists()

    def test_all_replicates_aborted_fails_the_run(self, tmp_path, monkeypatch):
        monkeypatch.setitem(experiments._TASKS, "mp", exploding)
        with pytest.raises(AllReplicatesAborted) as info:
            run_experiment(small_config(tmp_path))
        assert info.value.replicates == 30
        assert not isinstance(info.value, ValueError)
        assert "AllReplicatesAborted" in (tmp_path / "mp" / FAILED_MARKER).read_text()

    def test_aborted_replicates_fail_the_abort_flag(self, tmp_path, monkeypatch):
        monkeypatch.setitem(experiments._TASKS, "mp", explode_first)
        result = run_experiment(small_config(tmp_path, replicates=31))
        assert result.summary["aborted_replicates"] == [0]
        assert result.summary["abort_fraction"] == pytest.approx(1 / 31)
        assert result.summary["flags"]["abort_fraction"] is False
        assert result.summary["flags"]["mean_M[const:1]"]
        assert not result.passed
        assert "abort_fraction" in (result.output_dir / FAILED_MARKER).read_text()

    def test_abort_tolerance_is_configurable(self, tmp_path, monkeypatch):
        monkeypatch.setitem(experiments._TASKS, "mp", explode_first)
        result = run_experiment(small_config(tmp_path, replicates=31, thresholds={"max_abort_fraction": 0.05}))
        assert result.summary["flags"]["abort_fraction"]
        assert result.passed

    def test_worker_pool_matches_serial_run(self, tmp_path):
        changes = {"sim": {"n_particles": 20, "c": 1.0, "dt": 1 / 16, "seed": 11}, "fields": ["const:1", "cos:1"]}
        serial = run_experiment(small_config(tmp_path / "serial", **changes))
        pooled = run_experiment(small_config(tmp_path / "pooled", workers=2, **changes))
        for name in ("mp.csv", "replicates.csv", "summary.json"):
            assert (serial.output_dir / name).read_bytes() == (pooled.output_dir / name).read_bytes()

    def test_laplace_oracle_of_zero_field(self, tmp_path):
        config = small_config(tmp_path, kind="laplace-oracle", phi="const:0", replicates=4)
        assert laplace_oracle(config) == 1.0
        assert (tmp_path / "laplace-oracle" / "laplace.csv").exists()

    def test_ito_state_writes_refinement_tables(self, tmp_path):
        config = small_config(
            tmp_path, kind="ito-state", functional="linear", phi="const:1",
            replicates=3, dt_levels=[1 / 16, 1 / 32],
        )
        result = run_experiment(config)
        files = {p.name for p in result.output_dir.iterdir()}
        assert {"report_dt0.csv", "report_dt1.csv", "replicates_dt0.csv", "refinement.csv"} <= files
        rows = read_report_csv(result.output_dir / "report_dt1.csv")
        assert len(rows) == 3
        assert float(rows[0]["dt"]) == pytest.approx(1 / 32)
        assert list(rows[0])[0] == "replicate"
        assert result.summary["flags"]["residual_ratio"]

    def test_dyadic_run(self, tmp_path):
        config = small_config(tmp_path, kind="dyadic-convergence", levels=[1, 2, 4], replicates=3)
        result = run_experiment(config)
        assert result.summary["flags"]["pre_stop_identity"]
        assert len(result.summary["mean_distances"]) == 3

    def test_simulate_dump(self, tmp_path):
        files = simulate_dump(small_config(tmp_path), count=2)
        names = [p.name for p in files]
        assert names == ["path_0000.csv", "path_0001.csv", "replicates.csv"]
        assert check_manifest(tmp_path / "simulate") == []
