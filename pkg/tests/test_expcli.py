import csv
import importlib.util
import json
import logging
import math
from pathlib import Path

import numpy as np
import pytest

from rdeepc.expcli import ConfigError, load_config, main, parse_config, read_csv, write_csv
from rdeepc.expcli.main import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, _setup_logging
from rdeepc.expcli.reporting import CONSISTENCY_SCHEMA, EQUIVALENCE_SCHEMA, TIMING_COLUMNS, trajectory_schema
from rdeepc.ltisim import benchmark_system

REPO = Path(__file__).resolve().parents[1]


def _load_script(name):
    spec = importlib.util.spec_from_file_location(name, REPO / "scripts" / f"{name}.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def _write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return p


SMALL_SIM = {"experiment": "simulate", "monte_carlo_runs": 2, "seed": 3,
             "controller": {"n_init": 4, "n_pred": 4},
             "simulate": {"algorithms": ["baseline_alg1", "efficient_alg3"], "steps": 20, "bootstrap": 40}}


# ------------------------------------------------------------------ config validation

def test_shipped_configs_validate():
    for p in sorted((REPO / "configs").glob("*.json")):
        assert main(["validate", str(p)]) == EXIT_OK


def test_unknown_top_level_field(tmp_path):
    with pytest.raises(ConfigError, match="colour"):
        parse_config({"experiment": "simulate", "colour": 1})


def test_unknown_section_field_names_path():
    with pytest.raises(ConfigError) as ei:
        parse_config({"experiment": "simulate", "controller": {"lambda_gg": 1}})
    assert ei.value.where == "controller.lambda_gg"


def test_malformed_json_reports_line_and_column(tmp_path):
    p = _write(tmp_path, '{\n  "experiment": "simulate",\n  "seed": ,\n}')
    with pytest.raises(ConfigError) as ei:
        load_config(p)
    assert ei.value.where.endswith(":3:11")


@pytest.mark.parametrize("doc, where", [
    ({"experiment": "simulate", "seed": "zero"}, "seed"),
    ({"experiment": "simulate", "seed": -1}, "seed"),
    ({"experiment": "simulate", "monte_carlo_runs": 1.5}, "monte_carlo_runs"),
    ({"experiment": "simulate", "parallel": True}, "parallel"),
    ({"experiment": "sweep"}, "experiment"),
    ({"experiment": "simulate", "simulate": {"algorithms": ["alg9"]}}, "simulate.algorithms"),
    ({"experiment": "simulate", "simulate": {"bootstrap": 5}}, "simulate.bootstrap"),
    ({"experiment": "consistency", "consistency": {"modes": ["sideways"]}}, "consistency.modes"),
    ({"experiment": "svd_bench", "svd_bench": {"alpha": 1.0}}, "svd_bench.alpha"),
    ({"experiment": "simulate", "system": "other"}, "system"),
    ({"experiment": "simulate", "output_dir": ""}, "output_dir"),
])
def test_bad_values(doc, where):
    with pytest.raises(ConfigError) as ei:
        parse_config(doc)
    assert ei.value.where == where


def test_invalid_controller_values_are_config_errors():
    with pytest.raises(ConfigError) as ei:
        parse_config({"experiment": "simulate", "controller": {"n_pred": 0}})
    assert ei.value.where == "controller"


def test_missing_system_file(tmp_path):
    with pytest.raises(ConfigError) as ei:
        parse_config({"experiment": "simulate", "system": {"file": "nope.json"}}, base_dir=str(tmp_path))
    assert ei.value.where == "system.file"


def test_system_file_relative_to_config(tmp_path):
    sys = benchmark_system()
    (tmp_path / "plant.json").write_text(json.dumps({k: getattr(sys, k).tolist() for k in "ABCDK"} | {"noise_var": 0.1}))
    cfg = load_config(_write(tmp_path, {"experiment": "simulate", "system": {"file": "plant.json"}}))
    got = cfg.resolved_system()
    np.testing.assert_array_equal(got.A, sys.A)
    assert got.noise_var == 0.1


def test_system_file_lacking_matrices(tmp_path):
    (tmp_path / "plant.json").write_text(json.dumps({"A": [[0.5]]}))
    with pytest.raises(ConfigError, match="lacks"):
        parse_config({"experiment": "simulate", "system": {"file": "plant.json"}}, base_dir=str(tmp_path))


def test_overrides_take_precedence(tmp_path):
    cfg = load_config(_write(tmp_path, SMALL_SIM), {"seed": 11, "monte_carlo_runs": None})
    assert cfg.seed == 11 and cfg.monte_carlo_runs == 2


def test_digest_tracks_content():
    a = parse_config(SMALL_SIM)
    assert a.digest() == parse_config(json.loads(json.dumps(SMALL_SIM))).digest()
    assert a.digest() != parse_config({**SMALL_SIM, "seed": 4}).digest()


# ------------------------------------------------------------------ CLI runs

def test_config_error_exit_code_writes_nothing(tmp_path, capsys):
    out = tmp_path / "out"
    p = _write(tmp_path, {**SMALL_SIM, "output_dir": str(out), "bogus": 1})
    assert main(["run", str(p)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert not out.exists()


def test_missing_config_file(tmp_path):
    assert main(["run", str(tmp_path / "absent.json")]) == EXIT_CONFIG


@pytest.fixture(scope="module")
def sim_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("sim")
    p = _write(base, SMALL_SIM)
    code = main(["run", str(p), "--out", str(base / "a")])
    return base, p, code


def test_simulate_success_and_artifacts(sim_run):
    base, _, code = sim_run
    assert code == EXIT_OK
    out = base / "a"
    names = {f.name for f in out.iterdir()}
    assert names == {"trajectories_0.csv", "trajectories_1.csv", "summary.json", "manifest.json"}
    man = json.loads((out / "manifest.json").read_text())
    for key in ("experiment", "config_sha256", "seed", "config", "library_version", "python", "numpy", "scipy",
                "artifacts", "elapsed_s", "status"):
        assert key in man
    assert man["status"] == "ok" and man["seed"] == 3
    assert man["config"]["output_dir"] == str(out)
    assert set(man["artifacts"]) == names - {"manifest.json"}
    assert len(man["config_sha256"]) == 64
    summ = json.loads((out / "summary.json").read_text())
    assert summ["failures"] == []
    assert summ["pairs"]["efficient_alg3"]["max_run_e_u"] < 1e-6
    rows = read_csv(out / "trajectories_0.csv", trajectory_schema(1, 1))
    assert len(rows) == 40 and {r[0] for r in rows} == {"baseline_alg1", "efficient_alg3"}


def test_rerun_reproduces_everything_but_timings(sim_run):
    base, p, _ = sim_run
    assert main(["run", str(p), "--out", str(base / "b")]) == EXIT_OK
    for name in ("trajectories_0.csv", "trajectories_1.csv"):
        with open(base / "a" / name) as fa, open(base / "b" / name) as fb:
            ra, rb = list(csv.DictReader(fa)), list(csv.DictReader(fb))
        assert len(ra) == len(rb)
        for x, y in zip(ra, rb):
            for k in x:
                if k not in TIMING_COLUMNS:
                    assert x[k] == y[k], (name, k)


def test_cli_seed_override_changes_data(sim_run):
    base, p, _ = sim_run
    assert main(["run", str(p), "--out", str(base / "c"), "--seed", "9", "--runs", "1"]) == EXIT_OK
    man = json.loads((base / "c" / "manifest.json").read_text())
    assert man["seed"] == 9 and man["config"]["monte_carlo_runs"] == 1
    assert (base / "a" / "trajectories_0.csv").read_text() != (base / "c" / "trajectories_0.csv").read_text()


def test_runtime_failure_exit_code(tmp_path, capsys):
    doc = {**SMALL_SIM, "output_dir": str(tmp_path / "out"), "monte_carlo_runs": 1,
           "controller": {"n_init": 4, "n_pred": 4, "y_min": 100.0, "y_max": 100.0, "lambda_sigma": 1.0},
           "simulate": {"algorithms": ["efficient_spc_alg6"], "steps": 10, "bootstrap": 40}}
    assert main(["run", str(_write(tmp_path, doc))]) == EXIT_RUNTIME
    assert "failed at step" in capsys.readouterr().err
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["status"] == "failed"
    assert json.loads((tmp_path / "out" / "summary.json").read_text())["failures"][0]["step"] == 0


def test_parallel_matches_serial(tmp_path):
    doc = {**SMALL_SIM, "simulate": {**SMALL_SIM["simulate"], "algorithms": ["efficient_alg3"]}}
    p = _write(tmp_path, doc)
    assert main(["run", str(p), "--out", str(tmp_path / "s")]) == EXIT_OK
    assert main(["run", str(p), "--out", str(tmp_path / "p"), "--parallel", "2"]) == EXIT_OK
    sch = trajectory_schema(1, 1)
    a, b = read_csv(tmp_path / "s" / "trajectories_1.csv", sch), read_csv(tmp_path / "p" / "trajectories_1.csv", sch)
    assert [r[2:5] for r in a] == [r[2:5] for r in b]


def test_equivalence_suite_small(tmp_path):
    doc = {"experiment": "equivalence", "monte_carlo_runs": 1, "output_dir": str(tmp_path / "eq"),
           "equivalence": {"instances": 5, "loop_steps": 15}}
    assert main(["run", str(_write(tmp_path, doc))]) == EXIT_OK
    rows = read_csv(tmp_path / "eq" / "equivalence.csv", EQUIVALENCE_SCHEMA)
    assert len(rows) >= 4
    assert all(r[4] == "true" and r[2] <= r[3] for r in rows)
    assert json.loads((tmp_path / "eq" / "summary.json").read_text())["all_passed"]


def test_svd_bench_suite_small(tmp_path):
    doc = {"experiment": "svd_bench", "output_dir": str(tmp_path / "sv"),
           "svd_bench": {"rows": 8, "seed_cols": 10, "appends": 30}}
    assert main(["run", str(_write(tmp_path, doc))]) == EXIT_OK
    with open(tmp_path / "sv" / "svd_bench.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["mode"] for r in rows} == {"grow", "forget", "slide"}
    assert max(float(r["sigma_rel_error"]) for r in rows) < 1e-9


def test_consistency_csv_loads_with_plot_script(tmp_path, recwarn):
    doc = {"experiment": "consistency", "monte_carlo_runs": 2, "output_dir": str(tmp_path / "cs"),
           "consistency": {"modes": ["open_loop"], "n_init": 6, "n_pred": 6, "checkpoints": [100, 200]}}
    assert main(["run", str(_write(tmp_path, doc))]) == EXIT_OK
    plot = _load_script("plot_consistency")
    curves = plot.load_consistency(tmp_path / "cs" / "consistency_open_loop.csv")
    assert set(curves) == {"SPC", "DDP1", "DDP2"}
    for cols, mean, std in curves.values():
        assert cols.tolist() == [100, 200]
        assert np.all(np.isfinite(mean)) and np.all(mean > 0)
    assert not [w for w in recwarn if "coerc" in str(w.message).lower()]
    summ = json.loads((tmp_path / "cs" / "summary.json").read_text())
    assert "open_loop" in summ["modes"]


# ------------------------------------------------------------------ CSV format

def test_write_csv_empty_has_header_only(tmp_path):
    write_csv([], CONSISTENCY_SCHEMA, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_bytes() == b"col_H,method,block,frobenius_error,seed\n"
    assert read_csv(tmp_path / "e.csv", CONSISTENCY_SCHEMA) == []


def test_write_csv_format(tmp_path):
    rows = [(10, "SPC", "total", 3.5e-7, 0), (20, "DDP2", "u", 0.25, 1), (30, "DDP1", "y", float("nan"), 2)]
    write_csv(rows, CONSISTENCY_SCHEMA, tmp_path / "f.csv")
    raw = (tmp_path / "f.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[1] == "10,SPC,total,3.5e-07,0"
    assert lines[2] == "20,DDP2,u,0.25,1"
    back = read_csv(tmp_path / "f.csv", CONSISTENCY_SCHEMA)
    assert back[:2] == rows[:2] and math.isnan(back[2][3])


def test_trajectory_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    sch = trajectory_schema(2, 1)
    rows = [("efficient_alg3", k, *rng.standard_normal(3), 1.0, *rng.random(3) * 1e-5, 7, 100 + k, 1e-13)
            for k in range(5)]
    write_csv(rows, sch, tmp_path / "t.csv")
    assert read_csv(tmp_path / "t.csv", sch) == rows


def test_write_csv_rejects_ragged_records(tmp_path):
    with pytest.raises(ValueError):
        write_csv([(1, "SPC")], CONSISTENCY_SCHEMA, tmp_path / "r.csv")


def test_read_csv_checks_header(tmp_path):
    (tmp_path / "h.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        read_csv(tmp_path / "h.csv", CONSISTENCY_SCHEMA)


# ------------------------------------------------------------------ logging

@pytest.mark.parametrize("value, level", [("debug", logging.DEBUG), ("INFO", logging.INFO), ("error", logging.ERROR),
                                          ("loud", logging.ERROR)])
def test_log_level_from_environment(monkeypatch, value, level):
    root = logging.getLogger()
    saved = root.handlers[:], root.level
    root.handlers.clear()
    monkeypatch.setenv("RDEEPC_LOG", value)
    try:
        _setup_logging()
        assert root.level == level
    finally:
        root.handlers[:], root.level = saved[0], saved[1]
