import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest
import yaml

from hybridqrc.cli import main
from hybridqrc.experiments import TASK_DEFAULTS
from hybridqrc.harness import (
    OUTPUT_ENV,
    ResultTable,
    SpecError,
    dump_spec,
    emit_outputs,
    load_spec,
    resolve_output_dir,
    run_experiment,
    spec_from_dict,
    write_grid,
)
from hybridqrc.operators import wigner

TINY_MC = {
    "task": "memory-capacity",
    "reservoir": {"n_sites": 1, "multiplexity": 2},
    "lengths": {"train": 16, "eval": 8},
    "params": {"d_max": 2},
    "sweep": {"input_scale": [0.5, 1.0]},
    "trials": 2,
    "seed": 11,
}


def write(tmp_path, doc, name="spec.yaml"):
    path = tmp_path / name
    path.write_text(doc if isinstance(doc, str) else yaml.safe_dump(doc))
    return path


# ---------------------------------------------------------------- loading


def test_minimal_spec_fully_defaulted(tmp_path):
    spec = load_spec(write(tmp_path, "task: switch-equalizer\n"))
    assert spec.params == TASK_DEFAULTS["switch-equalizer"]
    assert spec.trials == 1 and spec.seed == 0 and spec.sweep == {}
    assert spec.params["tau"] == 1.0 and spec.params["t_init"] == 5.0


def test_lengths_map_onto_task_keys():
    spec = spec_from_dict({"task": "cv-closed-loop", "lengths": {"train": 50, "eval": 20}})
    assert spec.params["train_length"] == 50 and spec.params["closed_steps"] == 20


@pytest.mark.parametrize(
    "doc, fragment",
    [
        ({"task": "switch-equalizer", "reservoir": {"multiplexity": 0}}, "multiplexity"),
        ({"task": "switch-equalizer", "sweep": {"multiplexity": [4, 0]}}, "multiplexity"),
        ({"task": "switch-equalizer", "bogus": 1}, "bogus"),
        ({"task": "switch-equalizer", "params": {"bogus": 1}}, "bogus"),
        ({"task": "nope"}, "task"),
        ({"task": "switch-equalizer", "sweep": {"drive": []}}, "drive"),
        ({"task": "switch-equalizer", "lengths": {"train": 0}}, "train"),
        ({"task": "switch-equalizer", "params": {"q_a": 2.0}}, "q_a"),
    ],
)
def test_invalid_specs(doc, fragment):
    with pytest.raises(SpecError, match=fragment):
        spec_from_dict(doc)


def test_parse_error_reports_position(tmp_path):
    with pytest.raises(SpecError, match="line 3, column 7"):
        load_spec(write(tmp_path, "task: memory-capacity\nsweep: {a: 1\ntrials: 2\n"))


def test_round_trip(tmp_path):
    spec = spec_from_dict(TINY_MC)
    again = load_spec(write(tmp_path, dump_spec(spec), "again.yaml"))
    assert again == spec
    assert again.config_hash() == spec.config_hash()


def test_points_and_seeds():
    spec = spec_from_dict({**TINY_MC, "sweep": {"drive": [0.1, 0.2], "input_scale": [1, 2, 3]}})
    pts = spec.points()
    assert len(pts) == 6 and pts[0] == {"drive": 0.1, "input_scale": 1}
    seeds = {tuple(spec.cell_seed(i, t).generate_state(2)) for i in range(6) for t in range(2)}
    assert len(seeds) == 12
    paired = spec_from_dict({**TINY_MC, "paired": True})
    assert paired.cell_seed(0, 1).generate_state(2).tolist() == paired.cell_seed(1, 1).generate_state(2).tolist()


# ---------------------------------------------------------------- running


@pytest.fixture(scope="module")
def tiny_table():
    return run_experiment(spec_from_dict(TINY_MC))


def test_run_deterministic(tiny_table):
    again = run_experiment(spec_from_dict(TINY_MC))
    assert again.rows == tiny_table.rows
    assert not tiny_table.failures


def test_parallel_matches_serial(tiny_table):
    assert run_experiment(spec_from_dict(TINY_MC), jobs=2).rows == tiny_table.rows


def test_summary_and_values(tiny_table):
    rows = tiny_table.summary()
    assert {r["metric"] for r in rows} == {"mc", "qmc"}
    assert all(r["n"] == 2 for r in rows)
    vals = tiny_table.values("mc", input_scale=0.5)
    assert len(vals) == 2
    first = next(r for r in rows if r["metric"] == "mc" and r["params"] == {"input_scale": 0.5})
    assert first["mean"] == pytest.approx(vals.mean())
    assert first["std"] == pytest.approx(vals.std(ddof=1))
    md = tiny_table.metadata
    assert md["cells"] == 4 and md["failed_cells"] == 0 and md["code_version"]


def test_failed_cell_isolated():
    spec = spec_from_dict({**TINY_MC, "sweep": {"state_kind": ["pure", "bogus"]}})
    table = run_experiment(spec)
    assert len(table.failures) == 2
    assert {f["params"]["state_kind"] for f in table.failures} == {"bogus"}
    assert "ValueError" in table.failures[0]["error"]
    assert len(table.values("mc", state_kind="pure")) == 2


def test_outputs(tiny_table, tmp_path):
    written = emit_outputs(tiny_table, tmp_path)
    with open(tmp_path / "results.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["task", "input_scale", "trial", "metric", "value"]
    assert len(rows) - 1 == 4 * 2
    doc = json.loads((tmp_path / "results.json").read_text())
    back = ResultTable.from_json(doc)
    assert back.rows == tiny_table.rows and back.metadata == tiny_table.metadata
    assert any(p.suffix == ".npz" for p in written)


def test_vacuum_grid_file(tmp_path):
    path = tmp_path / "vac.txt"
    write_grid(path, wigner(np.diag([1.0, 0, 0])))
    g = np.loadtxt(path)
    assert g.shape == (61, 61)
    assert g[30, 30] == pytest.approx(1 / np.pi, abs=1e-6)
    assert g.max() == g[30, 30]


def test_grid_outputs_for_tomography(tmp_path):
    spec = spec_from_dict(
        {
            "task": "cv-nontemporal",
            "reservoir": {"n_sites": 1, "multiplexity": 2},
            "lengths": {"train": 12, "eval": 4},
            "params": {"d_eff": 3, "keep_samples": 2},
        }
    )
    emit_outputs(run_experiment(spec), tmp_path)
    grids = sorted((tmp_path / "grids").iterdir())
    assert len(grids) == 4
    assert np.loadtxt(grids[0]).shape == (61, 61)


def test_unwritable_output(tiny_table, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_outputs(tiny_table, blocker / "sub")


def test_output_dir_precedence(monkeypatch):
    spec = spec_from_dict({**TINY_MC, "output_dir": "from_spec"})
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    assert str(resolve_output_dir(None, spec)) == "from_spec"
    monkeypatch.setenv(OUTPUT_ENV, "from_env")
    assert str(resolve_output_dir(None, spec)) == "from_env"
    assert str(resolve_output_dir("from_cli", spec)) == "from_cli"


# ---------------------------------------------------------------- command line


def test_cli_list_and_validate(tmp_path, capsys):
    assert main(["list-tasks"]) == 0
    out = capsys.readouterr().out
    for task in TASK_DEFAULTS:
        assert task in out
    assert main(["validate", str(write(tmp_path, TINY_MC))]) == 0
    assert "memory-capacity" in capsys.readouterr().out


def test_cli_spec_error_exit(tmp_path):
    bad = write(tmp_path, {"task": "memory-capacity", "reservoir": {"multiplexity": 0}})
    assert main(["validate", str(bad)]) == 1
    assert main(["run", str(bad)]) == 1
    assert main(["run", str(tmp_path / "missing.yaml")]) == 1


def test_cli_run_env_override(tmp_path, monkeypatch):
    out = tmp_path / "env_out"
    monkeypatch.setenv(OUTPUT_ENV, str(out))
    assert main(["run", str(write(tmp_path, TINY_MC)), "--seed", "3"]) == 0
    assert (out / "results.csv").exists()
    doc = json.loads((out / "results.json").read_text())
    assert doc["metadata"]["spec"]["seed"] == 3


def test_cli_partial_failure_exit(tmp_path):
    spec = write(tmp_path, {**TINY_MC, "trials": 1, "sweep": {"state_kind": ["pure", "bogus"]}})
    assert main(["run", str(spec), "--out", str(tmp_path / "o")]) == 2


def test_module_entry_point(tmp_path):
    env = {**os.environ, OUTPUT_ENV: str(tmp_path / "m")}
    proc = subprocess.run([sys.executable, "-m", "hybridqrc", "list-tasks"], capture_output=True, text=True, env=env)
    assert proc.returncode == 0 and "switch-equalizer" in proc.stdout
