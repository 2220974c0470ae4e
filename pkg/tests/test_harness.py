import csv
import json
import re

import numpy as np
import pytest

from swarmcover import harness
from swarmcover.cli import main
from swarmcover.env import read_potential_csv, success_and_convergence


def run_cli(*args):
    return main([str(a) for a in args])


def write_json(path, data):
    path.write_text(json.dumps(data))
    return path


@pytest.fixture(scope="module")
def classical_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "classical"
    assert run_cli("simulate", "--out", out, "--seed", 0) == 0
    return out


def test_simulate_classical_square(classical_run):
    times, phi = read_potential_csv(classical_run / "potential.csv")
    assert len(phi) == 1501
    assert np.all(np.isfinite(phi)) and phi[0] > 0
    assert times[-1] == pytest.approx(30.0)
    with open(classical_run / "trajectory.csv") as fh:
        assert sum(1 for _ in fh) == 1 + 1501 * 9


def test_simulate_frames_have_n_agents(classical_run):
    frames = sorted((classical_run / "frames").glob("*.svg"))
    assert len(frames) == 61
    for f in frames[::10]:
        text = f.read_text()
        assert text.count('class="agent"') == 9
        assert 'class="domain"' in text
    assert "stroke-dasharray" in frames[-1].read_text()


def test_simulate_is_byte_identical(tmp_path, classical_run):
    assert run_cli("simulate", "--out", tmp_path, "--seed", 0) == 0
    for name in ("trajectory.csv", "potential.csv", "meta.json"):
        assert (tmp_path / name).read_bytes() == (classical_run / name).read_bytes()
    assert ((tmp_path / "frames" / "frame_00100.svg").read_bytes()
            == (classical_run / "frames" / "frame_00100.svg").read_bytes())


def test_simulate_subcover_start_stays_at_zero(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"initial_state": "subcover", "horizon": 2.0,
                                           "frames": {"enabled": False}})
    assert run_cli("simulate", "--config", cfg, "--out", tmp_path / "o") == 0
    _, phi = read_potential_csv(tmp_path / "o" / "potential.csv")
    assert np.max(np.abs(phi)) <= 1e-12
    meta = json.loads((tmp_path / "o" / "meta.json").read_text())
    assert meta["success"] and meta["convergence_s"] == 0.0


def test_simulate_explicit_positions_and_polygon_file(tmp_path):
    (tmp_path / "tri.json").write_text(json.dumps([[0, 0], [2, 0], [0, 2]]))
    cfg = write_json(tmp_path / "c.json", {
        "env": {"domain": {"type": "file", "path": "tri.json"}, "n": 2, "horizon": 0.2},
        "initial_state": {"positions": [[0.3, 0.3], [0.6, 0.4]]}})
    assert run_cli("simulate", "--config", cfg, "--out", tmp_path / "o") == 0
    _, phi = read_potential_csv(tmp_path / "o" / "potential.csv")
    assert len(phi) == 11


def test_simulate_errors(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"domain": {"type": "file", "path": "missing.json"}})
    assert run_cli("simulate", "--config", cfg, "--out", tmp_path / "o") != 0
    assert "polygon file not found" in capsys.readouterr().err
    assert run_cli("simulate", "--out", tmp_path / "o", "--controller", tmp_path / "nope.json") != 0
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert run_cli("simulate", "--out", tmp_path / "o", "--controller", bad) != 0
    assert "checkpoint" in capsys.readouterr().err
    assert run_cli("simulate", "--config", tmp_path / "absent.json", "--out", tmp_path / "o") != 0
    (tmp_path / "broken.json").write_text("{")
    assert run_cli("simulate", "--config", tmp_path / "broken.json", "--out", tmp_path / "o") != 0
    bow = write_json(tmp_path / "bow.json", {"domain": {"type": "vertices",
                                                       "vertices": [[0, 0], [1, 1], [1, 0], [0, 1]]}})
    assert run_cli("simulate", "--config", bow, "--out", tmp_path / "o") != 0
    grid = write_json(tmp_path / "g.json", {"n": 5, "initial_state": "subcover"})
    assert run_cli("simulate", "--config", grid, "--out", tmp_path / "o") != 0


def test_wilson_interval():
    lo, hi = harness.wilson_interval(5, 10)
    assert lo == pytest.approx(0.2366, abs=1e-4) and hi == pytest.approx(0.7634, abs=1e-4)
    assert harness.wilson_interval(0, 10)[0] == 0.0
    assert harness.wilson_interval(10, 10)[1] == 1.0


def _table(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_evaluate_fixtures(tmp_path):
    zero = write_json(tmp_path / "z.json", {"controllers": ["zero"], "seeds": 3, "horizon": 2.0})
    assert run_cli("evaluate", "--config", zero, "--out", tmp_path / "z") == 0
    row = _table(tmp_path / "z" / "table.csv")[0]
    assert row["success_rate"] == "0.0" and row["mean_convergence_s"] == ""

    sub = write_json(tmp_path / "s.json", {"seeds": 3, "horizon": 2.0, "initial_state": "subcover"})
    assert run_cli("evaluate", "--config", sub, "--out", tmp_path / "s") == 0
    row = _table(tmp_path / "s" / "table.csv")[0]
    assert row["success_rate"] == "1.0"
    assert float(row["mean_convergence_s"]) == 0.0


def test_evaluate_matches_trace_rescan_and_workers(tmp_path):
    spec = {"agents": [4, 5], "domains": ["square", {"type": "random", "seed": 2, "sides": 7}],
            "seeds": {"start": 10, "count": 3}, "horizon": 6.0}
    cfg = write_json(tmp_path / "e.json", spec)
    assert run_cli("evaluate", "--config", cfg, "--out", tmp_path / "a") == 0
    runs = _table(tmp_path / "a" / "runs.csv")
    assert len(runs) == 12
    for row in runs:
        times, traces = harness.read_traces(
            tmp_path / "a" / "traces" / f"{row['controller']}_{row['domain']}_n{row['n']}.csv")
        ok, t_star = success_and_convergence(traces[int(row["seed"])], times=times, horizon=6.0)
        assert int(row["success"]) == int(ok)
        assert row["convergence_s"] == ("" if t_star is None else repr(t_star))
    cfg2 = write_json(tmp_path / "e2.json", {**spec, "workers": 2})
    assert run_cli("evaluate", "--config", cfg2, "--out", tmp_path / "b") == 0
    for name in ("table.csv", "runs.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_evaluate_reports_overshoot(tmp_path):
    cfg = write_json(tmp_path / "e.json", {"seeds": 2, "horizon": 8.0})
    assert run_cli("evaluate", "--config", cfg, "--out", tmp_path / "o") == 0
    assert "overshoot_fraction" in _table(tmp_path / "o" / "table.csv")[0]
    assert "overshoot" in (tmp_path / "o" / "summary.txt").read_text()


TRAIN = {"envs": [{"n": 3, "horizon": 0.6}], "iterations": 4, "trajectories_per_env": 2,
         "update_epochs": 2, "minibatch_size": 32, "optimizer": "adam", "checkpoint_every": 2,
         "actor": {"hidden": 8, "trunk": [16, 16]},
         "critic": {"d_m": 8, "d_k": 4, "d_v": 8, "value_hidden": [8]}}


def test_train_smoke_and_resume(tmp_path):
    cfg = write_json(tmp_path / "t.json", TRAIN)
    assert run_cli("train", "--config", cfg, "--out", tmp_path / "full", "--seed", 3) == 0
    assert len((tmp_path / "full" / "metrics.csv").read_text().splitlines()) == 5
    part = tmp_path / "part"
    assert run_cli("train", "--config", cfg, "--out", part, "--seed", 3) == 0
    assert run_cli("train", "--config", cfg, "--out", part, "--seed", 3,
                   "--resume", part / "checkpoints" / "ckpt_00002.json") == 0
    assert (part / "metrics.csv").read_bytes() == (tmp_path / "full" / "metrics.csv").read_bytes()


def test_train_bc_only(tmp_path):
    cfg = write_json(tmp_path / "t.json", {**TRAIN, "iterations": 0, "bc_episodes": 2,
                                           "bc_epochs": 5, "bc_batch": 64,
                                           "envs": [{"n": 4, "horizon": 2.0}]})
    assert run_cli("train", "--config", cfg, "--out", tmp_path / "o") == 0
    with open(tmp_path / "o" / "bc_loss.csv") as fh:
        losses = [float(r["loss"]) for r in csv.DictReader(fh)]
    assert len(losses) == 6 and losses[-1] < losses[0]
    assert (tmp_path / "o" / "checkpoints" / "ckpt_00000.json").exists()


def test_train_nan_aborts_with_checkpoint(tmp_path, capsys):
    cfg = write_json(tmp_path / "t.json", {**TRAIN, "iterations": 1, "bc_episodes": 1,
                                           "bc_epochs": 1, "actor_lr": float("nan")})
    assert run_cli("train", "--config", cfg, "--out", tmp_path / "o") != 0
    err = capsys.readouterr().err
    assert "diverged" in err and "ckpt_00000.json" in err
    assert (tmp_path / "o" / "checkpoints" / "ckpt_00000.json").exists()


def test_train_rejects_unknown_keys(tmp_path, capsys):
    cfg = write_json(tmp_path / "t.json", {"itterations": 3})
    assert run_cli("train", "--config", cfg, "--out", tmp_path / "o") != 0
    assert "itterations" in capsys.readouterr().err


def test_policy_checkpoint_drives_simulation(tmp_path):
    cfg = write_json(tmp_path / "t.json", {**TRAIN, "iterations": 1})
    assert run_cli("train", "--config", cfg, "--out", tmp_path / "t") == 0
    ckpt = tmp_path / "t" / "checkpoints" / "ckpt_00001.json"
    sim = write_json(tmp_path / "s.json", {"n": 6, "horizon": 0.5, "deterministic": False})
    assert run_cli("simulate", "--config", sim, "--controller", ckpt, "--out", tmp_path / "a") == 0
    assert run_cli("simulate", "--config", sim, "--controller", ckpt, "--out", tmp_path / "b") == 0
    assert ((tmp_path / "a" / "trajectory.csv").read_bytes()
            == (tmp_path / "b" / "trajectory.csv").read_bytes())


def test_export_merges_and_renders(tmp_path):
    short = write_json(tmp_path / "s.json", {"n": 4, "horizon": 1.0})
    long = write_json(tmp_path / "l.json", {"n": 5, "horizon": 2.0, "domain": {"type": "regular", "sides": 5}})
    assert run_cli("simulate", "--config", short, "--out", tmp_path / "a") == 0
    assert run_cli("simulate", "--config", long, "--out", tmp_path / "b") == 0
    assert run_cli("export", "--out", tmp_path / "x", tmp_path / "a", tmp_path / "b") == 0
    with open(tmp_path / "x" / "potential_merged.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["time_s", "a", "b"]
    assert len(rows) == 1 + 101
    assert rows[-1][1] == "" and rows[-1][2] != ""
    frames = sorted((tmp_path / "x" / "b" / "frames").glob("*.svg"))
    assert len(frames) == 5
    assert all(f.read_text().count('class="agent"') == 5 for f in frames)


def test_export_empty_input_leaves_no_output(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert run_cli("export", "--out", tmp_path / "x", tmp_path / "empty") != 0
    assert "missing run artifacts" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()
    assert not list(tmp_path.glob("x*"))
    assert run_cli("export", "--out", tmp_path / "y") != 0


def test_cli_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code != 0
    with pytest.raises(SystemExit):
        main(["simulate"])
