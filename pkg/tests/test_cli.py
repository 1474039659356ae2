import json

import numpy as np
import pytest

from yoto.cli import main
from yoto.hand_motion import read_hand_frames, write_hand_frames, write_trajectory
from yoto.keyframes import KeyframeProgram

from .programs import trajectory


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def drawer_stream(tmp_path_factory):
    d = tmp_path_factory.mktemp("teach")
    assert main(["teach", "--task", "pull_drawer", "--out", str(d / "drawer.jsonl")]) == 0
    return d / "drawer.jsonl"


def test_extract_and_keyframes(capsys, tmp_path, drawer_stream):
    code, out, _ = run(capsys, "extract", drawer_stream, "--out", tmp_path / "traj.jsonl")
    assert code == 0 and json.loads(out)["frames"] > 0
    assert (tmp_path / "traj.jsonl.config.json").exists()
    code, out, _ = run(capsys, "keyframes", tmp_path / "traj.jsonl", "--out", tmp_path / "p.json")
    assert code == 0
    assert json.loads(out)["K"] == 10
    prog = KeyframeProgram.load(tmp_path / "p.json")
    assert prog.mask.movers() == list("RRLRLLLLLR")


def test_truncated_input(capsys, tmp_path, drawer_stream):
    lines = drawer_stream.read_text().splitlines()
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines[:3] + [lines[3][:25]]) + "\n")
    code, _, err = run(capsys, "extract", bad, "--out", tmp_path / "t.jsonl")
    assert code == 2 and "line 4" in err


def test_degenerate_frame(capsys, tmp_path, drawer_stream):
    L, R = read_hand_frames(drawer_stream)
    J = np.zeros((21, 3))
    J[:, 0] = np.arange(21) * 0.01
    J[:, 2] = 0.8
    L[7].joints = J
    path = tmp_path / "deg.jsonl"
    write_hand_frames(path, L + R)
    code, _, err = run(capsys, "extract", path, "--out", tmp_path / "t.jsonl")
    assert code == 3 and "frame 7" in err


def test_keyframes_constant_and_mixed(capsys, tmp_path):
    p = np.zeros((40, 3))
    write_trajectory(tmp_path / "c.jsonl", trajectory(p, p + 1))
    code, out, _ = run(capsys, "keyframes", tmp_path / "c.jsonl", "--out", tmp_path / "c.json")
    assert code == 0 and json.loads(out)["frames"] == [0, 39]

    x = np.linspace(0, 0.5, 100)
    pl = np.stack([x, np.zeros(100), np.zeros(100)], axis=1)
    pr = pl.copy() + [0, 0.5, 0]
    pr[50:] = pr[50]
    g = np.ones(100, int)
    g[50:] = 0
    write_trajectory(tmp_path / "m.jsonl", trajectory(pl, pr, grip_L=g))
    code, _, err = run(capsys, "keyframes", tmp_path / "m.jsonl", "--out", tmp_path / "m.json")
    assert code == 4, err


def test_seed_is_required(capsys, tmp_path):
    code, _, err = run(capsys, "seeds", "--task", "pour_water", "--out", tmp_path / "s")
    assert code == 2 and "--seed" in err


def test_bad_flag(capsys):
    assert run(capsys, "train", "--no-such-flag")[0] == 2


@pytest.fixture(scope="module")
def seeds_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("seeds")
    assert main(["seeds", "--task", "uncover_lid", "--count", "2", "--seed", "0", "--n-points", "256",
                 "--out", str(d)]) == 0
    return d


def test_proliferate_manifest(capsys, tmp_path, seeds_dir):
    code, out, _ = run(capsys, "proliferate", seeds_dir, "--factor", "3", "--seed", "1", "--out", tmp_path / "ds")
    assert code == 0 and json.loads(out)["demos"] == 6
    assert (tmp_path / "ds" / "manifest.config.json").exists()


def test_invalid_workspace(capsys, tmp_path, seeds_dir):
    ws = tmp_path / "ws.json"
    ws.write_text(json.dumps({"regions": {"0": {"center": [0, 0]}}}))
    code, _, _ = run(capsys, "proliferate", seeds_dir, "--factor", "2", "--seed", "0",
                     "--workspace", ws, "--out", tmp_path / "ds")
    assert code == 5


def test_empty_dataset(capsys, tmp_path):
    (tmp_path / "empty").mkdir()
    code, _, _ = run(capsys, "proliferate", tmp_path / "empty", "--seed", "0", "--out", tmp_path / "ds")
    assert code == 6


def test_train_is_deterministic(capsys, tmp_path, seeds_dir):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("seed = 5\n[train]\nepochs = 2\nbatch = 2\nn_points = 64\n")
    for name in ("a", "b"):
        code, out, err = run(capsys, "train", seeds_dir, "--config", cfg, "--out", tmp_path / f"{name}.ybdp")
        assert code == 0, err
    assert (tmp_path / "a.ybdp").read_bytes() == (tmp_path / "b.ybdp").read_bytes()
    side = json.loads((tmp_path / "a.ybdp.config.json").read_text())
    assert side["config"]["epochs"] == 2 and side["config"]["seed"] == 5
    assert (tmp_path / "a.ybdp.loss.csv").read_text().startswith("step,epoch,loss,lr")

    # a flag beats the config file
    code, _, _ = run(capsys, "train", seeds_dir, "--config", cfg, "--epochs", "1", "--out", tmp_path / "c.ybdp")
    assert json.loads((tmp_path / "c.ybdp.config.json").read_text())["config"]["epochs"] == 1

    code, out, _ = run(capsys, "eval", tmp_path / "a.ybdp", "--trials", "2", "--seed", "0")
    assert code == 0 and json.loads(out)["trials"] == 2

    code, _, _ = run(capsys, "plot", tmp_path / "a.ybdp.loss.csv", "--out", tmp_path / "loss.png")
    assert code == 0 and (tmp_path / "loss.png").stat().st_size > 0


def test_json_config(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 2, "eval": {"trials": 3}}))
    code, out, _ = run(capsys, "eval", "--expert", "--task", "open_box", "--config", cfg, "--out", tmp_path / "s.json")
    assert code == 0
    summary = json.loads((tmp_path / "s.json").read_text())
    assert summary["trials"] == 3 and summary["success_rate"] == 1.0


def test_expert_eval_all_tasks(capsys):
    for task in ("pull_drawer", "pour_water", "unscrew_bottle", "uncover_lid", "open_box"):
        code, out, _ = run(capsys, "eval", "--expert", "--task", task, "--trials", "3", "--seed", "1")
        assert code == 0 and json.loads(out)["success_rate"] == 1.0


def test_plot_trajectory(capsys, tmp_path, drawer_stream):
    assert run(capsys, "extract", drawer_stream, "--out", tmp_path / "t.jsonl")[0] == 0
    code, _, _ = run(capsys, "plot", tmp_path / "t.jsonl", "--out", tmp_path / "t.svg")
    assert code == 0 and (tmp_path / "t.svg").read_text().lstrip().startswith("<?xml")


def test_seeds_from_program(capsys, tmp_path, drawer_stream):
    assert run(capsys, "extract", drawer_stream, "--out", tmp_path / "t.jsonl")[0] == 0
    assert run(capsys, "keyframes", tmp_path / "t.jsonl", "--task", "pull_drawer", "--out", tmp_path / "p.json")[0] == 0
    code, out, err = run(capsys, "seeds", "--task", "pull_drawer", "--program", tmp_path / "p.json", "--seed", "0",
                         "--out", tmp_path / "s")
    assert code == 0, err
    assert json.loads(out)["seeds"] == 1 and (tmp_path / "s" / "seed_0000.ydemo").exists()
