import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from rtcsim.cli import main
from rtcsim.experiments import OUTPUT_ROOT_ENV, load_config
from rtcsim.metrics import read_results, write_results
from rtcsim.rl.policy import PolicyNetwork
from rtcsim.traces import load_trace_dir

REPO = Path(__file__).resolve().parents[1]


@pytest.fixture(autouse=True)
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    return tmp_path


def write_cfg(path: Path, data: dict) -> Path:
    path.write_text(yaml.safe_dump(data))
    return path


def test_gen_traces_deterministic(out_root):
    assert main(["gen-traces", "--count", "4", "--seed", "7", "--out", "a"]) == 0
    assert main(["gen-traces", "--count", "4", "--seed", "7", "--out", "b"]) == 0
    fa = sorted(p.name for p in (out_root / "a").iterdir())
    assert len(fa) == 8
    for name in fa:
        assert (out_root / "a" / name).read_bytes() == (out_root / "b" / name).read_bytes()
    assert len(load_trace_dir(out_root / "a")) == 4


def test_gen_traces_refuses_overwrite(out_root):
    assert main(["gen-traces", "--count", "1", "--out", "a"]) == 0
    assert main(["gen-traces", "--count", "1", "--out", "a"]) == 1
    assert main(["gen-traces", "--count", "2", "--out", "a", "--force"]) == 0
    assert len(list((out_root / "a").glob("*.txt"))) == 2


def test_gen_traces_bad_input():
    assert main(["gen-traces", "--bandwidth", "3,1", "--out", "x"]) == 1
    assert main(["gen-traces", "--bandwidth", "abc", "--out", "x"]) == 1
    assert main(["gen-traces", "--count", "0", "--out", "x"]) == 1
    assert main(["no-such-command"]) == 1


def _train_cfg(tmp_path, steps=0):
    return write_cfg(tmp_path / "train.yaml", {
        "profiles": {"count": 1},
        "train": {"total_steps": steps, "eval_every": 60, "episode_s": 3,
                  "ppo": {"rollout_steps": 1, "minibatch": 32, "epochs": 1},
                  "traces": {"generate": {"count": 2, "seed": 3, "duration_s": 3}},
                  "validation": {"generate": {"count": 1, "seed": 4, "duration_s": 3}}},
    })


def test_train_zero_steps(tmp_path, out_root):
    assert main(["train", "--config", str(_train_cfg(tmp_path)), "--out", "run"]) == 0
    run = out_root / "run"
    for f in ("checkpoint.json", "policy.json", "curve.csv", "episodes.csv", "actions.csv"):
        assert (run / f).is_file()
    assert (run / "curve.csv").read_text().strip().count("\n") == 0


def test_train_resume_matches_straight_run(tmp_path, out_root):
    cfg = str(_train_cfg(tmp_path, steps=180))
    assert main(["train", "--config", cfg, "--out", "straight"]) == 0
    assert main(["train", "--config", cfg, "--out", "split", "--stop-after", "70"]) == 0
    assert main(["train", "--out", "split", "--resume"]) == 0
    a = json.loads((out_root / "straight" / "policy.json").read_text())
    b = json.loads((out_root / "split" / "policy.json").read_text())
    assert a == b
    assert main(["train", "--config", cfg, "--out", "straight"]) == 1
    assert main(["train", "--out", "nothing-here", "--resume"]) == 1


def _eval_cfg(tmp_path, checkpoint="ckpt/policy.json"):
    return write_cfg(tmp_path / "eval.yaml", {
        "traces": {"generate": {"count": 2, "seed": 11, "duration_s": 4}},
        "profiles": {"count": 2},
        "seeds": [0],
        "controllers": [{"name": "oracle", "kind": "oracle"}, {"name": "gcc_like", "kind": "gcc"},
                        {"name": "agent", "kind": "rl", "checkpoint": checkpoint}],
    })


def _make_policy(tmp_path):
    (tmp_path / "ckpt").mkdir(exist_ok=True)
    PolicyNetwork.init(np.random.default_rng(0)).save(tmp_path / "ckpt" / "policy.json")


def test_eval_matrix_and_determinism(tmp_path, out_root):
    _make_policy(tmp_path)
    cfg = str(_eval_cfg(tmp_path))
    assert main(["eval", "--config", cfg, "--out", "e1"]) == 0
    assert main(["eval", "--config", cfg, "--out", "e2", "--workers", "2"]) == 0
    rows = read_results(out_root / "e1" / "results.csv")
    assert len(rows) == 12
    assert (out_root / "e1" / "results.csv").read_bytes() == (out_root / "e2" / "results.csv").read_bytes()
    assert len(list((out_root / "e1" / "sessions").glob("*.ndjson"))) == 12
    summary = json.loads((out_root / "e1" / "summary.json").read_text())
    assert summary["sessions"] == 12
    assert main(["eval", "--config", cfg, "--out", "e1"]) == 1


def test_eval_missing_checkpoint_exits_1(tmp_path, out_root):
    cfg = str(_eval_cfg(tmp_path, checkpoint="nowhere/policy.json"))
    assert main(["eval", "--config", cfg, "--out", "e", "--no-logs"]) == 1
    rows = read_results(out_root / "e" / "results.csv")
    assert {r["controller"] for r in rows} == {"oracle", "gcc_like"}


def test_eval_bad_config(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("controllers: [{kind: warp}]\ntraces: {generate: {count: 1}}\n")
    assert main(["eval", "--config", str(bad)]) == 1
    bad.write_text("a: [unclosed\n")
    assert main(["eval", "--config", str(bad)]) == 1
    assert main(["eval", "--config", str(tmp_path / "missing.yaml")]) == 1


def test_report_outputs(tmp_path, out_root):
    _make_policy(tmp_path)
    assert main(["eval", "--config", str(_eval_cfg(tmp_path)), "--out", "e", "--no-logs"]) == 0
    assert main(["train", "--config", str(_train_cfg(tmp_path, steps=120)), "--out", "run"]) == 0
    assert main(["report", "--results", str(out_root / "e"), "--runs", str(out_root / "run"),
                 "--out", "rep"]) == 0
    rep = out_root / "rep"
    for f in ("summary.txt", "qoe_bars.svg", "learning_curves.svg", "action_cdf.svg"):
        assert (rep / f).is_file()
    text = (rep / "summary.txt").read_text()
    assert text.startswith("sessions: 12")
    assert "rate-increase action share" in text


def test_report_on_empty_results(tmp_path, out_root):
    empty = tmp_path / "results.csv"
    write_results([], empty)
    assert main(["report", "--results", str(empty), "--out", "rep"]) == 0
    assert (out_root / "rep" / "summary.txt").read_text() == "sessions: 0\n"
    assert main(["report", "--results", str(tmp_path / "nope.csv"), "--out", "rep2"]) == 1


def test_console_script_exit_codes(tmp_path):
    env = {"PATH": "/usr/bin:/bin", OUTPUT_ROOT_ENV: str(tmp_path)}
    ok = subprocess.run([sys.executable, "-m", "rtcsim.cli", "gen-traces", "--count", "1", "--out", "t"],
                        env=env, capture_output=True, text=True)
    assert ok.returncode == 0 and (tmp_path / "t").is_dir()
    bad = subprocess.run([sys.executable, "-m", "rtcsim.cli", "eval"], env=env, capture_output=True, text=True)
    assert bad.returncode == 1
    assert "--config" in bad.stderr


def test_example_configs_parse():
    for name in ("eval.yaml", "train_nvc.yaml", "train_onrl.yaml"):
        cfg = load_config(REPO / "configs" / name)
        assert cfg.name
