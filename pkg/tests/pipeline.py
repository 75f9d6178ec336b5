"""Scripted end-to-end CLI run used by the CLI tests and the determinism check."""

import contextlib
import io
import json
from pathlib import Path

from shieldlab.cli import main

SMALL_CONFIG = {
    "dataset": {"train_path": "train.advd", "eval_path": "eval.advd"},
    "train": {"seed": 1, "epochs": 2},
    "slq": {"seed": 11},
    "attack": {"seed": 21, "iterations": 3},
    "scenario": {"proxies": ["orig40.bin"], "plain_model": "base.bin"},
}


def run_cli(*argv):
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main([str(a) for a in argv])
    text = out.getvalue()
    return code, (json.loads(text) if text.strip() else None)


def _ok(*argv):
    code, doc = run_cli(*argv)
    assert code == 0, (argv, code)
    return doc


def scripted_pipeline(workdir) -> dict[str, bytes]:
    """Run the whole CLI pipeline in ``workdir``; return every artifact's bytes."""
    d = Path(workdir)
    d.mkdir(parents=True, exist_ok=True)
    cfg = d / "run.json"
    cfg.write_text(json.dumps(SMALL_CONFIG))
    _ok("dataset", "gen", "--count", 120, "--seed", 5, "--split", "train", "--out", d / "train.advd")
    _ok("dataset", "gen", "--count", 12, "--seed", 5, "--split", "eval", "--out", d / "eval.advd")
    _ok("train", "--config", cfg, "--lineage", "base", "--out", d / "base.bin")
    ders = []
    for q in (20, 40, 60, 80):
        path = d / f"der{q}.bin"
        _ok("train", "--config", cfg, "--lineage", "derivative", "--quality", q, "--base", d / "base.bin", "--seed", 100 + q, "--out", path)
        ders.append(str(path))
    _ok("train", "--config", cfg, "--lineage", "originative", "--quality", 40, "--seed", 7, "--out", d / "orig40.bin")
    defender = ",".join(ders)
    _ok("attack", "--config", cfg, "--models", defender, "--adaptive", "on", "--in", d / "eval.advd", "--out", d / "adv.advd")
    _ok("eval", "--config", cfg, "--scenario", "white", "--defender", defender, "--report", d / "white.json", "--curve", "0,0.03")
    _ok("eval", "--config", cfg, "--scenario", "gray1:2", "--defender", defender, "--report", d / "gray1.json")
    names = ["train.advd", "eval.advd", "base.bin", *[Path(p).name for p in ders], "orig40.bin", "adv.advd", "adv.advd.json", "white.json", "white.csv", "gray1.json"]
    return {n: (d / n).read_bytes() for n in names}
