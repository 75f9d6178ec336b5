"""``shieldlab`` command line: dataset, train, attack, eval, replicate.

Each command prints exactly one JSON object on stdout. Logs go to stderr.
Exit codes: 0 ok, 1 usage or config error, 2 I/O error, 3 invariant violated.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import nn
from .attacks import least_likely_target, make_surrogate, pgd_attack, sidecar_records, write_sidecar
from .config import ConfigError, RunConfig
from .core import batch_perturbation_stats
from .data import ContainerError, LabeledDataset, generate_synthetic, quantize_8bit, read_container, write_container
from .defense import ShieldEnsemble
from .jpeg import jpeg_round_trip
from .harness import ThreatModel, curve_csv, run_scenario, security_curve

log = logging.getLogger("shieldlab")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InvariantError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _paths(text: str) -> list[str]:
    items = [p for p in text.split(",") if p]
    if not items:
        raise UsageError("empty model list")
    return items


def _load_models(paths) -> list:
    models = [nn.load_checkpoint(p) for p in paths]
    if any(m.spec != models[0].spec for m in models):
        raise UsageError("model spec mismatch across checkpoints")
    return models


def _datasets(cfg: RunConfig) -> tuple[LabeledDataset, LabeledDataset]:
    train_path, eval_path = cfg.get("dataset", "train_path"), cfg.get("dataset", "eval_path")
    seed = None if train_path and eval_path else cfg.seed("dataset")
    train = (
        read_container(cfg.path(train_path), "train")
        if train_path
        else generate_synthetic(cfg.get("dataset", "train_count", 1000), seed, "train")
    )
    test = (
        read_container(cfg.path(eval_path), "eval")
        if eval_path
        else generate_synthetic(cfg.get("dataset", "eval_count", 200), seed, "eval")
    )
    return train, test


def cmd_dataset(args) -> int:
    ds = generate_synthetic(args.count, args.seed, args.split)
    write_container(ds, args.out)
    _emit(ds.class_counts())
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.lineage == "base":
        if args.quality is not None:
            raise UsageError("a base model is trained on uncompressed images; drop --quality")
    elif args.quality is None:
        raise UsageError(f"--quality is required for a {args.lineage} model")
    if args.lineage == "derivative" and not args.base:
        raise UsageError("a derivative model needs --base")
    tcfg = cfg.train_config(args.seed)
    train, test = _datasets(cfg)
    if args.lineage == "derivative":
        base = nn.load_checkpoint(args.base)
        model = nn.train(nn.derivative_config(tcfg, args.quality), train.images, train.labels, init=base)
    else:
        model = nn.train(replace(tcfg, jpeg_quality=args.quality), train.images, train.labels)
    nn.save_checkpoint(model, args.out)
    seen = (lambda x: x) if args.quality is None else (lambda x: jpeg_round_trip(x, args.quality))
    _emit(
        {
            "lineage": model.lineage,
            "quality": model.train_quality,
            "seed": model.seed,
            "train_accuracy": nn.accuracy(model, seen(train.images), train.labels),
            "eval_accuracy": nn.accuracy(model, seen(test.images), test.labels),
        }
    )
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = RunConfig.load(args.config)
    adaptive = args.adaptive == "on"
    acfg = cfg.attack_config(adaptive=adaptive)
    models = _load_models(_paths(args.models))
    ds = read_container(args.inp)
    s = make_surrogate(models, cfg.qualities, adaptive=adaptive, precision=cfg.precision)
    targets = np.atleast_1d(least_likely_target(s, ds.images))
    adv = pgd_attack(s, ds.images, targets, acfg)
    write_container(LabeledDataset(adv, ds.labels, ds.split), args.out)
    stored = quantize_8bit(adv)
    records = sidecar_records(stored, ds.images, targets, acfg.iterations)
    linf, _ = batch_perturbation_stats(stored, ds.images)
    if linf.size and linf.max() > acfg.eps + 1 / 510 + 1e-12:
        raise InvariantError(f"stored perturbation {linf.max():.6f} exceeds eps {acfg.eps:.6f} plus rounding slack")
    config = acfg.to_dict()
    config.update(qualities=list(cfg.qualities), precision=cfg.precision, models=[_digest(p) for p in _paths(args.models)])
    sidecar = args.sidecar or f"{args.out}.json"
    write_sidecar(sidecar, records, config)
    _emit(
        {
            "images": int(len(adv)),
            "adaptive": adaptive,
            "max_linf": float(linf.max()) if linf.size else 0.0,
            "out": str(args.out),
            "sidecar": str(sidecar),
        }
    )
    return EXIT_OK


def _eps_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --curve list {text!r}") from exc
    if not values or min(values) < 0:
        raise UsageError("--curve needs nonnegative eps values")
    return values


def cmd_eval(args) -> int:
    try:
        tm = ThreatModel.parse(args.scenario)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    eps_list = _eps_list(args.curve) if args.curve is not None else None
    cfg = RunConfig.load(args.config)
    slq = cfg.slq_config()
    acfg = cfg.attack_config(adaptive=tm.kind != "shield")
    defender_paths = _paths(args.defender)
    defender = ShieldEnsemble(_load_models(defender_paths), slq)
    if tm.kind == "gray1" and tm.n > len(defender.models):
        raise UsageError(f"gray1:{tm.n} needs at least {tm.n} defender models")
    test = read_container(args.data) if args.data else _datasets(cfg)[1]

    extra = {"defender": [_digest(p) for p in defender_paths]}
    proxies = plain = None
    if tm.kind == "gray2":
        proxy_paths = [cfg.path(p) for p in cfg.get("scenario", "proxies", [])]
        if not proxy_paths:
            raise UsageError("gray2 needs scenario.proxies in the config")
        proxies = _load_models(proxy_paths)
        extra["proxies"] = [_digest(p) for p in proxy_paths]
    elif tm.kind == "shield":
        plain_path = cfg.get("scenario", "plain_model")
        if not plain_path:
            raise UsageError("shield needs scenario.plain_model in the config")
        plain = nn.load_checkpoint(cfg.path(plain_path))
        extra["plain_model"] = _digest(cfg.path(plain_path))

    report = run_scenario(tm, defender, test.images, test.labels, acfg, slq.seed, proxies, plain, cfg.precision)
    report.config.update(extra)
    Path(args.report).write_text(report.to_json(), encoding="utf-8")
    out = {
        "threat_model": report.threat_model,
        "attack_success_rate": report.attack_success_rate,
        "accuracy": report.accuracy,
        "clean_accuracy": report.clean_accuracy,
        "trials": report.trials,
        "report": str(args.report),
    }
    if eps_list is not None:
        rows = security_curve(defender, test.images, test.labels, eps_list, acfg, slq.seed, cfg.precision)
        curve_path = cfg.get("output", "curve")
        curve_path = cfg.path(curve_path) if curve_path else Path(args.report).with_suffix(".csv")
        Path(curve_path).write_text(curve_csv(rows), encoding="utf-8")
        out["curve"] = str(curve_path)
    _emit(out)
    return EXIT_OK


def cmd_replicate(args) -> int:
    from .experiment import run_replicate

    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise UsageError("no seeds given")
    results = [run_replicate(s) for s in seeds]
    Path(args.out).write_text(json.dumps(results, indent=2) + "\n", encoding="utf-8")
    _emit({"seeds": seeds, "out": str(args.out), "elapsed": [r["elapsed"] for r in results]})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="shieldlab", description="JPEG-ensemble defense threat-model lab")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("dataset", help="synthetic dataset tools")
    dsub = d.add_subparsers(dest="action", required=True, parser_class=_Parser)
    g = dsub.add_parser("gen", help="write a synthetic ADVD container")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--split", choices=("train", "eval"), default="eval")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_dataset)

    t = sub.add_parser("train", help="train one model checkpoint")
    t.add_argument("--config", required=True)
    t.add_argument("--lineage", choices=nn.LINEAGES, required=True)
    t.add_argument("--quality", type=int)
    t.add_argument("--base")
    t.add_argument("--seed", type=int, help="overrides train.seed")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="craft adversarial images")
    a.add_argument("--config", required=True)
    a.add_argument("--models", required=True, help="comma-separated checkpoints")
    a.add_argument("--adaptive", choices=("on", "off"), default="on")
    a.add_argument("--in", dest="inp", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--sidecar")
    a.set_defaults(func=cmd_attack)

    e = sub.add_parser("eval", help="run one threat-model scenario")
    e.add_argument("--config", required=True)
    e.add_argument("--scenario", required=True, help="white | gray1:N | gray2 | shield")
    e.add_argument("--defender", required=True, help="comma-separated checkpoints")
    e.add_argument("--report", required=True)
    e.add_argument("--curve", help="comma-separated eps values")
    e.add_argument("--data", help="ADVD evaluation set (defaults to the config's)")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("replicate", help="full study for the given seeds")
    r.add_argument("--seeds", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_replicate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ContainerError, nn.CheckpointError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (UsageError, ConfigError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except InvariantError as exc:
        log.error("invariant violated: %s", exc)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
