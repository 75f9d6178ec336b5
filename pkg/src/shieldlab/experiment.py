"""One seeded replicate of the full study: data, all model families, every scenario."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .attacks import AttackConfig
from .data import generate_synthetic
from .defense import ShieldEnsemble, shield_accuracy
from .harness import run_gray1, run_gray2, run_shield_tm, run_white
from .slq import DEFAULT_QUALITIES, SlqConfig

log = logging.getLogger(__name__)

_ROLES = {"data": 1, "base": 2, "originative": 3, "plain": 4, "derivative": 5, "attack": 6, "eval": 7}


def derive_seed(seed: int, role: str, k: int = 0) -> int:
    return int(np.random.SeedSequence([seed, _ROLES[role], k]).generate_state(1, np.uint32)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    train_count: int = 1000
    eval_count: int = 200
    qualities: tuple[int, ...] = DEFAULT_QUALITIES
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    gray1_sizes: tuple[int, ...] = (1, 2, 3, 4)
    precision: str = "float32"


@dataclass
class ModelFamilies:
    base: nn.ModelParams
    derivative: list
    originative: list
    plain: nn.ModelParams


def train_families(seed: int, cfg: ExperimentConfig, images, labels) -> ModelFamilies:
    """Base + derivative quartet, originative quartet, and one plain attacker model."""
    base = nn.train(replace(cfg.train, seed=derive_seed(seed, "base"), jpeg_quality=None), images, labels)
    derivative = [
        nn.train(nn.derivative_config(cfg.train, q, seed=derive_seed(seed, "derivative", q)), images, labels, init=base)
        for q in cfg.qualities
    ]
    originative = [
        nn.train(replace(cfg.train, seed=derive_seed(seed, "originative", q), jpeg_quality=q, init="random"), images, labels)
        for q in cfg.qualities
    ]
    plain = nn.train(replace(cfg.train, seed=derive_seed(seed, "plain"), jpeg_quality=None, init="random"), images, labels)
    return ModelFamilies(base, derivative, originative, plain)


def run_replicate(seed: int, cfg: ExperimentConfig = ExperimentConfig()) -> dict:
    """Everything the acceptance trends need for one seed, as plain data."""
    t0 = time.perf_counter()
    train = generate_synthetic(cfg.train_count, derive_seed(seed, "data"), "train")
    test = generate_synthetic(cfg.eval_count, derive_seed(seed, "data"), "eval")
    fam = train_families(seed, cfg, train.images, train.labels)
    train_elapsed = time.perf_counter() - t0
    log.info("replicate %d: trained models in %.1fs", seed, train_elapsed)

    eval_seed = derive_seed(seed, "eval")
    attack = replace(cfg.attack, seed=derive_seed(seed, "attack"))
    slq = SlqConfig(cfg.qualities, seed=eval_seed)
    deriv = ShieldEnsemble(fam.derivative, slq)
    orig = ShieldEnsemble(fam.originative, slq)
    args = (test.images, test.labels, attack, eval_seed, cfg.precision)

    out = {
        "seed": seed,
        "cosine": {
            "derivative": nn.mean_pairwise_cosine(fam.derivative),
            "originative": nn.mean_pairwise_cosine(fam.originative),
        },
        "clean_accuracy": {
            "derivative": shield_accuracy(deriv, test.images, test.labels, eval_seed),
            "originative": shield_accuracy(orig, test.images, test.labels, eval_seed),
        },
        "white": {"derivative": run_white(deriv, *args).to_dict(), "originative": run_white(orig, *args).to_dict()},
    }
    gray1 = {}
    for n in cfg.gray1_sizes:
        gray1[str(n)] = out["white"]["derivative"] if n == len(fam.derivative) else run_gray1(deriv, n, *args).to_dict()
    out["gray1"] = gray1
    out["gray2"] = run_gray2(deriv, fam.originative, *args).to_dict()
    out["shield"] = run_shield_tm(deriv, fam.plain, *args).to_dict()
    out["train_elapsed"] = train_elapsed
    out["elapsed"] = time.perf_counter() - t0
    log.info("replicate %d: done in %.1fs", seed, out["elapsed"])
    return out
