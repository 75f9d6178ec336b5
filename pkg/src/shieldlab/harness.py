"""Threat-model scenarios, attack success rate, reports and security curves.

Scenarios, ordered by decreasing attacker knowledge:

* ``white``   all defender weights, SLQ qualities, adaptive attack
* ``gray1:n`` every n-subset of the defender models, adaptive attack
* ``gray2``   independently trained proxy models, adaptive attack
* ``shield``  one plain model, no compression in the gradient path
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from .attacks import AttackConfig, least_likely_target, make_surrogate, pgd_attack
from .core import batch_perturbation_stats
from .defense import ShieldEnsemble, shield_predict_batch

# ImageNet / ResNet-50 v2 values published for the original evaluation; kept
# as metadata only, the desk-scale setup does not try to match them.
PUBLISHED_REFERENCE = {
    "white": {
        "derivative": {"attack_success_rate": 0.643, "accuracy": 0.017},
        "originative": {"attack_success_rate": 0.489, "accuracy": 0.022},
    },
    "gray2": {
        "attack_success_rate": 0.0,
        "accuracy_by_proxies_known": {"1": 0.303, "2": 0.265, "3": 0.231, "4": 0.214},
        "clean_accuracy": 0.633,
    },
    "shield": {"attack_success_rate": 0.0, "derivative_accuracy": [0.633, 0.381], "originative_accuracy": [0.77, 0.423]},
    "weight_cosine": {"derivative": 0.64, "originative": 0.42},
}


@dataclass(frozen=True)
class ThreatModel:
    kind: str
    n: int | None = None

    KINDS = ("white", "gray1", "gray2", "shield")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown threat model {self.kind!r}")
        if self.kind == "gray1" and (self.n is None or self.n < 1):
            raise ValueError("gray1 needs n >= 1")

    @classmethod
    def parse(cls, text: str) -> "ThreatModel":
        kind, _, arg = text.strip().partition(":")
        if kind == "gray1":
            if not arg.isdigit():
                raise ValueError(f"malformed scenario {text!r}; expected gray1:N")
            return cls("gray1", int(arg))
        if arg or kind not in cls.KINDS:
            raise ValueError(f"malformed scenario {text!r}")
        return cls(kind)

    def label(self) -> str:
        return f"gray1:{self.n}" if self.kind == "gray1" else self.kind


@dataclass
class ScenarioReport:
    threat_model: str
    attack_success_rate: float
    accuracy: float
    clean_accuracy: float
    trials: int
    per_trial: list[dict]
    perturbation: dict
    config: dict
    reference: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "threat_model": self.threat_model,
            "attack_success_rate": self.attack_success_rate,
            "accuracy": self.accuracy,
            "clean_accuracy": self.clean_accuracy,
            "trials": self.trials,
            "per_trial": self.per_trial,
            "perturbation": self.perturbation,
            "config": self.config,
            "reference": self.reference,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def _member_id(e: ShieldEnsemble, i: int) -> str:
    q = e.models[i].train_quality
    return f"M{q}" if q is not None else f"model{i}"


def attack_success_rate(defender: ShieldEnsemble, adv_images, targets, seed: int) -> float:
    """Fraction of images the defender labels exactly as the attacker's target."""
    adv_images = np.asarray(adv_images, dtype=np.float64)
    targets = np.asarray(targets)
    if len(adv_images) != len(targets):
        raise ValueError("adversarial images and targets differ in length")
    if len(targets) == 0:
        return 0.0
    preds, _ = shield_predict_batch(defender, adv_images, seed)
    return float(np.mean(preds == targets))


@dataclass
class _Harness:
    defender: ShieldEnsemble
    images: np.ndarray
    labels: np.ndarray
    cfg: AttackConfig
    eval_seed: int
    precision: str = "float32"
    _clean: float | None = None

    def clean_accuracy(self) -> float:
        if self._clean is None:
            preds, _ = shield_predict_batch(self.defender, self.images, self.eval_seed)
            self._clean = float(np.mean(preds == self.labels))
        return self._clean

    def attack(self, models, qualities, adaptive: bool):
        s = make_surrogate(models, qualities, adaptive=adaptive, precision=self.precision)
        targets = least_likely_target(s, self.images)
        adv = pgd_attack(s, self.images, targets, self.cfg)
        return adv, np.atleast_1d(targets)

    def score(self, defender: ShieldEnsemble, adv, targets) -> tuple[float, float]:
        preds, _ = shield_predict_batch(defender, adv, self.eval_seed)
        return float(np.mean(preds == targets)), float(np.mean(preds == self.labels))

    def config(self, adaptive: bool, **extra) -> dict:
        cfg = replace(self.cfg, adaptive=adaptive).to_dict()
        cfg.update(
            qualities=list(self.defender.slq.qualities),
            attack_seed=self.cfg.seed,
            eval_seed=self.eval_seed,
            images=int(len(self.images)),
            precision=self.precision,
        )
        cfg.update(extra)
        return cfg

    def report(self, tm: str, trials: list[dict], advs: list, adaptive: bool, reference=None, **extra) -> ScenarioReport:
        linf = np.concatenate([batch_perturbation_stats(a, self.images)[0] for a in advs])
        l2 = np.concatenate([batch_perturbation_stats(a, self.images)[1] for a in advs])
        return ScenarioReport(
            threat_model=tm,
            attack_success_rate=float(np.mean([t["attack_success_rate"] for t in trials])),
            accuracy=float(np.mean([t["accuracy"] for t in trials])),
            clean_accuracy=self.clean_accuracy(),
            trials=len(trials),
            per_trial=trials,
            perturbation={
                "mean_linf": float(linf.mean()),
                "max_linf": float(linf.max()),
                "mean_l2": float(l2.mean()),
                "max_l2": float(l2.max()),
                "min_value": float(min(a.min() for a in advs)),
                "max_value": float(max(a.max() for a in advs)),
            },
            config=self.config(adaptive, **extra),
            reference=reference or {},
        )


def _harness(defender, images, labels, cfg, eval_seed, precision) -> _Harness:
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0 or len(images) != len(labels):
        raise ValueError("need a nonempty dataset with one label per image")
    return _Harness(defender, images, labels, cfg, eval_seed, precision)


def _subset_trials(h: _Harness, n: int):
    trials, advs = [], []
    k = len(h.defender.models)
    for subset in combinations(range(k), n):
        adv, targets = h.attack([h.defender.models[i] for i in subset], h.defender.slq.qualities, adaptive=True)
        success, acc = h.score(h.defender, adv, targets)
        trials.append(
            {
                "models": [_member_id(h.defender, i) for i in subset],
                "attack_success_rate": success,
                "accuracy": acc,
            }
        )
        advs.append(adv)
    return trials, advs


def run_white(defender: ShieldEnsemble, images, labels, cfg: AttackConfig, eval_seed: int, precision="float32") -> ScenarioReport:
    h = _harness(defender, images, labels, cfg, eval_seed, precision)
    trials, advs = _subset_trials(h, len(defender.models))
    return h.report("white", trials, advs, adaptive=True, reference=PUBLISHED_REFERENCE["white"])


def run_gray1(defender: ShieldEnsemble, n: int, images, labels, cfg: AttackConfig, eval_seed: int, precision="float32") -> ScenarioReport:
    """Average over all C(K, n) subsets of defender models known to the attacker."""
    if not 1 <= n <= len(defender.models):
        raise ValueError(f"gray1 needs 1 <= n <= {len(defender.models)}, got {n}")
    h = _harness(defender, images, labels, cfg, eval_seed, precision)
    trials, advs = _subset_trials(h, n)
    return h.report(f"gray1:{n}", trials, advs, adaptive=True)


def run_gray2(
    defender: ShieldEnsemble,
    proxies: list,
    images,
    labels,
    cfg: AttackConfig,
    eval_seed: int,
    precision="float32",
) -> ScenarioReport:
    """Transfer from the attacker's own proxies; one trial per number of proxies known.

    Trial ``k`` attacks the first ``k`` proxies. Each trial is scored against
    the full defender and against every defender member on its own (SLQ plus
    that single model).
    """
    if not proxies:
        raise ValueError("gray2 needs at least one proxy model")
    h = _harness(defender, images, labels, cfg, eval_seed, precision)
    singles = [ShieldEnsemble([m], defender.slq) for m in defender.models]
    trials, advs = [], []
    for k in range(1, len(proxies) + 1):
        adv, targets = h.attack(proxies[:k], defender.slq.qualities, adaptive=True)
        success, acc = h.score(defender, adv, targets)
        members = {}
        for i, single in enumerate(singles):
            s_i, a_i = h.score(single, adv, targets)
            members[_member_id(defender, i)] = {"attack_success_rate": s_i, "accuracy": a_i}
        trials.append(
            {
                "models": [f"proxy{i}" for i in range(k)],
                "proxies_known": k,
                "attack_success_rate": success,
                "accuracy": acc,
                "members": members,
            }
        )
        advs.append(adv)
    return h.report("gray2", trials, advs, adaptive=True, reference=PUBLISHED_REFERENCE["gray2"])


def run_shield_tm(defender: ShieldEnsemble, plain_model, images, labels, cfg: AttackConfig, eval_seed: int, precision="float32") -> ScenarioReport:
    """Non-adaptive transfer attack from one separately trained plain model."""
    h = _harness(defender, images, labels, cfg, eval_seed, precision)
    adv, targets = h.attack([plain_model], (), adaptive=False)
    success, acc = h.score(defender, adv, targets)
    trials = [{"models": ["plain"], "attack_success_rate": success, "accuracy": acc}]
    return h.report("shield", trials, [adv], adaptive=False, reference=PUBLISHED_REFERENCE["shield"])


def run_scenario(tm: ThreatModel, defender, images, labels, cfg, eval_seed, proxies=None, plain_model=None, precision="float32"):
    if tm.kind == "white":
        return run_white(defender, images, labels, cfg, eval_seed, precision)
    if tm.kind == "gray1":
        return run_gray1(defender, tm.n, images, labels, cfg, eval_seed, precision)
    if tm.kind == "gray2":
        if not proxies:
            raise ValueError("gray2 needs proxy models")
        return run_gray2(defender, proxies, images, labels, cfg, eval_seed, precision)
    if plain_model is None:
        raise ValueError("shield scenario needs a plain attacker model")
    return run_shield_tm(defender, plain_model, images, labels, cfg, eval_seed, precision)


def security_curve(defender: ShieldEnsemble, images, labels, eps_list, cfg: AttackConfig, eval_seed: int, precision="float32") -> list[tuple[float, float, float]]:
    """White-box (eps, attack success rate, accuracy) rows, sorted by eps."""
    eps_list = sorted(float(e) for e in eps_list)
    if not eps_list or eps_list[0] < 0:
        raise ValueError("eps list must be nonempty and non-negative")
    rows = []
    for eps in eps_list:
        r = run_white(defender, images, labels, replace(cfg, eps=eps, alpha=None), eval_seed, precision)
        rows.append((eps, r.attack_success_rate, r.accuracy))
    return rows


def curve_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eps", "attack_success_rate", "accuracy"])
    for eps, success, acc in rows:
        w.writerow([f"{eps:.6f}", f"{success:.6f}", f"{acc:.6f}"])
    return buf.getvalue()
