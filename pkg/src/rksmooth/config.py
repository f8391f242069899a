"""Run configuration: a nested YAML (or JSON) document validated against
:data:`DEFAULTS`.

Every key that may appear is listed in :data:`DEFAULTS` together with its
default value; unknown keys and wrongly typed values are rejected with the
dotted path of the offending key. The full key reference lives in the README.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from .attack import AttackConfig
from .data import Dataset, load_idx, make_circles, make_spirals
from .errors import ConfigError
from .model import ModelConfig
from .strategy import Fixed, Smoothing, SolverStrategy, strategy_from_dict
from .tableau import ParamPoint
from .train import CyclicLrSchedule, OptimizerState, TrainConfig

SCHEMA_VERSION = 1

ATTACK_DEFAULTS = {
    "kind": "pgd",
    "epsilon": 8 / 255,
    "alpha": 2 / 255,
    "iterations": 7,
    "random_start": True,
    "lo": 0.0,
    "hi": 1.0,
}

DEFAULTS = {
    "version": SCHEMA_VERSION,
    "seed": 0,
    "data": {
        "kind": "spirals",  # spirals | circles | idx
        "n_per_class": 500,
        "classes": 2,
        "noise": 0.05,
        "turns": 1.0,
        "n": 1000,
        "gap": 0.5,
        "images": None,
        "labels": None,
        "limit": None,
        "fractions": [0.7, 0.15, 0.15],
    },
    "model": {
        "state_dim": 32,
        "hidden_dim": 64,
        "n_blocks": 1,
        "activation": "gelu",
        "head_activation": "gelu",
        "zero_init_rhs": False,
        "n_steps": 8,
        "t0": 0.0,
        "t1": 1.0,
    },
    "strategy": {
        "kind": "fixed",  # fixed | switching | smoothing | ensemble
        "point": {"family": "rk2_u", "params": [0.5]},
        "points": None,
        "weights": None,
        "base": {"family": "rk2_u", "params": [0.5]},
        "distribution": "normal",
        "scale": [0.0125],
        "per_batch": False,
    },
    "train": {
        "epochs": 50,
        "batch_size": 16,
        "optimizer": {"kind": "rmsprop", "momentum": 0.9, "decay": 0.99, "eps": 1e-8},
        "schedule": {
            "kind": "one_cycle",  # one_cycle | cyclic | constant
            "base_lr": 5e-5,
            "max_lr": 5e-3,
            "step_size_up": 2000,
            "step_size_down": 2000,
        },
        "lr": 0.01,
        "grad_clip": None,
        "adversarial": None,  # attack section, e.g. {kind: fgsm_random, epsilon: 0.0314}
        "robust_eval": False,
    },
    "attack": dict(ATTACK_DEFAULTS),
    "eval": {"solver": "base", "batch_size": 512},
    "sweep": {
        "family": "rk2_u",
        "u_grid": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
        "epsilons": [0.0, 2 / 255, 8 / 255],
        "attack": "fgsm",
        "seeds": [0, 1, 2],
    },
    "compare": {
        "seeds": [0, 1, 2],
        "schedules": ["standard", "smoothing", "adversarial", "smoothing+adversarial"],
        "epsilon": 8 / 255,
    },
}

# training-time attack: alpha null means the kind's own default step
ADVERSARIAL_DEFAULTS = {
    "kind": "fgsm_random",
    "epsilon": 8 / 255,
    "alpha": None,
    "iterations": 1,
    "random_start": True,
    "lo": 0.0,
    "hi": 1.0,
}

# keys whose default is null but which accept a nested section
NULLABLE_SECTIONS = {"train.adversarial": ADVERSARIAL_DEFAULTS}
# keys whose default is null but which accept a free-form value
FREE_KEYS = {"train.adversarial.alpha", "strategy.points", "strategy.weights", "data.images", "data.labels", "data.limit", "train.grad_clip"}
CHOICES = {
    "data.kind": ("spirals", "circles", "idx"),
    "strategy.kind": ("fixed", "switching", "smoothing", "ensemble"),
    "strategy.distribution": ("normal", "cauchy"),
    "train.optimizer.kind": ("sgd_momentum", "rmsprop"),
    "train.schedule.kind": ("one_cycle", "cyclic", "constant"),
    "attack.kind": ("fgsm", "fgsm_random", "pgd"),
    "train.adversarial.kind": ("fgsm", "fgsm_random", "pgd"),
    "eval.solver": ("base", "sampled"),
    "sweep.attack": ("fgsm", "fgsm_random", "pgd"),
}
COMPARE_SCHEDULES = ("standard", "smoothing", "adversarial", "smoothing+adversarial")


def _type_ok(default, value) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def _merge(defaults: dict, given: dict, prefix: str = "") -> dict:
    if not isinstance(given, dict):
        raise ConfigError("expected a mapping", prefix or "<root>")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown key (allowed: {', '.join(sorted(defaults))})", path)
        default = defaults[key]
        if path in NULLABLE_SECTIONS and value is not None:
            out[key] = _merge(NULLABLE_SECTIONS[path], value, path + ".")
        elif isinstance(default, dict) and path not in ("strategy.point", "strategy.base"):
            out[key] = _merge(default, value, path + ".")
        elif path in FREE_KEYS or default is None:
            out[key] = value
        elif not _type_ok(default, value):
            raise ConfigError(f"expected {type(default).__name__}, got {type(value).__name__}", path)
        else:
            out[key] = value
        if path in CHOICES and out[key] is not None and out[key] not in CHOICES[path]:
            raise ConfigError(f"must be one of {CHOICES[path]}, got {out[key]!r}", path)
    return out


class RunConfig:
    """A validated, fully-defaulted configuration document."""

    def __init__(self, doc: dict | None = None):
        doc = {} if doc is None else doc
        merged = _merge(DEFAULTS, doc)
        if merged["version"] != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema version {merged['version']}", "version")
        for name in merged["compare"]["schedules"]:
            if name not in COMPARE_SCHEDULES:
                raise ConfigError(f"unknown schedule {name!r}", "compare.schedules")
        self.doc = merged
        # build once so invalid solver/attack settings fail early
        self.strategy()
        self.attack()
        self.adversarial()

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
        return cls(doc)

    def with_seed(self, seed: int) -> "RunConfig":
        doc = copy.deepcopy(self.doc)
        doc["seed"] = int(seed)
        return RunConfig(doc)

    def __getitem__(self, key):
        return self.doc[key]

    def canonical(self) -> str:
        return json.dumps(self.doc, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:10]

    def dump(self) -> str:
        return yaml.safe_dump(self.doc, sort_keys=False)

    # --- builders -----------------------------------------------------------

    def dataset(self) -> Dataset:
        d, seed = self.doc["data"], self.doc["seed"]
        fractions = tuple(d["fractions"])
        if d["kind"] == "spirals":
            return make_spirals(d["n_per_class"], d["classes"], d["noise"], seed, d["turns"], fractions)
        if d["kind"] == "circles":
            return make_circles(d["n"], d["gap"], d["noise"], seed, fractions)
        if not d["images"] or not d["labels"]:
            raise ConfigError("idx data needs both images and labels paths", "data")
        return load_idx(d["images"], d["labels"], d["limit"], fractions, seed)

    def model_config(self, input_dim: int, num_classes: int) -> ModelConfig:
        return ModelConfig(input_dim=input_dim, num_classes=num_classes, **self.doc["model"])

    def strategy(self) -> SolverStrategy:
        s = self.doc["strategy"]
        try:
            if s["kind"] == "fixed":
                return strategy_from_dict({"kind": "fixed", "point": s["point"]})
            if s["kind"] == "smoothing":
                return strategy_from_dict({k: s[k] for k in ("kind", "base", "distribution", "scale", "per_batch")})
            if not s["points"]:
                raise ConfigError(f"{s['kind']} needs a non-empty points list", "strategy.points")
            return strategy_from_dict({"kind": s["kind"], "points": s["points"], "weights": s["weights"]})
        except ConfigError:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(str(exc), "strategy") from None

    def base_point(self) -> ParamPoint:
        s = self.doc["strategy"]
        return ParamPoint.from_dict(s["base"] if s["kind"] == "smoothing" else s["point"])

    def smoothing(self) -> Smoothing:
        s = self.doc["strategy"]
        return Smoothing(self.base_point(), s["distribution"], tuple(s["scale"]), s["per_batch"])

    def attack(self, **overrides) -> AttackConfig:
        try:
            return AttackConfig(**{**self.doc["attack"], **overrides})
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), "attack") from None

    def adversarial(self) -> AttackConfig | None:
        adv = self.doc["train"]["adversarial"]
        if adv is None:
            return None
        try:
            return AttackConfig(**adv)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), "train.adversarial") from None

    def train_config(
        self,
        strategy: SolverStrategy | None = None,
        adversarial: AttackConfig | None | str = "config",
    ) -> TrainConfig:
        t = self.doc["train"]
        opt = OptimizerState(**t["optimizer"])
        sched = t["schedule"]
        schedule, one_cycle = None, None
        if sched["kind"] == "cyclic":
            schedule = CyclicLrSchedule(
                sched["base_lr"], sched["max_lr"], sched["step_size_up"], sched["step_size_down"]
            )
        elif sched["kind"] == "one_cycle":
            one_cycle = (sched["base_lr"], sched["max_lr"])
        return TrainConfig(
            epochs=t["epochs"],
            batch_size=t["batch_size"],
            seed=self.doc["seed"],
            strategy=self.strategy() if strategy is None else strategy,
            optimizer=opt,
            schedule=schedule,
            one_cycle=one_cycle,
            lr=t["lr"],
            adversarial=self.adversarial() if adversarial == "config" else adversarial,
            eval_attack=self.attack() if t["robust_eval"] else None,
            grad_clip=t["grad_clip"],
            eval_batch_size=self.doc["eval"]["batch_size"],
            eval_mode=self.doc["eval"]["solver"],
        )

    def compare_variant(self, name: str) -> tuple[SolverStrategy, AttackConfig | None]:
        """Strategy and training attack for one row of the comparison table."""
        smooth = "smoothing" in name
        adv = "adversarial" in name
        strategy = self.smoothing() if smooth else Fixed(self.base_point())
        attack = None
        if adv:
            attack = self.adversarial() or AttackConfig("fgsm_random", self.doc["compare"]["epsilon"])
        return strategy, attack
