"""White-box l-infinity attacks on a frozen model and robust accuracy.

Every attack takes the solver explicitly, so gradients flow through the
same unrolled integrator that is used for evaluation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import NonFiniteStateError
from .model import NeuralODEModel, Solver

KINDS = ("fgsm", "fgsm_random", "pgd")


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "fgsm"
    epsilon: float = 8 / 255
    alpha: float | None = None
    iterations: int = 1
    random_start: bool = True
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"attack kind must be one of {KINDS}, got {self.kind!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.lo < self.hi:
            raise ValueError("input range needs lo < hi")
        if self.alpha is not None and self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.kind == "pgd" and self.epsilon > 0 and not 0 < self.step <= self.epsilon:
            raise ValueError(f"pgd needs 0 < alpha <= epsilon, got alpha={self.step}")

    @property
    def step(self) -> float:
        """Step size; defaults to 1.25 eps (fgsm_random) or eps/4 (pgd)."""
        if self.alpha is not None:
            return float(self.alpha)
        if self.kind == "fgsm_random":
            return 1.25 * self.epsilon
        if self.kind == "pgd":
            return self.epsilon / 4.0
        return self.epsilon

    def replace(self, **changes) -> "AttackConfig":
        return AttackConfig(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)


def _signed_grad(model, solver, x, y):
    _, g = model.input_grad(x, y, solver)
    if not np.all(np.isfinite(g)):
        raise NonFiniteStateError("non-finite input gradient")
    return np.sign(g)


def _project(x_adv, x, cfg: AttackConfig):
    return np.clip(np.clip(x_adv, x - cfg.epsilon, x + cfg.epsilon), cfg.lo, cfg.hi)


def fgsm(model: NeuralODEModel, solver: Solver, x, y, cfg: AttackConfig) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if cfg.epsilon == 0:
        return x.copy()
    return np.clip(x + cfg.epsilon * _signed_grad(model, solver, x, y), cfg.lo, cfg.hi)


def fgsm_random(model, solver, x, y, cfg: AttackConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform random start in the eps-ball, then one signed step of size alpha."""
    x = np.asarray(x, dtype=np.float64)
    if cfg.epsilon == 0:
        return x.copy()
    start = np.clip(x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape), cfg.lo, cfg.hi)
    if cfg.step == 0:
        return start
    return _project(start + cfg.step * _signed_grad(model, solver, start, y), x, cfg)


def pgd(model, solver, x, y, cfg: AttackConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if cfg.epsilon == 0:
        return x.copy()
    if cfg.random_start:
        if rng is None:
            raise ValueError("pgd with random start needs an rng")
        x_adv = np.clip(x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape), cfg.lo, cfg.hi)
    else:
        x_adv = x.copy()
    for _ in range(cfg.iterations):
        x_adv = _project(x_adv + cfg.step * _signed_grad(model, solver, x_adv, y), x, cfg)
    return x_adv


def attack(model, solver, x, y, cfg: AttackConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    if cfg.kind == "fgsm":
        return fgsm(model, solver, x, y, cfg)
    if cfg.kind == "fgsm_random":
        return fgsm_random(model, solver, x, y, cfg, rng)
    return pgd(model, solver, x, y, cfg, rng)


def robust_accuracy(
    model: NeuralODEModel,
    solver: Solver,
    x,
    y,
    cfg: AttackConfig,
    rng: np.random.Generator | None = None,
    batch_size: int = 256,
) -> float:
    """Fraction of samples still classified correctly after the attack."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("robust accuracy needs a non-empty dataset")
    correct = 0
    for start in range(0, len(y), batch_size):
        xb, yb = x[start:start + batch_size], y[start:start + batch_size]
        xa = attack(model, solver, xb, yb, cfg, rng)
        correct += int(np.sum(model.predict(xa, solver) == yb))
    return correct / len(y)


def clean_accuracy(model, solver, x, y, batch_size: int = 1024) -> float:
    return robust_accuracy(model, solver, x, y, AttackConfig("fgsm", 0.0), batch_size=batch_size)
