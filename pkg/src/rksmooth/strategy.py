"""Per-epoch solver selection: fixed, switching, smoothing and ensembles.

A strategy is an immutable description; randomness comes from the
``numpy.random.Generator`` owned by the training run, so the same seed
always yields the same sequence of draws.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import InfeasibleParameterError, NumericalBlowupError, RejectionLimitError
from .integrate import check_weights
from .model import SolverEnsemble
from .tableau import ButcherTableau, ParamPoint, make_tableau

MAX_ATTEMPTS = 100
DEFAULT_SIGMA = 0.0125


@dataclass(frozen=True)
class Fixed:
    point: ParamPoint


@dataclass(frozen=True)
class Switching:
    points: tuple[ParamPoint, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if not self.points:
            raise ValueError("switching needs at least one solver")
        w = check_weights(self.weights)
        if w.size != len(self.points):
            raise ValueError(f"{len(self.points)} points but {w.size} weights")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))


@dataclass(frozen=True)
class Smoothing:
    """Sample ``base + scale * noise`` each epoch (noise: normal or Cauchy)."""

    base: ParamPoint
    distribution: str = "normal"
    scale: tuple[float, ...] = (DEFAULT_SIGMA,)
    per_batch: bool = False

    def __post_init__(self):
        if self.distribution not in ("normal", "cauchy"):
            raise ValueError(f"distribution must be 'normal' or 'cauchy', got {self.distribution!r}")
        scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float64))
        arity = len(self.base.params)
        if scale.size == 1 and arity > 1:
            scale = np.repeat(scale, arity)
        if scale.size != arity:
            raise ValueError(f"need {arity} scale value(s), got {scale.size}")
        if not np.all(scale > 0):
            raise ValueError("smoothing scale must be positive")
        object.__setattr__(self, "scale", tuple(float(s) for s in scale))


@dataclass(frozen=True)
class Ensemble:
    points: tuple[ParamPoint, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if not self.points:
            raise ValueError("ensemble needs at least one solver")
        w = check_weights(self.weights)
        if w.size != len(self.points):
            raise ValueError(f"{len(self.points)} points but {w.size} weights")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))


SolverStrategy = Union[Fixed, Switching, Smoothing, Ensemble]


@dataclass(frozen=True)
class EpochDraw:
    epoch: int
    point: ParamPoint
    raw: tuple[float, ...] = ()
    resamples: int = 0


def switching_set_uniform(points: Sequence[ParamPoint]) -> Switching:
    points = tuple(points)
    if not points:
        raise ValueError("switching set must not be empty")
    n = len(points)
    return Switching(points, tuple([1.0 / n] * n))


def _admissible(point_family: str, params: tuple[float, ...]) -> ParamPoint | None:
    try:
        point = ParamPoint(point_family, params)
        make_tableau(point)
    except (InfeasibleParameterError, NumericalBlowupError):
        return None
    return point


def draw(strategy: SolverStrategy, epoch: int, rng: np.random.Generator) -> EpochDraw:
    """The solver used for ``epoch``.

    Ensembles are not sampled; their draw reports the first member.
    """
    if isinstance(strategy, Fixed):
        return EpochDraw(epoch, strategy.point, strategy.point.params)
    if isinstance(strategy, Ensemble):
        return EpochDraw(epoch, strategy.points[0], strategy.points[0].params)
    if isinstance(strategy, Switching):
        i = int(rng.choice(len(strategy.points), p=np.asarray(strategy.weights)))
        return EpochDraw(epoch, strategy.points[i], strategy.points[i].params)
    if isinstance(strategy, Smoothing):
        base = np.asarray(strategy.base.params)
        scale = np.asarray(strategy.scale)
        first = None
        for attempt in range(MAX_ATTEMPTS):
            if strategy.distribution == "normal":
                noise = rng.standard_normal(base.size)
            else:
                noise = rng.standard_cauchy(base.size)
            raw = tuple(float(p) for p in base + scale * noise)
            if first is None:
                first = raw
            point = _admissible(strategy.base.family, raw)
            if point is not None:
                return EpochDraw(epoch, point, first, attempt)
        raise RejectionLimitError(
            f"no feasible {strategy.base.family} draw in {MAX_ATTEMPTS} attempts "
            f"around {strategy.base.params} with scale {strategy.scale}; scale is too large"
        )
    raise TypeError(f"unknown strategy {strategy!r}")


def base_point(strategy: SolverStrategy) -> ParamPoint:
    """The mean/nominal solver, used for evaluation by default."""
    if isinstance(strategy, Fixed):
        return strategy.point
    if isinstance(strategy, Smoothing):
        return strategy.base
    # switching/ensemble: heaviest member, first on ties
    return strategy.points[int(np.argmax(strategy.weights))]


def solver_for(strategy: SolverStrategy, point: ParamPoint) -> ButcherTableau | SolverEnsemble:
    if isinstance(strategy, Ensemble):
        return SolverEnsemble(tuple(make_tableau(p) for p in strategy.points), strategy.weights)
    return make_tableau(point)


def eval_solver(strategy: SolverStrategy) -> ButcherTableau | SolverEnsemble:
    return solver_for(strategy, base_point(strategy))


# --- serialization ----------------------------------------------------------


def strategy_to_dict(s: SolverStrategy) -> dict:
    if isinstance(s, Fixed):
        return {"kind": "fixed", "point": s.point.to_dict()}
    if isinstance(s, Smoothing):
        return {
            "kind": "smoothing",
            "base": s.base.to_dict(),
            "distribution": s.distribution,
            "scale": list(s.scale),
            "per_batch": s.per_batch,
        }
    kind = "switching" if isinstance(s, Switching) else "ensemble"
    return {"kind": kind, "points": [p.to_dict() for p in s.points], "weights": list(s.weights)}


def strategy_from_dict(d: dict) -> SolverStrategy:
    kind = d.get("kind")
    if kind == "fixed":
        return Fixed(ParamPoint.from_dict(d["point"]))
    if kind == "smoothing":
        scale = d.get("scale", DEFAULT_SIGMA)
        return Smoothing(
            ParamPoint.from_dict(d["base"]),
            d.get("distribution", "normal"),
            tuple(np.atleast_1d(scale).tolist()),
            bool(d.get("per_batch", False)),
        )
    if kind in ("switching", "ensemble"):
        points = tuple(ParamPoint.from_dict(p) for p in d["points"])
        weights = d.get("weights")
        if weights is None:
            weights = [1.0 / len(points)] * len(points)
        cls = Switching if kind == "switching" else Ensemble
        return cls(points, tuple(weights))
    raise ValueError(f"unknown strategy kind {kind!r}")


def draws_to_csv(draws: Sequence[EpochDraw]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "family", "param0", "param1", "resamples"])
    for d in draws:
        p = list(d.point.params) + [""] * (2 - len(d.point.params))
        writer.writerow([d.epoch, d.point.family, *(repr(x) if x != "" else "" for x in p), d.resamples])
    return buf.getvalue()
