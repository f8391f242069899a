"""Fixed-step explicit Runge-Kutta integration.

The same stepping code serves plain numpy states and differentiable
:class:`~rksmooth.autodiff.Tensor` states: it only uses ``+`` and
multiplication by Python floats, which both types support.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import value_of
from .errors import DegenerateFitError, GridMismatchError, NonFiniteStateError, WeightError
from .tableau import ButcherTableau, ParamPoint, make_tableau

ERROR_FLOOR = 1e-13
WEIGHT_TOL = 1e-12

Rhs = Callable  # f(t, z) -> dz/dt, same type as z


@dataclass(frozen=True)
class IntegrationSpec:
    tableau: ButcherTableau
    t0: float = 0.0
    t1: float = 1.0
    n_steps: int = 8

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ValueError(f"need t1 > t0, got [{self.t0}, {self.t1}]")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")

    @property
    def h(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    def grid(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.n_steps + 1)

    def same_grid(self, other: "IntegrationSpec") -> bool:
        return (self.t0, self.t1, self.n_steps) == (other.t0, other.t1, other.n_steps)


@dataclass
class Trajectory:
    """States on a uniform grid. ``states`` is an array for plain numeric
    integration and a list of tensors for differentiable integration."""

    times: np.ndarray
    states: object = field(repr=False)

    @property
    def final(self):
        return self.states[-1]

    def to_csv(self) -> str:
        return trajectory_to_csv(self)


def _check_finite(x, what, step):
    if not np.all(np.isfinite(value_of(x))):
        raise NonFiniteStateError(f"non-finite {what}", step=step)


def rk_step(f: Rhs, t_k: float, z_k, h: float, tab: ButcherTableau, step: int | None = None):
    """One explicit RK step: exactly ``tab.stages`` evaluations of ``f``."""
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    ks = []
    for i in range(tab.stages):
        zi = z_k
        incr = None
        for j in range(i):
            wij = tab.w[i, j]
            if wij != 0.0:
                term = float(wij) * ks[j]
                incr = term if incr is None else incr + term
        if incr is not None:
            zi = z_k + h * incr
        k = f(t_k + float(tab.c[i]) * h, zi)
        _check_finite(k, f"stage value k{i + 1}", step)
        ks.append(k)
    incr = None
    for i in range(tab.stages):
        bi = tab.b[i]
        if bi != 0.0:
            term = float(bi) * ks[i]
            incr = term if incr is None else incr + term
    out = z_k if incr is None else z_k + h * incr
    _check_finite(out, "state", step)
    return out


def integrate(f: Rhs, spec: IntegrationSpec, z0) -> Trajectory:
    """Apply ``spec.n_steps`` RK steps starting from ``z0`` at ``spec.t0``."""
    _check_finite(z0, "initial state", 0)
    times = spec.grid()
    h = spec.h
    states = [z0]
    z = z0
    for k in range(spec.n_steps):
        z = rk_step(f, float(times[k]), z, h, spec.tableau, step=k)
        states.append(z)
    if isinstance(z0, np.ndarray) or np.isscalar(z0):
        return Trajectory(times, np.array(states, dtype=np.float64))
    return Trajectory(times, states)


def check_weights(weights: Sequence[float]) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise WeightError("weights must be a non-empty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise WeightError(f"weights must be finite and nonnegative, got {w.tolist()}")
    if abs(math.fsum(w) - 1.0) > WEIGHT_TOL:
        raise WeightError(f"weights must sum to 1, got {math.fsum(w)!r}")
    return w


def weighted_average(items: Sequence, weights: np.ndarray):
    # fixed member order keeps the reduction bit-reproducible
    acc = None
    for item, wt in zip(items, weights):
        term = float(wt) * item
        acc = term if acc is None else acc + term
    return acc


def integrate_ensemble(f: Rhs, specs: Sequence[IntegrationSpec], weights, z0) -> Trajectory:
    """Weighted average of member trajectories at every grid point."""
    if not specs:
        raise GridMismatchError("ensemble needs at least one member")
    w = check_weights(weights)
    if w.size != len(specs):
        raise WeightError(f"{len(specs)} members but {w.size} weights")
    for s in specs[1:]:
        if not s.same_grid(specs[0]):
            raise GridMismatchError(
                f"member grid ({s.t0}, {s.t1}, {s.n_steps}) differs from "
                f"({specs[0].t0}, {specs[0].t1}, {specs[0].n_steps})"
            )
    members = [integrate(f, s, z0) for s in specs]
    times = members[0].times
    if isinstance(members[0].states, np.ndarray):
        states = weighted_average([m.states for m in members], w)
    else:
        states = [
            weighted_average([m.states[k] for m in members], w) for k in range(len(times))
        ]
    return Trajectory(times, states)


# --- convergence studies ----------------------------------------------------


@dataclass(frozen=True)
class TestProblem:
    name: str
    rhs: Rhs
    exact: Callable[[float, np.ndarray], np.ndarray]  # exact(t, z0) with t0 = 0
    z0: tuple[float, ...] = (1.0,)

    __test__ = False  # not a pytest class


PROBLEMS = {
    "decay": TestProblem("decay", lambda t, z: -z, lambda t, z0: z0 * math.exp(-t)),
    "growth": TestProblem("growth", lambda t, z: z, lambda t, z0: z0 * math.exp(t)),
    "sin": TestProblem(
        "sin", lambda t, z: math.sin(t) * z, lambda t, z0: z0 * math.exp(1.0 - math.cos(t))
    ),
}


def final_error(f, exact, tab, n, t0, t1, z0) -> float:
    z0 = np.asarray(z0, dtype=np.float64)
    traj = integrate(f, IntegrationSpec(tab, t0, t1, n), z0)
    return float(np.max(np.abs(traj.final - exact(t1, z0))))


def empirical_order(
    f: Rhs,
    exact: Callable,
    point: ParamPoint | ButcherTableau,
    step_counts: Sequence[int],
    t0: float = 0.0,
    t1: float = 1.0,
    z0=(1.0,),
) -> float:
    """Least-squares slope of log(final error) against log(h).

    Errors below the round-off floor are dropped before fitting.
    """
    counts = list(step_counts)
    if len(counts) < 3 or any(b <= a for a, b in zip(counts, counts[1:])):
        raise ValueError("need at least 3 strictly increasing step counts")
    tab = point if isinstance(point, ButcherTableau) else make_tableau(point)
    hs, errs = [], []
    for n in counts:
        err = final_error(f, exact, tab, n, t0, t1, z0)
        if err >= ERROR_FLOOR:
            hs.append((t1 - t0) / n)
            errs.append(err)
    if len(errs) < 2:
        raise DegenerateFitError(
            f"only {len(errs)} of {len(counts)} errors above the {ERROR_FLOOR:g} floor"
        )
    slope, _ = np.polyfit(np.log(hs), np.log(errs), 1)
    return float(slope)


def trajectory_to_csv(traj: Trajectory) -> str:
    states = np.array([value_of(s) for s in traj.states], dtype=np.float64)
    states = states.reshape(len(traj.times), -1)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t"] + [f"z{i}" for i in range(states.shape[1])])
    for t, row in zip(traj.times, states):
        writer.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in row])
    return buf.getvalue()


def trajectory_from_csv(text: str) -> Trajectory:
    rows = list(csv.reader(io.StringIO(text)))
    data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=np.float64)
    return Trajectory(data[:, 0].copy(), data[:, 1:].copy())
