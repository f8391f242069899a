"""Butcher tableaux for explicit Runge-Kutta methods of orders 1-4.

Families with ``s = p`` stages are generated from at most two scalar
parameters:

========  =====  =====================================================
family    arity  notes
========  =====  =====================================================
euler     0      forward Euler
rk2_u     1      u in (0, 1]; u=1/2 midpoint, u=1 Heun, u=2/3 Ralston
rk4_u1    1      u != 0
rk4_u2    1      u != 0; u=1/3 is the classic RK4
rk4_u3    1      u != 0
rk4_uv    2      u not in {0, 1/2, 1}, v not in {0, 1}, u != v
========  =====  =====================================================

Coefficients are plain float64 closed forms; there is no symbolic layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    InfeasibleParameterError,
    InvalidTableauError,
    NumericalBlowupError,
    UnknownMethodError,
)

# guard band around singular parameter values (coefficients scale like 1/u)
NEAR_SINGULAR = 1e-3
BLOWUP_LIMIT = 1e8
ROW_SUM_TOL = 1e-12
CONSISTENCY_TOL = 1e-12
ORDER_TOL = 1e-10
MAX_ORDER = 4


@dataclass(frozen=True, eq=False)
class ButcherTableau:
    """Coefficients ``(c, w, b)`` of an explicit Runge-Kutta method.

    ``w`` is strictly lower triangular, ``c[i]`` equals the i-th row sum of
    ``w`` and the weights ``b`` sum to one. Arrays are copied and made
    read-only on construction.
    """

    c: np.ndarray
    w: np.ndarray
    b: np.ndarray
    family: str | None = None
    params: tuple[float, ...] = ()

    def __post_init__(self):
        c = np.array(self.c, dtype=np.float64).reshape(-1)
        b = np.array(self.b, dtype=np.float64).reshape(-1)
        w = np.array(self.w, dtype=np.float64)
        s = b.size
        if s < 1 or c.shape != (s,) or w.shape != (s, s):
            raise InvalidTableauError(
                f"inconsistent shapes c{c.shape}, w{w.shape}, b{b.shape}"
            )
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InvalidTableauError("tableau has non-finite coefficients")
        if np.any(np.triu(w) != 0.0):
            raise InvalidTableauError("w must be strictly lower triangular (explicit method)")
        if c[0] != 0.0:
            raise InvalidTableauError(f"c[0] must be 0, got {c[0]!r}")
        # tolerance scales with coefficient size so near-singular but
        # admissible parameters are not rejected for round-off alone
        for i in range(1, s):
            scale = max(1.0, float(np.max(np.abs(w[i, :i]))))
            if abs(c[i] - math.fsum(w[i, :i])) > ROW_SUM_TOL * scale:
                raise InvalidTableauError(f"row-sum condition violated at row {i}")
        for arr in (c, w, b):
            arr.flags.writeable = False
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    @property
    def stages(self) -> int:
        return self.b.size

    def is_consistent(self) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.b))))
        return abs(math.fsum(self.b) - 1.0) <= CONSISTENCY_TOL * scale

    def equals(self, other: "ButcherTableau", tol: float = 0.0) -> bool:
        """Element-wise comparison of coefficients (metadata ignored)."""
        if self.stages != other.stages:
            return False
        return all(
            np.max(np.abs(x - y), initial=0.0) <= tol
            for x, y in ((self.c, other.c), (self.w, other.w), (self.b, other.b))
        )

    def to_text(self) -> str:
        return tableau_to_text(self)

    def to_dict(self) -> dict:
        return tableau_to_dict(self)

    def __repr__(self):
        tag = f"{self.family}{list(self.params)}" if self.family else "custom"
        return f"ButcherTableau({tag}, stages={self.stages})"


# --- families ---------------------------------------------------------------


def _rk2_u(u):
    return [0.0, u], [[0.0, 0.0], [u, 0.0]], [1.0 - 1.0 / (2.0 * u), 1.0 / (2.0 * u)]


def _rk4_u1(u):
    c = [0.0, 0.5, 0.0, 1.0]
    w = [
        [0.0, 0.0, 0.0, 0.0],
        [0.5, 0.0, 0.0, 0.0],
        [-1.0 / (12.0 * u), 1.0 / (12.0 * u), 0.0, 0.0],
        [-0.5 - 6.0 * u, 1.5, 6.0 * u, 0.0],
    ]
    b = [1.0 / 6.0 - u, 2.0 / 3.0, u, 1.0 / 6.0]
    return c, w, b


def _rk4_u2(u):
    # w21 = 1/2 so that c2 = 1/2 is its row sum (u = 1/3 gives classic RK4)
    c = [0.0, 0.5, 0.5, 1.0]
    w = [
        [0.0, 0.0, 0.0, 0.0],
        [0.5, 0.0, 0.0, 0.0],
        [0.5 - 1.0 / (6.0 * u), 1.0 / (6.0 * u), 0.0, 0.0],
        [0.0, 1.0 - 3.0 * u, 3.0 * u, 0.0],
    ]
    b = [1.0 / 6.0, 2.0 / 3.0 - u, u, 1.0 / 6.0]
    return c, w, b


def _rk4_u3(u):
    c = [0.0, 1.0, 0.5, 1.0]
    w = [
        [0.0, 0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [3.0 / 8.0, 1.0 / 8.0, 0.0, 0.0],
        [1.0 - 1.0 / (4.0 * u), -1.0 / (12.0 * u), 1.0 / (3.0 * u), 0.0],
    ]
    b = [1.0 / 6.0, 1.0 / 6.0 - u, 2.0 / 3.0, u]
    return c, w, b


def uv_denominator(u: float, v: float) -> float:
    """The factor ``3 - 4v + u(6v - 4)`` shared by several uv coefficients."""
    return 3.0 - 4.0 * v + u * (-4.0 + 6.0 * v)


def _rk4_uv(u, v):
    d = uv_denominator(u, v)
    w31 = v + (u * v - v * v) / (2.0 * u - 4.0 * u * u)
    w32 = (u - v) * v / (2.0 * u * (-1.0 + 2.0 * u))
    w41 = (
        2.0 - 5.0 * v + 4.0 * v * v
        + 4.0 * u * u * (1.0 - 3.0 * v + 3.0 * v * v)
        - 3.0 * u * (2.0 - 5.0 * v + 4.0 * v * v)
    ) / (2.0 * u * v * d)
    w42 = (-1.0 + u) * (-2.0 + u + 5.0 * v - 4.0 * v * v) / (2.0 * u * (u - v) * d)
    w43 = (-1.0 + u) * (-1.0 + 2.0 * u) * (-1.0 + v) / ((u - v) * v * d)
    c = [0.0, u, v, 1.0]
    w = [
        [0.0, 0.0, 0.0, 0.0],
        [u, 0.0, 0.0, 0.0],
        [w31, w32, 0.0, 0.0],
        [w41, w42, w43, 0.0],
    ]
    b = [
        (1.0 - 2.0 * u - 2.0 * v + 6.0 * u * v) / (12.0 * u * v),
        (-1.0 + 2.0 * v) / (12.0 * (-1.0 + u) * u * (u - v)),
        (1.0 - 2.0 * u) / (12.0 * (u - v) * (-1.0 + v) * v),
        d / (12.0 * (-1.0 + u) * (-1.0 + v)),
    ]
    return c, w, b


def _check_rk2(params):
    (u,) = params
    if not 0.0 < u <= 1.0:
        return f"u={u!r} outside (0, 1]"
    return None


def _check_rk4_single(params):
    (u,) = params
    if u == 0.0:
        return "u must be nonzero"
    if abs(u) < NEAR_SINGULAR:
        return f"|u|={abs(u)!r} < {NEAR_SINGULAR} (near-singular)"
    return None


def _check_uv(params):
    u, v = params
    exact = [
        (u == 0.0, "u must not be 0"),
        (u == 1.0, "u must not be 1"),
        (u == 0.5, "u must not be 1/2"),
        (v == 0.0, "v must not be 0"),
        (v == 1.0, "v must not be 1"),
        (u == v, "u must differ from v"),
        (uv_denominator(u, v) == 0.0, "3-4v+u(6v-4) must be nonzero"),
    ]
    for bad, msg in exact:
        if bad:
            return msg
    near = [
        (abs(u), "|u|"),
        (abs(u - 1.0), "|u-1|"),
        (abs(2.0 * u - 1.0), "|2u-1|"),
        (abs(v), "|v|"),
        (abs(v - 1.0), "|v-1|"),
        (abs(u - v), "|u-v|"),
        (abs(uv_denominator(u, v)), "|3-4v+u(6v-4)|"),
    ]
    for value, name in near:
        if value < NEAR_SINGULAR:
            return f"{name}={value!r} < {NEAR_SINGULAR} (near-singular)"
    return None


@dataclass(frozen=True)
class SolverFamily:
    """A named parameterization of explicit RK methods with ``stages == order``."""

    name: str
    arity: int
    order: int
    region: str
    coefficients: Callable = field(repr=False)
    violation: Callable = field(repr=False)
    # box used when drawing random feasible parameters (tests, sweeps)
    sample_box: tuple[tuple[float, float], ...] = ()

    def check(self, params: Sequence[float]) -> None:
        """Raise :class:`InfeasibleParameterError` unless ``params`` is feasible."""
        params = tuple(params)
        if len(params) != self.arity:
            raise InfeasibleParameterError(
                f"{self.name} takes {self.arity} parameter(s), got {len(params)}; "
                f"feasible region: {self.region}"
            )
        if not all(math.isfinite(p) for p in params):
            raise InfeasibleParameterError(f"{self.name}: parameters must be finite")
        if self.arity:
            msg = self.violation(params)
            if msg:
                raise InfeasibleParameterError(
                    f"{self.name}: {msg}; feasible region: {self.region}"
                )

    def is_feasible(self, params: Sequence[float]) -> bool:
        try:
            self.check(params)
        except InfeasibleParameterError:
            return False
        return True

    def sample(self, rng: np.random.Generator) -> tuple[float, ...]:
        """Uniform feasible draw from ``sample_box`` (rejection sampling)."""
        while True:
            params = tuple(float(rng.uniform(lo, hi)) for lo, hi in self.sample_box)
            if self.is_feasible(params):
                return params


FAMILIES: dict[str, SolverFamily] = {
    f.name: f
    for f in (
        SolverFamily(
            "euler", 0, 1, "no parameters",
            lambda: ([0.0], [[0.0]], [1.0]), lambda p: None,
        ),
        SolverFamily(
            "rk2_u", 1, 2, "u in (0, 1]", _rk2_u, _check_rk2, ((0.0, 1.0),),
        ),
        SolverFamily(
            "rk4_u1", 1, 4, f"u != 0 with |u| >= {NEAR_SINGULAR}",
            _rk4_u1, _check_rk4_single, ((-1.0, 1.0),),
        ),
        SolverFamily(
            "rk4_u2", 1, 4, f"u != 0 with |u| >= {NEAR_SINGULAR}",
            _rk4_u2, _check_rk4_single, ((-1.0, 1.0),),
        ),
        SolverFamily(
            "rk4_u3", 1, 4, f"u != 0 with |u| >= {NEAR_SINGULAR}",
            _rk4_u3, _check_rk4_single, ((-1.0, 1.0),),
        ),
        SolverFamily(
            "rk4_uv", 2, 4,
            "u not in {0, 1/2, 1}, v not in {0, 1}, u != v, 3-4v+u(6v-4) != 0 "
            f"(each kept at least {NEAR_SINGULAR} away)",
            _rk4_uv, _check_uv, ((0.0, 1.0), (0.0, 1.0)),
        ),
    )
}


def get_family(name: str) -> SolverFamily:
    try:
        return FAMILIES[name]
    except KeyError:
        raise UnknownMethodError(
            f"unknown family {name!r}; choose from {sorted(FAMILIES)}"
        ) from None


@dataclass(frozen=True)
class ParamPoint:
    """A family together with a feasible parameter assignment."""

    family: str
    params: tuple[float, ...] = ()

    def __post_init__(self):
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        get_family(self.family).check(params)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "ParamPoint":
        return cls(d["family"], tuple(d.get("params", ())))

    def __str__(self):
        return f"{self.family}({', '.join(repr(p) for p in self.params)})"


def make_tableau(point: ParamPoint) -> ButcherTableau:
    """Substitute the point's parameters into its family's closed forms."""
    fam = get_family(point.family)
    fam.check(point.params)
    c, w, b = fam.coefficients(*point.params)
    c, w, b = np.asarray(c, float), np.asarray(w, float), np.asarray(b, float)
    biggest = max(np.max(np.abs(c)), np.max(np.abs(w)), np.max(np.abs(b)))
    if not biggest <= BLOWUP_LIMIT:
        raise NumericalBlowupError(
            f"{point}: coefficient magnitude {biggest:.3g} exceeds {BLOWUP_LIMIT:g}"
        )
    return ButcherTableau(c, w, b, family=point.family, params=point.params)


NAMED_METHODS: dict[str, tuple[str, tuple[float, ...]]] = {
    "euler": ("euler", ()),
    "midpoint": ("rk2_u", (0.5,)),
    "heun": ("rk2_u", (1.0,)),
    "ralston": ("rk2_u", (2.0 / 3.0,)),
    "rk4_classic": ("rk4_u2", (1.0 / 3.0,)),
    "rk4_38": ("rk4_uv", (1.0 / 3.0, 2.0 / 3.0)),
}


def named_method(name: str) -> ParamPoint:
    try:
        family, params = NAMED_METHODS[name]
    except KeyError:
        raise UnknownMethodError(
            f"unknown method {name!r}; choose from {sorted(NAMED_METHODS)}"
        ) from None
    return ParamPoint(family, params)


# --- order conditions -------------------------------------------------------

# (id, order, target); ids spell out the sum being evaluated
ORDER_CONDITIONS = (
    ("b", 1, 1.0),
    ("bc", 2, 1.0 / 2.0),
    ("bc2", 3, 1.0 / 3.0),
    ("bWc", 3, 1.0 / 6.0),
    ("bc3", 4, 1.0 / 4.0),
    ("bcWc", 4, 1.0 / 8.0),
    ("bWc2", 4, 1.0 / 12.0),
    ("bWWc", 4, 1.0 / 24.0),
)


@dataclass(frozen=True)
class OrderReport:
    order: int
    residuals: tuple[tuple[str, float], ...]
    tol: float = ORDER_TOL

    @property
    def max_residual(self) -> float:
        return max(abs(r) for _, r in self.residuals)

    @property
    def passed(self) -> bool:
        return all(abs(r) <= self.tol for _, r in self.residuals)

    def as_dict(self) -> dict[str, float]:
        return dict(self.residuals)


def _condition_sums(t: ButcherTableau) -> dict[str, float]:
    b, c, w = t.b, t.c, t.w
    wc = w @ c
    return {
        "b": math.fsum(b),
        "bc": math.fsum(b * c),
        "bc2": math.fsum(b * c**2),
        "bWc": math.fsum(b * wc),
        "bc3": math.fsum(b * c**3),
        "bcWc": math.fsum(b * c * wc),
        "bWc2": math.fsum(b * (w @ c**2)),
        "bWWc": math.fsum(b * (w @ wc)),
    }


def check_order_conditions(t: ButcherTableau, p: int) -> OrderReport:
    """Residuals ``sum - target`` of every order condition up to order ``p``."""
    if not 1 <= p <= MAX_ORDER:
        raise ValueError(f"order must be in 1..{MAX_ORDER}, got {p}")
    sums = _condition_sums(t)
    residuals = tuple(
        (cid, sums[cid] - target) for cid, order, target in ORDER_CONDITIONS if order <= p
    )
    return OrderReport(p, residuals)


def max_verified_order(t: ButcherTableau) -> int:
    """Largest p <= 4 whose conditions all hold; 4 means "at least 4"."""
    verified = 0
    for p in range(1, MAX_ORDER + 1):
        if not check_order_conditions(t, p).passed:
            break
        verified = p
    return verified


# --- serialization ----------------------------------------------------------


def tableau_to_text(t: ButcherTableau) -> str:
    """Render as ``c | w-row`` lines, a rule, then ``| b``; floats use repr."""
    rows = [[repr(float(t.c[i]))] + [repr(float(x)) for x in t.w[i, :i]] for i in range(t.stages)]
    brow = [repr(float(x)) for x in t.b]
    width = max(len(r[0]) for r in rows)
    lines = [f"{r[0]:>{width}} | {' '.join(r[1:])}".rstrip() for r in rows]
    lines.append("-" * width + "-+-" + "-" * max(len(" ".join(brow)), 1))
    lines.append(f"{'':>{width}} | {' '.join(brow)}")
    return "\n".join(lines) + "\n"


def tableau_from_text(text: str) -> ButcherTableau:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    rule = next((k for k, ln in enumerate(lines) if set(ln.strip()) <= set("-+")), None)
    if rule is None or rule + 1 >= len(lines):
        raise InvalidTableauError("text tableau needs a '---+---' rule followed by b")
    s = rule
    c = np.zeros(s)
    w = np.zeros((s, s))
    for i, ln in enumerate(lines[:rule]):
        left, _, right = ln.partition("|")
        c[i] = float(left)
        vals = [float(x) for x in right.split()]
        if len(vals) != i:
            raise InvalidTableauError(f"row {i} must have {i} w entries, got {len(vals)}")
        w[i, :i] = vals
    b = np.array([float(x) for x in lines[rule + 1].partition("|")[2].split()])
    return ButcherTableau(c, w, b)


def tableau_to_dict(t: ButcherTableau) -> dict:
    return {
        "family": t.family,
        "params": list(t.params),
        "c": [float(x) for x in t.c],
        "w": [[float(x) for x in row] for row in t.w],
        "b": [float(x) for x in t.b],
    }


def tableau_from_dict(d: dict) -> ButcherTableau:
    return ButcherTableau(
        np.array(d["c"], float),
        np.array(d["w"], float),
        np.array(d["b"], float),
        family=d.get("family"),
        params=tuple(d.get("params") or ()),
    )
