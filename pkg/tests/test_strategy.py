import math

import numpy as np
import pytest

from rksmooth.errors import RejectionLimitError
from rksmooth.model import SolverEnsemble
from rksmooth.strategy import (
    DEFAULT_SIGMA,
    Ensemble,
    Fixed,
    Smoothing,
    Switching,
    base_point,
    draw,
    draws_to_csv,
    eval_solver,
    solver_for,
    strategy_from_dict,
    strategy_to_dict,
    switching_set_uniform,
)
from rksmooth.tableau import ParamPoint, make_tableau, named_method

MID = named_method("midpoint")
HEUN = named_method("heun")


def draws(strategy, n, seed=0):
    rng = np.random.default_rng(seed)
    return [draw(strategy, e, rng) for e in range(n)]


class TestFixedAndSwitching:
    def test_fixed(self):
        assert all(d.point == MID for d in draws(Fixed(MID), 20))

    def test_uniform_set(self):
        s = switching_set_uniform([MID, HEUN])
        assert s.weights == (0.5, 0.5)

    def test_degenerate_switching(self):
        assert all(d.point == MID for d in draws(switching_set_uniform([MID]), 20))

    def test_switching_frequencies(self):
        pts = [MID, HEUN, named_method("ralston")]
        w = [0.2, 0.5, 0.3]
        n = 20000
        got = [d.point for d in draws(Switching(tuple(pts), tuple(w)), n, seed=1)]
        for p, wi in zip(pts, w):
            k = sum(g == p for g in got)
            assert abs(k - n * wi) <= 4 * math.sqrt(n * wi * (1 - wi))

    @pytest.mark.parametrize("w", [(0.5, 0.6), (1.0,), (-0.5, 1.5)])
    def test_bad_weights(self, w):
        with pytest.raises(Exception):
            Switching((MID, HEUN), w)

    def test_empty(self):
        with pytest.raises(ValueError):
            switching_set_uniform([])


class TestSmoothing:
    def test_normal_mean_and_spread(self):
        s = Smoothing(MID, "normal", (DEFAULT_SIGMA,))
        n = 100_000
        u = np.array([d.point.params[0] for d in draws(s, n, seed=2)])
        assert abs(u.mean() - 0.5) <= 4 * DEFAULT_SIGMA / math.sqrt(n)
        assert u.std() == pytest.approx(DEFAULT_SIGMA, rel=0.02)

    def test_cauchy_median(self):
        s = Smoothing(MID, "cauchy", (0.01,))
        n = 20000
        u = np.array([d.point.params[0] for d in draws(s, n, seed=3)])
        # sample median of Cauchy(0, g) has std ~ pi g / (2 sqrt n)
        assert abs(np.median(u) - 0.5) <= 4 * math.pi * 0.01 / (2 * math.sqrt(n))
        q1, q3 = np.percentile(u, [25, 75])
        assert (q3 - q1) / 2 == pytest.approx(0.01, rel=0.1)

    def test_two_parameter_scale_broadcast(self):
        s = Smoothing(ParamPoint("rk4_uv", (0.3, 0.7)), scale=(0.01,))
        assert s.scale == (0.01, 0.01)
        d = draws(s, 5)
        assert all(len(x.point.params) == 2 for x in d)

    def test_vanishing_scale(self):
        s = Smoothing(MID, scale=(1e-12,))
        assert all(abs(d.point.params[0] - 0.5) <= 1e-9 for d in draws(s, 50))

    def test_reject_and_resample(self):
        # base at the edge of (0, 1]: about half the raw draws are infeasible
        s = Smoothing(HEUN, scale=(0.05,))
        ds = draws(s, 400, seed=4)
        assert all(0 < d.point.params[0] <= 1 for d in ds)
        assert sum(d.resamples > 0 for d in ds) > 100
        assert all(d.raw[0] > 1 for d in ds if d.resamples > 0)

    def test_rejection_limit(self):
        s = Smoothing(ParamPoint("rk2_u", (0.999,)), scale=(1e4,))
        with pytest.raises(RejectionLimitError) as err:
            draws(s, 1)
        assert err.value.code == "rejection-limit"

    def test_determinism(self):
        s = Smoothing(ParamPoint("rk4_uv", (0.3, 0.7)), "cauchy", (0.02,))
        assert draws(s, 100, seed=7) == draws(s, 100, seed=7)
        assert draws(s, 100, seed=7) != draws(s, 100, seed=8)

    def test_smoothing_tableau_is_affine_in_inverse_u(self):
        # rk2_u weights are b = (1 - 1/(2u), 1/(2u))
        for d in draws(Smoothing(MID), 20):
            u = d.point.params[0]
            t = make_tableau(d.point)
            assert t.b[1] == pytest.approx(1 / (2 * u), rel=1e-15)
            assert t.b[0] + t.b[1] == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("bad", [dict(distribution="laplace"), dict(scale=(0.0,)),
                                     dict(scale=(0.1, 0.1, 0.1))])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            Smoothing(MID, **bad)


class TestSolvers:
    def test_base_points(self):
        assert base_point(Smoothing(HEUN)) == HEUN
        assert base_point(Switching((MID, HEUN), (0.3, 0.7))) == HEUN
        assert base_point(Switching((MID, HEUN), (0.5, 0.5))) == MID

    def test_ensemble_solver(self):
        s = Ensemble((MID, HEUN), (0.5, 0.5))
        solver = eval_solver(s)
        assert isinstance(solver, SolverEnsemble) and solver.stages == 4
        assert draws(s, 1)[0].point == MID

    def test_solver_for_point(self):
        s = Smoothing(MID)
        d = draws(s, 1)[0]
        assert solver_for(s, d.point).params == d.point.params


class TestSerialization:
    @pytest.mark.parametrize("s", [
        Fixed(MID),
        Switching((MID, HEUN), (0.25, 0.75)),
        Smoothing(ParamPoint("rk4_uv", (0.3, 0.7)), "cauchy", (0.01, 0.02), True),
        Ensemble((MID, HEUN), (0.5, 0.5)),
    ])
    def test_round_trip(self, s):
        assert strategy_from_dict(strategy_to_dict(s)) == s

    def test_default_weights(self):
        s = strategy_from_dict({"kind": "switching", "points": [MID.to_dict(), HEUN.to_dict()]})
        assert s.weights == (0.5, 0.5)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            strategy_from_dict({"kind": "dropout"})

    def test_draws_csv(self):
        text = draws_to_csv(draws(Fixed(MID), 2))
        assert text.splitlines() == ["epoch,family,param0,param1,resamples",
                                     "0,rk2_u,0.5,,0", "1,rk2_u,0.5,,0"]
