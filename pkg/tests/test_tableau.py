import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rksmooth.errors import (
    InfeasibleParameterError,
    InvalidTableauError,
    NumericalBlowupError,
    UnknownMethodError,
)
from rksmooth.tableau import (
    FAMILIES,
    ButcherTableau,
    ParamPoint,
    check_order_conditions,
    get_family,
    make_tableau,
    max_verified_order,
    named_method,
    tableau_from_dict,
    tableau_from_text,
    tableau_to_dict,
    tableau_to_text,
    uv_denominator,
)

THIRD = 1.0 / 3.0


def order_sums_reference(c, w, b):
    """Order-condition left-hand sides by explicit index loops."""
    s = len(b)
    wc = [sum(w[i][j] * c[j] for j in range(s)) for i in range(s)]
    wc2 = [sum(w[i][j] * c[j] ** 2 for j in range(s)) for i in range(s)]
    wwc = [sum(w[i][j] * wc[j] for j in range(s)) for i in range(s)]
    return {
        "b": sum(b),
        "bc": sum(b[i] * c[i] for i in range(s)),
        "bc2": sum(b[i] * c[i] ** 2 for i in range(s)),
        "bWc": sum(b[i] * wc[i] for i in range(s)),
        "bc3": sum(b[i] * c[i] ** 3 for i in range(s)),
        "bcWc": sum(b[i] * c[i] * wc[i] for i in range(s)),
        "bWc2": sum(b[i] * wc2[i] for i in range(s)),
        "bWWc": sum(b[i] * wwc[i] for i in range(s)),
    }


TARGETS = {"b": 1, "bc": 1 / 2, "bc2": 1 / 3, "bWc": 1 / 6, "bc3": 1 / 4,
           "bcWc": 1 / 8, "bWc2": 1 / 12, "bWWc": 1 / 24}


class TestFamilies:
    def test_midpoint_coefficients(self):
        t = make_tableau(ParamPoint("rk2_u", (0.5,)))
        np.testing.assert_array_equal(t.c, [0.0, 0.5])
        assert t.w[1, 0] == 0.5
        np.testing.assert_array_equal(t.b, [0.0, 1.0])

    def test_heun_weights(self):
        np.testing.assert_array_equal(make_tableau(ParamPoint("rk2_u", (1.0,))).b, [0.5, 0.5])

    def test_rk4_u2_third_is_classic(self):
        t = make_tableau(ParamPoint("rk4_u2", (THIRD,)))
        np.testing.assert_allclose(t.b, [1 / 6, 1 / 3, 1 / 3, 1 / 6], atol=1e-15)
        np.testing.assert_allclose(t.c, [0, 0.5, 0.5, 1], atol=1e-15)
        w = np.zeros((4, 4))
        w[1, 0], w[2, 1], w[3, 2] = 0.5, 0.5, 1.0
        np.testing.assert_allclose(t.w, w, atol=1e-15)

    def test_rk4_uv_three_eighths(self):
        t = make_tableau(ParamPoint("rk4_uv", (THIRD, 2 * THIRD)))
        np.testing.assert_allclose(t.b, [1 / 8, 3 / 8, 3 / 8, 1 / 8], atol=1e-14)
        np.testing.assert_allclose(t.c, [0, THIRD, 2 * THIRD, 1], atol=1e-14)

    @pytest.mark.parametrize("name", sorted(FAMILIES))
    def test_stages_equal_nominal_order(self, name):
        fam = FAMILIES[name]
        params = fam.sample(np.random.default_rng(3)) if fam.arity else ()
        t = make_tableau(ParamPoint(name, params))
        assert t.stages == fam.order
        assert check_order_conditions(t, fam.order).passed

    @pytest.mark.parametrize("name", ["rk2_u", "rk4_u1", "rk4_u2", "rk4_u3", "rk4_uv"])
    def test_order_sums_match_loop_oracle(self, name):
        rng = np.random.default_rng(11)
        fam = FAMILIES[name]
        for _ in range(20):
            t = make_tableau(ParamPoint(name, fam.sample(rng)))
            ref = order_sums_reference(t.c.tolist(), t.w.tolist(), t.b.tolist())
            report = check_order_conditions(t, fam.order)
            for cid, r in report.residuals:
                assert r == pytest.approx(ref[cid] - TARGETS[cid], abs=1e-9)

    def test_uv_denominator(self):
        assert uv_denominator(THIRD, 2 * THIRD) == pytest.approx(1 / 3)
        assert uv_denominator(0.0, 0.75) == 0.0

    def test_rk2_continuous_in_u(self):
        a = make_tableau(ParamPoint("rk2_u", (0.6,)))
        b = make_tableau(ParamPoint("rk2_u", (0.6 + 1e-9,)))
        assert a.equals(b, tol=1e-8)


class TestFeasibility:
    @pytest.mark.parametrize("u", [0.0, -0.1, 1.5, math.nan, math.inf])
    def test_rk2_rejects(self, u):
        with pytest.raises(InfeasibleParameterError) as err:
            ParamPoint("rk2_u", (u,))
        assert err.value.code == "infeasible-parameter"

    def test_error_names_region(self):
        with pytest.raises(InfeasibleParameterError, match=r"\(0, 1\]"):
            ParamPoint("rk2_u", (0.0,))

    @pytest.mark.parametrize("name", ["rk4_u1", "rk4_u2", "rk4_u3"])
    @pytest.mark.parametrize("u", [0.0, 1e-4, -5e-4])
    def test_rk4_single_near_zero(self, name, u):
        assert not get_family(name).is_feasible((u,))

    @pytest.mark.parametrize("u,v", [(0.0, 0.3), (0.5, 0.3), (1.0, 0.3), (0.3, 0.0),
                                     (0.3, 1.0), (0.4, 0.4), (0.5005, 0.3), (0.3, 0.3004)])
    def test_uv_singular_set(self, u, v):
        assert not get_family("rk4_uv").is_feasible((u, v))

    def test_uv_denominator_zero_rejected(self):
        # D(u, v) = 0 along v = (4u - 3) / (6u - 4)
        u = 0.2
        v = (4 * u - 3) / (6 * u - 4)
        assert abs(uv_denominator(u, v)) < 1e-12
        assert not get_family("rk4_uv").is_feasible((u, v))

    def test_wrong_arity(self):
        with pytest.raises(InfeasibleParameterError):
            ParamPoint("rk4_uv", (0.3,))

    def test_unknown_family(self):
        with pytest.raises(UnknownMethodError) as err:
            get_family("rk9")
        assert "rk9" in str(err.value)

    def test_blowup_guard(self, monkeypatch):
        import rksmooth.tableau as tb

        monkeypatch.setattr(tb, "NEAR_SINGULAR", 0.0)
        with pytest.raises(NumericalBlowupError):
            tb.make_tableau(ParamPoint("rk4_u1", (1e-12,)))


class TestNamed:
    def test_mapping(self):
        assert named_method("midpoint") == ParamPoint("rk2_u", (0.5,))
        assert named_method("ralston") == ParamPoint("rk2_u", (2 / 3,))
        assert named_method("rk4_classic") == ParamPoint("rk4_u2", (THIRD,))

    def test_unknown(self):
        with pytest.raises(UnknownMethodError):
            named_method("dopri5")


class TestOrder:
    def test_euler(self):
        t = make_tableau(named_method("euler"))
        assert check_order_conditions(t, 1).max_residual == 0.0
        assert max_verified_order(t) == 1

    def test_classic_all_eight(self):
        report = check_order_conditions(make_tableau(named_method("rk4_classic")), 4)
        assert len(report.residuals) == 8
        assert report.max_residual <= 1e-12

    def test_heun_is_order_two(self):
        assert max_verified_order(make_tableau(named_method("heun"))) == 2

    def test_rk4_u1_at_017(self):
        assert max_verified_order(make_tableau(ParamPoint("rk4_u1", (0.17,)))) == 4

    def test_inconsistent_weights(self):
        t = ButcherTableau([0.0, 0.5], [[0, 0], [0.5, 0]], [0.4, 0.4])
        assert not t.is_consistent()
        assert max_verified_order(t) == 0

    @settings(max_examples=200, deadline=None)
    @given(st.floats(min_value=1e-3, max_value=1.0))
    def test_rk2_identity(self, u):
        report = check_order_conditions(make_tableau(ParamPoint("rk2_u", (u,))), 2)
        assert report.max_residual <= 1e-12

    def test_as_dict(self):
        d = check_order_conditions(make_tableau(named_method("midpoint")), 2).as_dict()
        assert set(d) == {"b", "bc"}

    def test_bad_order(self):
        with pytest.raises(ValueError):
            check_order_conditions(make_tableau(named_method("midpoint")), 5)


class TestTableauValidation:
    def test_not_lower_triangular(self):
        with pytest.raises(InvalidTableauError):
            ButcherTableau([0.0, 0.5], [[0, 0.1], [0.5, 0]], [0.5, 0.5])

    def test_row_sum(self):
        with pytest.raises(InvalidTableauError, match="row-sum"):
            ButcherTableau([0.0, 0.6], [[0, 0], [0.5, 0]], [0.5, 0.5])

    def test_shapes(self):
        with pytest.raises(InvalidTableauError):
            ButcherTableau([0.0], [[0, 0], [0.5, 0]], [0.5, 0.5])

    def test_nonfinite(self):
        with pytest.raises(InvalidTableauError):
            ButcherTableau([0.0, 0.5], [[0, 0], [0.5, 0]], [np.nan, 0.5])

    def test_read_only(self):
        t = make_tableau(named_method("heun"))
        with pytest.raises(ValueError):
            t.b[0] = 1.0


class TestSerialization:
    @pytest.mark.parametrize("name", ["euler", "midpoint", "rk4_classic", "rk4_38"])
    def test_text_round_trip(self, name):
        t = make_tableau(named_method(name))
        back = tableau_from_text(tableau_to_text(t))
        assert back.equals(t)

    def test_random_round_trip_exact(self):
        rng = np.random.default_rng(0)
        for name in ("rk4_u1", "rk4_uv"):
            t = make_tableau(ParamPoint(name, FAMILIES[name].sample(rng)))
            assert tableau_from_text(t.to_text()).equals(t)
            back = tableau_from_dict(tableau_to_dict(t))
            assert back.equals(t) and back.family == name and back.params == t.params

    def test_text_layout(self):
        text = tableau_to_text(make_tableau(named_method("midpoint"))).splitlines()
        assert text[0].startswith("0.0 |")
        assert set(text[2].replace("+", "-")) == {"-"}
        assert text[3].lstrip().startswith("|")

    def test_malformed_text(self):
        with pytest.raises(InvalidTableauError):
            tableau_from_text("garbage")
