import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfgconsume import (
    GridCurve,
    Population,
    StructuralError,
    TimeGrid,
    constant_type,
    expect,
    philox_stream,
    sample_agents,
    validate,
)


def single(grid, **kw):
    base = dict(gamma=0.5, theta=0.5, alpha=1.0, x0=1.0, h=0.1, sigma=0.2, sigma0=0.0)
    base.update(kw)
    return Population((constant_type(grid, **base),))


class TestCurves:
    def test_knot_reproduction_exact(self):
        grid = TimeGrid(2.0, 37)
        vals = np.sin(np.arange(38) * 0.7) + 2.0
        c = GridCurve(grid, vals)
        for i in (0, 5, 17, 37):
            assert c(grid.times[i]) == vals[i]

    def test_linear_interpolation(self):
        grid = TimeGrid(1.0, 4)
        c = GridCurve(grid, [0.0, 1.0, 0.0, 1.0, 0.0])
        assert c(0.125) == pytest.approx(0.5, abs=1e-15)

    def test_domain_error(self):
        c = GridCurve.constant(TimeGrid(1.0, 10), 1.0)
        with pytest.raises(ValueError):
            c(-0.01)
        with pytest.raises(ValueError):
            c(1.01)

    def test_nan_rejected(self):
        grid = TimeGrid(1.0, 3)
        with pytest.raises(StructuralError):
            GridCurve(grid, [0.0, np.nan, 0.0, 0.0])

    def test_ragged_rejected(self):
        grid = TimeGrid(1.0, 3)
        with pytest.raises(StructuralError):
            GridCurve(grid, [0.0, 1.0])

    def test_values_read_only(self):
        c = GridCurve.constant(TimeGrid(1.0, 5), 2.0)
        with pytest.raises(ValueError):
            c.values[0] = 3.0


class TestValidate:
    def test_ok(self, grid200):
        pop = single(grid200, gamma=0.5, theta=0.5, alpha=1.0, x0=1.0, h=0.1, sigma=0.2, sigma0=0.0)
        assert validate(pop).ok

    def test_gamma_zero_excluded(self, grid200):
        pop = single(grid200, gamma=0.0)
        rep = validate(pop)
        assert not rep.ok
        assert any(v.rule == "gamma_nonzero" and v.type_index == 0 for v in rep.violations)

    def test_vanishing_volatility(self, grid200):
        pop = single(grid200, sigma=0.0, sigma0=0.0)
        rep = validate(pop)
        assert not rep.ok
        assert any(v.rule == "volatility_lower_bound" for v in rep.violations)

    def test_weights_must_sum_to_one(self, grid200):
        t1 = constant_type(grid200, weight=0.5, gamma=0.5, theta=0.0, h=0.1, sigma=0.2, sigma0=0.0)
        t2 = constant_type(grid200, weight=0.4, gamma=0.5, theta=0.0, h=0.1, sigma=0.2, sigma0=0.0)
        rep = validate(Population((t1, t2)))
        assert any(v.rule == "weights_sum_to_one" for v in rep.violations)

    def test_gamma_above_one(self, grid200):
        rep = validate(single(grid200, gamma=1.5))
        assert any(v.rule == "gamma_below_one" for v in rep.violations)

    def test_mismatched_grids_structural(self, grid200):
        other = TimeGrid(1.0, 100)
        t1 = constant_type(grid200, gamma=0.5, theta=0.0, h=0.1, sigma=0.2, sigma0=0.0)
        t2 = constant_type(other, gamma=0.5, theta=0.0, h=0.1, sigma=0.2, sigma0=0.0)
        with pytest.raises(StructuralError):
            Population((t1, t2))

    def test_report_describe(self, grid200):
        assert validate(single(grid200)).describe() == "ok"
        assert "gamma_nonzero" in validate(single(grid200, gamma=0.0)).describe()


class TestExpect:
    def test_single_type_value(self, grid200):
        pop = single(grid200, gamma=0.5, theta=1.0)
        got = expect(pop, lambda tp, t: tp.theta * tp.gamma / (1 - tp.gamma), 0.3)
        assert got == pytest.approx(1.0, abs=1e-15)

    def test_unit_integrand(self, grid200):
        pop = single(grid200)
        assert expect(pop, lambda tp, t: 1.0, 0.0) == pytest.approx(1.0, abs=1e-15)

    def test_two_type_mean(self, grid200):
        t1 = constant_type(grid200, weight=0.5, gamma=0.5, theta=0.0, h=0.1, sigma=0.2, sigma0=0.0)
        t2 = constant_type(grid200, weight=0.5, gamma=-1.0, theta=0.0, h=0.1, sigma=0.2, sigma0=0.0)
        pop = Population((t1, t2))
        vals = {0.5: 0.25, -1.0: 1.0}
        assert expect(pop, lambda tp, t: vals[tp.gamma], 0.5) == pytest.approx(0.625, abs=1e-15)

    def test_domain_error(self, grid200):
        pop = single(grid200)
        with pytest.raises(ValueError):
            expect(pop, lambda tp, t: 1.0, 1.5)

    def test_nonfinite_integrand(self, grid200):
        pop = single(grid200)
        with pytest.raises(ValueError):
            expect(pop, lambda tp, t: float("nan"), 0.5)

    @given(
        a=st.floats(-5, 5, allow_nan=False),
        b=st.floats(-5, 5, allow_nan=False),
        f0=st.floats(-3, 3, allow_nan=False),
        f1=st.floats(-3, 3, allow_nan=False),
        g0=st.floats(-3, 3, allow_nan=False),
        g1=st.floats(-3, 3, allow_nan=False),
        w=st.floats(0.05, 0.95),
    )
    def test_linearity(self, a, b, f0, f1, g0, g1, w):
        grid = TimeGrid(1.0, 4)
        t1 = constant_type(grid, weight=w, gamma=0.5, theta=0.0, h=0.1, sigma=0.2, sigma0=0.0)
        t2 = constant_type(grid, weight=1 - w, gamma=-0.5, theta=0.0, h=0.1, sigma=0.2, sigma0=0.0)
        pop = Population((t1, t2))
        f = lambda tp, t: f0 if tp.gamma > 0 else f1
        g = lambda tp, t: g0 if tp.gamma > 0 else g1
        lhs = expect(pop, lambda tp, t: a * f(tp, t) + b * g(tp, t), 0.5)
        rhs = a * expect(pop, f, 0.5) + b * expect(pop, g, 0.5)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs), abs(rhs))


class TestSampleAgents:
    def test_single_type(self, grid200):
        pop = single(grid200)
        idx = sample_agents(pop, 5, np.random.default_rng(0))
        assert list(idx) == [0, 0, 0, 0, 0]

    def test_zero_mass_type_never_drawn(self, grid200):
        t1 = constant_type(grid200, weight=1.0, gamma=0.5, theta=0.0, h=0.1, sigma=0.2, sigma0=0.0)
        t2 = constant_type(grid200, weight=0.0, gamma=0.5, theta=0.0, h=0.1, sigma=0.2, sigma0=0.0)
        pop = Population((t1, t2))
        idx = sample_agents(pop, 3, np.random.default_rng(0))
        assert list(idx) == [0, 0, 0]

    def test_empirical_frequency(self, grid200):
        t1 = constant_type(grid200, weight=0.5, gamma=0.5, theta=0.0, h=0.1, sigma=0.2, sigma0=0.0)
        t2 = constant_type(grid200, weight=0.5, gamma=-1.0, theta=0.0, h=0.1, sigma=0.2, sigma0=0.0)
        pop = Population((t1, t2))
        n = 100_000
        idx = sample_agents(pop, n, philox_stream(123, 0))
        freq = np.mean(idx == 0)
        # binomial standard error of the frequency estimate
        assert abs(freq - 0.5) <= 3.0 * np.sqrt(0.25 / n)

    def test_zero_samples_rejected(self, grid200):
        with pytest.raises(ValueError):
            sample_agents(single(grid200), 0, np.random.default_rng(0))

    def test_deterministic_given_seed(self, grid200):
        pop = single(grid200)
        a = sample_agents(pop, 100, philox_stream(7, 1))
        b = sample_agents(pop, 100, philox_stream(7, 1))
        assert np.array_equal(a, b)
