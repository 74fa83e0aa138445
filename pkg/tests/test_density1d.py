"""Curvature coefficient and 1D density tests.

Frozen oracle values were computed with mpmath at 50 decimal digits by
direct evaluation of the defining formulas; the symbolic equality-case
check uses sympy once to certify the generator family.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import needlekit as nk

PI = math.pi
P12 = nk.CurvatureParams(1.0, 2.0)

# mpmath, 50 dps: sin(t*th*sqrt(K/(N-1)))/sin(th*sqrt(K/(N-1))), then
# t^(1/N) * sigma^(1-1/N)
TAU_HALF_1_K1_N3 = 0.5217418369285084
TAU_03_12_K2_N4 = 0.3359772774449402
SIGMA_HALF_1_K1_N2_REDUCED = 0.5329647576242045


# ---------------------------------------------------------------------------
# distortion coefficients


class TestSigma:
    def test_zero_separation_returns_t(self):
        assert nk.sigma_coeff(0.3, 0.0, P12) == 0.3

    def test_t_one_is_one(self):
        assert nk.sigma_coeff(1.0, 1.0, P12) == pytest.approx(1.0, abs=1e-15)

    def test_window_edge_is_sentinel(self):
        for K, N in [(1.0, 2.0), (2.0, 3.0), (0.5, 4.0)]:
            theta = PI * math.sqrt(N / K)
            assert nk.sigma_coeff(0.5, theta, nk.CurvatureParams(K, N)) == nk.INFINITE_COEFF

    def test_sentinel_is_explicit_not_overflow(self):
        val = nk.sigma_coeff(0.5, 10.0, P12)
        assert val == nk.INFINITE_COEFF
        assert val > 1e308 and not np.isnan(val)

    def test_rejects_bad_t(self):
        with pytest.raises(nk.InvalidParameterError):
            nk.sigma_coeff(1.5, 1.0, P12)
        with pytest.raises(nk.InvalidParameterError):
            nk.sigma_coeff(-0.1, 1.0, P12)

    def test_rejects_bad_curvature(self):
        with pytest.raises(nk.InvalidParameterError):
            nk.CurvatureParams(0.0, 2.0)
        with pytest.raises(nk.InvalidParameterError):
            nk.CurvatureParams(1.0, 1.0)

    @given(
        t=st.floats(0.01, 0.99),
        theta=st.floats(0.01, 3.0),
        N=st.floats(1.5, 10.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_exceeds_linear_interpolation_inside_window(self, t, theta, N):
        # strict concavity of the coefficient in its window
        K = N - 1.0
        if theta >= PI * math.sqrt(N / K) * (1 - 1e-9):
            return
        assert nk.sigma_coeff(t, theta, nk.CurvatureParams(K, N)) > t


class TestTau:
    def test_t_one(self):
        assert nk.tau_coeff(1.0, 0.5, P12) == pytest.approx(1.0, abs=1e-15)

    def test_t_zero(self):
        assert nk.tau_coeff(0.0, 0.5, P12) == 0.0

    def test_frozen_oracle_n3(self):
        got = nk.tau_coeff(0.5, 1.0, nk.CurvatureParams(1.0, 3.0))
        assert got == pytest.approx(TAU_HALF_1_K1_N3, abs=1e-14)

    def test_frozen_oracle_n4(self):
        got = nk.tau_coeff(0.3, 1.2, nk.CurvatureParams(2.0, 4.0))
        assert got == pytest.approx(TAU_03_12_K2_N4, abs=1e-14)

    def test_sentinel_propagates(self):
        # reduced-dimension window: theta >= pi*sqrt((N-1)/K)
        theta = PI * math.sqrt(1.0 / 1.0)
        assert nk.tau_coeff(0.5, theta, P12) == nk.INFINITE_COEFF


# ---------------------------------------------------------------------------
# model density


class TestModelDensity:
    def test_n2_closed_values(self):
        m = nk.model_density(2.0)
        assert m.omega_N == pytest.approx(2.0, abs=1e-13)
        assert m.evaluate(PI / 2) == pytest.approx(0.5, abs=1e-13)

    def test_n3_closed_values(self):
        m = nk.model_density(3.0)
        assert m.omega_N == pytest.approx(PI / 2, abs=1e-13)
        assert m.evaluate(PI / 2) == pytest.approx(2.0 / PI, abs=1e-13)

    @pytest.mark.parametrize("N", [1.5, 2.0, 2.5, 3.0, 5.0, 10.0])
    def test_normalization(self, N):
        m = nk.model_density(N)
        assert m.evaluate(0.0) == pytest.approx(0.0, abs=1e-13)
        assert m.cdf(PI) == pytest.approx(1.0, abs=1e-10)

    def test_rejects_low_dimension(self):
        with pytest.raises(nk.InvalidParameterError):
            nk.model_density(1.0)

    def test_quantile_inverts_cdf(self):
        m = nk.model_density(2.5)
        vs = np.linspace(0.001, 0.999, 101)
        assert np.max(np.abs(m.cdf(m.quantile(vs)) - vs)) < 1e-12


# ---------------------------------------------------------------------------
# CD membership


class TestIsCdDensity:
    def test_model_is_cd(self):
        for N in (1.5, 2.0, 3.0, 7.0):
            res = nk.is_cd_density(nk.model_density(N), nk.CurvatureParams(N - 1.0, N))
            assert res.ok, res

    def test_constant_density_fails_with_positive_violation(self):
        D = 2.8
        u = nk.density_from_samples(np.linspace(0, D, 200), np.ones(200), D, 2.0)
        res = nk.is_cd_density(u, P12)
        assert not res.ok
        assert res.worst_violation > 0

    def test_shifted_sine_power_is_cd(self):
        # single equality piece on a strict subwindow
        h = nk.sine_power_density(3.0, 2.0, [(1.3, 0.4)])
        res = nk.is_cd_density(h, nk.CurvatureParams(2.0, 3.0))
        assert res.ok, res

    def test_symbolic_equality_case(self):
        # g = A sin(t + phi) solves g'' + g = 0, so each generator piece
        # saturates the differential form of the curvature condition
        import sympy

        t, A, phi = sympy.symbols("t A phi", positive=True)
        g = A * sympy.sin(t + phi)
        assert sympy.simplify(sympy.diff(g, t, 2) + g) == 0

    def test_bimodal_fails(self):
        D = 2.8
        ts = np.linspace(0, D, 400)
        vals = np.sin(ts) ** 2 * (1.2 + np.cos(3 * ts))
        b = nk.density_from_samples(ts, vals, D, 2.0)
        assert not nk.is_cd_density(b, P12).ok

    def test_degenerate_domain_raises(self):
        h = nk.Density1D(D=0.0, form="grid", grid=np.array([0.0, 0.0]),
                         values=np.array([1.0, 1.0]), exponent=2.0)
        with pytest.raises(nk.DegenerateDomainError):
            nk.is_cd_density(h, P12)

    @given(seed=st.integers(0, 10_000), n_small=st.integers(2, 4))
    @settings(max_examples=40, deadline=None)
    def test_generator_soundness(self, seed, n_small):
        rng = np.random.default_rng(seed)
        N = float(rng.uniform(1.6, 5.0))
        D = float(rng.uniform(1.0, PI - 0.05))
        h = nk.random_cd_density(rng, N, D, max_pieces=3)
        res = nk.is_cd_density(h, nk.CurvatureParams(N - 1.0, N), tol=1e-9)
        assert res.ok, (N, D, res)
        assert h.cdf(h.D) == pytest.approx(1.0, abs=1e-12)

    def test_concavity_of_transformed_density(self):
        # discrete second differences of h^(1/(N-1)) stay nonpositive up to
        # rounding for every member of the generated family
        rng = np.random.default_rng(11)
        for _ in range(10):
            N = float(rng.uniform(1.8, 4.0))
            D = float(rng.uniform(1.5, 3.0))
            h = nk.random_cd_density(rng, N, D)
            ts = np.linspace(0, D, 801)
            g = h.evaluate(ts) ** (1.0 / (N - 1.0))
            second = g[2:] - 2 * g[1:-1] + g[:-2]
            assert np.max(second) < 1e-9


# ---------------------------------------------------------------------------
# comparison estimates


class TestRatioBounds:
    def test_model_at_full_domain_pinches(self):
        m = nk.model_density(2.0)
        r = nk.density_ratio_bounds(m, 1.0, 0.5)
        assert r.lower == pytest.approx(r.upper, abs=1e-13)
        assert r.value == pytest.approx(r.lower, abs=1e-10)
        assert r.ok

    def test_random_density_with_deficit(self):
        rng = np.random.default_rng(5)
        h = nk.cd_density_from_latents(2.0, PI - 0.1, [1.1, 0.9], [0.3, 0.7])
        r = nk.density_ratio_bounds(h, 1.0, 0.5)
        assert r.ok, r

    def test_small_s_bounds_approach_one(self):
        h = nk.cd_density_from_latents(2.0, PI - 0.1, [1.0], [0.5])
        for s in (1e-3, 1e-5):
            r = nk.density_ratio_bounds(h, 1.2, s)
            assert abs(r.lower - 1.0) < 5 * s
            assert abs(r.upper - 1.0) < 5 * s

    def test_out_of_domain(self):
        h = nk.cd_density_from_latents(2.0, 2.5, [1.0], [0.5])
        with pytest.raises(nk.OutOfDomainError):
            nk.density_ratio_bounds(h, 2.0, 1.0)
        with pytest.raises(nk.OutOfDomainError):
            nk.density_ratio_bounds(h, 0.0, 0.5)

    def test_integrated_upper_bound_tail_inequality(self):
        # integrating the upper ratio bound in s gives
        # h(t) * int_t^D h_N >= h_N(t) * int_t^D h
        rng = np.random.default_rng(17)
        for _ in range(20):
            N = float(rng.uniform(1.8, 4.0))
            D = float(rng.uniform(2.0, PI - 0.02))
            h = nk.random_cd_density(rng, N, D)
            for t in (0.3 * D, 0.5 * D, 0.8 * D):
                lhs = float(h.evaluate(t)) * (nk.model_cdf(D, N) - nk.model_cdf(t, N))
                rhs = float(nk.model_value(t, N)) * (1.0 - h.cdf(t))
                assert lhs >= rhs - 1e-8


class TestSandwich:
    def test_full_domain_pinches_to_model(self):
        m = nk.model_density(2.0)
        s = nk.density_sandwich(m, 1.1, lam_D=1.0)
        assert s.lower == pytest.approx(s.value, abs=1e-12)
        assert s.upper == pytest.approx(s.value, abs=1e-12)
        assert s.ok

    def test_hundred_random_densities_small_deficit(self):
        rng = np.random.default_rng(23)
        eps = 0.05
        violations = 0
        for _ in range(100):
            N = float(rng.uniform(1.7, 4.5))
            h = nk.random_cd_density(rng, N, PI - eps)
            for t in rng.uniform(0.05, PI - eps - 0.05, size=5):
                r = nk.density_sandwich(h, float(t), tol=1e-9)
                violations += 0 if r.ok else 1
        assert violations == 0

    def test_uniform_convergence_as_deficit_shrinks(self):
        # same latents, shrinking deficit: sup-distance to the model density
        # over a fixed compact window decreases to zero
        amps, fracs = [1.4, 0.8], [0.25, 0.75]
        N = 2.0
        sups = []
        for eps in (0.1, 0.05, 0.01):
            h = nk.cd_density_from_latents(N, PI - eps, amps, fracs)
            ts = np.linspace(0.2, PI - 0.2, 257)
            ts = ts[ts <= h.D]
            sups.append(float(np.max(np.abs(h.evaluate(ts) - nk.model_value(ts, N)))))
        assert sups[0] > sups[1] > sups[2]
        assert sups[2] < 0.02


class TestLogDerivative:
    def test_model_bracket_contains_cotangent(self):
        m = nk.model_density(3.0)
        for t in (0.5, 1.0, 2.0):
            r = nk.log_derivative_bounds(m, t)
            expected = 2.0 / math.tan(t)
            assert r.lower - 1e-9 <= expected <= r.upper + 1e-9
            assert r.ok

    def test_symmetry_point_admits_zero(self):
        m = nk.model_density(2.0)
        r = nk.log_derivative_bounds(m, PI / 2)
        assert r.lower - 1e-12 <= 0.0 <= r.upper + 1e-12
        assert abs(r.value) < 1e-6
        assert r.ok

    def test_random_density_inside_bracket(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            N = float(rng.uniform(1.8, 4.0))
            D = float(rng.uniform(2.0, 3.0))
            h = nk.random_cd_density(rng, N, D)
            for t in rng.uniform(0.1, D - 0.1, size=3):
                r = nk.log_derivative_bounds(h, float(t), tol=1e-6)
                assert r.ok, (N, D, t, r)

    def test_lipschitz_estimate_dominates_slope(self):
        h = nk.cd_density_from_latents(2.0, 2.9, [1.2], [0.4])
        t = 1.3
        r = nk.log_derivative_bounds(h, t)
        d = 1e-6
        slope = (h.evaluate(t + d) - h.evaluate(t - d)) / (2 * d)
        assert abs(slope) <= r.lipschitz_estimate + 1e-6


class TestUniqueMax:
    def test_model_peak_at_center(self):
        m = nk.model_density(2.0)
        r = nk.unique_max(m)
        assert r.t_max == pytest.approx(PI / 2, abs=1e-3)
        assert r.monotone_ok and not r.flat

    def test_shifted_interior_peak(self):
        phi = 0.4
        h = nk.sine_power_density(3.0, 2.0, [(1.0, phi)])
        r = nk.unique_max(h)
        assert r.t_max == pytest.approx(PI / 2 - phi, abs=1e-3)
        assert r.monotone_ok

    def test_boundary_peak_monotone(self):
        # window pushed past the crest: density decreasing on the whole domain
        phi = 1.8
        D = 1.2
        h = nk.sine_power_density(2.0, D, [(1.0, phi)])
        r = nk.unique_max(h)
        assert r.t_max == pytest.approx(0.0, abs=1e-3)
        assert r.monotone_ok

    def test_flat_density_flagged(self):
        D = 2.0
        flat = nk.density_from_samples(np.linspace(0, D, 100), np.ones(100), D, 2.0)
        assert nk.unique_max(flat).flat


# ---------------------------------------------------------------------------
# serialization


class TestSerialization:
    def test_grid_roundtrip_exact(self):
        rng = np.random.default_rng(3)
        pos = np.sort(rng.uniform(0.1, 2.7, 40))
        mass = rng.uniform(0.5, 2.0, 40)
        g = nk.grid_density(pos, mass, 2.8, 2.0)
        back = nk.density_from_text(nk.density_to_text(g))
        probe = np.linspace(0, 2.8, 301)
        assert np.max(np.abs(back.evaluate(probe) - g.evaluate(probe))) == 0.0
        assert abs(back.cdf(2.8) - g.cdf(2.8)) < 1e-12

    def test_linear_roundtrip_exact(self):
        ts = np.linspace(0, 2.5, 120)
        vals = np.sin(ts) + 0.2
        g = nk.density_from_samples(ts, vals, 2.5, 2.0)
        back = nk.density_from_text(nk.density_to_text(g))
        assert np.array_equal(back.grid, g.grid)
        assert np.array_equal(back.values, g.values)
        assert abs(back.cdf(2.5) - g.cdf(2.5)) < 1e-12

    def test_closed_form_tabulates(self):
        h = nk.cd_density_from_latents(2.0, 2.9, [1.1], [0.3])
        back = nk.density_from_text(nk.density_to_text(h))
        # values at the written samples are verbatim; the interpolant's mass
        # reflects tabulation loss only
        assert np.max(np.abs(back.values - h.values)) == 0.0
        assert abs(back.cdf(back.D) - 1.0) < 1e-6

    def test_header_carries_domain_and_dimension(self):
        h = nk.cd_density_from_latents(3.0, 2.2, [1.0], [0.5])
        first = nk.density_to_text(h).splitlines()[0].split()
        assert float(first[0]) == 2.2
        assert float(first[1]) == 3.0
        assert first[2] == "sine-power"

    def test_malformed_rejected(self):
        with pytest.raises(nk.InvalidParameterError):
            nk.density_from_text("1.0 2.0\n0 1\n")
        with pytest.raises(nk.InvalidParameterError):
            nk.density_from_text("1.0 2.0 grid\n0 1\n")
