"""Tests for interval-set algebra, perimeter under a density, brute-force
isoperimetric search, and the quantitative stability ratio."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from needlekit.densities import (density_from_samples, model_density,
                                 random_cd_density)
from needlekit.errors import (BudgetExceededError, InvalidParameterError,
                              OutOfDomainError)
from needlekit.intervals import (IntervalSet, boundary_points, brute_force_min,
                                 intervals_from_text, intervals_to_text,
                                 perimeter_1d, quantitative_ratio,
                                 quantitative_sweep, sweep_csv,
                                 sym_diff_volume, volume)
from needlekit.profiles import one_sided_profile, quantile_radii, window_density

PI = math.pi


def _set(pairs, D=PI):
    return IntervalSet.from_raw(pairs, D)


@st.composite
def interval_sets(draw, D=PI):
    n = draw(st.integers(0, 3))
    pts = sorted(draw(st.lists(st.floats(0.0, D), min_size=2 * n,
                               max_size=2 * n, unique=True)))
    return IntervalSet.from_raw(list(zip(pts[::2], pts[1::2])), D)


class TestIntervalSet:
    def test_from_raw_sorts_merges_drops(self):
        E = IntervalSet.from_raw([(2.0, 2.5), (0.1, 0.4), (0.4, 0.6), (1.0, 1.0)],
                                 PI)
        assert E.intervals == ((0.1, 0.6), (2.0, 2.5))

    def test_gap_tolerance_merges_slivers(self):
        E = IntervalSet.from_raw([(0.1, 0.4), (0.401, 0.6)], PI, gap_tol=0.01)
        assert E.intervals == ((0.1, 0.6),)

    def test_validation(self):
        with pytest.raises(InvalidParameterError):
            IntervalSet(((0.5, 0.2),), PI)
        with pytest.raises(OutOfDomainError):
            IntervalSet(((-0.1, 0.2),), PI)
        with pytest.raises(OutOfDomainError):
            IntervalSet(((3.0, 3.5),), PI)
        with pytest.raises(InvalidParameterError):
            IntervalSet(((0.1, 0.5), (0.4, 0.8)), PI)

    def test_complement_partitions_domain(self):
        E = _set([(0.2, 0.5), (1.0, 1.4)])
        C = E.complement()
        assert E.length() + C.length() == pytest.approx(PI, abs=1e-12)
        assert E.intersect(C).intervals == ()
        assert E.union(C).intervals == ((0.0, PI),)
        assert C.complement().intervals == E.intervals

    def test_difference_and_sym_diff(self):
        E = _set([(0.0, 1.0)])
        F = _set([(0.5, 1.5)])
        assert E.difference(F).intervals == ((0.0, 0.5),)
        assert E.sym_diff(F).intervals == ((0.0, 0.5), (1.0, 1.5))
        assert E.sym_diff(E).intervals == ()

    def test_empty_and_full(self):
        assert IntervalSet.empty(2.0).length() == 0.0
        assert IntervalSet.full(2.0).intervals == ((0.0, 2.0),)

    @given(E=interval_sets(), F=interval_sets())
    @settings(max_examples=80, deadline=None)
    def test_algebra_consistency(self, E, F):
        inter = E.intersect(F)
        assert inter.length() <= min(E.length(), F.length()) + 1e-12
        assert E.union(F).length() == pytest.approx(
            E.length() + F.length() - inter.length(), abs=1e-10)
        assert E.sym_diff(F).length() == pytest.approx(
            E.length() + F.length() - 2 * inter.length(), abs=1e-10)


class TestVolumeAndPerimeter:
    def test_volume_anchor_values(self):
        h = model_density(2.0)
        assert volume(h, IntervalSet.full(PI)) == pytest.approx(1.0, abs=1e-12)
        assert volume(h, IntervalSet.empty(PI)) == 0.0
        assert volume(h, _set([(0.0, PI / 2)])) == pytest.approx(0.5, abs=1e-12)

    def test_volume_complement_additivity(self):
        h = model_density(2.5)
        E = _set([(0.2, 0.9), (1.5, 2.8)])
        assert volume(h, E) + volume(h, E.complement()) == pytest.approx(1.0, abs=1e-12)

    def test_perimeter_interior_boundary_only(self):
        h = model_density(2.0)
        E = _set([(0.5, 1.2)])
        assert perimeter_1d(h, E) == pytest.approx(h(0.5) + h(1.2), rel=1e-12)
        one_sided = _set([(0.0, 1.2)])
        assert perimeter_1d(h, one_sided) == pytest.approx(h(1.2), rel=1e-12)
        assert perimeter_1d(h, IntervalSet.full(PI)) == 0.0
        assert perimeter_1d(h, IntervalSet.empty(PI)) == 0.0

    def test_one_sided_perimeter_matches_profile(self):
        h = model_density(3.0)
        for v in (0.2, 0.5):
            r = quantile_radii(h, v).r_minus
            E = _set([(0.0, r)])
            assert perimeter_1d(h, E) == pytest.approx(one_sided_profile(h, v),
                                                       rel=1e-10)

    def test_perimeter_complementation(self):
        h = model_density(2.0)
        E = _set([(0.2, 0.5), (1.0, 1.4)])
        assert perimeter_1d(h, E) == pytest.approx(
            perimeter_1d(h, E.complement()), rel=1e-12)

    def test_relative_window(self):
        h = model_density(2.0)
        r = quantile_radii(h, 0.3).r_minus
        E = _set([(0.0, r)])
        assert perimeter_1d(h, E, window=(r + 0.1, PI)) == 0.0
        assert perimeter_1d(h, E, window=(0.0, PI)) == pytest.approx(h(r), rel=1e-12)
        assert boundary_points(E) == [r]

    def test_locality_same_canonical_form(self):
        h = model_density(2.0)
        E1 = IntervalSet.from_raw([(0.2, 0.5)], PI)
        E2 = IntervalSet.from_raw([(0.2, 0.35), (0.35, 0.5)], PI)
        assert E1.intervals == E2.intervals
        assert perimeter_1d(h, E1) == perimeter_1d(h, E2)

    def test_sym_diff_volume_identity(self):
        h = model_density(2.0)
        E = _set([(0.1, 0.8)])
        F = _set([(0.5, 1.5), (2.0, 2.2)])
        want = volume(h, E) + volume(h, F) - 2 * volume(h, E.intersect(F))
        assert sym_diff_volume(h, E, F) == pytest.approx(want, abs=1e-12)
        assert sym_diff_volume(h, E, F) == pytest.approx(
            sym_diff_volume(h, F, E), abs=1e-14)

    @given(E=interval_sets(), F=interval_sets(), G=interval_sets())
    @settings(max_examples=40, deadline=None)
    def test_sym_diff_triangle_inequality(self, E, F, G):
        h = model_density(2.0)
        assert sym_diff_volume(h, E, G) <= (sym_diff_volume(h, E, F)
                                            + sym_diff_volume(h, F, G) + 1e-10)


class TestBruteForce:
    def test_model_half_volume_single_interval(self):
        h = model_density(2.0)
        r = brute_force_min(h, 0.5, k_max=1, grid=300)
        assert len(r.E_opt.intervals) == 1
        a, b = r.E_opt.intervals[0]
        cell = PI / 300
        assert (abs(a) <= 2 * cell and abs(b - PI / 2) <= 2 * cell) or \
               (abs(b - PI) <= 2 * cell and abs(a - PI / 2) <= 2 * cell)
        assert r.P_min == pytest.approx(0.5, abs=1e-3)
        assert abs(r.min_delta) <= 1e-9

    def test_multi_interval_search_collapses_one_sided(self):
        h = model_density(2.0)
        r = brute_force_min(h, 0.2, k_max=3, grid=120)
        assert len(r.E_opt.intervals) == 1
        assert r.min_delta >= -1e-9
        assert abs(r.min_delta) <= 1e-6

    def test_generator_family_bobkov(self):
        rng = np.random.default_rng(7)
        cell = PI / 80
        for N in (2.0, 3.0):
            for _ in range(3):
                h = random_cd_density(rng, N, PI - 0.08)
                for v in (0.2, 0.5):
                    r = brute_force_min(h, v, k_max=2, grid=80)
                    assert r.min_delta >= -1e-9
                    assert len(r.E_opt.intervals) == 1
                    a, b = r.E_opt.intervals[0]
                    qr = quantile_radii(h, v)
                    left = abs(a) <= 1e-12 and abs(b - qr.r_minus) <= 2 * (h.D / 80)
                    right = abs(b - h.D) <= 1e-12 and abs(a - qr.r_plus) <= 2 * (h.D / 80)
                    assert left or right

    def test_right_sided_optimum_is_representable(self):
        # density peaked left of center: the cheap cut for small v is on the right
        from needlekit.densities import sine_power_density
        h = sine_power_density(2.0, 2.0, [(1.0, 1.0)])
        qr = quantile_radii(h, 0.2)
        assert h(qr.r_plus) < h(qr.r_minus)
        r = brute_force_min(h, 0.2, k_max=1, grid=200)
        a, b = r.E_opt.intervals[0]
        assert abs(b - h.D) <= 1e-12
        assert abs(a - qr.r_plus) <= 2 * (h.D / 200)

    def test_small_volume_monotone(self):
        h = model_density(2.0)
        ps = [brute_force_min(h, v, k_max=1, grid=100).P_min
              for v in (0.02, 0.05, 0.1, 0.2, 0.4)]
        assert all(p1 < p2 for p1, p2 in zip(ps, ps[1:]))

    def test_refinement_never_increases_minimum(self):
        h = model_density(2.5)
        p = [brute_force_min(h, 0.3, k_max=2, grid=g).P_min for g in (30, 60, 120)]
        assert p[0] >= p[1] >= p[2]
        assert p[2] >= one_sided_profile(h, 0.3) - 1e-9

    def test_deterministic_tie_break(self):
        h = model_density(2.0)
        r1 = brute_force_min(h, 0.5, k_max=2, grid=64)
        r2 = brute_force_min(h, 0.5, k_max=2, grid=64)
        assert r1.E_opt.intervals == r2.E_opt.intervals
        assert r1.P_min == r2.P_min

    def test_grid_density_input(self):
        xs = np.linspace(0.0, 3.0, 400)
        h = density_from_samples(xs, np.sin(xs * (PI / 3.0)) + 0.05, 3.0, 2.0)
        r = brute_force_min(h, 0.3, k_max=1, grid=90)
        assert r.P_min > 0
        assert volume(h, r.E_opt) == pytest.approx(0.3, abs=1e-6)

    def test_budget_and_parameter_guards(self):
        h = model_density(2.0)
        with pytest.raises(BudgetExceededError):
            brute_force_min(h, 0.3, k_max=2, grid=300, budget=1000)
        with pytest.raises(InvalidParameterError):
            brute_force_min(h, 0.3, k_max=4)
        with pytest.raises(InvalidParameterError):
            brute_force_min(h, 0.3, grid=500)
        with pytest.raises(InvalidParameterError):
            brute_force_min(h, 0.0)

    def test_budget_counts_configurations(self):
        h = model_density(2.0)
        r = brute_force_min(h, 0.3, k_max=1, grid=50)
        # both orientations sweep the full node list plus one-sided candidates
        assert r.n_configs == 2 * (51 + 1)


class TestQuantitativeRatio:
    def test_sentinel_on_both_optimal_sets(self):
        h = model_density(2.0)
        qr = quantile_radii(h, 0.3)
        for E in (_set([(0.0, qr.r_minus)]), _set([(qr.r_plus, PI)])):
            res = quantitative_ratio(h, E)
            assert math.isinf(res.ratio)
            assert res.denominator <= 1e-12

    def test_positive_finite_ratio_off_optimum(self):
        h = model_density(2.0)
        E = _set([(0.4, h.quantile(h.cdf(0.4) + 0.3))])
        res = quantitative_ratio(h, E)
        assert 0 < res.ratio < math.inf
        assert res.numerator == pytest.approx(res.ratio * res.denominator, rel=1e-12)

    def test_proof_shape_family_lower_bound(self):
        # sets of the shape [0, a] u (b, r + g) u [tail, D]: the stability
        # ratio dominates h(b) (1 - b L) / (2 m(a, b)) with L a Lipschitz
        # bound for the one-sided profile near v
        D = PI - 0.05
        h = window_density(2.0, D, (PI - D) / 2)
        v, a, b, g = 0.3, 0.01, 0.04, 0.001
        r = quantile_radii(h, v).r_minus
        m_ab = float(h.cdf(b) - h.cdf(a))
        tail = v - float(h.cdf(r + g) - h.cdf(b)) - float(h.cdf(a))
        assert tail > 0
        t0 = float(h.quantile(h.cdf(D) - tail))
        assert t0 > r + g
        E = _set([(0.0, a), (b, r + g), (t0, D)], D)
        assert volume(h, E) == pytest.approx(v, abs=1e-12)

        res = quantitative_ratio(h, E)
        assert res.denominator == pytest.approx(2 * m_ab, abs=1e-10)

        d = 1e-4
        lip = max(abs(one_sided_profile(h, v + s + d) - one_sided_profile(h, v + s - d)) / (2 * d)
                  for s in np.linspace(-2 * b * h(b), 2 * b * h(b), 9))
        bound = h(b) * (1 - b * 1.5 * lip) / (2 * m_ab)
        assert res.ratio >= bound - 1e-9
        assert bound > 5.0

    def test_deficit_nonnegative_on_random_interval_family(self):
        h = model_density(2.0)
        rng = np.random.default_rng(3)
        for _ in range(50):
            pts = np.sort(rng.uniform(0, PI, size=4))
            E = _set([(pts[0], pts[1]), (pts[2], pts[3])])
            v = volume(h, E)
            if not (1e-3 < v < 1 - 1e-3):
                continue
            res = quantitative_ratio(h, E)
            assert res.numerator >= -1e-9


class TestSweep:
    def test_sweep_counts_and_consistency(self):
        h = model_density(2.0)
        s = quantitative_sweep(h, 0.3, 3000, seed=11)
        assert s.n_sets == 3000
        assert 0 < s.ratio_min < math.inf
        chk = quantitative_ratio(h, s.argmin_set)
        assert chk.ratio == pytest.approx(s.ratio_min, rel=1e-9)
        assert volume(h, s.argmin_set) == pytest.approx(0.3, abs=1e-9)

    def test_sweep_deterministic(self):
        h = model_density(2.0)
        s1 = quantitative_sweep(h, 0.3, 500, seed=4)
        s2 = quantitative_sweep(h, 0.3, 500, seed=4)
        assert s1.ratio_min == s2.ratio_min
        assert s1.argmin_set.intervals == s2.argmin_set.intervals

    def test_sweep_on_window_density(self):
        h = window_density(2.0, PI - 0.1, 0.05)
        s = quantitative_sweep(h, 0.3, 2000, seed=5)
        assert s.ratio_min > 0.01


class TestSerialization:
    def test_round_trip_exact(self):
        E = _set([(0.2, 0.5), (1.0, 1.4)])
        txt = intervals_to_text(E)
        assert intervals_from_text(txt, PI).intervals == E.intervals
        assert intervals_from_text("", PI).intervals == ()
        assert intervals_to_text(IntervalSet.empty(PI)) == ""

    def test_malformed_raises(self):
        with pytest.raises(InvalidParameterError):
            intervals_from_text("0.1 0.2 0.3", PI)

    def test_sweep_csv_shape(self):
        h = model_density(2.0)
        s = quantitative_sweep(h, 0.3, 200, seed=0)
        text = sweep_csv([(0.3, 0.1, s)])
        lines = text.strip().split("\n")
        assert lines[0] == "v,eps,ratio_min,argmin_set"
        assert len(lines) == 2
        assert lines[1].startswith("0.3,0.1,")
