"""Exact enumeration: reference oracle, invariants, bound probing."""

from __future__ import annotations

import math
from fractions import Fraction

import pytest

from tbrw import exact
from tbrw.errors import CapacityError, UsageError

# --- independent reference enumerator (deliberately different design:
# immutable parent lists, neighbours recomputed by scanning, no shared
# mutable state) ----------------------------------------------------------


def _ref_neighbors(parents, v):
    kids = [w for w, pv in enumerate(parents) if pv == v]
    return ([parents[v]] if v != 0 else []) + kids


def _ref_depth(parents, v):
    d = 0
    while v != 0:
        v = parents[v]
        d += 1
    return d


def ref_polynomial(n, event):
    """Brute force over decision sequences; event sees (depths, degrees)."""
    coeffs = [Fraction(0)] * (n + 1)

    def rec(parents, pos, d_hist, deg_hist, t, i, q):
        if t == n:
            if event(d_hist, deg_hist):
                coeffs[i] += q
            return
        for add in (0, 1):
            ps = parents + [pos] if add else parents
            nbrs = _ref_neighbors(ps, pos)
            w = q * Fraction(1, len(nbrs))
            for nb in nbrs:
                rec(
                    ps,
                    nb,
                    d_hist + [_ref_depth(ps, nb)],
                    deg_hist + [len(_ref_neighbors(ps, nb))],
                    t + 1,
                    i + add,
                    w,
                )

    rec([-1, 0], 1, [1], [1], 0, 0, Fraction(1))
    return tuple(coeffs)


def ref_first_arrival(n):
    def ev(d_hist, deg_hist):
        return 0 not in d_hist[1:n] and d_hist[n] == 0

    return ev


def ref_no_regen(n):
    def ev(d_hist, deg_hist):
        for m in range(1, n + 1):
            if deg_hist[m] != 1:
                continue
            if d_hist[m] <= max(d_hist[:m]):
                continue
            if all(d_hist[t] >= d_hist[m] for t in range(m + 1, n + 1)):
                return False
        return True

    return ev


class TestAtoms:
    def test_one_step_atoms(self):
        atoms = exact.iter_atoms(1)
        assert len(atoms) == 3
        weights = sorted((a.added, a.jump_weight) for a in atoms)
        # no-leaf: forced move (q=1); leaf: two neighbours (q=1/2 each)
        assert weights == [(0, Fraction(1)), (1, Fraction(1, 2)), (1, Fraction(1, 2))]

    def test_atom_masses_sum_to_one(self):
        for n in (1, 2, 3, 4):
            atoms = exact.iter_atoms(n)
            p = Fraction(1, 3)
            total = sum(a.jump_weight * (1 - p) ** (n - a.added) * p**a.added for a in atoms)
            assert total == 1

    def test_atom_counts_match_frozen_table(self):
        for n in (1, 2, 3, 4, 5, 6, 7):
            assert len(exact.iter_atoms(n)) == exact.predict_atom_count(n)


class TestEnumerate:
    def test_first_arrival_step_one_polynomial(self):
        # brute force over the two step outcomes: no-leaf forces the
        # move to the root; a leaf reaches the root half the time
        poly = exact.enumerate_event(exact.root_arrival(1))
        assert poly.coeffs == (Fraction(1), Fraction(1, 2))
        assert poly.evaluate(Fraction(1, 2)) == Fraction(3, 4)

    def test_even_horizon_arrival_is_zero(self):
        for n in (2, 4, 6):
            assert exact.enumerate_event(exact.root_arrival(n)).is_zero

    def test_whole_space_coefficients_are_binomials(self):
        for n in range(1, 9):
            poly = exact.enumerate_event(exact.whole_space(n))
            assert all(c == math.comb(n, i) for i, c in enumerate(poly.coeffs))
            assert poly.evaluate(Fraction(2, 7)) == 1

    def test_matches_reference_enumerator(self):
        for n in (1, 2, 3, 4, 5, 6):
            got = exact.enumerate_event(exact.root_arrival(n)).coeffs
            assert got == ref_polynomial(n, ref_first_arrival(n))
            got = exact.enumerate_event(exact.no_regeneration(n)).coeffs
            assert got == ref_polynomial(n, ref_no_regen(n))
            got = exact.enumerate_event(exact.whole_space(n)).coeffs
            assert got == ref_polynomial(n, lambda d, g: True)

    def test_additivity_event_plus_complement(self):
        ev = exact.root_arrival(3)
        comp = exact.Event("comp", 3, lambda view: not ev.atom_predicate(view))
        total = exact.enumerate_event(ev) + exact.enumerate_event(comp)
        assert total.coeffs == exact.enumerate_event(exact.whole_space(3)).coeffs

    def test_capacity_error_reports_scale(self):
        with pytest.raises(CapacityError, match="cap"):
            exact.enumerate_event(exact.root_arrival(13))
        with pytest.raises(CapacityError, match="realizations"):
            exact.enumerate_polynomial(20, lambda v: True)

    def test_bad_horizon(self):
        with pytest.raises(UsageError):
            exact.enumerate_polynomial(0, lambda v: True)

    def test_coefficients_nonnegative_and_bounded(self):
        for n in (3, 5, 7):
            poly = exact.enumerate_event(exact.no_regeneration(n))
            assert all(c >= 0 for c in poly.coeffs)
            for k in range(0, 101, 10):
                v = poly.evaluate(Fraction(k, 100))
                assert 0 <= v <= 1


class TestSeries:
    def test_even_terms_vanish(self):
        terms = exact.ho_series_terms(8)
        for n in (2, 4, 6, 8):
            assert terms[n - 1].is_zero

    def test_partial_sums_increase_and_stay_below_one(self):
        terms = exact.ho_series_terms(7)
        grid = [Fraction(k, 100) for k in range(101)]
        running = [Fraction(0)] * len(grid)
        for term in terms:
            vals = [term.evaluate(g) for g in grid]
            assert all(v >= 0 for v in vals)
            running = [r + v for r, v in zip(running, vals)]
            assert all(r <= 1 for r in running)

    def test_golden_partial_sum_at_one(self):
        # frozen on first computation, independently confirmed by the
        # reference enumerator below
        golden = Fraction(165577, 259200)
        terms = exact.ho_series_terms(9)
        assert sum(t.evaluate(Fraction(1)) for t in terms) == golden
        ref = sum((ref_polynomial(n, ref_first_arrival(n))[n] for n in range(1, 7)), Fraction(0))
        # reference covers n <= 6 (cost); same prefix must agree exactly
        prefix = sum(t.evaluate(Fraction(1)) for t in terms[:6])
        assert prefix == ref
        assert Fraction(0) < golden < Fraction(1)

    def test_dominance_over_no_regeneration(self):
        # an arrival at n contains no regeneration in [1, n]: the walker
        # ends at depth 0, under every candidate record depth
        for n in (3, 5, 7, 9):
            arr = exact.enumerate_event(exact.root_arrival(n))
            nor = exact.enumerate_event(exact.no_regeneration(n))
            assert all(a <= b for a, b in zip(arr.coeffs, nor.coeffs))
            for k in range(101):
                g = Fraction(k, 100)
                assert arr.evaluate(g) <= nor.evaluate(g)


class TestComplexEvaluation:
    def test_constant_polynomial_is_one_everywhere(self):
        poly = exact.enumerate_event(exact.whole_space(4))
        for z in (0.3 + 0.2j, -1.5 + 0.1j, 2.0 + 0j):
            assert abs(poly.eval_complex(z) - 1) < 1e-30

    def test_real_evaluation_matches_exact_rational(self):
        poly = exact.enumerate_event(exact.root_arrival(5))
        p = Fraction(3, 10)
        target = poly.evaluate(p)
        got = poly.eval_complex(complex(float(p), 0.0))
        assert abs(got.real - float(target)) < 1e-15
        exact_mp = poly.eval_complex(0.3 + 0j)  # 0.3 as double, deliberate
        assert abs(exact_mp.imag) == 0

    def test_probe_validation(self):
        with pytest.raises(UsageError):
            exact.ComplexProbe(Fraction(1, 2), Fraction(3, 4), ())
        with pytest.raises(UsageError):
            exact.ComplexProbe(Fraction(1, 2), Fraction(1, 10), (0.7 + 0j,))

    def test_circle_factory_points_inside_ball(self):
        probe = exact.ComplexProbe.circles("0.5", "0.1")
        assert len(probe.points) == 128
        assert all(abs(z - 0.5) < 0.1 for z in probe.points)


class TestBoundVerification:
    def test_whole_space_trivially_holds(self):
        poly = exact.enumerate_event(exact.whole_space(6))
        probe = exact.ComplexProbe.circles("0.5", "0.1")
        rep = exact.verify_An_bound(poly, probe)
        assert rep.holds and not rep.vacuous
        assert rep.max_ratio < 1

    def test_arrival_events_hold_small_sweep(self):
        probe = exact.ComplexProbe.circles("0.5", "0.1", points_per_circle=16)
        for n in (1, 3, 5, 7):
            rep = exact.verify_An_bound(exact.enumerate_event(exact.root_arrival(n)), probe)
            assert rep.holds and not rep.counterexample

    def test_zero_polynomial_vacuous(self):
        poly = exact.enumerate_event(exact.root_arrival(2))
        probe = exact.ComplexProbe.circles("0.5", "0.1", points_per_circle=8)
        rep = exact.verify_An_bound(poly, probe)
        assert rep.holds and rep.vacuous and rep.max_ratio == 0.0

    def test_report_serializes(self):
        poly = exact.enumerate_event(exact.root_arrival(3))
        rep = exact.verify_An_bound(poly, exact.ComplexProbe.circles("0.5", "0.1", points_per_circle=8))
        doc = rep.to_json_dict()
        assert doc["holds"] and doc["n_points"] == 16


class TestPolynomialSerialization:
    def test_json_round_trip_exact(self):
        poly = exact.enumerate_event(exact.no_regeneration(5))
        back = exact.ProbPolynomial.from_json(poly.to_json())
        assert back.coeffs == poly.coeffs
        assert back.horizon == poly.horizon


class TestCrossValidation:
    def test_arrival_one_matches_three_quarters(self):
        rep = exact.cross_validate(exact.root_arrival(1), "0.5", 4000, master_seed=101)
        assert rep.exact_value == 0.75
        assert rep.within

    def test_whole_space_frequency_exactly_one(self):
        rep = exact.cross_validate(exact.whole_space(3), "0.5", 500, master_seed=1)
        assert rep.frequency == 1.0 and rep.within

    def test_impossible_event_frequency_exactly_zero(self):
        rep = exact.cross_validate(exact.root_arrival(2), "0.5", 500, master_seed=2)
        assert rep.frequency == 0.0 and rep.exact_value == 0.0 and rep.within

    def test_no_regeneration_bridge(self):
        rep = exact.cross_validate(exact.no_regeneration(6), "0.5", 3000, master_seed=7)
        assert rep.within

    def test_requires_trajectory_predicate(self):
        bare = exact.Event("bare", 2, lambda v: True)
        with pytest.raises(UsageError):
            exact.cross_validate(bare, "0.5", 10, master_seed=1)
