"""Renewal detection: hand-traced oracles and detector equivalence."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tbrw import LeafLaw, Retention, Trajectory, simulate
from tbrw.errors import CapabilityError, HorizonError
from tbrw.renewal import (
    AttemptOutcome,
    CensorPolicy,
    RenewalStatus,
    _cascade_scan,
    count_regenerations,
    detect_cascade,
    detect_renewals,
    detect_tau,
    epoch_increments,
)


def _fake_traj(depths, degrees=None) -> Trajectory:
    """Synthetic trajectory carrying only the columns the detectors read."""
    d = np.asarray(depths, dtype=np.int32)
    deg = np.ones_like(d) if degrees is None else np.asarray(degrees, dtype=np.int32)
    n = len(d) - 1
    from tbrw import GrowingTree

    return Trajectory(
        law=LeafLaw.bernoulli("0.5"),
        retention=Retention.SUMMARY,
        depth=d,
        walker_degree=deg,
        height=np.maximum.accumulate(d),
        vertex_count=np.full(n + 1, 2, dtype=np.int64),
        leaves_added=np.zeros(n + 1, dtype=np.int32),
        position=None,
        final_tree=GrowingTree.edge_start(),
    )


def _staircase_with_dip():
    """D: 1,2,1,2,3,4,...,55.  Worked out by hand:

    the record at t=1 is undercut at t=2; t=3 is not a record; from
    t=4 (depth 3) on, every step is a never-undercut record.  With
    depth_margin=5, horizon_margin=10 (N=56, usable 46) the confirmed
    renewals are exactly t=4..46 and t=47..56 are censored.
    """
    return [1, 2, 1] + list(range(2, 56))


class TestDetectRenewals:
    def test_staircase_oracle(self):
        traj = _fake_traj(_staircase_with_dip())
        pol = CensorPolicy(depth_margin=5, horizon_margin=10)
        times, statuses = detect_renewals(traj, pol)
        assert times.tolist() == list(range(4, 57))
        confirmed = [int(t) for t, s in zip(times, statuses) if s is RenewalStatus.CONFIRMED]
        assert confirmed == list(range(4, 47))
        assert all(s is RenewalStatus.CENSORED for t, s in zip(times, statuses) if t > 46)

    def test_monotone_path_renews_every_step(self):
        # D: 1,2,3,...,41 — every step a never-undercut record
        traj = _fake_traj(list(range(1, 42)))
        pol = CensorPolicy(depth_margin=5, horizon_margin=10)
        times, statuses = detect_renewals(traj, pol)
        assert times.tolist() == list(range(1, 41))
        confirmed = [int(t) for t, s in zip(times, statuses) if s is RenewalStatus.CONFIRMED]
        # confirmed needs depth + 5 reached (depth <= 36 -> t <= 35) and t <= 30
        assert confirmed == list(range(1, 31))

    def test_deep_dip_kills_candidates_below_it(self):
        # rise to 10, dip to 8, rise again: records at depths 9,10 are
        # undercut; later records resume above the pre-dip excursion max
        d = list(range(1, 11)) + [9, 8] + list(range(9, 31))
        traj = _fake_traj(d)
        pol = CensorPolicy(depth_margin=5, horizon_margin=3)
        times, _ = detect_renewals(traj, pol)
        assert times.tolist()[:8] == [1, 2, 3, 4, 5, 6, 7, 14]
        # t=14 is the first new record (depth 11) after the dip
        assert traj.depth[14] == 11

    def test_degree_condition_filters_non_leaves(self):
        d = list(range(1, 42))
        deg = [1] * 41
        deg[5] = 3  # pretend the record vertex at t=5 is not a leaf
        times, _ = detect_renewals(_fake_traj(d, deg), CensorPolicy(5, 5))
        assert 5 not in times.tolist()

    def test_detect_tau_returns_first_confirmed(self):
        traj = _fake_traj(_staircase_with_dip())
        t, s = detect_tau(traj, CensorPolicy(5, 10))
        assert (t, s) == (4, RenewalStatus.CONFIRMED)

    def test_detect_tau_censored_when_shallow(self):
        traj = _fake_traj([1, 2, 3, 2, 3, 2, 3, 2, 3])
        t, s = detect_tau(traj, CensorPolicy(depth_margin=50, horizon_margin=2))
        assert s is RenewalStatus.CENSORED


class TestCascadeScanOracle:
    def test_staircase_attempt_chain(self):
        d = np.array(_staircase_with_dip(), dtype=np.int64)
        at, ad, ao, ar, ae = _cascade_scan(d, 5, 46)
        # attempt 0 (depth 1) succeeds: margin depth 6 first reached at t=7
        assert at[0] == 0 and ao[0] == 1 and ar[0] == 7
        # attempt at t=1 (depth 2) fails on the dip at t=2, no excursion above
        assert at[1] == 1 and ao[1] == 0 and ar[1] == 2 and ae[1] == 0
        # ladder then climbs the staircase: successes at t=4..46, censor at t=47
        assert at[2] == 4 and ao[2] == 1
        assert list(at[2:-1]) == list(range(4, 47))
        assert all(o == 1 for o in ao[2:-1])
        assert ao[-1] == 2 and at[-1] == 47

    def test_failed_attempt_with_excursion(self):
        # rise to 10 (t=9), fall back to 8, rise to 30; margin 5
        d = np.array(list(range(1, 11)) + [9, 8] + list(range(9, 31)), dtype=np.int64)
        at, ad, ao, ar, ae = _cascade_scan(d, 5, len(d) - 1 - 3)
        fails = [i for i, o in enumerate(ao) if o == 0]
        assert len(fails) == 1
        i = fails[0]
        # the failing attempt is the record at depth 9 (t=8): it climbs one
        # more level (excursion max 1) then falls below at t=11
        assert at[i] == 8 and ad[i] == 9 and ar[i] == 11 and ae[i] == 1
        # next attempt resumes at the first record above depth 10: t=14, depth 11
        assert at[i + 1] == 14 and ad[i + 1] == 11

    def test_unresolved_attempt_censors(self):
        d = np.array([1, 2, 3, 2, 3, 2, 3], dtype=np.int64)
        at, ad, ao, ar, ae = _cascade_scan(d, 50, 100)
        assert ao[-1] == 2  # neither father-hit nor margin for the last record


class TestDetectorEquivalence:
    """The cascade and the definition-direct detector must agree exactly
    on confirmed renewal times over simulated runs."""

    @pytest.mark.parametrize("p,seed", [("0.3", 1), ("0.5", 2), ("0.8", 3), ("1", 4)])
    def test_confirmed_sets_match(self, p, seed):
        traj = simulate(LeafLaw.bernoulli(p), 4000, master_seed=seed, retention=Retention.FULL)
        pol = CensorPolicy()
        report = detect_cascade(traj, pol)
        times, statuses = detect_renewals(traj, pol)
        confirmed = np.array(
            [int(t) for t, s in zip(times, statuses) if s is RenewalStatus.CONFIRMED], dtype=np.int64
        )
        assert np.array_equal(report.renewal_times, confirmed)
        if len(confirmed):
            depths = traj.depth[report.renewal_times]
            assert np.array_equal(report.renewal_depths, depths)

    @given(seed=st.integers(0, 2**32), p_tenths=st.integers(3, 10))
    @settings(max_examples=20, deadline=None)
    def test_equivalence_property(self, seed, p_tenths):
        from fractions import Fraction

        traj = simulate(
            LeafLaw.bernoulli(Fraction(p_tenths, 10)), 1500, master_seed=seed, retention=Retention.FULL
        )
        pol = CensorPolicy(depth_margin=20, horizon_margin=100)
        report = detect_cascade(traj, pol)
        times, statuses = detect_renewals(traj, pol)
        confirmed = [int(t) for t, s in zip(times, statuses) if s is RenewalStatus.CONFIRMED]
        assert report.renewal_times.tolist() == confirmed

    def test_records_always_sit_on_leaves(self):
        # a strict depth record can only land on a never-visited vertex,
        # which has no children yet: walker degree there is exactly 1
        traj = simulate(LeafLaw.bernoulli("0.5"), 3000, master_seed=9, retention=Retention.FULL)
        d = traj.depth.astype(int)
        excl = np.maximum.accumulate(d)[:-1]
        rec = np.flatnonzero(d[1:] > excl) + 1
        assert len(rec) > 10
        assert np.all(traj.walker_degree[rec] == 1)


class TestRenewalReport:
    def _report(self, p="0.5", seed=5, n=4000):
        traj = simulate(LeafLaw.bernoulli(p), n, master_seed=seed, retention=Retention.FULL)
        return detect_cascade(traj), traj

    def test_requires_full_retention(self):
        traj = simulate(LeafLaw.bernoulli("0.5"), 500, master_seed=1)
        with pytest.raises(CapabilityError):
            detect_cascade(traj)

    def test_one_success_per_epoch_and_k_counts(self):
        report, _ = self._report()
        outcomes = report.attempt_outcomes
        n_success = sum(1 for o in outcomes if o is AttemptOutcome.PRESUMED_INFINITE)
        assert n_success == len(report.K_per_epoch)
        # failures after the last success sit in the incomplete censored
        # epoch and are excluded from the per-epoch counts
        last_success = max(i for i, o in enumerate(outcomes) if o is AttemptOutcome.PRESUMED_INFINITE)
        fails_in_epochs = sum(1 for o in outcomes[: last_success + 1] if o is AttemptOutcome.FINITE)
        assert sum(report.K_per_epoch) == fails_in_epochs
        # epoch structure: K failures then one success, repeated
        k_iter = iter(report.K_per_epoch)
        fails = 0
        for o in outcomes:
            if o is AttemptOutcome.FINITE:
                fails += 1
            elif o is AttemptOutcome.PRESUMED_INFINITE:
                assert fails == next(k_iter)
                fails = 0

    def test_attempt_depths_strictly_increase(self):
        report, _ = self._report(seed=6)
        assert np.all(np.diff(report.attempt_depths) >= 1)

    def test_renewal_depths_are_records(self):
        report, traj = self._report(seed=7)
        d = traj.depth[report.renewal_times]
        assert np.all(np.diff(d) >= 1)

    def test_excursions_nonnegative_only_for_failures(self):
        report, _ = self._report(seed=8)
        m = report.failed_excursion_maxima()
        assert np.all(m >= 0)
        for o, e in zip(report.attempt_outcomes, report.excursion_max):
            assert (e >= 0) == (o is AttemptOutcome.FINITE)

    def test_censored_tail_present_at_finite_horizon(self):
        report, _ = self._report(seed=9)
        assert report.censored_tail
        assert report.attempt_outcomes[-1] is AttemptOutcome.CENSORED

    def test_sandwich_count(self):
        report, traj = self._report(seed=10)
        pol = report.policy
        taus = report.renewal_times
        assert len(taus) > 5
        for t in (100, 500, 1500, int(pol.usable_horizon(traj.n_steps))):
            n_t = report.count_up_to(t)
            assert n_t == count_regenerations(traj, t, pol)
            if n_t > 0:
                assert taus[n_t - 1] <= t
            if n_t < len(taus):
                assert taus[n_t] > t

    def test_count_beyond_usable_horizon_raises(self):
        report, traj = self._report(seed=11)
        with pytest.raises(HorizonError):
            report.count_up_to(report.n_steps)
        with pytest.raises(HorizonError):
            count_regenerations(traj, traj.n_steps, report.policy)

    def test_epoch_increments_depth_bounded_by_time(self):
        report, _ = self._report(seed=12)
        first, dt, dd = epoch_increments(report)
        assert first is not None and first[0] >= 1
        assert len(dt) >= 10
        assert np.all(dt >= 1)
        assert np.all(dd >= 1)
        assert np.all(dd <= dt), "depth gain per epoch cannot exceed its length"

    def test_first_attempt_escape_flag_matches_prob(self):
        # at p=1/2 surviving even the first step has probability 1/4
        # (needs a leaf added and then the move away from the root), so
        # the first-attempt escape probability is small but positive
        flags = []
        for r in range(200):
            traj = simulate(LeafLaw.bernoulli("0.5"), 600, master_seed=123, replica_index=r, retention=Retention.FULL)
            flags.append(detect_cascade(traj, CensorPolicy(30, 100)).first_attempt_escaped)
        assert 0.01 < np.mean(flags) < 0.25
