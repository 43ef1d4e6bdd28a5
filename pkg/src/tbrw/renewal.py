"""Regeneration structure of a trajectory.

A *renewal* is a step ``n >= 1`` where the walker sits on a fresh leaf
at a strictly new record depth and the trajectory never drops below
that depth afterwards.  After such a step the walk in the new subtree
is a distribution-identical restart, which is what makes long-run
speed estimates honest.

Infinite-future conditions are not decidable from a finite run, so a
censoring policy stands in for them:

* a record is *confirmed* once the walk climbs ``depth_margin`` levels
  above it without ever dropping below it (and the record does not sit
  in the last ``horizon_margin`` steps);
* anything unresolved at the horizon is *censored* and excluded from
  downstream estimates.

Two detectors cover the same ground from opposite directions and are
held to exact agreement by the tests:

* :func:`detect_renewals` — a direct numpy transcription of the
  record/never-undercut definition;
* :func:`detect_cascade` — an attempt-by-attempt scan: from each
  record leaf the walker either falls back to the leaf's father
  (attempt failed, finite), or climbs ``depth_margin`` levels first
  (attempt presumed successful).  Failed attempts per epoch give the
  geometric count ``K``; their excursion heights give ``M``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import CapabilityError, HorizonError, UsageError
from .model import Trajectory


@dataclass(frozen=True)
class CensorPolicy:
    """Margins that decide when an infinite-future claim is committed."""

    depth_margin: int = 50
    horizon_margin: int = 200

    def __post_init__(self) -> None:
        if self.depth_margin < 1 or self.horizon_margin < 0:
            raise UsageError("margins must be positive")

    def usable_horizon(self, n_steps: int) -> int:
        return n_steps - self.horizon_margin


class RenewalStatus(enum.Enum):
    CONFIRMED = "confirmed"
    CENSORED = "censored"


class AttemptOutcome(enum.Enum):
    """Resolution of one escape attempt from a record leaf."""

    FINITE = "finite"  # fell back to the leaf's father
    PRESUMED_INFINITE = "presumed_infinite"  # climbed clear of the margin
    CENSORED = "censored"  # horizon ended first


def detect_renewals(traj: Trajectory, policy: CensorPolicy | None = None) -> tuple[np.ndarray, list[RenewalStatus]]:
    """All record-leaf times never undercut within the run, with status.

    Definition-direct route: candidate times ``n >= 1`` need walker
    degree 1, a strict depth record over all earlier steps, and no
    later step below that depth.  A candidate is CONFIRMED when the
    margin conditions of ``policy`` hold, otherwise CENSORED.
    """
    policy = policy or CensorPolicy()
    d = traj.depth.astype(np.int64)
    deg = traj.walker_degree
    n = traj.n_steps
    if n == 0:
        return np.empty(0, dtype=np.int64), []

    excl_max = np.maximum.accumulate(d)[:-1]  # max over D[0..t-1] for t>=1
    from_min = np.minimum.accumulate(d[::-1])[::-1]  # min over D[t..N]
    from_max = np.maximum.accumulate(d[::-1])[::-1]  # max over D[t..N]
    big = np.int64(1 << 40)
    after_min = np.append(from_min[1:], big)  # min over D[t+1..N]
    after_max = np.append(from_max[1:], -1)  # max over D[t+1..N]

    t_all = np.arange(1, n + 1)
    record_leaf = (deg[1:] == 1) & (d[1:] > excl_max)
    never_undercut = after_min[1:] >= d[1:]
    cand = t_all[record_leaf & never_undercut]
    confirmed = (after_max[cand] >= d[cand] + policy.depth_margin) & (cand <= policy.usable_horizon(n))
    statuses = [RenewalStatus.CONFIRMED if c else RenewalStatus.CENSORED for c in confirmed]
    return cand.astype(np.int64), statuses


def detect_tau(traj: Trajectory, policy: CensorPolicy | None = None) -> tuple[int | None, RenewalStatus]:
    """Time and status of the first renewal, or ``(None, CENSORED)``."""
    times, statuses = detect_renewals(traj, policy)
    for t, s in zip(times, statuses):
        if s is RenewalStatus.CONFIRMED:
            return int(t), s
    if len(times):
        return int(times[0]), statuses[0]
    return None, RenewalStatus.CENSORED


_FAIL, _SUCCESS, _CENSOR = 0, 1, 2


@njit(cache=True)
def _cascade_scan(d, depth_margin, usable):
    """Single pass over the depth sequence; returns attempt arrays.

    Per attempt: time, depth, outcome code, resolution time (father
    hit, margin commit, or -1), excursion max above the attempt depth
    (failed attempts only, else -1).
    """
    n = d.shape[0] - 1
    # next_below[t]: first s > t with d[s] < d[t] (monotonic stack)
    next_below = np.full(n + 1, -1, dtype=np.int64)
    stack = np.empty(n + 1, dtype=np.int64)
    top = -1
    for t in range(n, -1, -1):
        while top >= 0 and d[stack[top]] >= d[t]:
            top -= 1
        next_below[t] = stack[top] if top >= 0 else -1
        top += 1
        stack[top] = t

    # first_reach[h]: first time the depth equals h (records only grow by 1)
    max_depth = 0
    for t in range(n + 1):
        if d[t] > max_depth:
            max_depth = d[t]
    first_reach = np.full(max_depth + 2, -1, dtype=np.int64)
    running = 0
    for t in range(n + 1):
        if d[t] > running:
            running = d[t]
            first_reach[running] = t

    att_time = np.empty(n + 1, dtype=np.int64)
    att_depth = np.empty(n + 1, dtype=np.int64)
    att_outcome = np.empty(n + 1, dtype=np.int8)
    att_resolve = np.empty(n + 1, dtype=np.int64)
    att_exc = np.empty(n + 1, dtype=np.int64)
    n_att = 0

    t = 0
    depth_t = d[0]
    while True:
        f = next_below[t]
        goal = depth_t + depth_margin
        m = first_reach[goal] if goal <= max_depth else -1

        att_time[n_att] = t
        att_depth[n_att] = depth_t
        if m != -1 and (f == -1 or m < f):
            if t <= usable:
                att_outcome[n_att] = _SUCCESS
                att_resolve[n_att] = m
                att_exc[n_att] = -1
                n_att += 1
                nxt = depth_t + 1  # ladder continues at the next record
            else:
                att_outcome[n_att] = _CENSOR
                att_resolve[n_att] = -1
                att_exc[n_att] = -1
                n_att += 1
                break
        elif f != -1:
            exc = 0
            for s in range(t, f):
                if d[s] - depth_t > exc:
                    exc = d[s] - depth_t
            att_outcome[n_att] = _FAIL
            att_resolve[n_att] = f
            att_exc[n_att] = exc
            n_att += 1
            # the attempt time was a record, so the prefix max through f
            # is the attempt depth plus its excursion height
            nxt = depth_t + exc + 1
        else:
            att_outcome[n_att] = _CENSOR
            att_resolve[n_att] = -1
            att_exc[n_att] = -1
            n_att += 1
            break

        if nxt > max_depth or first_reach[nxt] == -1:
            break  # no further record within the horizon
        t = first_reach[nxt]
        depth_t = nxt

    return (
        att_time[:n_att].copy(),
        att_depth[:n_att].copy(),
        att_outcome[:n_att].copy(),
        att_resolve[:n_att].copy(),
        att_exc[:n_att].copy(),
    )


@dataclass
class RenewalReport:
    """Attempt-level account of a trajectory's regeneration ladder."""

    n_steps: int
    policy: CensorPolicy
    attempt_times: np.ndarray
    attempt_depths: np.ndarray
    attempt_outcomes: list[AttemptOutcome]
    attempt_resolutions: np.ndarray
    excursion_max: np.ndarray
    renewal_times: np.ndarray = field(init=False)
    renewal_depths: np.ndarray = field(init=False)
    first_attempt_escaped: bool = field(init=False)
    K_per_epoch: list[int] = field(init=False)
    censored_tail: bool = field(init=False)

    def __post_init__(self) -> None:
        succ = [i for i, o in enumerate(self.attempt_outcomes) if o is AttemptOutcome.PRESUMED_INFINITE]
        times = [int(self.attempt_times[i]) for i in succ]
        self.first_attempt_escaped = bool(times and times[0] == 0)
        self.renewal_times = np.array([t for t in times if t >= 1], dtype=np.int64)
        self.renewal_depths = np.array(
            [int(self.attempt_depths[i]) for i in succ if self.attempt_times[i] >= 1], dtype=np.int64
        )
        ks: list[int] = []
        fails = 0
        for o in self.attempt_outcomes:
            if o is AttemptOutcome.FINITE:
                fails += 1
            elif o is AttemptOutcome.PRESUMED_INFINITE:
                ks.append(fails)
                fails = 0
        self.K_per_epoch = ks
        self.censored_tail = bool(self.attempt_outcomes) and self.attempt_outcomes[-1] is AttemptOutcome.CENSORED

    def failed_excursion_maxima(self) -> np.ndarray:
        mask = np.array([o is AttemptOutcome.FINITE for o in self.attempt_outcomes])
        return self.excursion_max[mask] if len(mask) else np.empty(0, dtype=np.int64)

    def count_up_to(self, t: int) -> int:
        """N(t): renewals no later than ``t`` (within the usable horizon)."""
        if t > self.policy.usable_horizon(self.n_steps):
            raise HorizonError(
                f"t={t} lies in the censored tail (usable horizon "
                f"{self.policy.usable_horizon(self.n_steps)} of {self.n_steps})"
            )
        if t < 0:
            raise UsageError("t must be non-negative")
        return int(np.searchsorted(self.renewal_times, t, side="right"))


def detect_cascade(traj: Trajectory, policy: CensorPolicy | None = None) -> RenewalReport:
    """Attempt-cascade route; needs FULL retention.

    Failed attempts are verified against the recorded positions: the
    resolution step must land exactly on the father of the attempt
    leaf.  The walk's geometry guarantees this, so a violation would
    mean the detector and the simulator disagree about the tree.
    """
    policy = policy or CensorPolicy()
    pos = traj.require_positions()
    d = traj.depth.astype(np.int64)
    t_arr, d_arr, o_arr, r_arr, e_arr = _cascade_scan(
        d, policy.depth_margin, policy.usable_horizon(traj.n_steps)
    )

    parent = traj.final_tree.parent
    outcomes: list[AttemptOutcome] = []
    for i in range(len(t_arr)):
        code = int(o_arr[i])
        if code == _FAIL:
            outcomes.append(AttemptOutcome.FINITE)
            leaf = int(pos[t_arr[i]])
            hit = int(pos[r_arr[i]])
            if hit != int(parent[leaf]):
                raise AssertionError("failed attempt did not resolve on the attempt leaf's father")
        elif code == _SUCCESS:
            outcomes.append(AttemptOutcome.PRESUMED_INFINITE)
        else:
            outcomes.append(AttemptOutcome.CENSORED)

    return RenewalReport(
        n_steps=traj.n_steps,
        policy=policy,
        attempt_times=t_arr,
        attempt_depths=d_arr,
        attempt_outcomes=outcomes,
        attempt_resolutions=r_arr,
        excursion_max=e_arr,
    )


def count_regenerations(traj: Trajectory, t: int, policy: CensorPolicy | None = None) -> int:
    """N(t) from the definition-direct detector."""
    policy = policy or CensorPolicy()
    if t > policy.usable_horizon(traj.n_steps):
        raise HorizonError(
            f"t={t} lies in the censored tail (usable horizon "
            f"{policy.usable_horizon(traj.n_steps)} of {traj.n_steps})"
        )
    if t < 0:
        raise UsageError("t must be non-negative")
    times, statuses = detect_renewals(traj, policy)
    return int(sum(1 for tt, s in zip(times, statuses) if s is RenewalStatus.CONFIRMED and tt <= t))


def epoch_increments(report: RenewalReport) -> tuple[tuple[int, int] | None, np.ndarray, np.ndarray]:
    """Split the confirmed ladder into the first epoch and the later increments.

    Returns ``(first, dt, dd)`` where ``first`` is ``(tau_1, depth_1)``
    or None, and ``dt``/``dd`` are the per-epoch time and depth
    increments between consecutive confirmed renewals.  The first epoch
    is kept apart because its law is not the stationary increment law.
    """
    times = report.renewal_times
    depths = report.renewal_depths
    if len(times) == 0:
        return None, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    first = (int(times[0]), int(depths[0]))
    dt = np.diff(times)
    dd = np.diff(depths)
    return first, dt, dd
