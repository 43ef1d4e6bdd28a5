"""Exhaustive finite-horizon enumeration with exact rational arithmetic.

Under the one-leaf-per-step law with parameter ``p``, a length-``n``
realization is the decision sequence (leaf added?, which neighbour) of
every step.  Its probability factors as::

    q * (1 - p)**(n - i) * p**i

where ``i`` counts the steps that added a leaf and ``q`` is the exact
rational product of the uniform move probabilities (one factor
1/degree per step).  Summing ``q`` per ``i`` over all realizations in
an event yields the event's probability as an exact polynomial in the
mixed basis ``(1-p)**(n-i) * p**i`` — valid for every ``p`` at once,
and evaluable at complex arguments.

Distinct creation orders are distinct realizations; no tree
isomorphism collapsing happens, matching the trajectory-space measure.

Events are predicates over an :class:`AtomView` exposing exactly the
first ``n`` steps, so anything expressible is measurable with respect
to that horizon by construction.  Built-in events also know how to
evaluate themselves on simulated trajectories, which powers the
simulator/enumerator cross-check.

Enumeration branches over the first step's outcomes and merges the
per-branch coefficient sums in branch order: accumulation is
associative, so the result is deterministic and independent of how the
branches would be scheduled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import mpmath as mp
import numpy as np

from .errors import CapacityError, UsageError
from .model import LeafLaw, Retention, Trajectory, simulate

DEFAULT_CAP = 12
EVAL_PRECISION_BITS = 120  # comfortably more than twice a double's 53

# measured realization counts per horizon (whole space); the per-step
# growth factor settles near 5.3, which extrapolates the table
_ATOM_COUNTS = [
    1, 3, 9, 35, 129, 571, 2361, 11331, 50577, 257803, 1218281, 6525907, 32281345,
]
_GROWTH = 5.3


def predict_atom_count(n: int) -> int:
    if n < len(_ATOM_COUNTS):
        return _ATOM_COUNTS[n]
    return int(_ATOM_COUNTS[-1] * _GROWTH ** (n - len(_ATOM_COUNTS) + 1))


@dataclass(frozen=True)
class TrajectoryAtom:
    """One realization: per-step (leaf added?, neighbour index) choices."""

    flags: tuple[int, ...]
    moves: tuple[int, ...]
    move_degrees: tuple[int, ...]

    @property
    def n_steps(self) -> int:
        return len(self.flags)

    @property
    def added(self) -> int:
        return sum(self.flags)

    @property
    def jump_weight(self) -> Fraction:
        """q: the exact product of 1/degree over the moves."""
        q = Fraction(1)
        for d in self.move_degrees:
            q /= d
        return q


class AtomView:
    """Read-only window onto the enumerator's live state at a leaf.

    Valid only for the duration of the predicate call.  ``depths`` and
    ``degrees`` have ``n + 1`` entries (entry 0 = initial condition);
    ``flags`` and ``moves`` have ``n``.
    """

    __slots__ = ("depths", "degrees", "flags", "moves")

    def __init__(self, depths, degrees, flags, moves):
        self.depths = depths
        self.degrees = degrees
        self.flags = flags
        self.moves = moves


Predicate = Callable[[AtomView], bool]


@dataclass(frozen=True)
class ProbPolynomial:
    """Event probability as exact coefficients over the mixed basis.

    ``coeffs[i]`` multiplies ``(1-p)**(horizon-i) * p**i``.  All
    coefficients of an event polynomial are non-negative rationals and
    the value at any ``p`` in [0, 1] stays in [0, 1].
    """

    horizon: int
    coeffs: tuple[Fraction, ...]
    n_atoms: int = 0

    def __post_init__(self) -> None:
        if len(self.coeffs) != self.horizon + 1:
            raise UsageError("need horizon + 1 coefficients")

    @property
    def is_zero(self) -> bool:
        return all(c == 0 for c in self.coeffs)

    def evaluate(self, p) -> Fraction:
        """Exact value at a rational point."""
        p = p if isinstance(p, Fraction) else Fraction(str(p))
        n = self.horizon
        acc = Fraction(0)
        for i, c in enumerate(self.coeffs):
            if c:
                acc += c * (1 - p) ** (n - i) * p**i
        return acc

    def eval_complex(self, z, *, prec_bits: int = EVAL_PRECISION_BITS):
        """Value at a complex point in extended-precision arithmetic."""
        with mp.workprec(prec_bits):
            zz = mp.mpmathify(z)
            one_minus = 1 - zz
            n = self.horizon
            acc = mp.mpc(0)
            for i, c in enumerate(self.coeffs):
                if c:
                    term = mp.mpf(c.numerator) / mp.mpf(c.denominator)
                    acc += term * one_minus ** (n - i) * zz**i
            return acc

    def __add__(self, other: "ProbPolynomial") -> "ProbPolynomial":
        if other.horizon != self.horizon:
            raise UsageError("can only add polynomials on the same horizon")
        return ProbPolynomial(
            self.horizon,
            tuple(a + b for a, b in zip(self.coeffs, other.coeffs)),
            self.n_atoms + other.n_atoms,
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "horizon": self.horizon,
                "numerators": [c.numerator for c in self.coeffs],
                "denominators": [c.denominator for c in self.coeffs],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ProbPolynomial":
        doc = json.loads(text)
        coeffs = tuple(Fraction(a, b) for a, b in zip(doc["numerators"], doc["denominators"]))
        return cls(doc["horizon"], coeffs)


@dataclass(frozen=True)
class Event:
    """A named event, decidable from the first ``horizon`` steps.

    Carries the enumerator-side predicate and (for built-ins) the
    matching trajectory-side evaluator used by the simulator bridge.
    """

    name: str
    horizon: int
    atom_predicate: Predicate
    trajectory_predicate: Callable[[Trajectory], bool] | None = None


def whole_space(n: int) -> Event:
    return Event("whole_space", n, lambda view: True, lambda traj: True)


def root_arrival(n: int) -> Event:
    """First visit to the root happens exactly at step ``n``."""

    def on_atom(view: AtomView) -> bool:
        d = view.depths
        for t in range(1, n):
            if d[t] == 0:
                return False
        return d[n] == 0

    def on_traj(traj: Trajectory) -> bool:
        d = traj.depth
        return d[n] == 0 and bool(np.all(d[1:n] > 0))

    return Event(f"root_arrival_{n}", n, on_atom, on_traj)


def _no_regeneration_depths(d: Sequence[int], deg: Sequence[int], n: int) -> bool:
    """No m in [1, n] is a record leaf that stays un-undercut through n.

    Finite-horizon restriction of the renewal definition: the
    "forever after" clause is cut at ``n``.  That can only flag extra
    regenerations, never miss one, so the event here is a subset of
    the true no-renewal event — the direction that preserves the
    dominance over first-root-arrival probabilities.
    """
    best = d[0]
    for m in range(1, n + 1):
        if deg[m] == 1 and d[m] > best:
            undercut = False
            for t in range(m + 1, n + 1):
                if d[t] < d[m]:
                    undercut = True
                    break
            if not undercut:
                return False
        if d[m] > best:
            best = d[m]
    return True


def no_regeneration(n: int) -> Event:
    """No regeneration record in [1, n], decided from ``n`` steps."""

    def on_atom(view: AtomView) -> bool:
        return _no_regeneration_depths(view.depths, view.degrees, n)

    def on_traj(traj: Trajectory) -> bool:
        return _no_regeneration_depths(traj.depth, traj.walker_degree, n)

    return Event(f"no_regeneration_{n}", n, on_atom, on_traj)


def _check_cap(n: int, cap: int) -> None:
    if n < 1:
        raise UsageError("horizon must be positive")
    if n > cap:
        raise CapacityError(
            f"horizon {n} exceeds the enumeration cap {cap} "
            f"(~{predict_atom_count(n):,} realizations predicted)"
        )


def enumerate_polynomial(n: int, predicate: Predicate, *, cap: int = DEFAULT_CAP) -> ProbPolynomial:
    """Exact event polynomial by exhaustive recursion over ``n`` steps.

    The walk state lives in flat lists with undo on backtrack, so each
    tree edge of the recursion costs O(1) plus the predicate at leaves.
    """
    _check_cap(n, cap)

    parent = [-1, 0]
    children: list[list[int]] = [[1], []]
    vdepth = [0, 1]

    depths = [1] * (n + 1)
    degrees = [1] * (n + 1)
    flags = [0] * n
    moves = [0] * n
    view = AtomView(depths, degrees, flags, moves)

    # (i, denominator) -> number of satisfying realizations
    buckets: dict[tuple[int, int], int] = {}

    def dfs(t: int, pos: int, adds: int, denom: int) -> None:
        if t == n:
            if predicate(view):
                key = (adds, denom)
                buckets[key] = buckets.get(key, 0) + 1
            return
        for add in (0, 1):
            if add:
                w = len(parent)
                parent.append(pos)
                vdepth.append(vdepth[pos] + 1)
                children.append([])
                children[pos].append(w)
            kids = children[pos]
            deg = len(kids) + (1 if pos != 0 else 0)
            nd = denom * deg
            na = adds + add
            flags[t] = add
            for j in range(deg):
                if pos != 0:
                    nxt = parent[pos] if j == 0 else kids[j - 1]
                else:
                    nxt = kids[j]
                moves[t] = j
                depths[t + 1] = vdepth[nxt]
                degrees[t + 1] = len(children[nxt]) + (1 if nxt != 0 else 0)
                dfs(t + 1, nxt, na, nd)
            if add:
                parent.pop()
                vdepth.pop()
                children.pop()
                children[pos].pop()

    # first level of the recursion = the per-branch split
    dfs(0, 1, 0, 1)

    coeffs = [Fraction(0)] * (n + 1)
    total = 0
    for (i, denom), count in sorted(buckets.items()):
        coeffs[i] += Fraction(count, denom)
        total += count
    return ProbPolynomial(n, tuple(coeffs), total)


def enumerate_event(event: Event, *, cap: int = DEFAULT_CAP) -> ProbPolynomial:
    return enumerate_polynomial(event.horizon, event.atom_predicate, cap=cap)


def iter_atoms(n: int, predicate: Predicate | None = None, *, cap: int = DEFAULT_CAP) -> list[TrajectoryAtom]:
    """Materialize satisfying realizations (tests and small horizons only)."""
    _check_cap(n, cap)
    out: list[TrajectoryAtom] = []
    parent = [-1, 0]
    children: list[list[int]] = [[1], []]
    vdepth = [0, 1]
    depths = [1] * (n + 1)
    degrees = [1] * (n + 1)
    flags = [0] * n
    moves = [0] * n
    move_degs = [0] * n
    view = AtomView(depths, degrees, flags, moves)

    def dfs(t: int, pos: int) -> None:
        if t == n:
            if predicate is None or predicate(view):
                out.append(TrajectoryAtom(tuple(flags), tuple(moves), tuple(move_degs)))
            return
        for add in (0, 1):
            if add:
                w = len(parent)
                parent.append(pos)
                vdepth.append(vdepth[pos] + 1)
                children.append([])
                children[pos].append(w)
            kids = children[pos]
            deg = len(kids) + (1 if pos != 0 else 0)
            flags[t] = add
            move_degs[t] = deg
            for j in range(deg):
                nxt = (parent[pos] if j == 0 else kids[j - 1]) if pos != 0 else kids[j]
                moves[t] = j
                depths[t + 1] = vdepth[nxt]
                degrees[t + 1] = len(children[nxt]) + (1 if nxt != 0 else 0)
                dfs(t + 1, nxt)
            if add:
                parent.pop()
                vdepth.pop()
                children.pop()
                children[pos].pop()

    dfs(0, 1)
    return out


@dataclass(frozen=True)
class ComplexProbe:
    """Sample points strictly inside the ball B(center, radius), r < center."""

    center: Fraction
    radius: Fraction
    points: tuple[complex, ...]

    def __post_init__(self) -> None:
        if not 0 < self.radius < self.center:
            raise UsageError("need 0 < radius < center")
        if self.center + self.radius > 2:  # generous sanity bound
            raise UsageError("probe ball far outside the unit interval")
        for z in self.points:
            if abs(z - complex(self.center)) >= float(self.radius):
                raise UsageError(f"probe point {z} not strictly inside the ball")

    @classmethod
    def circles(
        cls,
        center,
        radius,
        *,
        radius_fractions: tuple[float, ...] = (0.5, 0.9),
        points_per_circle: int = 64,
    ) -> "ComplexProbe":
        """Concentric circles of |z - center| = f * radius, f < 1."""
        c = center if isinstance(center, Fraction) else Fraction(str(center))
        r = radius if isinstance(radius, Fraction) else Fraction(str(radius))
        pts = []
        for f in radius_fractions:
            rho = float(r) * f
            for k in range(points_per_circle):
                ang = 2.0 * math.pi * k / points_per_circle
                pts.append(complex(float(c) + rho * math.cos(ang), rho * math.sin(ang)))
        return cls(c, r, tuple(pts))


@dataclass(frozen=True)
class BoundReport:
    """Outcome of probing |P_z| <= exp(2 r n / (p - r)) * P_{p-r}."""

    horizon: int
    center: float
    radius: float
    max_ratio: float
    holds: bool
    vacuous: bool
    counterexample: bool
    n_points: int

    def to_json_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "center": self.center,
            "radius": self.radius,
            "max_ratio": self.max_ratio,
            "holds": self.holds,
            "vacuous": self.vacuous,
            "counterexample": self.counterexample,
            "n_points": self.n_points,
        }


def verify_An_bound(poly: ProbPolynomial, probe: ComplexProbe) -> BoundReport:
    """Probe the analytic-extension bound for one event polynomial.

    The comparison runs in extended precision; the report's
    ``max_ratio`` is the largest |P_z| / (exp(2rn/(p-r)) * P_{p-r})
    over the probe points.  A zero denominator with a nonzero
    numerator would falsify the bound and is reported as a
    counterexample (it must never occur for event polynomials).
    """
    p, r = probe.center, probe.radius
    denom_exact = poly.evaluate(p - r)
    with mp.workprec(EVAL_PRECISION_BITS):
        n = poly.horizon
        growth = mp.exp(
            2 * (mp.mpf(r.numerator) / r.denominator)
            * n
            / (mp.mpf((p - r).numerator) / (p - r).denominator)
        )
        denom = mp.mpf(denom_exact.numerator) / mp.mpf(denom_exact.denominator)
        max_ratio = mp.mpf(0)
        any_nonzero = False
        for z in probe.points:
            val = abs(poly.eval_complex(z))
            if val > 0:
                any_nonzero = True
            if denom > 0:
                ratio = val / (growth * denom)
                if ratio > max_ratio:
                    max_ratio = ratio
        if denom == 0:
            return BoundReport(
                poly.horizon, float(p), float(r), float("inf") if any_nonzero else 0.0,
                holds=not any_nonzero, vacuous=not any_nonzero,
                counterexample=any_nonzero, n_points=len(probe.points),
            )
        return BoundReport(
            poly.horizon, float(p), float(r), float(max_ratio),
            holds=bool(max_ratio <= 1), vacuous=False,
            counterexample=False, n_points=len(probe.points),
        )


def ho_series_terms(n_max: int, *, cap: int = DEFAULT_CAP) -> list[ProbPolynomial]:
    """Exact first-root-arrival polynomials for n = 1..n_max."""
    _check_cap(n_max, cap)
    return [enumerate_event(root_arrival(n), cap=cap) for n in range(1, n_max + 1)]


@dataclass(frozen=True)
class CrossValidationReport:
    event_name: str
    horizon: int
    p: float
    exact_value: float
    frequency: float
    sigma: float
    n_replicas: int
    within: bool

    def to_json_dict(self) -> dict:
        return {
            "event": self.event_name,
            "horizon": self.horizon,
            "p": self.p,
            "exact_value": self.exact_value,
            "frequency": self.frequency,
            "sigma": self.sigma,
            "n_replicas": self.n_replicas,
            "within": self.within,
        }


def cross_validate(
    event: Event,
    p,
    n_replicas: int,
    master_seed: int,
    *,
    cap: int = DEFAULT_CAP,
    sigmas: float = 4.0,
) -> CrossValidationReport:
    """Bridge the enumerator and the simulator on one event.

    The exact value comes from enumeration; the frequency from
    independently simulated replicas evaluated with the event's
    trajectory-side predicate.  Agreement is demanded within
    ``sigmas`` binomial standard deviations (exact match when the
    event is trivial or impossible).
    """
    if event.trajectory_predicate is None:
        raise UsageError("event has no trajectory-side evaluator")
    poly = enumerate_event(event, cap=cap)
    p_frac = p if isinstance(p, Fraction) else Fraction(str(p))
    exact_val = poly.evaluate(p_frac)

    law = LeafLaw.bernoulli(p_frac)
    hits = 0
    for rep in range(n_replicas):
        traj = simulate(law, event.horizon, master_seed=master_seed, replica_index=rep, retention=Retention.SUMMARY)
        if event.trajectory_predicate(traj):
            hits += 1
    freq = hits / n_replicas
    ev = float(exact_val)
    sigma = math.sqrt(ev * (1.0 - ev) / n_replicas)
    within = abs(freq - ev) <= sigmas * sigma if sigma > 0 else freq == ev
    return CrossValidationReport(
        event.name, event.horizon, float(p_frac), ev, freq, sigma, n_replicas, within
    )
