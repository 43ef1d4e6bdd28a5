"""Core model objects: leaf laws, growing trees, trajectories.

The process: a walker sits on a vertex of a rooted tree.  Each step it
first attaches a random number of new leaves (children) to its current
vertex, then moves to a uniformly random neighbour of that vertex in
the updated tree.  The standard start is the two-vertex tree — root
plus one tip — with the walker on the tip, so depth and walker degree
both begin at 1.

Two execution paths produce trajectories: a readable pure-Python
stepper (:func:`step`) and a fused jitted kernel used by
:func:`simulate`.  Both consume the same replica-addressed streams and
must agree bit for bit; the test suite enforces that.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from . import _kernels
from ._rng import RngStream, cdf_cuts
from .errors import CapabilityError, UsageError

ROOT = 0
_MAX_SUPPORT = 64


def _as_fraction(x) -> Fraction:
    """Exact coercion: floats go through their shortest decimal repr."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(str(x))


class Retention(enum.Enum):
    """How much of a trajectory is kept.

    FULL keeps per-step positions (required by the regeneration
    cascade); SUMMARY drops them and keeps only the scalar columns.
    """

    FULL = "full"
    SUMMARY = "summary"


class StartKind(enum.Enum):
    EDGE_NON_ROOT_TIP = "edge"
    CUSTOM = "custom"


@dataclass(frozen=True)
class LeafLaw:
    """Distribution of the number of leaves attached per step.

    ``probs[k]`` is the exact probability of attaching ``k`` leaves.
    ``kappa`` is the mass on attaching at least one; a law with
    ``kappa == 0`` never grows the tree and is flagged degenerate.
    """

    probs: tuple[Fraction, ...]

    def __post_init__(self) -> None:
        if not self.probs:
            raise UsageError("leaf law needs at least one mass")
        if len(self.probs) > _MAX_SUPPORT:
            raise UsageError(f"leaf law support is capped at {_MAX_SUPPORT}")
        if any(q < 0 for q in self.probs):
            raise UsageError("leaf law masses must be non-negative")
        if sum(self.probs) != 1:
            raise UsageError("leaf law masses must sum to exactly 1")
        # canonical form: no trailing zero-mass categories (keeps every
        # cumulative cut point strictly below 2**64)
        probs = self.probs
        while len(probs) > 1 and probs[-1] == 0:
            probs = probs[:-1]
        if probs is not self.probs:
            object.__setattr__(self, "probs", probs)

    @classmethod
    def bernoulli(cls, p) -> "LeafLaw":
        """One leaf with probability ``p``, none otherwise."""
        p = _as_fraction(p)
        if not 0 <= p <= 1:
            raise UsageError("p must lie in [0, 1]")
        return cls((1 - p, p))

    @classmethod
    def from_pmf(cls, pmf: Mapping[int, object]) -> "LeafLaw":
        """Dense law from a sparse ``{count: mass}`` mapping."""
        if not pmf:
            raise UsageError("empty pmf")
        top = max(pmf)
        if min(pmf) < 0:
            raise UsageError("leaf counts must be non-negative")
        probs = [Fraction(0)] * (top + 1)
        for k, q in pmf.items():
            probs[k] = _as_fraction(q)
        return cls(tuple(probs))

    @property
    def kappa(self) -> Fraction:
        return 1 - self.probs[0]

    @property
    def is_degenerate(self) -> bool:
        return self.kappa == 0

    @property
    def max_leaves(self) -> int:
        return len(self.probs) - 1

    def mean(self) -> Fraction:
        return sum(Fraction(k) * q for k, q in enumerate(self.probs))

    def cuts(self) -> np.ndarray:
        """Integer cut points consumed by the draw kernels."""
        return cdf_cuts(self.probs)

    def leaf_counts(self) -> np.ndarray:
        return np.arange(len(self.probs), dtype=np.int64)

    def describe(self) -> str:
        if len(self.probs) == 2:
            return f"bernoulli({self.probs[1]})"
        return "pmf(" + ",".join(f"{k}:{q}" for k, q in enumerate(self.probs) if q) + ")"


class GrowingTree:
    """Rooted tree in a flat arena; vertices are creation-ordered ints.

    Children of a vertex keep insertion order.  ``degree`` counts tree
    neighbours (father plus children), so leaves have degree 1 and the
    root's degree is its child count.
    """

    __slots__ = ("parent", "depth", "nchild", "first_child", "last_child", "next_sib", "_n", "_height")

    def __init__(self, capacity: int = 16):
        capacity = max(capacity, 2)
        self.parent = np.full(capacity, -1, dtype=np.int32)
        self.depth = np.zeros(capacity, dtype=np.int32)
        self.nchild = np.zeros(capacity, dtype=np.int32)
        self.first_child = np.full(capacity, -1, dtype=np.int32)
        self.last_child = np.full(capacity, -1, dtype=np.int32)
        self.next_sib = np.full(capacity, -1, dtype=np.int32)
        self._n = 0
        self._height = 0

    # -- construction -------------------------------------------------

    @classmethod
    def edge_start(cls) -> "GrowingTree":
        """The standard two-vertex start: root 0 with a single tip 1."""
        t = cls()
        t._n = 1  # root
        t.add_leaf(ROOT)
        return t

    @classmethod
    def from_arena(cls, parent, depth, nchild, first_child, last_child, next_sib, n: int) -> "GrowingTree":
        """Adopt kernel output arrays (copied, trimmed to ``n``)."""
        t = cls(capacity=n)
        t.parent[:n] = parent[:n]
        t.depth[:n] = depth[:n]
        t.nchild[:n] = nchild[:n]
        t.first_child[:n] = first_child[:n]
        t.last_child[:n] = last_child[:n]
        t.next_sib[:n] = next_sib[:n]
        t._n = n
        t._height = int(t.depth[:n].max()) if n else 0
        return t

    @classmethod
    def from_parent_list(cls, parents: Iterable[int]) -> "GrowingTree":
        """Rebuild from a parent list (index 0 must be the root, -1)."""
        parents = list(parents)
        if not parents or parents[0] != -1:
            raise UsageError("parent list must start with -1 for the root")
        t = cls(capacity=len(parents))
        t._n = 1
        for v, pv in enumerate(parents[1:], start=1):
            if not 0 <= pv < v:
                raise UsageError("parents must precede children in creation order")
            w = t.add_leaf(pv)
            assert w == v
        return t

    # -- growth and queries -------------------------------------------

    def _grow(self, need: int) -> None:
        cap = len(self.parent)
        if need <= cap:
            return
        new_cap = max(need, 2 * cap)
        for name in ("parent", "depth", "nchild", "first_child", "last_child", "next_sib"):
            old = getattr(self, name)
            arr = np.full(new_cap, -1, dtype=np.int32)
            arr[: self._n] = old[: self._n]
            setattr(self, name, arr)

    def add_leaf(self, v: int) -> int:
        """Attach a new child to ``v``; returns the new vertex id."""
        self._grow(self._n + 1)
        w = self._n
        self.parent[w] = v
        self.depth[w] = self.depth[v] + 1
        self.nchild[w] = 0
        self.first_child[w] = -1
        self.last_child[w] = -1
        self.next_sib[w] = -1
        if self.first_child[v] == -1:
            self.first_child[v] = w
        else:
            self.next_sib[self.last_child[v]] = w
        self.last_child[v] = w
        self.nchild[v] += 1
        self._n = w + 1
        if self.depth[w] > self._height:
            self._height = int(self.depth[w])
        return w

    @property
    def n_vertices(self) -> int:
        return self._n

    @property
    def height(self) -> int:
        return self._height

    def degree(self, v: int) -> int:
        return int(self.nchild[v]) + (1 if v != ROOT else 0)

    def children(self, v: int) -> list[int]:
        out = []
        c = int(self.first_child[v])
        while c != -1:
            out.append(c)
            c = int(self.next_sib[c])
        return out

    def neighbors(self, v: int) -> list[int]:
        """Father first (absent at the root), then children in order."""
        out = [] if v == ROOT else [int(self.parent[v])]
        out.extend(self.children(v))
        return out

    def check_invariants(self) -> None:
        n = self._n
        assert n >= 1 and self.parent[0] == -1 and self.depth[0] == 0
        for v in range(1, n):
            p = int(self.parent[v])
            assert 0 <= p < v, "parents precede children"
            assert self.depth[v] == self.depth[p] + 1
        for v in range(n):
            kids = self.children(v)
            assert len(kids) == self.nchild[v]
            assert all(self.parent[c] == v for c in kids)
            assert kids == sorted(kids), "children kept in insertion order"
        assert self._height == (int(self.depth[:n].max()) if n else 0)

    # -- export -------------------------------------------------------

    def to_parent_list(self) -> list[int]:
        return [int(x) for x in self.parent[: self._n]]

    def to_json(self) -> str:
        return json.dumps({"parent": self.to_parent_list(), "root": ROOT})

    @classmethod
    def from_json(cls, text: str) -> "GrowingTree":
        doc = json.loads(text)
        if doc.get("root") != ROOT:
            raise UsageError("only root 0 is supported")
        return cls.from_parent_list(doc["parent"])

    def to_dot(self) -> str:
        lines = ["graph tree {", "  node [shape=point];"]
        for v in range(1, self._n):
            lines.append(f"  {int(self.parent[v])} -- {v};")
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class WalkerState:
    """Where the walker is: vertex id, its depth, its tree degree."""

    vertex: int
    depth: int
    degree: int


@dataclass
class Trajectory:
    """Per-step record of one run; row 0 is the initial condition.

    Columns (length ``n_steps + 1``): ``depth`` and ``walker_degree``
    describe the walker's position in the updated tree, ``height`` and
    ``vertex_count`` describe the whole tree, ``leaves_added`` counts
    the step's attachments.  ``position`` is present only under FULL
    retention.  ``final_tree`` is the tree after the last step.
    """

    law: LeafLaw
    retention: Retention
    depth: np.ndarray
    walker_degree: np.ndarray
    height: np.ndarray
    vertex_count: np.ndarray
    leaves_added: np.ndarray
    position: np.ndarray | None
    final_tree: GrowingTree
    master_seed: int | None = None
    replica_index: int | None = None

    @property
    def n_steps(self) -> int:
        return len(self.depth) - 1

    def require_positions(self) -> np.ndarray:
        if self.position is None:
            raise CapabilityError("this operation needs FULL retention (positions were dropped)")
        return self.position

    def check_invariants(self) -> None:
        n = self.n_steps
        for col in (self.depth, self.walker_degree, self.height, self.vertex_count, self.leaves_added):
            assert len(col) == n + 1
        assert self.depth[0] == 1 and self.walker_degree[0] == 1
        assert self.height[0] == 1 and self.vertex_count[0] == 2 and self.leaves_added[0] == 0
        dd = np.diff(self.depth)
        assert np.all(np.abs(dd) == 1), "depth moves by exactly one per step"
        dv = np.diff(self.vertex_count)
        assert np.all(dv == self.leaves_added[1:]), "growth matches leaves added"
        dh = np.diff(self.height)
        assert np.all((dh == 0) | (dh == 1)), "height grows by at most one per step"
        assert np.all(self.height >= self.depth)
        assert np.all(self.walker_degree >= 1)
        if self.position is not None:
            tree = self.final_tree
            assert len(self.position) == n + 1
            assert self.position[0] == 1
            for t in range(n + 1):
                v = int(self.position[t])
                assert tree.depth[v] == self.depth[t]
            for t in range(1, n + 1):
                a, b = int(self.position[t - 1]), int(self.position[t])
                assert tree.parent[a] == b or tree.parent[b] == a, "moves follow tree edges"


def initial_state(start: StartKind = StartKind.EDGE_NON_ROOT_TIP, *, tree: GrowingTree | None = None, vertex: int | None = None) -> tuple[GrowingTree, WalkerState]:
    """Build the starting (tree, walker) pair.

    The standard start puts the walker on the tip of a fresh two-vertex
    tree.  A custom start adopts a caller-supplied tree and vertex.
    """
    if start is StartKind.EDGE_NON_ROOT_TIP:
        t = GrowingTree.edge_start()
        return t, WalkerState(1, 1, 1)
    if tree is None or vertex is None:
        raise UsageError("custom start needs both tree and vertex")
    if not 0 <= vertex < tree.n_vertices:
        raise UsageError("start vertex outside tree")
    return tree, WalkerState(vertex, int(tree.depth[vertex]), tree.degree(vertex))


def step(tree: GrowingTree, state: WalkerState, law: LeafLaw, rng: RngStream) -> tuple[WalkerState, int]:
    """One step of the readable reference path: grow, then move.

    Consumes exactly one categorical draw and one index draw, the same
    words in the same order as the fused kernel.
    """
    k = rng.category(law.cuts())
    adds = int(law.leaf_counts()[k])
    for _ in range(adds):
        tree.add_leaf(state.vertex)
    deg = tree.degree(state.vertex)
    j = rng.index(deg)
    v = tree.neighbors(state.vertex)[j]
    return WalkerState(v, int(tree.depth[v]), tree.degree(v)), adds


def simulate(
    law: LeafLaw,
    n_steps: int,
    *,
    master_seed: int,
    replica_index: int = 0,
    retention: Retention = Retention.SUMMARY,
) -> Trajectory:
    """Run one replica from the standard start via the fused kernel."""
    if n_steps < 0:
        raise UsageError("n_steps must be non-negative")
    cap = 2 + n_steps * max(law.max_leaves, 1)
    arena = np.empty((cap, _kernels.ARENA_FIELDS), dtype=np.int32)

    m = n_steps + 1
    depth_out = np.empty(m, dtype=np.int32)
    deg_out = np.empty(m, dtype=np.int32)
    height_out = np.empty(m, dtype=np.int32)
    vcount_out = np.empty(m, dtype=np.int64)
    leaves_out = np.empty(m, dtype=np.int32)
    record_pos = retention is Retention.FULL
    pos_out = np.empty(m if record_pos else 1, dtype=np.int32)

    stream = RngStream(master_seed, replica_index)
    nv, _ = _kernels.run_walk(
        stream.state,
        law.cuts(),
        law.leaf_counts(),
        n_steps,
        arena,
        depth_out,
        deg_out,
        height_out,
        vcount_out,
        leaves_out,
        pos_out,
        record_pos,
    )
    tree = GrowingTree.from_arena(
        arena[:, _kernels.PARENT],
        arena[:, _kernels.DEPTH],
        arena[:, _kernels.NCHILD],
        arena[:, _kernels.FIRST_CHILD],
        arena[:, _kernels.LAST_CHILD],
        arena[:, _kernels.NEXT_SIB],
        nv,
    )
    return Trajectory(
        law=law,
        retention=retention,
        depth=depth_out,
        walker_degree=deg_out,
        height=height_out,
        vertex_count=vcount_out,
        leaves_added=leaves_out,
        position=pos_out if record_pos else None,
        final_tree=tree,
        master_seed=master_seed,
        replica_index=replica_index,
    )


def export_tree(tree: GrowingTree, fmt: str = "json") -> str:
    """Serialise a tree; ``json`` round-trips, ``dot`` is for rendering."""
    if fmt == "json":
        return tree.to_json()
    if fmt == "dot":
        return tree.to_dot()
    raise UsageError(f"unknown tree format: {fmt!r}")
