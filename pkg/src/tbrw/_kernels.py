"""Jitted hot loops: the walk-and-grow step kernel and batch drivers.

Everything here operates on one flat preallocated arena per tree — an
``(capacity, 6)`` int32 array with one row per vertex — so the handful
of fields a step touches share a cache line or two.  Semantics of one
step, in order:

1. draw the number of new leaves from the leaf law and attach them all
   to the walker's current vertex (children keep insertion order);
2. draw a uniform neighbour of the current vertex in the *updated*
   tree — index 0 is the father (absent at the root), then children
   oldest first — and move there.

Per-step records are taken after the move: ``depth[t]`` and
``walker_degree[t]`` describe the new position inside the updated
tree.  Row 0 holds the initial condition (depth 1, degree 1 for the
standard two-vertex start).

The Python-level twin of this loop lives in :mod:`tbrw.model`
(``step``); tests drive both over shared streams and require identical
output, which pins the kernel to the readable reference.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ._rng import next_category, next_index, next_u64  # noqa: F401 (re-export for kernels)

NO_VERTEX = np.int32(-1)

# arena columns (one int32 row per vertex)
PARENT = 0
DEPTH = 1
NCHILD = 2
FIRST_CHILD = 3
LAST_CHILD = 4
NEXT_SIB = 5
ARENA_FIELDS = 6


@njit(cache=True)
def init_arena(arena):
    """Write the two-vertex starting tree (root 0, walker tip 1)."""
    arena[0, PARENT] = NO_VERTEX
    arena[0, DEPTH] = 0
    arena[0, NCHILD] = 1
    arena[0, FIRST_CHILD] = 1
    arena[0, LAST_CHILD] = 1
    arena[0, NEXT_SIB] = NO_VERTEX
    arena[1, PARENT] = 0
    arena[1, DEPTH] = 1
    arena[1, NCHILD] = 0
    arena[1, FIRST_CHILD] = NO_VERTEX
    arena[1, LAST_CHILD] = NO_VERTEX
    arena[1, NEXT_SIB] = NO_VERTEX
    return 2  # vertex count


@njit(cache=True, inline="always")
def attach_leaf(pos, nv, arena):
    """Append one child to ``pos`` at the back of its child list."""
    w = nv
    arena[w, PARENT] = pos
    arena[w, DEPTH] = arena[pos, DEPTH] + 1
    arena[w, NCHILD] = 0
    arena[w, FIRST_CHILD] = NO_VERTEX
    arena[w, LAST_CHILD] = NO_VERTEX
    arena[w, NEXT_SIB] = NO_VERTEX
    if arena[pos, FIRST_CHILD] == NO_VERTEX:
        arena[pos, FIRST_CHILD] = w
    else:
        arena[arena[pos, LAST_CHILD], NEXT_SIB] = w
    arena[pos, LAST_CHILD] = w
    arena[pos, NCHILD] += 1
    return w


@njit(cache=True, inline="always")
def neighbor_at(pos, j, arena):
    """The j-th neighbour of ``pos``: father first, then children in order."""
    if pos != 0:
        if j == 0:
            return arena[pos, PARENT]
        j -= 1
    c = arena[pos, FIRST_CHILD]
    for _ in range(j):
        c = arena[c, NEXT_SIB]
    return c


@njit(cache=True)
def run_walk(
    state,
    cuts,
    leaf_counts,
    n_steps,
    arena,
    depth_out,
    deg_out,
    height_out,
    vcount_out,
    leaves_out,
    pos_out,
    record_pos,
):
    """Advance the walk ``n_steps`` from the two-vertex start.

    Fills the per-step record arrays (length ``n_steps + 1``, row 0 =
    initial condition) and returns ``(vertex_count, final_position)``.
    ``pos_out`` is only written when ``record_pos`` is true; pass a
    length-1 dummy otherwise.
    """
    nv = init_arena(arena)
    pos = 2 - 1  # walker starts on the non-root tip, vertex 1
    height = arena[pos, DEPTH]

    depth_out[0] = arena[pos, DEPTH]
    deg_out[0] = arena[pos, NCHILD] + 1
    height_out[0] = height
    vcount_out[0] = nv
    leaves_out[0] = 0
    if record_pos:
        pos_out[0] = pos

    for t in range(1, n_steps + 1):
        k = next_category(state, cuts)
        adds = leaf_counts[k]
        for _ in range(adds):
            attach_leaf(pos, nv, arena)
            nv += 1
        if adds > 0 and arena[pos, DEPTH] + 1 > height:
            height = arena[pos, DEPTH] + 1

        deg = arena[pos, NCHILD] + (1 if pos != 0 else 0)
        j = next_index(state, deg)
        pos = neighbor_at(pos, j, arena)

        depth_out[t] = arena[pos, DEPTH]
        deg_out[t] = arena[pos, NCHILD] + (1 if pos != 0 else 0)
        height_out[t] = height
        vcount_out[t] = nv
        leaves_out[t] = adds
        if record_pos:
            pos_out[t] = pos

    return nv, pos


@njit(cache=True)
def run_depths_batch(states, cuts, leaf_counts, n_steps, checkpoints, out_depths):
    """Many replicas, depth-at-checkpoint records only.

    ``states`` is ``(R, 4)`` uint64; ``out_depths`` is ``(R,
    len(checkpoints))`` int64.  Trees are rebuilt per replica in a
    scratch arena sized for the worst case.
    """
    n_rep = states.shape[0]
    max_add = 0
    for k in range(leaf_counts.shape[0]):
        if leaf_counts[k] > max_add:
            max_add = leaf_counts[k]
    cap = 2 + n_steps * max(max_add, 1)
    arena = np.empty((cap, ARENA_FIELDS), dtype=np.int32)

    for r in range(n_rep):
        state = states[r]
        nv = init_arena(arena)
        pos = 1
        ci = 0
        for t in range(1, n_steps + 1):
            k = next_category(state, cuts)
            adds = leaf_counts[k]
            for _ in range(adds):
                attach_leaf(pos, nv, arena)
                nv += 1
            deg = arena[pos, NCHILD] + (1 if pos != 0 else 0)
            j = next_index(state, deg)
            pos = neighbor_at(pos, j, arena)
            if ci < checkpoints.shape[0] and t == checkpoints[ci]:
                out_depths[r, ci] = arena[pos, DEPTH]
                ci += 1


@njit(cache=True)
def run_escape_batch(states, cuts, leaf_counts, depth_goal, horizon, out_status):
    """First-attempt escape probe, many replicas.

    From the standard start (walker on the tip at depth 1), run until
    the walker either reaches ``depth_goal`` (status 1), steps onto the
    root (status 0), or exhausts ``horizon`` steps (status -1:
    undecided).  This resolves, per replica, whether the very first
    escape attempt of the cascade succeeds.
    """
    n_rep = states.shape[0]
    max_add = 0
    for k in range(leaf_counts.shape[0]):
        if leaf_counts[k] > max_add:
            max_add = leaf_counts[k]
    cap = 2 + horizon * max(max_add, 1)
    arena = np.empty((cap, ARENA_FIELDS), dtype=np.int32)

    for r in range(n_rep):
        state = states[r]
        nv = init_arena(arena)
        pos = 1
        status = np.int8(-1)
        for _ in range(horizon):
            k = next_category(state, cuts)
            adds = leaf_counts[k]
            for _ in range(adds):
                attach_leaf(pos, nv, arena)
                nv += 1
            deg = arena[pos, NCHILD] + (1 if pos != 0 else 0)
            j = next_index(state, deg)
            pos = neighbor_at(pos, j, arena)
            if pos == 0:
                status = np.int8(0)
                break
            if arena[pos, DEPTH] >= depth_goal:
                status = np.int8(1)
                break
        out_status[r] = status
