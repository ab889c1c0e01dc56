"""Backward tree construction for reachable sets.

Level 0 discretises the terminal set; level ``k`` holds states at time
``t_k = T - k dt`` obtained from level ``k-1`` by one Euler step of the
time-reversed dynamics for every discrete input. Two drivers are provided:

* :func:`run_algorithm1` keeps every node and propagates value estimates by a
  discrete dynamic-programming minimum over one-step reachable parents.
* :func:`run_algorithm2` drops every candidate strictly inside the convex hull
  of its level, so only boundary nodes are propagated.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from treereach import geometry
from treereach.dynamics import FlowField, StepperConfig, reverse_step
from treereach.errors import CapacityError, ConsistencyError, DegenerateHullError, InputError
from treereach.sets import (
    INPUT_MEMBERSHIP_TOL,
    Ellipsoid,
    InputGrid,
    LevelSetFn,
    discretize_boundary,
    quadratic_level_fn,
)

log = logging.getLogger(__name__)

_QUERY_CHUNK = 1 << 20


@dataclass(frozen=True)
class TreeOptions:
    """Numerical tolerances and resource limits for the tree drivers."""

    tol_hull_rel: float = geometry.HULL_TOL_REL
    dedup_rel: float = 1e-10
    tol_reach_rel: float = 1e-8
    cap: int = 2_000_000
    keep_levels: bool = False
    interior_rings: int = 0
    workers: int = 1

    def to_dict(self) -> dict:
        return {
            "tol_hull_rel": self.tol_hull_rel,
            "dedup_rel": self.dedup_rel,
            "tol_reach_rel": self.tol_reach_rel,
            "cap": self.cap,
            "keep_levels": self.keep_levels,
            "interior_rings": self.interior_rings,
        }


@dataclass(frozen=True)
class Node:
    state: np.ndarray
    value: float | None = None
    parent: int | None = None
    input_index: int | None = None


@dataclass
class TreeLevel:
    """Nodes generated at time ``t = T - k dt``, stored column-wise.

    ``parents`` index rows of the previous level and ``input_index`` rows of the
    input grid; both are None on level 0.
    """

    k: int
    t: float
    states: np.ndarray
    values: np.ndarray | None = None
    parents: np.ndarray | None = None
    input_index: np.ndarray | None = None

    def __len__(self):
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def node(self, i: int) -> Node:
        return Node(
            self.states[i],
            None if self.values is None else float(self.values[i]),
            None if self.parents is None else int(self.parents[i]),
            None if self.input_index is None else int(self.input_index[i]),
        )

    def subset(self, keep) -> "TreeLevel":
        def pick(a):
            return None if a is None else a[keep]

        return TreeLevel(self.k, self.t, self.states[keep], pick(self.values),
                         pick(self.parents), pick(self.input_index))


@dataclass
class ReachRun:
    """Result of a tree run.

    ``levels`` holds every level when ``keep_levels`` was set, otherwise only
    the final one. ``counts[k]`` is the retained size of level ``k`` and
    ``candidate_counts[k]`` its size before pruning.
    """

    levels: list[TreeLevel]
    counts: list[int]
    candidate_counts: list[int]
    wall_ms: list[float]
    times: list[float]
    hull_measures: list[float] = field(default_factory=list)
    degenerate_levels: list[int] = field(default_factory=list)
    final_hull: geometry.Hull | None = None

    @property
    def final(self) -> TreeLevel:
        return self.levels[-1]

    @property
    def n_levels(self) -> int:
        return len(self.counts)

    def metrics(self) -> list[dict]:
        return [
            {"k": k, "t": t, "n": n, "candidates": c, "wall_ms": w}
            for k, (t, n, c, w) in enumerate(
                zip(self.times, self.counts, self.candidate_counts, self.wall_ms)
            )
        ]


def num_steps(T: float, dt: float) -> int:
    """``ceil(T / dt)``, robust to ``T / dt`` landing a hair above an integer."""
    if T < 0:
        raise InputError("horizon must be non-negative")
    return max(0, math.ceil(T / dt - 1e-9))


def seed_level(terminal: Ellipsoid, n0: int, mode: str = "boundary",
               g: LevelSetFn | None = None, T: float = 0.0,
               interior_rings: int = 0) -> TreeLevel:
    """Level 0 of the tree.

    ``boundary`` mode places ``n0`` points on the terminal-set boundary without
    values. ``filled`` mode adds the centre and ``interior_rings`` scaled copies
    of the boundary sample, and sets every value to ``g``.
    """
    pts = discretize_boundary(terminal, n0)
    if mode == "boundary":
        return TreeLevel(0, T, pts)
    if mode != "filled":
        raise InputError(f"unknown seed mode {mode!r}")
    rings = [terminal.center[None, :]]
    for r in range(1, interior_rings + 1):
        s = r / (interior_rings + 1)
        rings.append(terminal.center + s * (pts - terminal.center))
    states = np.vstack([pts] + rings)
    g = g or quadratic_level_fn(terminal)
    values = np.asarray(g(states), dtype=float)
    # g vanishes on the boundary; drop the roundoff so those seeds stay in {g <= 0}.
    values[:len(pts)] = 0.0
    return TreeLevel(0, T, states, values)


def expand_level(level: TreeLevel, f: FlowField, inputs: InputGrid, cfg: StepperConfig,
                 dedup_rel: float | None = 1e-10) -> tuple[TreeLevel, int]:
    """Candidate level: every node stepped backwards under every input.

    Candidates are ordered parent-major (all inputs of node 0, then node 1, ...).
    Coincident candidates (closer than ``dedup_rel`` times the level's bounding
    box diagonal) are merged, keeping the first. Returns the level and the
    candidate count before merging.
    """
    n, n_u = len(level), len(inputs)
    if n == 0:
        raise InputError("cannot expand an empty level")
    cand = np.empty((n, n_u, level.dim))
    for j, u in enumerate(inputs.points):
        cand[:, j, :] = reverse_step(f, level.states, u, cfg, level=level.k + 1, input_index=j)
    cand = cand.reshape(n * n_u, level.dim)
    parents = np.repeat(np.arange(n), n_u)
    input_index = np.tile(np.arange(n_u, dtype=np.int32), n)
    out = TreeLevel(level.k + 1, level.t - cfg.dt, cand, None, parents, input_index)
    if dedup_rel is not None and len(cand) > 1:
        keep = geometry.dedup_indices(cand, dedup_rel)
        if len(keep) < len(cand):
            out = out.subset(keep)
    return out, n * n_u


def _tol_reach(x: np.ndarray, rel: float) -> np.ndarray:
    return rel * (1.0 + np.linalg.norm(x, axis=-1))


def _input_metric(f: FlowField, u_set: Ellipsoid | None, dt: float):
    """Whitening map for the linear case with invertible B, else None.

    For ``f = A x + B u`` with square invertible ``B`` and ``U = E(q, Q)``, a
    state ``x'`` is one-step reachable from ``x`` iff
    ``|L^{-1}(x' - x - dt(A x + B q))| <= 1`` with ``L L^T = dt^2 B Q B^T``.
    """
    parts = f.linear_parts()
    if parts is None or u_set is None:
        return None
    A, B = parts
    if B.shape[0] != B.shape[1] or np.linalg.cond(B) > 1e12:
        return None
    M = dt * dt * B @ u_set.shape @ B.T
    L = np.linalg.cholesky(0.5 * (M + M.T))
    Linv = np.linalg.inv(L)
    shift = dt * (B @ u_set.center)
    return A, Linv, shift


def one_step_reachable_members(x, prev: TreeLevel, f: FlowField, u_set: Ellipsoid | None,
                               inputs: InputGrid, cfg: StepperConfig,
                               tol_reach: float | None = None,
                               tol_reach_rel: float = 1e-8,
                               parent: int | None = None) -> np.ndarray:
    """Indices of nodes ``x'`` in ``prev`` with ``x + dt f(x, u) = x'`` for some admissible u.

    Linear fields with an ellipsoidal input set solve ``B u = (x' - x - dt A x)/dt``
    by least squares and accept when the residual is within ``tol_reach`` and
    ``u`` lies in the set. Other fields test the discrete inputs only.

    ``parent`` (the node ``x`` was generated from) is always a member. The
    reverse Euler step does not invert the forward one exactly when ``f``
    depends on the state, so the root test alone can miss it.
    """
    x = np.asarray(x, dtype=float)
    tol = float(_tol_reach(x, tol_reach_rel)) if tol_reach is None else tol_reach
    dt = cfg.dt
    parts = f.linear_parts()
    if parts is not None and u_set is not None:
        A, B = parts
        rhs = (prev.states - x - dt * (A @ x)) / dt
        u, *_ = np.linalg.lstsq(B, rhs.T, rcond=None)
        resid = dt * np.linalg.norm(B @ u - rhs.T, axis=0)
        inside = u_set.quadratic_form(u.T) <= 1.0 + INPUT_MEMBERSHIP_TOL
        members = np.flatnonzero((resid <= tol) & inside)
    else:
        targets = x + dt * f(x[None, :], inputs.points)
        d = np.linalg.norm(prev.states[:, None, :] - targets[None, :, :], axis=-1)
        members = np.flatnonzero(d.min(axis=1) <= tol)
    if parent is not None:
        members = np.union1d(members, [parent])
    if members.size == 0:
        raise ConsistencyError("node has no one-step reachable parent", level=prev.k + 1)
    return members


def propagate_values(candidates: TreeLevel, prev: TreeLevel, f: FlowField,
                     u_set: Ellipsoid | None, inputs: InputGrid, cfg: StepperConfig,
                     tol_reach_rel: float = 1e-8, workers: int = 1) -> TreeLevel:
    """Give each candidate the minimum value over its one-step reachable parents.

    Values only ever take values already present on level 0, so instead of
    listing members the distinct parent values are swept in increasing order:
    a candidate takes the first value class containing one of its members,
    found by a nearest-neighbour query. The result equals
    ``min(prev.values[one_step_reachable_members(..., parent=...)])`` for every
    candidate.
    """
    if prev.values is None:
        raise InputError("previous level carries no values")
    dt = cfg.dt
    xs = candidates.states
    n, dim = xs.shape
    values = np.full(n, np.nan)
    unresolved = np.arange(n)
    metric = _input_metric(f, u_set, dt)
    brute = metric is None and f.linear_parts() is not None and u_set is not None

    if metric is not None:
        A, Linv, shift = metric
        bound = math.sqrt(1.0 + INPUT_MEMBERSHIP_TOL)
        z_prev = prev.states @ Linv.T

        def centres(ids):
            x = xs[ids]
            return (x + dt * (x @ A.T) + shift) @ Linv.T
    elif not brute:
        n_u = len(inputs)

        def centres(ids):
            x = xs[ids]
            return (x[:, None, :] + dt * f(x[:, None, :], inputs.points[None, :, :])).reshape(-1, dim)

    for v in np.unique(prev.values):
        if unresolved.size == 0:
            break
        cls = prev.values == v
        if brute:
            hit = np.zeros(unresolved.size, dtype=bool)
            sub = prev.subset(cls)
            for pos, i in enumerate(unresolved):
                try:
                    one_step_reachable_members(xs[i], sub, f, u_set, inputs, cfg,
                                               tol_reach_rel=tol_reach_rel)
                    hit[pos] = True
                except ConsistencyError:
                    pass
        else:
            tree = cKDTree(z_prev[cls] if metric is not None else prev.states[cls])
            hit = np.zeros(unresolved.size, dtype=bool)
            for start in range(0, unresolved.size, _QUERY_CHUNK):
                ids = unresolved[start:start + _QUERY_CHUNK]
                c = centres(ids)
                if metric is not None:
                    d, _ = tree.query(c, k=1, distance_upper_bound=bound * (1 + 1e-12),
                                      workers=workers)
                    hit[start:start + ids.size] = d <= bound
                else:
                    tol = np.repeat(_tol_reach(xs[ids], tol_reach_rel), n_u)
                    d, _ = tree.query(c, k=1, distance_upper_bound=float(tol.max()) * (1 + 1e-12),
                                      workers=workers)
                    hit[start:start + ids.size] = (d <= tol).reshape(ids.size, n_u).any(axis=1)
        if candidates.parents is not None:
            hit |= prev.values[candidates.parents[unresolved]] == v
        values[unresolved[hit]] = v
        unresolved = unresolved[~hit]

    if unresolved.size:
        raise ConsistencyError(
            f"{unresolved.size} nodes have no one-step reachable parent",
            level=candidates.k, nodes=unresolved[:10].tolist(),
        )
    return TreeLevel(candidates.k, candidates.t, candidates.states, values,
                     candidates.parents, candidates.input_index)


def prune_negative(level: TreeLevel, eps: float) -> TreeLevel:
    """Drop nodes with value below ``-eps``; never empties the level.

    If every node would go, the node(s) of maximal value are kept and a warning
    is logged.
    """
    if level.values is None:
        raise InputError("prune_negative needs node values")
    if math.isinf(eps) and eps > 0:
        return level
    keep = level.values >= -eps
    if not keep.any():
        log.warning("level %d: every node has value < -%g; keeping the maximal ones", level.k, eps)
        keep = level.values == level.values.max()
    return level.subset(keep)


def prune_hull(level: TreeLevel, tol_hull_rel: float = geometry.HULL_TOL_REL
               ) -> tuple[TreeLevel, geometry.Hull | None]:
    """Keep only nodes on the boundary of the level's convex hull.

    Hull vertices and nodes within ``tol_hull_rel * diameter`` of a facet plane
    are kept. A degenerate cloud is returned unchanged with hull None.
    """
    try:
        hull = geometry.convex_hull(level.states)
    except DegenerateHullError:
        log.info("level %d: degenerate hull, keeping all %d nodes", level.k, len(level))
        return level, None
    labels = geometry.classify_points(hull, tol_hull=tol_hull_rel * hull.diameter)
    keep = np.flatnonzero(labels.boundary_mask)
    pruned = level.subset(keep)
    # Re-index the hull onto the retained nodes.
    remap = np.full(len(level), -1, dtype=np.intp)
    remap[keep] = np.arange(keep.size)
    hull = geometry.Hull(pruned.states, remap[hull.vertex_indices], remap[hull.facets],
                         hull.normals, hull.offsets)
    return pruned, hull


def _measure(hull: geometry.Hull | None, level: TreeLevel) -> float:
    if hull is None:
        try:
            hull = geometry.convex_hull(level.states)
        except DegenerateHullError:
            return 0.0
    return geometry.hull_measure(hull)


def _check_dims(f: FlowField, terminal: Ellipsoid, inputs: InputGrid, cfg: StepperConfig):
    if terminal.dim != f.dim_state:
        raise InputError(f"terminal set has dim {terminal.dim}, state has {f.dim_state}")
    if inputs.dim != f.dim_input:
        raise InputError(f"input grid has dim {inputs.dim}, field expects {f.dim_input}")


def run_algorithm2(f: FlowField, terminal: Ellipsoid, inputs: InputGrid, cfg: StepperConfig,
                   T: float, n0: int, options: TreeOptions = TreeOptions()) -> ReachRun:
    """Tree construction with convex-hull pruning.

    Seeds ``n0`` points on the terminal-set boundary, then repeats
    expand -> prune-to-hull-boundary for ``ceil(T / dt)`` levels. The reported
    set is the convex hull of the final level (``run.final_hull``).
    """
    _check_dims(f, terminal, inputs, cfg)
    N = num_steps(T, cfg.dt)
    t0 = time.perf_counter()
    level = seed_level(terminal, n0, "boundary", T=T)
    first_hull = None
    try:
        first_hull = geometry.convex_hull(level.states)
    except DegenerateHullError:
        pass
    run = ReachRun([level], [len(level)], [len(level)],
                   [1e3 * (time.perf_counter() - t0)], [level.t],
                   [_measure(first_hull, level)])
    hull = first_hull
    for _ in range(N):
        t0 = time.perf_counter()
        cand, n_raw = expand_level(level, f, inputs, cfg, options.dedup_rel)
        if len(cand) > options.cap:
            raise CapacityError(f"level {cand.k} has {len(cand)} candidates (cap {options.cap})")
        level, hull = prune_hull(cand, options.tol_hull_rel)
        if hull is None:
            run.degenerate_levels.append(level.k)
        run.counts.append(len(level))
        run.candidate_counts.append(n_raw)
        run.times.append(level.t)
        run.hull_measures.append(_measure(hull, level))
        run.wall_ms.append(1e3 * (time.perf_counter() - t0))
        if options.keep_levels:
            run.levels.append(level)
        else:
            run.levels = [level]
        log.debug("level %d: %d candidates -> %d nodes", level.k, n_raw, len(level))
    if hull is None:
        try:
            hull = geometry.convex_hull(level.states)
        except DegenerateHullError:
            hull = None
    run.final_hull = hull
    return run


def run_algorithm1(f: FlowField, terminal: Ellipsoid, inputs: InputGrid, cfg: StepperConfig,
                   T: float, n0: int, eps: float = math.inf, u_set: Ellipsoid | None = None,
                   g: LevelSetFn | None = None,
                   options: TreeOptions = TreeOptions()) -> ReachRun:
    """Full tree with dynamic-programming values, optionally pruning by value.

    The tree grows by a factor ``len(inputs)`` per level, so this is meant for
    short horizons; a level larger than ``options.cap`` raises
    :class:`CapacityError`.
    """
    _check_dims(f, terminal, inputs, cfg)
    if cfg.scheme != "euler":
        raise InputError("value propagation is defined for the Euler scheme only")
    N = num_steps(T, cfg.dt)
    t0 = time.perf_counter()
    level = seed_level(terminal, n0, "filled", g=g, T=T, interior_rings=options.interior_rings)
    run = ReachRun([level], [len(level)], [len(level)],
                   [1e3 * (time.perf_counter() - t0)], [level.t])
    for _ in range(N):
        t0 = time.perf_counter()
        if len(level) * len(inputs) > options.cap:
            raise CapacityError(
                f"level {level.k + 1} would hold {len(level) * len(inputs)} nodes "
                f"(cap {options.cap}); shorten the horizon or raise the cap"
            )
        cand, n_raw = expand_level(level, f, inputs, cfg, options.dedup_rel)
        cand = propagate_values(cand, level, f, u_set, inputs, cfg,
                                options.tol_reach_rel, options.workers)
        level = prune_negative(cand, eps)
        run.counts.append(len(level))
        run.candidate_counts.append(n_raw)
        run.times.append(level.t)
        run.wall_ms.append(1e3 * (time.perf_counter() - t0))
        if options.keep_levels:
            run.levels.append(level)
        else:
            run.levels = [level]
    return run


def parent_chain(levels: list[TreeLevel], i: int) -> tuple[list[int], list[int]]:
    """Node indices (last level down to level 0) and generating input indices.

    ``inputs[m]`` is the input that produced ``nodes[m]`` from ``nodes[m + 1]``.
    Needs every level, i.e. a run with ``keep_levels``.
    """
    nodes, used = [i], []
    for level in reversed(levels[1:]):
        used.append(int(level.input_index[nodes[-1]]))
        nodes.append(int(level.parents[nodes[-1]]))
    return nodes, used


def value_sublevel_hull(level: TreeLevel, threshold: float = 0.0) -> geometry.Hull:
    """Convex hull of the nodes whose value is at most ``threshold``."""
    if level.values is None:
        raise InputError("level carries no values")
    return geometry.convex_hull(level.states[level.values <= threshold])
