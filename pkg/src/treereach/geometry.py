"""Convex hulls in 2D and 3D, boundary classification and hull measure.

2D hulls use Andrew's monotone chain on a lexicographic sort. 3D hulls are
delegated to Qhull through :class:`scipy.spatial.ConvexHull`. Either way the
result is a :class:`Hull` whose vertex and facet indices refer to the rows of
the caller's point cloud.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from treereach.errors import CapabilityError, DegenerateHullError, InputError

SCHEMA = "treereach/1"

VERTEX = 0
BOUNDARY_INTERIOR = 1
STRICT_INTERIOR = 2
LABEL_NAMES = ("vertex", "boundary-interior", "strict-interior")

DEDUP_REL = 1e-12
HULL_TOL_REL = 1e-9
# Above this size 2D clouds are thinned by the Akl-Toussaint octagon first.
_PREFILTER_MIN = 4096
_CHUNK = 1 << 17


@dataclass(frozen=True, eq=False)
class Hull:
    """Convex hull of ``points``.

    ``vertex_indices`` index rows of ``points`` (counter-clockwise in 2D).
    ``facets`` holds index pairs (2D edges) or triples (3D triangles);
    ``normals`` are unit outward normals and ``offsets`` satisfy
    ``normal . x + offset = signed distance`` for each facet plane.
    """

    points: np.ndarray
    vertex_indices: np.ndarray
    facets: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def vertices(self) -> np.ndarray:
        return self.points[self.vertex_indices]

    @property
    def diameter(self) -> float:
        v = self.vertices
        best = 0.0
        for start in range(0, len(v), 2048):
            block = v[start:start + 2048]
            d = np.linalg.norm(block[:, None, :] - v[None, :, :], axis=-1)
            best = max(best, float(d.max()))
        return best

    def default_tol(self) -> float:
        return HULL_TOL_REL * self.diameter

    def signed_distance(self, x) -> np.ndarray:
        """Max over facets of ``normal . x + offset``; <= 0 inside the hull."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty(len(x))
        for start in range(0, len(x), _CHUNK):
            block = x[start:start + _CHUNK]
            out[start:start + _CHUNK] = (block @ self.normals.T + self.offsets).max(axis=1)
        return out


@dataclass(frozen=True, eq=False)
class HullClassification:
    labels: np.ndarray

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.labels != STRICT_INTERIOR

    def count(self, label: int) -> int:
        return int((self.labels == label).sum())


def _bbox_diag(points: np.ndarray) -> float:
    return float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))


def dedup_indices(points: np.ndarray, rel_tol: float = DEDUP_REL) -> np.ndarray:
    """Indices of first occurrences after merging points closer than the tolerance.

    Points are snapped to a lattice with spacing ``rel_tol * bbox diagonal``;
    coincident lattice cells are merged. Order of first occurrences is kept.
    """
    if len(points) == 0:
        return np.arange(0)
    lo = points.min(axis=0)
    scale = rel_tol * _bbox_diag(points)
    if scale == 0.0:
        return np.array([0])
    keys = np.round((points - lo) / scale)
    _, first = np.unique(keys, axis=0, return_index=True)
    return np.sort(first)


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _monotone_chain(points: np.ndarray, idx: np.ndarray) -> list[int]:
    """Counter-clockwise strict hull vertices of ``points[idx]`` (indices into points)."""
    order = idx[np.lexsort((points[idx, 1], points[idx, 0]))]
    pts = points[order].tolist()
    ids = order.tolist()
    lower: list[int] = []
    lower_p: list = []
    for i, p in zip(ids, pts):
        while len(lower_p) >= 2 and _cross(lower_p[-2], lower_p[-1], p) <= 0:
            lower.pop()
            lower_p.pop()
        lower.append(i)
        lower_p.append(p)
    upper: list[int] = []
    upper_p: list = []
    for i, p in zip(reversed(ids), reversed(pts)):
        while len(upper_p) >= 2 and _cross(upper_p[-2], upper_p[-1], p) <= 0:
            upper.pop()
            upper_p.pop()
        upper.append(i)
        upper_p.append(p)
    return lower[:-1] + upper[:-1]


def _octagon_prefilter(points: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Drop points well inside the polygon spanned by the 8 axis/diagonal extremes."""
    p = points[idx]
    ext = np.unique([f(k) for k in (p[:, 0], p[:, 1], p[:, 0] + p[:, 1], p[:, 0] - p[:, 1])
                     for f in (np.argmin, np.argmax)])
    poly = _monotone_chain(p, ext)
    if len(poly) < 3:
        return idx
    v = p[poly]
    edges = np.roll(v, -1, axis=0) - v
    normals = np.column_stack([edges[:, 1], -edges[:, 0]])
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    offsets = -(normals * v).sum(axis=1)
    margin = 1e-6 * _bbox_diag(p)
    keep = np.empty(len(p), dtype=bool)
    for start in range(0, len(p), _CHUNK):
        block = p[start:start + _CHUNK]
        keep[start:start + _CHUNK] = (block @ normals.T + offsets).max(axis=1) >= -margin
    return idx[keep]


def _affine_rank(points: np.ndarray) -> int:
    centred = points - points.mean(axis=0)
    s = np.linalg.svd(centred, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int((s > 1e-10 * s[0]).sum())


def _hull_2d(points: np.ndarray, idx: np.ndarray) -> Hull:
    verts = np.array(_monotone_chain(points, idx), dtype=np.intp)
    if len(verts) < 3:
        raise DegenerateHullError("2D cloud is collinear")
    v = points[verts]
    nxt = np.roll(verts, -1)
    edges = points[nxt] - v
    normals = np.column_stack([edges[:, 1], -edges[:, 0]])
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    offsets = -(normals * v).sum(axis=1)
    facets = np.column_stack([verts, nxt])
    return Hull(points, verts, facets, normals, offsets)


def _hull_3d(points: np.ndarray, idx: np.ndarray) -> Hull:
    sub = points[idx]
    try:
        qh = ConvexHull(sub)
    except QhullError as exc:
        raise DegenerateHullError(f"Qhull failed: {exc}".splitlines()[0]) from exc
    facets = idx[qh.simplices]
    normals = qh.equations[:, :-1]
    offsets = qh.equations[:, -1]
    # Orient each triangle counter-clockwise when seen from outside.
    a, b, c = (points[facets[:, k]] for k in range(3))
    flip = (np.cross(b - a, c - a) * normals).sum(axis=1) < 0
    facets[flip] = facets[flip][:, [0, 2, 1]]
    return Hull(points, idx[np.sort(qh.vertices)], facets, normals, offsets)


def convex_hull(points, dim: int | None = None) -> Hull:
    """Convex hull of a 2D or 3D point cloud (rows are points).

    Raises :class:`DegenerateHullError` when the deduplicated cloud spans an
    affine subspace of lower dimension.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise InputError("points must be a 2D array (one point per row)")
    if dim is None:
        dim = pts.shape[1]
    if pts.shape[1] != dim:
        raise InputError(f"points have dimension {pts.shape[1]}, expected {dim}")
    if dim not in (2, 3):
        raise CapabilityError(f"convex hulls are supported in 2D and 3D, not {dim}D")
    if not np.all(np.isfinite(pts)):
        raise InputError("point cloud contains non-finite values")
    idx = np.arange(len(pts))
    if dim == 2 and len(idx) > _PREFILTER_MIN:
        idx = _octagon_prefilter(pts, idx)
    idx = idx[dedup_indices(pts[idx])]
    if len(idx) < dim + 1:
        raise DegenerateHullError(f"need at least {dim + 1} distinct points, got {len(idx)}")
    if _affine_rank(pts[idx]) < dim:
        raise DegenerateHullError("point cloud is affinely degenerate")
    if dim == 2:
        return _hull_2d(pts, idx)
    return _hull_3d(pts, idx)


def classify_points(h: Hull, points=None, tol_hull: float | None = None) -> HullClassification:
    """Label points as hull vertex, boundary-interior or strict-interior.

    A point counts as on the boundary when its signed distance to the nearest
    facet plane is at least ``-tol_hull`` (default ``1e-9 * diameter``).
    ``points`` defaults to the cloud the hull was built from; vertex labels are
    only assigned in that case.
    """
    own = points is None
    pts = h.points if own else np.atleast_2d(np.asarray(points, dtype=float))
    tol = h.default_tol() if tol_hull is None else tol_hull
    dist = h.signed_distance(pts)
    labels = np.where(dist >= -tol, BOUNDARY_INTERIOR, STRICT_INTERIOR).astype(np.int8)
    if own:
        labels[h.vertex_indices] = VERTEX
    return HullClassification(labels)


def hull_measure(h: Hull) -> float:
    """Area (2D, shoelace) or volume (3D, tetrahedra from the centroid)."""
    if h.dim == 2:
        v = h.vertices
        x, y = v[:, 0], v[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
    c = h.vertices.mean(axis=0)
    a, b, d = (h.points[h.facets[:, k]] - c for k in range(3))
    return float(np.abs(np.einsum("ij,ij->i", a, np.cross(b, d))).sum() / 6.0)


def write_hull_csv(h: Hull, vertices_path, facets_path) -> None:
    """Vertices (one row each, coordinate columns) and facets (vertex row indices)."""
    axes = [f"x{i + 1}" for i in range(h.dim)]
    position = {int(g): i for i, g in enumerate(h.vertex_indices)}
    with Path(vertices_path).open("w", newline="") as fh:
        fh.write(f"# schema: {SCHEMA} hull-vertices\n")
        w = csv.writer(fh)
        w.writerow(axes)
        w.writerows(h.vertices.tolist())
    with Path(facets_path).open("w", newline="") as fh:
        fh.write(f"# schema: {SCHEMA} hull-facets (indices into hull-vertices rows)\n")
        w = csv.writer(fh)
        w.writerow([f"v{i}" for i in range(h.dim)])
        for facet in h.facets:
            w.writerow([position[int(g)] for g in facet])
