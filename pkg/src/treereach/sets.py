"""Ellipsoidal constraint sets, their level-set functions and boundary samples.

An ellipsoid ``E(q, Q) = {x : (x - q)^T Q^{-1} (x - q) <= 1}`` is used both for
input constraint sets and for terminal sets. Intervals are one-dimensional
ellipsoids.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from treereach.errors import CapabilityError, InputError

CONTAINS_TOL = 1e-12
INPUT_MEMBERSHIP_TOL = 1e-9
DUPLICATE_TOL = 1e-12
_PD_RATIO = 1e-12

_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


def _as_matrix(shape, dim: int | None = None) -> np.ndarray:
    arr = np.asarray(shape, dtype=float)
    if arr.ndim == 0:
        if dim is None:
            raise InputError("scalar shape needs a dimension")
        return float(arr) * np.eye(dim)
    if arr.ndim != 2:
        raise InputError(f"shape must be a scalar or a square matrix, got ndim={arr.ndim}")
    return arr


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """Ellipsoid with ``center`` q and symmetric positive-definite ``shape`` Q.

    ``shape`` may be given as a scalar, meaning ``scalar * I``.
    """

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float)).copy()
        if center.ndim != 1:
            raise InputError("center must be a vector")
        shape = _as_matrix(self.shape, center.size).copy()
        if shape.shape != (center.size, center.size):
            raise InputError(
                f"shape {shape.shape} does not match center dimension {center.size}"
            )
        scale = max(np.abs(shape).max(), np.finfo(float).tiny)
        if np.abs(shape - shape.T).max() > 1e-12 * scale:
            raise InputError("shape matrix is not symmetric")
        eig = np.linalg.eigvalsh(shape)
        if eig[0] <= _PD_RATIO * eig[-1] or eig[-1] <= 0:
            raise InputError(f"shape matrix is not positive definite (eigenvalues {eig})")
        center.setflags(write=False)
        shape.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "shape", shape)

    @property
    def dim(self) -> int:
        return self.center.size

    @cached_property
    def sqrt_shape(self) -> np.ndarray:
        """Symmetric square root of the shape matrix."""
        w, v = np.linalg.eigh(self.shape)
        root = (v * np.sqrt(w)) @ v.T
        root.setflags(write=False)
        return root

    @cached_property
    def inv_shape(self) -> np.ndarray:
        inv = np.linalg.inv(self.shape)
        inv = 0.5 * (inv + inv.T)
        inv.setflags(write=False)
        return inv

    def quadratic_form(self, x) -> np.ndarray:
        """``(x - q)^T Q^{-1} (x - q)``, vectorised over leading axes of ``x``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise InputError(f"point dimension {x.shape[-1:]} does not match ellipsoid dim {self.dim}")
        d = x - self.center
        return np.einsum("...i,ij,...j->...", d, self.inv_shape, d)

    def support(self, direction) -> np.ndarray:
        """Support function ``max_{x in E} <direction, x>``."""
        p = np.asarray(direction, dtype=float)
        return p @ self.center + np.sqrt(np.einsum("...i,ij,...j->...", p, self.shape, p))

    def to_config(self) -> dict:
        return {"center": self.center.tolist(), "shape": self.shape.tolist()}

    @classmethod
    def from_config(cls, cfg: dict) -> "Ellipsoid":
        try:
            center = cfg["center"]
            shape = cfg["shape"]
        except (KeyError, TypeError) as exc:
            raise InputError(f"ellipsoid needs 'center' and 'shape', got {cfg!r}") from exc
        extra = set(cfg) - {"center", "shape"}
        if extra:
            raise InputError(f"unknown ellipsoid keys: {sorted(extra)}")
        return cls(center, shape)

    @classmethod
    def interval(cls, lower: float, upper: float) -> "Ellipsoid":
        if not upper > lower:
            raise InputError("interval needs upper > lower")
        half = 0.5 * (upper - lower)
        return cls([0.5 * (upper + lower)], half * half)

    def __repr__(self):
        return f"Ellipsoid(center={self.center.tolist()}, shape={self.shape.tolist()})"


def ellipsoid_contains(e: Ellipsoid, x) -> bool | np.ndarray:
    """True where ``x`` lies in ``e`` (quadratic form <= 1 + 1e-12)."""
    inside = e.quadratic_form(x) <= 1.0 + CONTAINS_TOL
    return bool(inside) if np.ndim(inside) == 0 else inside


def ellipsoid_level_value(e: Ellipsoid, x):
    """``(x - q)^T Q^{-1} (x - q) - 1``: zero on the boundary, negative inside."""
    val = e.quadratic_form(x) - 1.0
    return float(val) if np.ndim(val) == 0 else val


@dataclass(frozen=True)
class LevelSetFn:
    """Scalar function whose zero sublevel set is a terminal/initial set.

    ``tag`` is one of ``ellipsoidal-quadratic``, ``ellipsoidal-gauge`` or
    ``custom``. Evaluators are vectorised over leading axes.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    tag: str = "custom"
    ellipsoid: Ellipsoid | None = field(default=None, compare=False)

    def __call__(self, x):
        return self.evaluator(np.asarray(x, dtype=float))


def quadratic_level_fn(e: Ellipsoid) -> LevelSetFn:
    """g(x) = (x - q)^T Q^{-1} (x - q) - 1, e.g. ``100 |x|^2 - 1`` for E(0, 0.01 I)."""
    return LevelSetFn(lambda x: e.quadratic_form(x) - 1.0, "ellipsoidal-quadratic", e)


def gauge_level_fn(e: Ellipsoid) -> LevelSetFn:
    """g(x) = sqrt((x - q)^T Q^{-1} (x - q)) - 1.

    Same zero sublevel set as :func:`quadratic_level_fn` but with linear growth,
    which keeps grid schemes from being swamped by artificial dissipation.
    """
    return LevelSetFn(lambda x: np.sqrt(e.quadratic_form(x)) - 1.0, "ellipsoidal-gauge", e)


def level_fn(e: Ellipsoid, kind: str = "quadratic") -> LevelSetFn:
    if kind == "quadratic":
        return quadratic_level_fn(e)
    if kind == "gauge":
        return gauge_level_fn(e)
    raise InputError(f"unknown level function kind {kind!r}; expected 'quadratic' or 'gauge'")


def unit_sphere_points(dim: int, n: int) -> np.ndarray:
    """Deterministic near-uniform points on the unit sphere in ``dim`` dimensions.

    1D: the two points -1, +1. 2D: ``(sin(2 pi k/n), cos(2 pi k/n))`` for
    ``k = 1..n``. 3D: spherical Fibonacci lattice.
    """
    if dim == 1:
        return np.array([[-1.0], [1.0]])
    if dim == 2:
        theta = 2.0 * np.pi * np.arange(1, n + 1) / n
        return np.column_stack([np.sin(theta), np.cos(theta)])
    if dim == 3:
        i = np.arange(n) + 0.5
        z = 1.0 - 2.0 * i / n
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        phi = _GOLDEN_ANGLE * i
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    raise CapabilityError(f"boundary discretisation supports dimensions 1-3, got {dim}")


def discretize_boundary(e: Ellipsoid, n: int) -> np.ndarray:
    """``n`` points on the boundary of ``e``, as an ``(n, dim)`` array.

    Unit-sphere samples are mapped through the symmetric square root of the
    shape matrix, so every point has level value zero up to roundoff. In 1D
    the two interval end points are returned whatever ``n`` is.
    """
    dim = e.dim
    if dim not in (1, 2, 3):
        raise CapabilityError(f"boundary discretisation supports dimensions 1-3, got {dim}")
    if dim > 1 and n < dim + 1:
        raise InputError(f"need at least dim+1={dim + 1} boundary points, got {n}")
    unit = unit_sphere_points(dim, n)
    return e.center + unit @ e.sqrt_shape.T


@dataclass(frozen=True, eq=False)
class InputGrid:
    """Finite set of admissible inputs, one row per input vector."""

    points: np.ndarray
    provenance: str = "explicit-list"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise InputError("input grid must be a non-empty list of vectors")
        if cKDTree(pts).query_pairs(DUPLICATE_TOL, p=np.inf):
            raise InputError("input grid contains duplicate points")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def check_within(self, u_set: Ellipsoid) -> None:
        q = u_set.quadratic_form(self.points)
        if (q > 1.0 + INPUT_MEMBERSHIP_TOL).any():
            raise InputError("input grid has points outside the input set")

    @classmethod
    def from_boundary(cls, u_set: Ellipsoid, n: int) -> "InputGrid":
        """Boundary samples of ``u_set``: extremes for intervals, else ``n`` points."""
        pts = discretize_boundary(u_set, n)
        tag = "interval-extremes" if u_set.dim == 1 else "ellipse-boundary"
        return cls(pts, tag)

    @classmethod
    def explicit(cls, points, u_set: Ellipsoid | None = None) -> "InputGrid":
        grid = cls(points, "explicit-list")
        if u_set is not None:
            grid.check_within(u_set)
        return grid
