"""Grid-based level-set oracle for backward reachable sets.

Solves the forward-time Hamilton-Jacobi equation of the time-reversed system

    w_t = H(x, grad w),    H(x, p) = min_{u in U} <p, f(x, u)>,    w(0, x) = g(x)

on a rectilinear grid; the reachable set after time T is ``{w(T, .) <= 0}``.
Space is discretised with a Lax-Friedrichs numerical Hamiltonian, time with an
explicit TVD Runge-Kutta scheme. Ghost nodes are linearly extrapolated, which
makes the stencils one-sided at the box edge.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from skimage import measure

from treereach.dynamics import FlowField
from treereach.errors import ConfigError, InputError, NumericError
from treereach.geometry import SCHEMA
from treereach.sets import Ellipsoid, InputGrid, LevelSetFn

DEFAULT_CFL = 0.9


@dataclass(frozen=True)
class GridSpec:
    lower: tuple
    upper: tuple
    counts: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        counts = tuple(int(v) for v in self.counts)
        if not (len(lower) == len(upper) == len(counts)):
            raise InputError("grid bounds and counts must have the same length")
        if any(u <= l for l, u in zip(lower, upper)):
            raise InputError("grid upper bounds must exceed lower bounds")
        if any(c < 3 for c in counts):
            raise InputError("grids need at least 3 nodes per axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "counts", counts)

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def spacings(self) -> tuple:
        return tuple((u - l) / (c - 1) for l, u, c in zip(self.lower, self.upper, self.counts))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(l, u, c) for l, u, c in zip(self.lower, self.upper, self.counts)]

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``counts + (dim,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def to_config(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "counts": list(self.counts)}


@dataclass
class GridField:
    spec: GridSpec
    values: np.ndarray
    time: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != self.spec.counts:
            raise InputError(f"values shape {self.values.shape} != grid {self.spec.counts}")
        if not np.all(np.isfinite(self.values)):
            raise NumericError("grid field has non-finite values", time=self.time)

    def interpolate(self, x) -> np.ndarray:
        """Multilinear interpolation at arbitrary points (rows of ``x``)."""
        interp = RegularGridInterpolator(self.spec.axes(), self.values,
                                         bounds_error=False, fill_value=None)
        return interp(np.atleast_2d(x))

    def gradient_norm(self, x) -> np.ndarray:
        """Norm of the central-difference gradient, interpolated at ``x``."""
        grads = np.gradient(self.values, *self.spec.spacings)
        if self.spec.dim == 1:
            grads = [grads]
        mag = np.sqrt(sum(g * g for g in grads))
        interp = RegularGridInterpolator(self.spec.axes(), mag, bounds_error=False, fill_value=None)
        return interp(np.atleast_2d(x))


def init_field(spec: GridSpec, g: LevelSetFn) -> GridField:
    """``w(0, x) = g(x)`` at every grid node."""
    return GridField(spec, np.asarray(g(spec.nodes()), dtype=float), 0.0)


def hamiltonian(x, p, f: FlowField, inputs: InputGrid | None,
                u_set: Ellipsoid | None = None) -> np.ndarray:
    """``min_u <p, f(x, u)>``, vectorised over leading axes.

    For linear fields with an ellipsoidal input set the exact support-function
    form ``<p, A x + B q> - sqrt(p^T B Q B^T p)`` is used; otherwise the
    minimum runs over the input grid.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    parts = f.linear_parts()
    if parts is not None and u_set is not None:
        A, B = parts
        M = B @ u_set.shape @ B.T
        drift = x @ A.T + B @ u_set.center
        spread = np.sqrt(np.maximum(np.einsum("...i,ij,...j->...", p, M, p), 0.0))
        return np.einsum("...i,...i->...", p, drift) - spread
    if inputs is None:
        raise InputError("nonlinear Hamiltonian needs an input grid")
    best = None
    for u in inputs.points:
        val = np.einsum("...i,...i->...", p, f(x, u))
        best = val if best is None else np.minimum(best, val)
    return best


def dissipation_bounds(f: FlowField, inputs: InputGrid | None, x: np.ndarray,
                       u_set: Ellipsoid | None = None) -> np.ndarray:
    """``alpha_i(x) = max_u |f_i(x, u)|``, which bounds ``|dH/dp_i|``; shape ``x.shape``."""
    parts = f.linear_parts()
    if parts is not None and u_set is not None:
        A, B = parts
        M = B @ u_set.shape @ B.T
        drift = x @ A.T + B @ u_set.center
        return np.abs(drift) + np.sqrt(np.maximum(np.diag(M), 0.0))
    best = None
    for u in inputs.points:
        val = np.abs(f(x, u))
        best = val if best is None else np.maximum(best, val)
    return best


def stable_dt(spec: GridSpec, alpha: np.ndarray, cfl: float = DEFAULT_CFL) -> float:
    """Largest step with ``dt * max_x sum_i alpha_i(x) / h_i <= cfl``."""
    rate = float((alpha / np.asarray(spec.spacings)).sum(axis=-1).max())
    return math.inf if rate == 0.0 else cfl / rate


def _minmod(a, b):
    return np.where(a * b > 0.0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def one_sided_differences(w: np.ndarray, h: float, axis: int, order: int = 2):
    """Forward and backward differences ``(D+ w, D- w)`` along ``axis``.

    ``order=2`` adds the ENO second-order correction (minmod of neighbouring
    second differences). Two ghost layers per side come from linear
    extrapolation, so the correction vanishes at the edge.
    """
    u = np.moveaxis(w, axis, 0)
    n = u.shape[0]
    g1_lo, g1_hi = 2 * u[0] - u[1], 2 * u[-1] - u[-2]
    g2_lo, g2_hi = 3 * u[0] - 2 * u[1], 3 * u[-1] - 2 * u[-2]
    ext = np.concatenate([g2_lo[None], g1_lo[None], u, g1_hi[None], g2_hi[None]])
    d = np.diff(ext, axis=0) / h
    dm = d[1:n + 1]
    dp = d[2:n + 2]
    if order == 2:
        c = np.diff(ext, 2, axis=0) / (h * h)
        dm = dm + 0.5 * h * _minmod(c[0:n], c[1:n + 1])
        dp = dp - 0.5 * h * _minmod(c[1:n + 1], c[2:n + 2])
    elif order != 1:
        raise InputError(f"order must be 1 or 2, got {order}")
    return np.moveaxis(dp, 0, axis), np.moveaxis(dm, 0, axis)


@dataclass
class _Problem:
    spec: GridSpec
    nodes: np.ndarray
    alpha: np.ndarray
    f: FlowField
    inputs: InputGrid | None
    u_set: Ellipsoid | None
    order: int
    flows: list | None = None


def _rate(w: np.ndarray, prob: _Problem) -> np.ndarray:
    """Lax-Friedrichs right-hand side ``H(x, (D+ + D-)/2) + sum alpha_i (D+ - D-)/2``."""
    central, diss = [], 0.0
    for ax, h in enumerate(prob.spec.spacings):
        dp, dm = one_sided_differences(w, h, ax, prob.order)
        central.append(0.5 * (dp + dm))
        diss = diss + prob.alpha[..., ax] * 0.5 * (dp - dm)
    if prob.flows is None:
        p = np.stack(central, axis=-1)
        return hamiltonian(prob.nodes, p, prob.f, prob.inputs, prob.u_set) + diss
    ham = None
    for flow in prob.flows:
        val = sum(c * flow[..., i] for i, c in enumerate(central))
        ham = val if ham is None else np.minimum(ham, val)
    return ham + diss


def _make_problem(spec, f, inputs, u_set, order, dissipation):
    if f.dim_state != spec.dim:
        raise InputError(f"grid is {spec.dim}D but the state has dimension {f.dim_state}")
    nodes = spec.nodes()
    alpha = dissipation_bounds(f, inputs, nodes, u_set)
    if dissipation == "global":
        alpha = np.broadcast_to(alpha.reshape(-1, spec.dim).max(axis=0), alpha.shape)
    elif dissipation != "local":
        raise InputError(f"dissipation must be 'local' or 'global', got {dissipation!r}")
    flows = None
    if f.linear_parts() is None or u_set is None:
        flows = [f(nodes, u) for u in inputs.points]
    return _Problem(spec, nodes, alpha, f, inputs, u_set, order, flows)


def lf_step(field: GridField, f: FlowField, inputs: InputGrid | None, dt_pde: float,
            u_set: Ellipsoid | None = None, order: int = 2, dissipation: str = "local",
            cfl: float = DEFAULT_CFL, _prob: _Problem | None = None) -> GridField:
    """Advance ``w`` by ``dt_pde``.

    ``order=2`` is ENO2 in space with two-stage TVD Runge-Kutta in time;
    ``order=1`` is first-order differences with forward Euler. ``dissipation``
    selects per-node (``local``) or per-axis global ``alpha``. Raises
    :class:`ConfigError` if ``dt_pde`` breaks the CFL bound.
    """
    prob = _prob or _make_problem(field.spec, f, inputs, u_set, order, dissipation)
    limit = stable_dt(field.spec, prob.alpha, cfl)
    if dt_pde > limit * (1 + 1e-12):
        raise ConfigError(f"dt_pde={dt_pde:g} violates the CFL bound {limit:g} (cfl={cfl})")
    w = field.values
    w1 = w + dt_pde * _rate(w, prob)
    if prob.order == 2:
        w1 = 0.5 * (w + w1 + dt_pde * _rate(w1, prob))
    if not np.all(np.isfinite(w1)):
        raise NumericError("non-finite value in grid update", time=field.time)
    return GridField(field.spec, w1, field.time + dt_pde, dict(field.meta))


def solve(spec: GridSpec, g: LevelSetFn, f: FlowField, inputs: InputGrid | None, T: float,
          u_set: Ellipsoid | None = None, cfl: float = DEFAULT_CFL, order: int = 2,
          dissipation: str = "local") -> GridField:
    """Field at time ``T`` from repeated :func:`lf_step` with the CFL-limited step."""
    if T < 0:
        raise InputError("horizon must be non-negative")
    if not 0 < cfl <= 1:
        raise ConfigError(f"cfl must lie in (0, 1], got {cfl}")
    field = init_field(spec, g)
    prob = _make_problem(spec, f, inputs, u_set, order, dissipation)
    limit = stable_dt(spec, prob.alpha, cfl)
    steps = 0 if T == 0 else max(1, math.ceil(T / limit))
    dt = T / steps if steps else 0.0
    for _ in range(steps):
        field = lf_step(field, f, inputs, dt, u_set, cfl=cfl, _prob=prob)
    field.time = T
    field.meta = {
        "scheme": "lax-friedrichs",
        "order": order,
        "time_stepping": "tvd-rk2" if order == 2 else "forward-euler",
        "dissipation": dissipation,
        "cfl": cfl,
        "steps": steps,
        "dt_pde": dt,
        "boundary": "linear-extrapolation",
        "initial_level_fn": g.tag,
    }
    return field


def _cell_corners(w: np.ndarray) -> list[np.ndarray]:
    """Corner values of every 2D cell in counter-clockwise order."""
    return [w[:-1, :-1], w[1:, :-1], w[1:, 1:], w[:-1, 1:]]


def _sublevel_area_2d(w: np.ndarray, hx: float, hy: float) -> float:
    """Area of ``{w <= 0}`` with linear interpolation along cell edges.

    Each cell's sub-zero polygon is traced counter-clockwise: negative corners
    plus edge crossings, then its area is taken by the shoelace formula.
    """
    corners = _cell_corners(w)
    unit = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    px, py, valid = [], [], []
    for k in range(4):
        a, b = corners[k], corners[(k + 1) % 4]
        (ax, ay), (bx, by) = unit[k], unit[(k + 1) % 4]
        px.append(np.full(a.shape, ax))
        py.append(np.full(a.shape, ay))
        valid.append(a <= 0.0)
        cross = (a <= 0.0) != (b <= 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(cross, a / (a - b), 0.0)
        px.append(ax + s * (bx - ax))
        py.append(ay + s * (by - ay))
        valid.append(cross)
    px, py, valid = np.stack(px), np.stack(py), np.stack(valid)
    # Invalid slots repeat the previous valid vertex, which adds no area.
    m = len(px)
    for _ in range(2):
        for k in range(m):
            prev = (k - 1) % m
            px[k] = np.where(valid[k], px[k], px[prev])
            py[k] = np.where(valid[k], py[k], py[prev])
            valid[k] = valid[k] | valid[prev]
    area = 0.5 * np.abs((px * np.roll(py, -1, axis=0) - np.roll(px, -1, axis=0) * py).sum(axis=0))
    area = np.where(valid.any(axis=0), area, 0.0)
    return float(area.sum() * hx * hy)


def sublevel_measure(field: GridField) -> float:
    """Area (2D) or volume (3D) of ``{w <= 0}``.

    Cells with every corner below zero count fully and cells with none count
    zero. Mixed 2D cells use the linearly interpolated polygon; mixed 3D
    cells count the fraction of non-positive corners.
    """
    w = field.values
    h = field.spec.spacings
    if field.spec.dim == 1:
        neg = w <= 0.0
        a, b = w[:-1], w[1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(neg[:-1] & neg[1:], 1.0,
                            np.where(neg[:-1] != neg[1:],
                                     np.where(neg[:-1], a / (a - b), b / (b - a)), 0.0))
        return float(frac.sum() * h[0])
    if field.spec.dim == 2:
        return _sublevel_area_2d(w, *h)
    if field.spec.dim == 3:
        neg = (w <= 0.0).astype(np.float64)
        frac = sum(neg[i:i + w.shape[0] - 1, j:j + w.shape[1] - 1, k:k + w.shape[2] - 1]
                   for i in (0, 1) for j in (0, 1) for k in (0, 1)) / 8.0
        return float(frac.sum() * h[0] * h[1] * h[2])
    raise InputError(f"sublevel_measure supports 1-3 dimensions, got {field.spec.dim}")


@dataclass
class Contour:
    """Zero level set: polylines in 2D, a triangle mesh in 3D."""

    dim: int
    polylines: list = field(default_factory=list)
    vertices: np.ndarray | None = None
    faces: np.ndarray | None = None
    empty: bool = False

    def points(self) -> np.ndarray:
        if self.dim == 2:
            return np.vstack(self.polylines) if self.polylines else np.zeros((0, 2))
        return self.vertices if self.vertices is not None else np.zeros((0, 3))

    def enclosed_area(self) -> float:
        """Total area enclosed by the closed 2D polylines."""
        total = 0.0
        for line in self.polylines:
            if len(line) > 2 and np.allclose(line[0], line[-1]):
                x, y = line[:, 0], line[:, 1]
                total += 0.5 * abs(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1]))
        return total


def zero_contour(field: GridField) -> Contour:
    """Marching squares (2D) or marching cubes (3D) at iso-value 0."""
    spec = field.spec
    w = field.values
    lower = np.asarray(spec.lower)
    h = np.asarray(spec.spacings)
    if not (w.min() < 0.0 < w.max()):
        return Contour(spec.dim, empty=True)
    if spec.dim == 2:
        lines = [lower + c * h for c in measure.find_contours(w, 0.0)]
        return Contour(2, polylines=lines, empty=not lines)
    if spec.dim == 3:
        verts, faces, _, _ = measure.marching_cubes(w, 0.0, spacing=tuple(h))
        return Contour(3, vertices=verts + lower, faces=faces, empty=len(faces) == 0)
    raise InputError(f"zero_contour supports 2D and 3D fields, got {spec.dim}D")


def write_field_csv(field: GridField, path) -> None:
    spec = field.spec
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# schema: {SCHEMA} grid-field time={field.time!r} "
                 f"lower={list(spec.lower)} upper={list(spec.upper)} counts={list(spec.counts)}\n")
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(spec.dim)] + ["w"])
        pts = spec.nodes().reshape(-1, spec.dim)
        for row, v in zip(pts.tolist(), field.values.ravel().tolist()):
            w.writerow(row + [v])


def write_contour(contour: Contour, path) -> None:
    """2D: CSV with a polyline id column. 3D: OBJ-style ``v``/``f`` lines."""
    with Path(path).open("w", newline="") as fh:
        if contour.dim == 2:
            fh.write(f"# schema: {SCHEMA} zero-contour-2d empty={contour.empty}\n")
            w = csv.writer(fh)
            w.writerow(["polyline", "x1", "x2"])
            for i, line in enumerate(contour.polylines):
                for x, y in line.tolist():
                    w.writerow([i, x, y])
        else:
            fh.write(f"# schema: {SCHEMA} zero-contour-3d empty={contour.empty}\n")
            if not contour.empty:
                for v in contour.vertices.tolist():
                    fh.write("v {} {} {}\n".format(*v))
                for face in (contour.faces + 1).tolist():
                    fh.write("f {} {} {}\n".format(*face))
