"""Flow fields, time reversal and fixed-step explicit integrators.

Evaluators are vectorised: ``f(x, u)`` accepts ``x`` of shape ``(..., n)`` and
``u`` of shape ``(..., m)`` (broadcast against each other) and returns an array
of shape ``(..., n)``. They must be pure, since the tree expands whole levels
at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from treereach.errors import InputError, NumericError

SCHEMES = ("euler", "rk4")


@dataclass(frozen=True, eq=False)
class FlowField:
    """Right-hand side ``f(x, u)`` of a controlled ODE ``x' = f(x, u)``."""

    dim_state: int
    dim_input: int
    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    tag: str = "custom"

    def __call__(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.shape[-1:] != (self.dim_state,):
            raise InputError(f"state has dimension {x.shape[-1:]}, expected {self.dim_state}")
        if u.ndim == 0:
            u = u[None]
        if u.shape[-1:] != (self.dim_input,):
            raise InputError(f"input has dimension {u.shape[-1:]}, expected {self.dim_input}")
        return self.evaluator(x, u)

    def linear_parts(self) -> tuple[np.ndarray, np.ndarray] | None:
        """``(A, B)`` when the field is ``A x + B u``, else None."""
        return None


@dataclass(frozen=True, eq=False)
class LinearField(FlowField):
    A: np.ndarray = None
    B: np.ndarray = None

    def linear_parts(self):
        return self.A, self.B


def linear_field(A, B) -> LinearField:
    """``f(x, u) = A x + B u``."""
    A = np.atleast_2d(np.asarray(A, dtype=float)).copy()
    B = np.atleast_2d(np.asarray(B, dtype=float)).copy()
    n = A.shape[0]
    if A.shape != (n, n):
        raise InputError(f"A must be square, got {A.shape}")
    if B.shape[0] != n:
        raise InputError(f"B has {B.shape[0]} rows, A has {n}")
    A.setflags(write=False)
    B.setflags(write=False)

    def evaluate(x, u):
        return x @ A.T + u @ B.T

    return LinearField(n, B.shape[1], evaluate, "linear", A, B)


def dc_motor_field() -> FlowField:
    """DC motor: rotor angle, angular velocity, armature current; voltage input.

    ``sign(0)`` is taken as 0, which keeps the friction term continuous.
    """

    def evaluate(x, u):
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        v = u[..., 0]
        dx1 = x2
        dx2 = -10.0 * np.sin(x1) - np.sign(x2) * x2 * x2 + 5.0 * x3
        dx3 = -10.0 * x2 + 50.0 * x3 + 50.0 * v
        return np.stack(np.broadcast_arrays(dx1, dx2, dx3), axis=-1)

    return FlowField(3, 1, evaluate, "dc-motor")


def zero_field(dim_state: int, dim_input: int) -> LinearField:
    return linear_field(np.zeros((dim_state, dim_state)), np.zeros((dim_state, dim_input)))


@dataclass(frozen=True, eq=False)
class TimeReversed(FlowField):
    """``x' = -f(x, u)``: the time-reversed system of ``inner``."""

    inner: FlowField = None

    def linear_parts(self):
        parts = self.inner.linear_parts()
        if parts is None:
            return None
        A, B = parts
        return -A, -B


def time_reversed(f: FlowField) -> TimeReversed:
    def evaluate(x, u):
        return -f.evaluator(x, u)

    return TimeReversed(f.dim_state, f.dim_input, evaluate, "reversed", f)


@dataclass(frozen=True)
class StepperConfig:
    scheme: str = "euler"
    dt: float = 0.02

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InputError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InputError(f"dt must be positive and finite, got {self.dt}")


def _check_finite(x_new: np.ndarray, where: str, **context) -> np.ndarray:
    if not np.all(np.isfinite(x_new)):
        bad = np.argwhere(~np.isfinite(np.atleast_2d(x_new)).all(axis=-1)).ravel()
        raise NumericError(
            f"non-finite state produced by {where}", nodes=bad[:10].tolist(), **context
        )
    return x_new


def _increment(f: FlowField, x: np.ndarray, u: np.ndarray, cfg: StepperConfig) -> np.ndarray:
    dt = cfg.dt
    with np.errstate(over="ignore", invalid="ignore"):
        if cfg.scheme == "euler":
            return dt * f(x, u)
        k1 = f(x, u)
        k2 = f(x + 0.5 * dt * k1, u)
        k3 = f(x + 0.5 * dt * k2, u)
        k4 = f(x + dt * k3, u)
        return dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(f: FlowField, x, u, cfg: StepperConfig, **context) -> np.ndarray:
    """One explicit step of ``x' = f(x, u)`` with ``u`` held constant."""
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        x_new = x + _increment(f, x, np.asarray(u, dtype=float), cfg)
    return _check_finite(x_new, "step", **context)


def reverse_step(f: FlowField, x, u, cfg: StepperConfig, **context) -> np.ndarray:
    """One step of the time-reversed system ``x' = -f(x, u)``; ``x - dt f(x, u)`` for Euler."""
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        x_new = x + _increment(time_reversed(f), x, np.asarray(u, dtype=float), cfg)
    return _check_finite(x_new, "reverse_step", **context)


def simulate(f: FlowField, x0, u_seq: Sequence, cfg: StepperConfig) -> np.ndarray:
    """Iterate :func:`step`; returns ``len(u_seq) + 1`` states (rows)."""
    u_seq = np.asarray(u_seq, dtype=float)
    if u_seq.ndim == 1:
        u_seq = u_seq[:, None] if f.dim_input == 1 else u_seq[None, :]
    if u_seq.shape[0] == 0:
        raise InputError("u_seq must be non-empty")
    x = np.asarray(x0, dtype=float)
    traj = np.empty((u_seq.shape[0] + 1,) + x.shape)
    traj[0] = x
    for n, u in enumerate(u_seq):
        x = step(f, x, u, cfg, step_index=n)
        traj[n + 1] = x
    return traj


def max_speed(f: FlowField, states: np.ndarray, inputs: np.ndarray) -> float:
    """Largest ``|f(x, u)|`` over the given state samples and inputs."""
    vals = f(states[:, None, :], inputs[None, :, :])
    return float(np.linalg.norm(vals, axis=-1).max())
