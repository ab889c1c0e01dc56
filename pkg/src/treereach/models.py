"""Problem definitions: the two built-in case studies and config loading.

A problem config is a nested mapping (read from TOML by the CLI)::

    builtin = "example1-linear"          # optional starting point
    [overrides]                          # patched onto the builtin
    horizon = 0.5

or, without ``builtin``, the full problem at top level::

    horizon = 1.0
    n0 = 20
    n_u = 15
    [model]        kind = "linear", A = [[...]], B = [[...]]   |  kind = "dc-motor"
    [stepper]      scheme = "euler", dt = 0.02
    [input_set]    center = [...], shape = [[...]] or scalar
    [terminal_set] center = [...], shape = ...
    [oracle]       lower = [...], upper = [...], counts = [...], level_fn = "gauge", cfl = 0.9
    [tree]         tol_hull_rel, dedup_rel, tol_reach_rel, cap, eps, interior_rings

Unknown keys raise :class:`ConfigError`.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from treereach.dynamics import FlowField, StepperConfig, dc_motor_field, linear_field
from treereach.errors import ConfigError, InputError
from treereach.oracle_fd import GridSpec
from treereach.sets import Ellipsoid, InputGrid, LevelSetFn, level_fn
from treereach.tree import TreeOptions

BUILTIN_NAMES = ("example1-linear", "example2-dcmotor")

_TOP_KEYS = {"horizon", "n0", "n_u", "model", "stepper", "input_set", "terminal_set",
             "oracle", "tree"}
_MODEL_KEYS = {"linear": {"kind", "A", "B"}, "dc-motor": {"kind"}}
_STEPPER_KEYS = {"scheme", "dt"}
_ORACLE_KEYS = {"lower", "upper", "counts", "level_fn", "cfl", "order", "dissipation"}
_TREE_KEYS = {"tol_hull_rel", "dedup_rel", "tol_reach_rel", "cap", "eps", "interior_rings"}


@dataclass(frozen=True)
class OracleSettings:
    grid: GridSpec
    level_fn: str = "gauge"
    cfl: float = 0.9
    order: int = 2
    dissipation: str = "local"

    def to_config(self) -> dict:
        return dict(self.grid.to_config(), level_fn=self.level_fn, cfl=self.cfl,
                    order=self.order, dissipation=self.dissipation)


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    model: dict
    input_set: Ellipsoid
    terminal_set: Ellipsoid
    horizon: float
    stepper: StepperConfig
    n0: int
    n_u: int
    oracle: OracleSettings | None = None
    tree: TreeOptions = field(default_factory=TreeOptions)
    eps: float = math.inf

    def __post_init__(self):
        if not self.horizon >= 0:
            raise ConfigError(f"horizon must be non-negative, got {self.horizon}")
        f = self.flow_field()
        if self.terminal_set.dim != f.dim_state:
            raise ConfigError(
                f"terminal set has dimension {self.terminal_set.dim}, model state {f.dim_state}")
        if self.input_set.dim != f.dim_input:
            raise ConfigError(
                f"input set has dimension {self.input_set.dim}, model input {f.dim_input}")
        if self.oracle is not None and self.oracle.grid.dim != f.dim_state:
            raise ConfigError(
                f"oracle grid is {self.oracle.grid.dim}D, model state is {f.dim_state}D")
        if self.n0 < f.dim_state + 1:
            raise ConfigError(f"n0 must be at least {f.dim_state + 1}")
        if self.n_u < 1:
            raise ConfigError("n_u must be positive")

    def flow_field(self) -> FlowField:
        kind = self.model["kind"]
        if kind == "linear":
            return linear_field(self.model["A"], self.model["B"])
        if kind == "dc-motor":
            return dc_motor_field()
        raise ConfigError(f"unknown model kind {kind!r}")

    def input_grid(self) -> InputGrid:
        return InputGrid.from_boundary(self.input_set, self.n_u)

    def terminal_level_fn(self, kind: str = "quadratic") -> LevelSetFn:
        return level_fn(self.terminal_set, kind)

    def to_config(self) -> dict:
        cfg = {
            "horizon": self.horizon,
            "n0": self.n0,
            "n_u": self.n_u,
            "model": _jsonable(self.model),
            "stepper": {"scheme": self.stepper.scheme, "dt": self.stepper.dt},
            "input_set": self.input_set.to_config(),
            "terminal_set": self.terminal_set.to_config(),
            "tree": dict(
                {k: v for k, v in self.tree.to_dict().items() if k != "keep_levels"},
                eps=self.eps if math.isfinite(self.eps) else "inf",
            ),
        }
        if self.oracle is not None:
            cfg["oracle"] = self.oracle.to_config()
        return cfg


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


_BUILTINS = {
    "example1-linear": {
        "horizon": 1.0,
        "n0": 20,
        "n_u": 15,
        "model": {"kind": "linear", "A": [[0.0, 1.0], [1.0, 0.0]], "B": [[1.0, 0.0], [0.0, 1.0]]},
        "stepper": {"scheme": "euler", "dt": 0.02},
        "input_set": {"center": [0.0, 1.0], "shape": [[4.0, 0.0], [0.0, 1.0]]},
        "terminal_set": {"center": [0.0, 0.0], "shape": [[0.01, 0.0], [0.0, 0.01]]},
        "oracle": {"lower": [-4.0, -4.0], "upper": [4.0, 4.0], "counts": [200, 200]},
    },
    "example2-dcmotor": {
        "horizon": 0.02,
        "n0": 84,
        "n_u": 2,
        "model": {"kind": "dc-motor"},
        "stepper": {"scheme": "euler", "dt": 0.0004},
        "input_set": {"center": [0.0], "shape": 4.0},
        "terminal_set": {"center": [math.pi / 2, 0.0, 0.0], "shape": 0.04},
        "oracle": {
            "lower": [math.pi / 2 - 0.5, -0.5, -1.8],
            "upper": [math.pi / 2 + 0.5, 0.9, 1.8],
            "counts": [101, 101, 101],
        },
    },
}


def builtin_config(name: str) -> dict:
    if name not in _BUILTINS:
        raise InputError(f"unknown builtin {name!r}; valid names: {', '.join(BUILTIN_NAMES)}")
    return copy.deepcopy(_BUILTINS[name])


def builtin(name: str) -> ProblemSpec:
    """One of the two case studies (``example1-linear``, ``example2-dcmotor``)."""
    return problem_from_dict(builtin_config(name))


def _merge(base: dict, patch: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in patch.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "model":
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _check_keys(section: str, got, allowed: set):
    if not isinstance(got, dict):
        raise ConfigError(f"[{section}] must be a table")
    extra = set(got) - allowed
    if extra:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")


def _float(value, name) -> float:
    if isinstance(value, str) and value.lower() in ("inf", "+inf", "infinity"):
        return math.inf
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a number, got {value!r}") from exc


def resolve_config(raw: dict) -> dict:
    """Expand ``builtin`` + ``overrides`` into a full problem mapping."""
    raw = dict(raw)
    name = raw.pop("builtin", None)
    overrides = raw.pop("overrides", None)
    if name is None:
        if overrides is not None:
            raise ConfigError("'overrides' requires 'builtin'")
        return raw
    if raw:
        raise ConfigError(f"with 'builtin', put changes under [overrides]; got {sorted(raw)}")
    try:
        base = builtin_config(name)
    except InputError as exc:
        raise ConfigError(str(exc)) from exc
    return _merge(base, overrides or {})


def problem_from_dict(raw: dict) -> ProblemSpec:
    """Build a validated :class:`ProblemSpec`; raises :class:`ConfigError`."""
    cfg = resolve_config(raw)
    _check_keys("top level", cfg, _TOP_KEYS)
    for key in ("horizon", "n0", "n_u", "model", "stepper", "input_set", "terminal_set"):
        if key not in cfg:
            raise ConfigError(f"missing required key {key!r}")
    model = cfg["model"]
    if not isinstance(model, dict) or model.get("kind") not in _MODEL_KEYS:
        raise ConfigError(f"model.kind must be one of {sorted(_MODEL_KEYS)}")
    _check_keys("model", model, _MODEL_KEYS[model["kind"]])
    if model["kind"] == "linear" and not {"A", "B"} <= set(model):
        raise ConfigError("linear model needs A and B")
    _check_keys("stepper", cfg["stepper"], _STEPPER_KEYS)
    tree_cfg = cfg.get("tree", {})
    _check_keys("tree", tree_cfg, _TREE_KEYS)
    try:
        stepper = StepperConfig(cfg["stepper"].get("scheme", "euler"),
                                _float(cfg["stepper"].get("dt"), "stepper.dt"))
        input_set = Ellipsoid.from_config(cfg["input_set"])
        terminal = Ellipsoid.from_config(cfg["terminal_set"])
        oracle = None
        if "oracle" in cfg:
            o = cfg["oracle"]
            _check_keys("oracle", o, _ORACLE_KEYS)
            oracle = OracleSettings(
                GridSpec(o["lower"], o["upper"], o["counts"]),
                o.get("level_fn", "gauge"),
                _float(o.get("cfl", 0.9), "oracle.cfl"),
                int(o.get("order", 2)),
                o.get("dissipation", "local"),
            )
        defaults = TreeOptions()
        tree = TreeOptions(
            tol_hull_rel=_float(tree_cfg.get("tol_hull_rel", defaults.tol_hull_rel), "tol_hull_rel"),
            dedup_rel=_float(tree_cfg.get("dedup_rel", defaults.dedup_rel), "dedup_rel"),
            tol_reach_rel=_float(tree_cfg.get("tol_reach_rel", defaults.tol_reach_rel), "tol_reach_rel"),
            cap=int(tree_cfg.get("cap", defaults.cap)),
            interior_rings=int(tree_cfg.get("interior_rings", defaults.interior_rings)),
        )
        return ProblemSpec(
            model=_jsonable(model),
            input_set=input_set,
            terminal_set=terminal,
            horizon=_float(cfg["horizon"], "horizon"),
            stepper=stepper,
            n0=int(cfg["n0"]),
            n_u=int(cfg["n_u"]),
            oracle=oracle,
            tree=tree,
            eps=_float(tree_cfg.get("eps", math.inf), "tree.eps"),
        )
    except (InputError, KeyError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid problem config: {exc}") from exc
