"""Tree-based backward reachable sets with a grid level-set oracle."""

from __future__ import annotations

from treereach.dynamics import FlowField, StepperConfig, dc_motor_field, linear_field
from treereach.errors import (CapabilityError, CapacityError, ConfigError, ConsistencyError,
                              DegenerateHullError, InputError, NumericError, ReachError)
from treereach.geometry import Hull, classify_points, convex_hull, hull_measure
from treereach.models import ProblemSpec, builtin, problem_from_dict
from treereach.oracle_fd import GridSpec, solve, sublevel_measure
from treereach.sets import Ellipsoid, InputGrid
from treereach.tree import TreeOptions, run_algorithm1, run_algorithm2

__version__ = "0.1.0"

__all__ = [
    "CapabilityError", "CapacityError", "ConfigError", "ConsistencyError",
    "DegenerateHullError", "Ellipsoid", "FlowField", "GridSpec", "Hull", "InputError",
    "InputGrid", "NumericError", "ProblemSpec", "ReachError", "StepperConfig", "TreeOptions",
    "builtin", "classify_points", "convex_hull", "dc_motor_field", "hull_measure",
    "linear_field", "problem_from_dict", "run_algorithm1", "run_algorithm2", "solve",
    "sublevel_measure",
]
