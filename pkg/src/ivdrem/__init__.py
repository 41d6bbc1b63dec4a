"""Composite adaptive disturbance rejection for Euler-Lagrange robots.

Simulation library and CLI for a disturbance-rejecting tracking controller
whose parameter adaptation is driven both by the tracking error and by
scalar regressions obtained through instrumental-variables dynamic
regressor extension and mixing.  A compiled extension accelerates the
built-in two-link plant; a pure-numpy loop covers everything else.
"""
from .backend import HAVE_COMPILED
from .control import ControllerGains, EstimatorState
from .delayline import DelayLine
from .drem import DremState, MixedRegression, adjugate, mix
from .dynamics import (DisturbanceProfile, JointState, ManipulatorParams,
                       ReferenceTrajectory, RegressorSet, RobotModel,
                       SingularInertiaError, TwoLinkModel, WeightFunction)
from .observer import ObserverState
from .presets import PRESETS, paper2dof, parse_config
from .sim import (ConfigError, ConditionReport, DivergenceError, RunMetrics,
                  Scenario, SimConfig, StateLayout, TraceRecord,
                  condition_checks, rhs, rk4_step, run)

__version__ = "0.1.0"

__all__ = [
    "HAVE_COMPILED",
    "ControllerGains", "EstimatorState",
    "DelayLine",
    "DremState", "MixedRegression", "adjugate", "mix",
    "DisturbanceProfile", "JointState", "ManipulatorParams",
    "ReferenceTrajectory", "RegressorSet", "RobotModel",
    "SingularInertiaError", "TwoLinkModel", "WeightFunction",
    "ObserverState",
    "PRESETS", "paper2dof", "parse_config",
    "ConfigError", "ConditionReport", "DivergenceError", "RunMetrics",
    "Scenario", "SimConfig", "StateLayout", "TraceRecord",
    "condition_checks", "rhs", "rk4_step", "run",
]
