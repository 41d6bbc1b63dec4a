"""Built-in scenario presets and JSON config ingestion.

Configs are plain JSON; a ``preset`` key picks a compiled-in scenario whose
fields individual keys may override.  Unknown keys are rejected so typos
fail loudly instead of silently running defaults.
"""
from __future__ import annotations

import json
import math

import numpy as np

from .control import ControllerGains
from .dynamics import (DisturbanceProfile, JointState, ManipulatorParams,
                       ReferenceTrajectory, TwoLinkModel, WeightFunction)
from .sim import ConfigError, Scenario, SimConfig


def paper2dof():
    """Two-link benchmark scenario: sinusoidal references on both joints,
    a large slow disturbance, affine weight schedule and the stock gains."""
    model = TwoLinkModel()
    params = ManipulatorParams(theta=np.array([1.3, 0.28, 0.32, 0.4, 1.4]), g=9.81)
    reference = ReferenceTrajectory(
        amplitude=np.array([0.4 * math.pi, 0.3 * math.pi]),
        omega=np.array([2.0, 0.3]),
        phase=np.array([0.0, 0.5 * math.pi]),
        offset=np.array([0.2 * math.pi, 0.3 * math.pi]),
    )
    disturbance = DisturbanceProfile(
        amplitude=np.array([7.5, 1.5]),
        omega=np.array([0.5 * math.pi, 0.05 * math.pi]),
        phase=np.array([0.0, 0.0]),
        offset=np.array([0.0, 0.0]),
    )
    gains = ControllerGains(
        alpha=1.0,
        K=np.diag([2.0, 2.0]),
        delta_mu=0.8,
        Gamma=0.01 * np.eye(5),
        gamma_proposed=100e8,
        gamma_baseline=100e-2,
        l=50.0,
        T=20.0,
        p=2.0,
        F0=1.0,
    )
    return Scenario(
        model=model,
        params=params,
        initial=JointState(q=np.array([0.0, 0.3 * math.pi]), dq=np.zeros(2)),
        theta_hat0=np.zeros(5),
        reference=reference,
        disturbance=disturbance,
        weight=WeightFunction.affine(1.0, 15.0),
        gains=gains,
    )


PRESETS = {"paper2dof": paper2dof}


def _check_keys(section, allowed, where):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _sinusoid_from(entries, n, where):
    if len(entries) != n:
        raise ConfigError(f"{where} must list {n} joints")
    cols = {"amplitude": [], "omega": [], "phase": [], "offset": []}
    for i, entry in enumerate(entries):
        _check_keys(entry, cols, f"{where}[{i}]")
        for name in cols:
            cols[name].append(float(entry.get(name, 0.0)))
    return {name: np.array(vals) for name, vals in cols.items()}


_SCENARIO_KEYS = ("theta", "g", "q0", "dq0", "theta_hat0", "reference",
                  "disturbance", "mu", "gains")
_GAIN_KEYS = ("alpha", "K", "delta_mu", "Gamma", "gamma_proposed",
              "gamma_baseline", "l", "T", "p", "F0")
_MU_KEYS = ("kind", "mu0", "mu1")
_SIM_KEYS = ("t0", "t_end", "h", "decimation", "law")


def _apply_scenario_overrides(scen, section):
    _check_keys(section, _SCENARIO_KEYS, "scenario")
    n = scen.model.n
    if "theta" in section:
        scen.params = ManipulatorParams(theta=np.asarray(section["theta"], dtype=float),
                                        g=scen.params.g)
    if "g" in section:
        scen.params = ManipulatorParams(theta=scen.params.theta,
                                        g=float(section["g"]))
    if "q0" in section:
        scen.initial = JointState(q=np.asarray(section["q0"], dtype=float),
                                  dq=scen.initial.dq)
    if "dq0" in section:
        scen.initial = JointState(q=scen.initial.q,
                                  dq=np.asarray(section["dq0"], dtype=float))
    if "theta_hat0" in section:
        scen.theta_hat0 = np.asarray(section["theta_hat0"], dtype=float)
    if "reference" in section:
        scen.reference = ReferenceTrajectory(**_sinusoid_from(section["reference"], n,
                                                              "reference"))
    if "disturbance" in section:
        spec = section["disturbance"]
        if spec == "off":
            scen.disturbance = DisturbanceProfile.off(n)
        else:
            scen.disturbance = DisturbanceProfile(**_sinusoid_from(spec, n,
                                                                   "disturbance"))
    if "mu" in section:
        mu = section["mu"]
        _check_keys(mu, _MU_KEYS, "mu")
        try:
            scen.weight = WeightFunction(kind=mu.get("kind", "affine"),
                                         mu0=float(mu.get("mu0", 0.0)),
                                         mu1=float(mu.get("mu1", 1.0)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if "gains" in section:
        g = section["gains"]
        _check_keys(g, _GAIN_KEYS, "gains")
        fields = {name: getattr(scen.gains, name) for name in _GAIN_KEYS}
        for name in g:
            value = g[name]
            if name == "K":
                value = np.asarray(value, dtype=float)
            elif name == "Gamma":
                value = np.asarray(value, dtype=float)
                if value.ndim == 0:
                    value = float(value) * np.eye(scen.model.n_theta)
            else:
                value = float(value)
            fields[name] = value
        try:
            scen.gains = ControllerGains(**fields)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return scen


def _apply_sim_overrides(cfg, section):
    _check_keys(section, _SIM_KEYS, "sim")
    for name in section:
        value = section[name]
        if name == "decimation":
            value = int(value)
        elif name == "law":
            value = str(value)
        else:
            value = float(value)
        setattr(cfg, name, value)
    return cfg


def scenario_from_config(doc):
    """Build (Scenario, SimConfig) from a parsed JSON document."""
    _check_keys(doc, ("preset", "scenario", "sim"), "config")
    preset_name = doc.get("preset", "paper2dof")
    if preset_name not in PRESETS:
        raise ConfigError(f"unknown preset {preset_name!r}; "
                          f"available: {', '.join(sorted(PRESETS))}")
    scen = PRESETS[preset_name]()
    cfg = SimConfig()
    scen = _apply_scenario_overrides(scen, doc.get("scenario", {}))
    cfg = _apply_sim_overrides(cfg, doc.get("sim", {}))
    scen.validate()
    cfg.validate(scen.gains)
    return scen, cfg


def parse_config(path):
    """Parse and fully validate a JSON config file."""
    with open(path) as fh:
        text = fh.read()
    if text.strip() == "":
        doc = {}
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return scenario_from_config(doc)
