"""Backend selection: compiled extension core versus the pure-Python loop.

The compiled core implements the whole integration loop for the built-in
two-link plant (the hot path: four derivative evaluations per step, each
with a 5x5 adjugate).  Anything else, including custom robot models, runs
on the numpy loop in :mod:`ivdrem.sim`.  Both loops implement the same
discretization; ``ivdrem.bench`` measures the gap and checks agreement.
"""
from __future__ import annotations

import numpy as np

from .dynamics import TwoLinkModel

try:
    from . import _fastcore
except ImportError:  # extension not built; fall back to the numpy loop
    _fastcore = None

HAVE_COMPILED = _fastcore is not None

_LAW_CODES = {"proposed": 0, "baseline": 1, "none": 2}


def resolve(backend, scenario):
    """Pick the backend for a run; None means best available."""
    compiled_ok = HAVE_COMPILED and isinstance(scenario.model, TwoLinkModel)
    if backend is None:
        return "compiled" if compiled_ok else "python"
    if backend == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled core not available (extension not built)")
        if not isinstance(scenario.model, TwoLinkModel):
            raise RuntimeError("compiled core only supports the two-link model")
        return "compiled"
    if backend == "python":
        return "python"
    raise ValueError(f"unknown backend {backend!r}")


def run_compiled(scenario, config):
    """Invoke the extension loop and adapt its output to LoopOutput."""
    from .sim import LoopOutput

    gains = scenario.gains
    ref = scenario.reference
    dist = scenario.disturbance
    ref_params = np.ascontiguousarray(
        np.stack([ref.amplitude, ref.omega, ref.phase, ref.offset], axis=1))
    dist_params = np.ascontiguousarray(
        np.stack([dist.amplitude, dist.omega, dist.phase, dist.offset], axis=1))
    res = _fastcore.run_twolink(
        np.ascontiguousarray(scenario.params.theta),
        float(scenario.params.g),
        ref_params,
        dist_params,
        float(scenario.weight.mu0), float(scenario.weight.mu1),
        float(gains.alpha),
        np.ascontiguousarray(np.diag(gains.K)),
        float(gains.delta_mu),
        np.ascontiguousarray(gains.Gamma),
        float(gains.gamma_proposed), float(gains.gamma_baseline),
        float(gains.l), float(gains.T), float(gains.p), float(gains.F0),
        np.ascontiguousarray(scenario.theta_hat0),
        np.ascontiguousarray(scenario.initial.q),
        np.ascontiguousarray(scenario.initial.dq),
        float(config.t0), float(config.t_end), float(config.h),
        int(config.decimation), _LAW_CODES[config.law],
    )
    return LoopOutput(
        times=res["times"],
        states=res["states"],
        rec_cum_delta_sq=res["rec_cum_delta_sq"],
        rec_cum_lambda_sq=res["rec_cum_lambda_sq"],
        acc=res["acc"],
    )
