"""Closed-loop simulation: fixed-step RK4 over a delay-differential system.

The full state concatenates the plant, observer filters, regressor-extension
filters and the parameter estimate into one flat vector with a documented
layout.  Delayed signals (filtered torque, acceleration-free regressor,
instrumental regressor and the diagnostic filtered disturbance) live in
ring buffers sampled on the integration grid; Runge-Kutta half-stages read
a cubic midpoint interpolation of the four surrounding samples (see
delayline).  Runs are deterministic: identical scenario + config give
bit-identical traces on one platform.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .control import (ControllerGains, EstimatorState,
                      adaptation_derivative_baseline,
                      adaptation_derivative_proposed, control_torque,
                      tracking_errors, update_te_snapshot)
from .delayline import DelayLine
from .drem import (averaging_derivatives, averaging_gain,
                   extension_derivatives, filtered_regression_derivatives,
                   instrumental_variable_derivative, mix)
from .dynamics import (DisturbanceProfile, JointState, ManipulatorParams,
                       ReferenceTrajectory, RobotModel, SingularInertiaError,
                       WeightFunction)
from .observer import (ObserverState, disturbance_estimate,
                       observer_derivatives, pi_regressor)

LAWS = ("proposed", "baseline", "none")

# trailing seconds of a run used for the "final window" metrics
FINAL_WINDOW = 10.0

# abort threshold for the divergence guard
DIVERGENCE_LIMIT = 1e9


class ConfigError(ValueError):
    """Invalid scenario or simulation configuration."""


class DivergenceError(RuntimeError):
    """A state magnitude exceeded the divergence guard."""

    def __init__(self, t, value):
        super().__init__(
            f"state magnitude {value:.3e} exceeded {DIVERGENCE_LIMIT:.0e} at t = {t:.6g} s")
        self.t = t
        self.value = value


@dataclass
class SimConfig:
    """Run window, step size, trace stride and adaptation law."""

    t0: float = 0.0
    t_end: float = 100.0
    h: float = 1e-3
    decimation: int = 100
    law: str = "proposed"

    def validate(self, gains: ControllerGains):
        if self.h <= 0.0:
            raise ConfigError("h must be positive")
        if self.t_end <= self.t0:
            raise ConfigError("t_end must exceed t0")
        if int(self.decimation) != self.decimation or self.decimation < 1:
            raise ConfigError("decimation must be an integer >= 1")
        if self.law not in LAWS:
            raise ConfigError(f"law must be one of {LAWS}")
        ratio = gains.T / self.h
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("T must be an integer multiple of h")
        nsteps = (self.t_end - self.t0) / self.h
        if abs(nsteps - round(nsteps)) > 1e-6:
            raise ConfigError("t_end - t0 must be an integer multiple of h")

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t0) / self.h))


@dataclass
class Scenario:
    """Everything that defines one experiment (but not how it is integrated)."""

    model: RobotModel
    params: ManipulatorParams
    initial: JointState
    theta_hat0: np.ndarray
    reference: ReferenceTrajectory
    disturbance: DisturbanceProfile
    weight: WeightFunction
    gains: ControllerGains

    def __post_init__(self):
        self.theta_hat0 = np.asarray(self.theta_hat0, dtype=float)

    def validate(self):
        n, nt = self.model.n, self.model.n_theta
        if self.params.n_theta != nt:
            raise ConfigError(f"theta must have {nt} entries")
        if self.initial.n != n:
            raise ConfigError(f"initial state must have {n} joints")
        if self.theta_hat0.shape != (nt,):
            raise ConfigError(f"theta_hat0 must have {nt} entries")
        if self.reference.n != n or self.disturbance.n != n:
            raise ConfigError(f"reference and disturbance must have {n} joints")
        if self.gains.K.shape != (n, n):
            raise ConfigError(f"K must be {n}x{n}")
        if self.gains.Gamma.shape != (nt, nt):
            raise ConfigError(f"Gamma must be {nt}x{nt}")
        # positive definiteness of the inertia matrix, checked by sampling
        rng = np.random.default_rng(1234)
        for _ in range(50):
            q = rng.uniform(-np.pi, np.pi, size=n)
            if np.linalg.eigvalsh(self.model.inertia(self.params, q))[0] <= 0.0:
                raise ConfigError(f"inertia matrix not positive definite at q={q}")


class StateLayout:
    """Flat packing of the closed-loop state, stable within a version.

    Order: q, dq | xf, Phif, PhiMf, uf | z, phiM_int, phi_rest, zeta, y, psi,
    Yav, Psiav, eps, Wav, w | (baseline only) yb, psib | theta_hat unless the
    law is "none".  Matrices are flattened row-major.
    """

    def __init__(self, n, n_theta, law):
        if law not in LAWS:
            raise ConfigError(f"law must be one of {LAWS}")
        specs = [
            ("q", (n,)), ("dq", (n,)),
            ("xf", (n,)), ("Phif", (n, n_theta)), ("PhiMf", (n, n_theta)), ("uf", (n,)),
            ("z", (n,)), ("phiM_int", (n, n_theta)), ("phi_rest", (n, n_theta)),
            ("zeta", (n, n_theta)), ("y", (n_theta,)), ("psi", (n_theta, n_theta)),
            ("Yav", (n_theta,)), ("Psiav", (n_theta, n_theta)),
            ("eps", (n_theta,)), ("Wav", (n_theta,)), ("w", (n,)),
        ]
        if law == "baseline":
            specs += [("yb", (n_theta,)), ("psib", (n_theta, n_theta))]
        if law != "none":
            specs += [("theta_hat", (n_theta,))]
        self.law = law
        self.n = n
        self.n_theta = n_theta
        self.slices = {}
        off = 0
        for name, shape in specs:
            size = int(np.prod(shape))
            self.slices[name] = (slice(off, off + size), shape)
            off += size
        self.dim = off

    def view(self, x, name):
        sl, shape = self.slices[name]
        return x[sl].reshape(shape)

    def unpack(self, x):
        return {name: self.view(x, name) for name in self.slices}

    def pack(self, **members):
        x = np.zeros(self.dim)
        for name, value in members.items():
            sl, shape = self.slices[name]
            x[sl] = np.asarray(value, dtype=float).reshape(-1)
        return x


class DelaySet:
    """The four delayed-signal histories used by the extension stage."""

    def __init__(self, n, n_theta, h, span, t0):
        self.n = n
        self.n_theta = n_theta
        self.t0 = t0
        self.z = DelayLine(n, h, span, t0)
        self.phi = DelayLine(n * n_theta, h, span, t0)
        self.zeta = DelayLine(n * n_theta, h, span, t0)
        self.w = DelayLine(n, h, span, t0)

    def append(self, z, phi, zeta, w):
        self.z.append(z)
        self.phi.append(phi.reshape(-1))
        self.zeta.append(zeta.reshape(-1))
        self.w.append(w)

    def query(self, t):
        shape = (self.n, self.n_theta)
        return (self.z.query(t),
                self.phi.query(t).reshape(shape),
                self.zeta.query(t).reshape(shape),
                self.w.query(t))


def rhs(t, x, scenario, delays, law="proposed", layout=None, snapshot=None):
    """Time derivative of the flat closed-loop state; pure in its inputs.

    ``snapshot`` supplies the baseline law's frozen window quantities; it is
    piecewise constant between accepted steps and ignored by the other laws.
    """
    scen = scenario
    model, params, gains = scen.model, scen.params, scen.gains
    if layout is None:
        layout = StateLayout(model.n, model.n_theta, law)
    V = layout.unpack(x)
    q, dq = V["q"], V["dq"]

    qd, dqd, ddqd = scen.reference.eval(t)
    e, de, r, v, dv = tracking_errors(qd, dqd, ddqd, q, dq, gains.alpha)
    reg_track = model.regressors(params, q, dq, v, dv)
    reg_r = model.regressors(params, q, dq, r, r)
    mu, dmu = scen.weight.eval(t)
    obs = ObserverState(V["xf"], V["Phif"], V["PhiMf"], V["uf"])
    phi_total = reg_track.total
    PiT = pi_regressor(obs, mu, phi_total, reg_r.phiM)
    theta_hat = V["theta_hat"] if law != "none" else scen.theta_hat0
    tau = control_torque(gains, mu, r, PiT, theta_hat, obs.uf)
    tau_d = scen.disturbance.value(t)

    M = model.inertia(params, q)
    b = tau + tau_d - model.coriolis(params, q, dq) @ dq \
        - model.gravity_friction(params, q, dq)
    try:
        ddq = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as exc:
        raise SingularInertiaError(f"inertia matrix singular at t={t:.6g}") from exc
    dobs = observer_derivatives(obs, mu, dmu, M @ r, reg_track, reg_r, tau)

    l = gains.l
    reg_q = model.regressors(params, q, dq, dq, dq)
    rest_input = -reg_q.phidM + reg_q.phiC + reg_q.phiFG
    dz, dphiM_int, dphi_rest, dw = filtered_regression_derivatives(
        V["z"], V["phiM_int"], V["phi_rest"], V["w"], l, tau,
        reg_q.phiM, rest_input, tau_d)
    phi_now = dphiM_int + V["phi_rest"]  # l(PhiM - phiM_int) + phi_rest

    reg_ref = model.regressors(params, qd, dqd, dqd, ddqd)
    dzeta = instrumental_variable_derivative(V["zeta"], l, reg_ref.total)

    z_del, phi_del, zeta_del, w_del = delays.query(t - gains.T)
    dy, dpsi, deps = extension_derivatives(
        V["zeta"], V["z"], phi_now, zeta_del, z_del, phi_del, V["w"], w_del)
    gainF = averaging_gain(t, gains.p, gains.F0, delays.t0)
    dYav, dPsiav, dWav = averaging_derivatives(
        V["Yav"], V["Psiav"], V["Wav"], V["y"], V["psi"], V["eps"], gainF)

    dx = np.empty_like(x)
    D = layout.unpack(dx)
    D["q"][:] = dq
    D["dq"][:] = ddq
    D["xf"][:] = dobs.xf
    D["Phif"][:] = dobs.Phif
    D["PhiMf"][:] = dobs.PhiMf
    D["uf"][:] = dobs.uf
    D["z"][:] = dz
    D["phiM_int"][:] = dphiM_int
    D["phi_rest"][:] = dphi_rest
    D["zeta"][:] = dzeta
    D["y"][:] = dy
    D["psi"][:] = dpsi
    D["Yav"][:] = dYav
    D["Psiav"][:] = dPsiav
    D["eps"][:] = deps
    D["Wav"][:] = dWav
    D["w"][:] = dw
    if law == "baseline":
        D["yb"][:] = phi_now.T @ V["z"] - phi_del.T @ z_del
        D["psib"][:] = phi_now.T @ phi_now - phi_del.T @ phi_del
        est = EstimatorState(theta_hat=theta_hat,
                             best_lambda_min=snapshot.best_lambda_min,
                             Y_snapshot=snapshot.Y_snapshot,
                             Psi_snapshot=snapshot.Psi_snapshot)
        D["theta_hat"][:] = adaptation_derivative_baseline(gains, PiT, r, est)
    elif law == "proposed":
        mixed = mix(V["Yav"], V["Psiav"])
        D["theta_hat"][:] = adaptation_derivative_proposed(
            gains, PiT, r, mixed, theta_hat)
    return dx


def rk4_step(f, t, y, h):
    """One classical Runge-Kutta step of y' = f(t, y)."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + (0.5 * h) * k1)
    k3 = f(t + 0.5 * h, y + (0.5 * h) * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class LoopOutput:
    """Raw result of an integration loop, backend-independent."""

    times: np.ndarray            # (n_rec,)
    states: np.ndarray           # (n_rec, dim)
    rec_cum_delta_sq: np.ndarray
    rec_cum_lambda_sq: np.ndarray
    acc: dict


def _initial_state(scenario, layout):
    x = np.zeros(layout.dim)
    V = layout.unpack(x)
    V["q"][:] = scenario.initial.q
    V["dq"][:] = scenario.initial.dq
    # phiM_int starts at Phi_M(q0, dq0), not zero: that is what makes the
    # derivative-through-filter regressor equal the low-pass filtered true
    # regressor from t0 on (and phi(t0) = 0, matching the zero pre-history)
    reg0 = scenario.model.regressors(scenario.params, V["q"], V["dq"],
                                     V["dq"], V["dq"])
    V["phiM_int"][:] = reg0.phiM
    if layout.law != "none":
        V["theta_hat"][:] = scenario.theta_hat0
    return x


def _phi_from_state(scenario, V):
    """Acceleration-free regressor value at the current state."""
    reg_q = scenario.model.regressors(
        scenario.params, V["q"], V["dq"], V["dq"], V["dq"])
    return scenario.gains.l * (reg_q.phiM - V["phiM_int"]) + V["phi_rest"]


class _MetricAccumulator:
    """Full-resolution metric integration shared by the Python loop."""

    def __init__(self, scenario, layout, law, t0, t_end, h):
        self.scen = scenario
        self.layout = layout
        self.law = law
        self.t0 = t0
        self.t_end = t_end
        self.h = h
        self.quarter = (t_end - t0) / 4.0
        self.fw_start = max(t0, t_end - FINAL_WINDOW)
        self.t_mid = 0.5 * (t0 + t_end)
        self.sec_stride = max(1, int(round(1.0 / h)))
        n, nt = layout.n, layout.n_theta
        self.cum_delta_sq = 0.0
        self.cum_lambda_sq = 0.0
        self.delta_sq_quarters = np.zeros(4)
        self.lambda_sq_quarters = np.zeros(4)
        self.wcal_sq_quarters = np.zeros(4)
        self.eq19_integrals = np.zeros((n, nt))
        self.eq19_sup_quarters = np.zeros(4)
        self.eq19_sup_running = 0.0
        self.eq19_sup_mid = 0.0
        self._mid_recorded = False
        self.eq20_sup_quarters = np.zeros(4)
        self.eq20_sup = 0.0
        self.eq18_times = []
        self.eq18_dets = []
        self.fw_count = 0
        self.fw_sum = np.zeros(3)   # ||e||, ||theta_err||, ||tau_d_err||
        self.fw_sup = np.zeros(3)
        self.sup_tau_d = 0.0

    def _derived(self, t, x):
        scen = self.scen
        V = self.layout.unpack(x)
        mixed = mix(V["Yav"], V["Psiav"], V["Wav"])
        mu, _ = scen.weight.eval(t)
        lam = scen.disturbance.derivative(t) / mu
        zw = V["zeta"] * V["w"][:, None]
        qd, dqd, ddqd = scen.reference.eval(t)
        e, de, r, _, _ = tracking_errors(qd, dqd, ddqd, V["q"], V["dq"],
                                         scen.gains.alpha)
        reg_r = scen.model.regressors(scen.params, V["q"], V["dq"], r, r)
        obs = ObserverState(V["xf"], V["Phif"], V["PhiMf"], V["uf"])
        theta_hat = V["theta_hat"] if self.law != "none" else scen.theta_hat0
        tau_d = scen.disturbance.value(t)
        tau_d_hat = disturbance_estimate(obs, mu, reg_r.phiM, theta_hat)
        return {
            "delta_sq": mixed.Delta ** 2,
            "wcal": mixed.Wcal,
            "wcal_sq": float(mixed.Wcal @ mixed.Wcal),
            "lambda_sq": float(lam @ lam),
            "zw": zw,
            "e_norm": float(np.linalg.norm(e)),
            "theta_err_norm": float(np.linalg.norm(scen.params.theta - theta_hat)),
            "tau_d_err_norm": float(np.linalg.norm(tau_d - tau_d_hat)),
            "tau_d_norm": float(np.linalg.norm(tau_d)),
        }

    def start(self, x0):
        self.prev = self._derived(self.t0, x0)
        self.sup_tau_d = self.prev["tau_d_norm"]
        self._maybe_eq18(0, x0)
        self._maybe_window(self.t0, self.prev)

    def _quarter_of(self, t_left):
        return min(3, int((t_left - self.t0) / self.quarter))

    def _maybe_eq18(self, k, x):
        if k % self.sec_stride == 0:
            psi = self.layout.view(x, "psi")
            self.eq18_times.append(self.t0 + k * self.h)
            self.eq18_dets.append(abs(float(np.linalg.det(psi))))

    def _maybe_window(self, t, der):
        if t >= self.fw_start:
            vals = np.array([der["e_norm"], der["theta_err_norm"],
                             der["tau_d_err_norm"]])
            self.fw_count += 1
            self.fw_sum += vals
            self.fw_sup = np.maximum(self.fw_sup, vals)

    def step(self, k_new, x_new):
        t_prev = self.t0 + (k_new - 1) * self.h
        t_new = self.t0 + k_new * self.h
        der = self._derived(t_new, x_new)
        prev = self.prev
        qi = self._quarter_of(t_prev)
        h2 = 0.5 * self.h

        inc = h2 * (prev["delta_sq"] + der["delta_sq"])
        self.cum_delta_sq += inc
        self.delta_sq_quarters[qi] += inc
        inc = h2 * (prev["lambda_sq"] + der["lambda_sq"])
        self.cum_lambda_sq += inc
        self.lambda_sq_quarters[qi] += inc
        self.wcal_sq_quarters[qi] += h2 * (prev["wcal_sq"] + der["wcal_sq"])
        self.eq19_integrals += h2 * (prev["zw"] + der["zw"])

        sup_now = float(np.max(np.abs(self.eq19_integrals)))
        self.eq19_sup_running = max(self.eq19_sup_running, sup_now)
        qj = self._quarter_of(t_new - 1e-12)
        self.eq19_sup_quarters[qj] = max(self.eq19_sup_quarters[qj], sup_now)
        if not self._mid_recorded and t_new >= self.t_mid:
            self.eq19_sup_mid = self.eq19_sup_running
            self._mid_recorded = True

        if t_new >= 10.0 and t_new > self.t0:
            gainF = averaging_gain(t_new, self.scen.gains.p,
                                   self.scen.gains.F0, self.t0)
            bound = float(np.max(np.abs(der["wcal"]))) / gainF
            self.eq20_sup = max(self.eq20_sup, bound)
            self.eq20_sup_quarters[qj] = max(self.eq20_sup_quarters[qj], bound)

        self.sup_tau_d = max(self.sup_tau_d, der["tau_d_norm"])
        self._maybe_eq18(k_new, x_new)
        self._maybe_window(t_new, der)
        self.prev = der

    def finish(self):
        return {
            "cum_delta_sq": self.cum_delta_sq,
            "delta_sq_quarters": self.delta_sq_quarters,
            "cum_lambda_sq": self.cum_lambda_sq,
            "lambda_sq_quarters": self.lambda_sq_quarters,
            "wcal_sq_quarters": self.wcal_sq_quarters,
            "eq19_integrals": self.eq19_integrals,
            "eq19_sup_quarters": self.eq19_sup_quarters,
            "eq19_sup_mid": self.eq19_sup_mid,
            "eq19_sup_final": self.eq19_sup_running,
            "eq20_sup_quarters": self.eq20_sup_quarters,
            "eq20_sup": self.eq20_sup,
            "eq18_times": np.array(self.eq18_times),
            "eq18_dets": np.array(self.eq18_dets),
            "fw_count": self.fw_count,
            "fw_sum": self.fw_sum,
            "fw_sup": self.fw_sup,
            "sup_tau_d": self.sup_tau_d,
        }


def _run_python(scenario, config):
    """Reference integration loop in plain numpy."""
    law = config.law
    model = scenario.model
    layout = StateLayout(model.n, model.n_theta, law)
    gains = scenario.gains
    t0, h = config.t0, config.h
    nsteps = config.n_steps

    x = _initial_state(scenario, layout)
    delays = DelaySet(model.n, model.n_theta, h, gains.T, t0)
    V = layout.unpack(x)
    delays.append(V["z"], _phi_from_state(scenario, V), V["zeta"], V["w"])
    snapshot = EstimatorState(theta_hat=scenario.theta_hat0)

    def f(t, state):
        return rhs(t, state, scenario, delays,
                   law=law, layout=layout, snapshot=snapshot)

    n_rec = nsteps // config.decimation + 1
    times = np.empty(n_rec)
    states = np.empty((n_rec, layout.dim))
    rec_d2 = np.empty(n_rec)
    rec_l2 = np.empty(n_rec)
    times[0] = t0
    states[0] = x
    rec_d2[0] = 0.0
    rec_l2[0] = 0.0

    acc = _MetricAccumulator(scenario, layout, law, t0, config.t_end, h)
    acc.start(x)

    for k in range(nsteps):
        t = t0 + k * h
        x = rk4_step(f, t, x, h)
        peak = float(np.max(np.abs(x)))
        if peak > DIVERGENCE_LIMIT:
            raise DivergenceError(t + h, peak)
        V = layout.unpack(x)
        delays.append(V["z"], _phi_from_state(scenario, V), V["zeta"], V["w"])
        if law == "baseline":
            snapshot = update_te_snapshot(snapshot, V["psib"], V["yb"])
        k_new = k + 1
        acc.step(k_new, x)
        if k_new % config.decimation == 0:
            m = k_new // config.decimation
            times[m] = t0 + k_new * h
            states[m] = x
            rec_d2[m] = acc.cum_delta_sq
            rec_l2[m] = acc.cum_lambda_sq
    return LoopOutput(times, states, rec_d2, rec_l2, acc.finish())


@dataclass
class TraceRecord:
    """Per-step outputs mirroring the plotted quantities of a run."""

    t: float
    q: np.ndarray
    q_d: np.ndarray
    e: np.ndarray
    e_norm: float
    r: np.ndarray
    theta_hat: np.ndarray
    theta_err: np.ndarray
    theta_err_norm: float
    tau: np.ndarray
    tau_d: np.ndarray
    tau_d_hat: np.ndarray
    tau_d_err: np.ndarray
    Delta: float
    Ycal: np.ndarray
    Wcal: np.ndarray
    V: float
    fn: np.ndarray
    lam: np.ndarray
    cum_delta_sq: float
    cum_lambda_sq: float


@dataclass
class RunMetrics:
    """Run-level summaries computed over the full-resolution signals."""

    law: str
    t0: float
    t_end: float
    h: float
    window_T: float
    backend: str
    final_window_seconds: float
    final_window_mean_e: float
    final_window_sup_e: float
    final_window_mean_theta_err: float
    final_window_sup_theta_err: float
    final_window_mean_tau_d_err: float
    final_window_sup_tau_d_err: float
    sup_tau_d: float
    theta_err0: float
    wcal_fdot_sup: float
    wcal_fdot_quarter_sups: np.ndarray
    delta_l2_final: float
    delta_l2_quarter_increments: np.ndarray
    lambda_l2_final: float
    lambda_l2_quarter_increments: np.ndarray
    wcal_l2_quarter_increments: np.ndarray
    eq19_final_integrals: np.ndarray
    eq19_sup_quarters: np.ndarray
    eq19_sup_mid: float
    eq19_sup_final: float
    eq18_grid_times: np.ndarray
    eq18_grid_dets: np.ndarray

    def to_dict(self):
        out = {}
        for name, value in self.__dict__.items():
            if isinstance(value, np.ndarray):
                out[name] = value.tolist()
            else:
                out[name] = value
        return out


def _trace_record(t, x, scenario, law, layout, Gamma_inv, cum_d2, cum_l2):
    scen = scenario
    V = layout.unpack(x)
    qd, dqd, ddqd = scen.reference.eval(t)
    e, de, r, _, _ = tracking_errors(qd, dqd, ddqd, V["q"], V["dq"],
                                     scen.gains.alpha)
    mu, _ = scen.weight.eval(t)
    obs = ObserverState(V["xf"], V["Phif"], V["PhiMf"], V["uf"])
    reg_track = scen.model.regressors(scen.params, V["q"], V["dq"],
                                      dqd + scen.gains.alpha * e,
                                      ddqd + scen.gains.alpha * de)
    reg_r = scen.model.regressors(scen.params, V["q"], V["dq"], r, r)
    PiT = pi_regressor(obs, mu, reg_track.total, reg_r.phiM)
    theta_hat = (V["theta_hat"] if law != "none" else scen.theta_hat0).copy()
    tau = control_torque(scen.gains, mu, r, PiT, theta_hat, obs.uf)
    tau_d = scen.disturbance.value(t)
    tau_d_hat = disturbance_estimate(obs, mu, reg_r.phiM, theta_hat)
    theta_err = scen.params.theta - theta_hat
    mixed = mix(V["Yav"], V["Psiav"], V["Wav"])
    lam = scen.disturbance.derivative(t) / mu
    # normalized reconstruction error of the unknown input, with the true
    # theta and the x_f form of the reconstruction (the x_f filter gain
    # mu + mudot/mu makes exactly this form obey the first-order error ODE;
    # it matches the Phi_Mf form used by the control path only when mu is
    # constant)
    M = scen.model.inertia(scen.params, V["q"])
    x_aux = M @ r
    f_hat = mu * (x_aux - obs.xf) - obs.Phif @ scen.params.theta - obs.uf
    fn = (-tau_d - f_hat) / mu
    V_lyap = 0.5 * float(r @ M @ r) + 0.5 * float(theta_err @ Gamma_inv @ theta_err) \
        + 0.5 * float(fn @ fn)
    return TraceRecord(
        t=float(t), q=V["q"].copy(), q_d=qd, e=e,
        e_norm=float(np.linalg.norm(e)), r=r,
        theta_hat=theta_hat, theta_err=theta_err,
        theta_err_norm=float(np.linalg.norm(theta_err)),
        tau=tau, tau_d=tau_d, tau_d_hat=tau_d_hat, tau_d_err=tau_d - tau_d_hat,
        Delta=mixed.Delta, Ycal=mixed.Ycal, Wcal=mixed.Wcal,
        V=V_lyap, fn=fn, lam=lam,
        cum_delta_sq=float(cum_d2), cum_lambda_sq=float(cum_l2),
    )


def _postprocess(out, scenario, config, backend_name):
    law = config.law
    layout = StateLayout(scenario.model.n, scenario.model.n_theta, law)
    Gamma_inv = np.linalg.inv(scenario.gains.Gamma)
    trace = [
        _trace_record(out.times[i], out.states[i], scenario, law, layout,
                      Gamma_inv, out.rec_cum_delta_sq[i], out.rec_cum_lambda_sq[i])
        for i in range(out.times.shape[0])
    ]
    acc = out.acc
    count = max(1, acc["fw_count"])
    theta_err0 = float(np.linalg.norm(scenario.params.theta - scenario.theta_hat0))
    metrics = RunMetrics(
        law=law, t0=config.t0, t_end=config.t_end, h=config.h,
        window_T=scenario.gains.T, backend=backend_name,
        final_window_seconds=min(FINAL_WINDOW, config.t_end - config.t0),
        final_window_mean_e=float(acc["fw_sum"][0] / count),
        final_window_sup_e=float(acc["fw_sup"][0]),
        final_window_mean_theta_err=float(acc["fw_sum"][1] / count),
        final_window_sup_theta_err=float(acc["fw_sup"][1]),
        final_window_mean_tau_d_err=float(acc["fw_sum"][2] / count),
        final_window_sup_tau_d_err=float(acc["fw_sup"][2]),
        sup_tau_d=float(acc["sup_tau_d"]),
        theta_err0=theta_err0,
        wcal_fdot_sup=float(acc["eq20_sup"]),
        wcal_fdot_quarter_sups=np.asarray(acc["eq20_sup_quarters"], dtype=float),
        delta_l2_final=float(acc["cum_delta_sq"]),
        delta_l2_quarter_increments=np.asarray(acc["delta_sq_quarters"], dtype=float),
        lambda_l2_final=float(acc["cum_lambda_sq"]),
        lambda_l2_quarter_increments=np.asarray(acc["lambda_sq_quarters"], dtype=float),
        wcal_l2_quarter_increments=np.asarray(acc["wcal_sq_quarters"], dtype=float),
        eq19_final_integrals=np.asarray(acc["eq19_integrals"], dtype=float),
        eq19_sup_quarters=np.asarray(acc["eq19_sup_quarters"], dtype=float),
        eq19_sup_mid=float(acc["eq19_sup_mid"]),
        eq19_sup_final=float(acc["eq19_sup_final"]),
        eq18_grid_times=np.asarray(acc["eq18_times"], dtype=float),
        eq18_grid_dets=np.asarray(acc["eq18_dets"], dtype=float),
    )
    return trace, metrics


def run(scenario, config, backend=None):
    """Integrate the closed loop; returns (trace, metrics).

    ``backend`` may be "compiled", "python" or None (auto: compiled when the
    extension is importable and the model is the built-in two-link plant).
    """
    from . import backend as _backend
    scenario.validate()
    config.validate(scenario.gains)
    name = _backend.resolve(backend, scenario)
    if name == "compiled":
        out = _backend.run_compiled(scenario, config)
    else:
        out = _run_python(scenario, config)
    return _postprocess(out, scenario, config, name)


@dataclass
class ConditionReport:
    """Empirical convergence-condition diagnostics of one run."""

    delta_l2_quarter_increments: np.ndarray
    delta_final_quarter_positive: bool
    wcal_to_delta_l2_ratio_quarters: np.ndarray
    eq19_sup_mid: float
    eq19_sup_final: float
    eq19_quarter_sups: np.ndarray
    eq19_bounded: bool
    eq20_sup: float
    eq20_quarter_sups: np.ndarray
    eq20_q4_to_q3_ratio: float
    eq20_growth_ok: bool
    eq18_grid_times: np.ndarray
    eq18_grid_dets: np.ndarray
    eq18_beta_empirical: float
    delta_lb_empirical: float
    lambda_l2_quarter_increments: np.ndarray
    lambda_l2_final_to_first_ratio: float
    lambda_l2_converging: bool

    def to_dict(self):
        out = {}
        for name, value in self.__dict__.items():
            if isinstance(value, np.ndarray):
                out[name] = value.tolist()
            elif isinstance(value, (np.bool_, bool)):
                out[name] = bool(value)
            else:
                out[name] = value
        return out


def _ratio(num, den):
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


def condition_checks(trace, metrics):
    """Numerical proxies for the convergence conditions of the scheme."""
    dq = metrics.delta_l2_quarter_increments
    wq = metrics.wcal_l2_quarter_increments
    ratio_quarters = np.array([_ratio(wq[i], dq[i]) for i in range(4)])
    lam_q = metrics.lambda_l2_quarter_increments
    lam_ratio = _ratio(lam_q[3], lam_q[0])
    eq20_ratio = _ratio(metrics.wcal_fdot_quarter_sups[3],
                        metrics.wcal_fdot_quarter_sups[2])
    t_full = metrics.t0 + metrics.window_T  # first time the window is full
    grid_mask = metrics.eq18_grid_times >= t_full
    beta = float(np.min(metrics.eq18_grid_dets[grid_mask])) if np.any(grid_mask) else 0.0
    deltas = np.array([abs(rec.Delta) for rec in trace])
    times = np.array([rec.t for rec in trace])
    delta_mask = times >= t_full
    delta_lb = float(np.min(deltas[delta_mask])) if np.any(delta_mask) else 0.0
    return ConditionReport(
        delta_l2_quarter_increments=dq,
        delta_final_quarter_positive=bool(dq[3] > 0.0),
        wcal_to_delta_l2_ratio_quarters=ratio_quarters,
        eq19_sup_mid=metrics.eq19_sup_mid,
        eq19_sup_final=metrics.eq19_sup_final,
        eq19_quarter_sups=metrics.eq19_sup_quarters,
        eq19_bounded=bool(metrics.eq19_sup_final <= 2.0 * metrics.eq19_sup_mid
                          or metrics.eq19_sup_final == 0.0),
        eq20_sup=metrics.wcal_fdot_sup,
        eq20_quarter_sups=metrics.wcal_fdot_quarter_sups,
        eq20_q4_to_q3_ratio=eq20_ratio,
        eq20_growth_ok=bool(eq20_ratio <= 10.0),
        eq18_grid_times=metrics.eq18_grid_times,
        eq18_grid_dets=metrics.eq18_grid_dets,
        eq18_beta_empirical=beta,
        delta_lb_empirical=delta_lb,
        lambda_l2_quarter_increments=lam_q,
        lambda_l2_final_to_first_ratio=lam_ratio,
        lambda_l2_converging=bool(lam_ratio <= 0.1),
    )


def energy_drift(model, params, q0, dq0, t_end, h):
    """Relative kinetic-energy drift of the unforced, gravity-free plant.

    Integrates qdd = -M(q)^-1 C(q, qd) qd with RK4 and returns
    max_t |E(t) - E(0)| / E(0); exercises the skew-symmetry of the model
    through the integrator.
    """
    zero_g = ManipulatorParams(theta=params.theta, g=0.0)

    def f(t, s):
        q, dq = s[:model.n], s[model.n:]
        ddq = model.forward_dynamics(zero_g, q, dq, np.zeros(model.n),
                                     np.zeros(model.n))
        return np.concatenate([dq, ddq])

    def energy(s):
        q, dq = s[:model.n], s[model.n:]
        return 0.5 * float(dq @ model.inertia(zero_g, q) @ dq)

    s = np.concatenate([np.asarray(q0, float), np.asarray(dq0, float)])
    e0 = energy(s)
    drift = 0.0
    nsteps = int(round(t_end / h))
    for k in range(nsteps):
        s = rk4_step(f, k * h, s, h)
        drift = max(drift, abs(energy(s) - e0))
    return drift / e0
