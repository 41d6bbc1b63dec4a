"""Euler-Lagrange plant models, reference/disturbance signals and the observer weight schedule.

The built-in plant is a planar two-link manipulator with dynamics

    M(q) qdd + C(q, qd) qd + F(qd) + G(q) = tau + tau_d

whose inertia, Coriolis and gravity closed forms are linear in a
five-entry parameter vector theta.  All regressor blocks are stored in
the (n x n_theta) orientation so that ``block @ theta`` is always an
n-vector; custom robots plug in by subclassing :class:`RobotModel` and
supplying their own closed-form blocks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SingularInertiaError(RuntimeError):
    """Inertia matrix could not be inverted; parameters are not physical."""


@dataclass
class JointState:
    """Generalized positions (rad) and velocities (rad/s)."""

    q: np.ndarray
    dq: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.dq = np.asarray(self.dq, dtype=float)
        if self.q.shape != self.dq.shape or self.q.ndim != 1:
            raise ValueError("q and dq must be 1-d arrays of equal length")

    @property
    def n(self) -> int:
        return self.q.shape[0]


@dataclass
class ManipulatorParams:
    """Dynamic parameter vector theta plus the (known) gravitational constant."""

    theta: np.ndarray
    g: float = 9.81

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.ndim != 1:
            raise ValueError("theta must be a 1-d vector")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be finite")

    @property
    def n_theta(self) -> int:
        return self.theta.shape[0]


@dataclass
class RegressorSet:
    """The four regressor blocks, each (n x n_theta).

    ``(phiM + phiC + phiFG) @ theta`` equals M(q) dv + C(q, dq) v + F(dq) + G(q)
    for the (v, dv) pair the set was built from, and ``phidM @ theta`` equals
    Mdot(q) dv.
    """

    phiM: np.ndarray
    phiC: np.ndarray
    phiFG: np.ndarray
    phidM: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.phiM + self.phiC + self.phiFG


class RobotModel:
    """Closed-form Euler-Lagrange model with a linear-in-parameters regressor."""

    n: int
    n_theta: int

    def inertia(self, params, q):
        raise NotImplementedError

    def coriolis(self, params, q, dq):
        raise NotImplementedError

    def gravity_friction(self, params, q, dq):
        raise NotImplementedError

    def regressors(self, params, q, dq, v, dv):
        """Regressor blocks at (q, dq) with auxiliary pair (v, dv).

        Only the known constants of ``params`` (gravity) may enter; the
        blocks never depend on theta.
        """
        raise NotImplementedError

    def forward_dynamics(self, params, q, dq, tau, tau_d):
        """Joint accelerations qdd = M(q)^-1 (tau + tau_d - C qd - F - G)."""
        M = self.inertia(params, q)
        b = tau + tau_d - self.coriolis(params, q, dq) @ dq \
            - self.gravity_friction(params, q, dq)
        try:
            return np.linalg.solve(M, b)
        except np.linalg.LinAlgError as exc:
            raise SingularInertiaError(f"inertia matrix singular at q={q}") from exc


class TwoLinkModel(RobotModel):
    """Planar two-link manipulator, n = 2, n_theta = 5.

    theta = (th1, th2, th3, th4, th5) with

        M(q)  = [[th1 + 2 th2 c2, th3 + th2 c2],
                 [th3 + th2 c2,   th3          ]]
        C(q,qd) = [[-th2 s2 qd2, -th2 s2 (qd1 + qd2)],
                   [ th2 s2 qd1,  0                 ]]
        F + G = [th4 g c12 + th5 g c1, th4 g c12]

    where c1 = cos q1, c2 = cos q2, s2 = sin q2, c12 = cos(q1 + q2).
    """

    n = 2
    n_theta = 5

    def inertia(self, params, q):
        th = params.theta
        c2 = np.cos(q[1])
        m12 = th[2] + th[1] * c2
        return np.array([[th[0] + 2.0 * th[1] * c2, m12], [m12, th[2]]])

    def coriolis(self, params, q, dq):
        th2 = params.theta[1]
        s2 = np.sin(q[1])
        return np.array([
            [-th2 * s2 * dq[1], -th2 * s2 * (dq[0] + dq[1])],
            [th2 * s2 * dq[0], 0.0],
        ])

    def gravity_friction(self, params, q, dq):
        th = params.theta
        g = params.g
        c1 = np.cos(q[0])
        c12 = np.cos(q[0] + q[1])
        return np.array([th[3] * g * c12 + th[4] * g * c1, th[3] * g * c12])

    def regressors(self, params, q, dq, v, dv):
        g = params.g
        c1 = np.cos(q[0])
        c2 = np.cos(q[1])
        s2 = np.sin(q[1])
        c12 = np.cos(q[0] + q[1])
        phiM = np.array([
            [dv[0], c2 * (2.0 * dv[0] + dv[1]), dv[1], 0.0, 0.0],
            [0.0, c2 * dv[0], dv[0] + dv[1], 0.0, 0.0],
        ])
        phiC = np.array([
            [0.0, -s2 * (dq[1] * v[0] + (dq[0] + dq[1]) * v[1]), 0.0, 0.0, 0.0],
            [0.0, s2 * dq[0] * v[0], 0.0, 0.0, 0.0],
        ])
        phiFG = np.array([
            [0.0, 0.0, 0.0, g * c12, g * c1],
            [0.0, 0.0, 0.0, g * c12, 0.0],
        ])
        phidM = np.array([
            [0.0, -s2 * dq[1] * (2.0 * dv[0] + dv[1]), 0.0, 0.0, 0.0],
            [0.0, -s2 * dq[1] * dv[0], 0.0, 0.0, 0.0],
        ])
        return RegressorSet(phiM, phiC, phiFG, phidM)


@dataclass
class ReferenceTrajectory:
    """Per-joint sinusoidal reference q_d(t) = A sin(w t + phase) + offset.

    Velocity and acceleration are the exact analytic derivatives, so the
    instrumental-variable filter never needs numerical differentiation.
    """

    amplitude: np.ndarray
    omega: np.ndarray
    phase: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        self.amplitude = np.atleast_1d(np.asarray(self.amplitude, dtype=float))
        self.omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        self.phase = np.atleast_1d(np.asarray(self.phase, dtype=float))
        self.offset = np.atleast_1d(np.asarray(self.offset, dtype=float))
        shapes = {a.shape for a in (self.amplitude, self.omega, self.phase, self.offset)}
        if len(shapes) != 1:
            raise ValueError("reference spec vectors must share one length")

    @property
    def n(self) -> int:
        return self.amplitude.shape[0]

    def eval(self, t):
        """Return (q_d, dq_d, ddq_d) at time t."""
        arg = self.omega * t + self.phase
        s = np.sin(arg)
        c = np.cos(arg)
        qd = self.amplitude * s + self.offset
        dqd = self.amplitude * self.omega * c
        ddqd = -self.amplitude * self.omega ** 2 * s
        return qd, dqd, ddqd


@dataclass
class DisturbanceProfile:
    """Per-joint sinusoidal external torque with analytic time derivative."""

    amplitude: np.ndarray
    omega: np.ndarray
    phase: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        self.amplitude = np.atleast_1d(np.asarray(self.amplitude, dtype=float))
        self.omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        self.phase = np.atleast_1d(np.asarray(self.phase, dtype=float))
        self.offset = np.atleast_1d(np.asarray(self.offset, dtype=float))
        shapes = {a.shape for a in (self.amplitude, self.omega, self.phase, self.offset)}
        if len(shapes) != 1:
            raise ValueError("disturbance spec vectors must share one length")

    @classmethod
    def off(cls, n):
        z = np.zeros(n)
        return cls(z, z.copy(), z.copy(), z.copy())

    @property
    def n(self) -> int:
        return self.amplitude.shape[0]

    @property
    def is_zero(self) -> bool:
        return bool(np.all(self.amplitude == 0.0) and np.all(self.offset == 0.0))

    def value(self, t):
        return self.amplitude * np.sin(self.omega * t + self.phase) + self.offset

    def derivative(self, t):
        return self.amplitude * self.omega * np.cos(self.omega * t + self.phase)

    def bound(self) -> float:
        """Upper bound on ||tau_d(t)|| (1-norm of amplitudes plus offsets)."""
        return float(np.sum(np.abs(self.amplitude) + np.abs(self.offset)))


@dataclass
class WeightFunction:
    """Observer weight schedule mu(t) = mu0 t + mu1, mu(t) > 0, mudot >= 0.

    Only the constant (mu0 = 0) and affine forms are supported.
    """

    kind: str = "affine"
    mu0: float = 0.0
    mu1: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "affine"):
            raise ValueError("kind must be 'constant' or 'affine'")
        if self.mu1 <= 0.0:
            raise ValueError("mu1 must be positive")
        if self.mu0 < 0.0:
            raise ValueError("mu0 must be nonnegative")
        if self.kind == "constant" and self.mu0 != 0.0:
            raise ValueError("constant weight requires mu0 = 0")

    @classmethod
    def constant(cls, value):
        return cls(kind="constant", mu0=0.0, mu1=float(value))

    @classmethod
    def affine(cls, mu0, mu1):
        return cls(kind="affine", mu0=float(mu0), mu1=float(mu1))

    def eval(self, t):
        """Return (mu(t), mudot(t))."""
        return self.mu0 * t + self.mu1, self.mu0


def eval_mu(wf: WeightFunction, t):
    return wf.eval(t)


def empirical_inertia_bounds(model, params, n_samples=100, q_range=np.pi, seed=0):
    """Sampled eigenvalue bounds (m_lo, m_hi) of M(q) over the configuration space."""
    rng = np.random.default_rng(seed)
    m_lo = np.inf
    m_hi = -np.inf
    for _ in range(n_samples):
        q = rng.uniform(-q_range, q_range, size=model.n)
        w = np.linalg.eigvalsh(model.inertia(params, q))
        m_lo = min(m_lo, w[0])
        m_hi = max(m_hi, w[-1])
    return m_lo, m_hi
