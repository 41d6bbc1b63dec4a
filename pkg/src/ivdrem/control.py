"""Tracking-error machinery, control torque and the two adaptation laws.

The control torque damps the filtered error r = de + alpha e with a gain
that grows with the observer weight, cancels parametric uncertainty through
the observer-derived regressor and cancels the external torque through the
filtered input.  Parameter adaptation combines the tracking-driven term
with either the mixed scalar-regression term (proposed) or a frozen
best-excitation window snapshot (baseline comparison law).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ControllerGains:
    """All tunables of the closed loop; positivity checked at construction.

    gamma_proposed drives the mixed scalar-regression summand (it is huge
    because the squared scalar regressor is tiny); gamma_baseline drives
    the snapshot residual of the comparison law.
    """

    alpha: float
    K: np.ndarray
    delta_mu: float
    Gamma: np.ndarray
    gamma_proposed: float
    gamma_baseline: float
    l: float
    T: float
    p: float
    F0: float

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=float)
        if self.K.ndim == 1:
            self.K = np.diag(self.K)
        self.Gamma = np.asarray(self.Gamma, dtype=float)
        if self.Gamma.ndim == 0:
            raise ValueError("Gamma must be a matrix or diagonal vector")
        if self.Gamma.ndim == 1:
            self.Gamma = np.diag(self.Gamma)
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")
        if self.K.shape[0] != self.K.shape[1]:
            raise ValueError("K must be square")
        if np.any(self.K != np.diag(np.diag(self.K))):
            raise ValueError("K must be diagonal")
        if np.any(np.diag(self.K) <= 0.0):
            raise ValueError("K must have positive diagonal entries")
        if not 0.0 < self.delta_mu < 1.0:
            raise ValueError("delta_mu must lie in (0,1)")
        if not np.allclose(self.Gamma, self.Gamma.T):
            raise ValueError("Gamma must be symmetric")
        if np.any(np.linalg.eigvalsh(self.Gamma) <= 0.0):
            raise ValueError("Gamma must be positive definite")
        if self.gamma_proposed <= 0.0 or self.gamma_baseline <= 0.0:
            raise ValueError("adaptation gains gamma must be positive")
        if self.l <= 0.0:
            raise ValueError("filter pole l must be positive")
        if self.T <= 0.0:
            raise ValueError("window width T must be positive")
        if self.p < 1.0:
            raise ValueError("averaging exponent p must be >= 1")
        if self.F0 <= 0.0:
            raise ValueError("F0 must be positive")

    def gamma_for(self, law):
        return self.gamma_proposed if law == "proposed" else self.gamma_baseline


@dataclass
class EstimatorState:
    """Parameter estimate plus the baseline law's best-excitation snapshot.

    best_lambda_min is nondecreasing over a run; the snapshot freezes the
    window quantities at the time their smallest eigenvalue peaked.
    """

    theta_hat: np.ndarray
    best_lambda_min: float = 0.0
    Y_snapshot: np.ndarray = field(default=None)
    Psi_snapshot: np.ndarray = field(default=None)

    def __post_init__(self):
        self.theta_hat = np.asarray(self.theta_hat, dtype=float)
        nt = self.theta_hat.shape[0]
        if self.Y_snapshot is None:
            self.Y_snapshot = np.zeros(nt)
        if self.Psi_snapshot is None:
            self.Psi_snapshot = np.zeros((nt, nt))


def tracking_errors(qd, dqd, ddqd, q, dq, alpha):
    """Return (e, de, r, v, dv) for the filtered-error control design."""
    e = qd - q
    de = dqd - dq
    r = de + alpha * e
    v = dqd + alpha * e
    dv = ddqd + alpha * de
    return e, de, r, v, dv


def control_torque(gains, mu, r, PiT, theta_hat, uf):
    """tau = (K + delta_mu mu) r + Pi^T theta_hat - u_f."""
    return gains.K @ r + gains.delta_mu * mu * r + PiT @ theta_hat - uf


def adaptation_derivative_proposed(gains, PiT, r, mixed, theta_hat):
    """dtheta_hat = Gamma (Pi r + gamma Delta (Ycal - Delta theta_hat)).

    Pi r is the n_theta-vector PiT^T r (the orientation that matches the
    Lyapunov cross-term cancellation).
    """
    extra = gains.gamma_proposed * mixed.Delta * (mixed.Ycal - mixed.Delta * theta_hat)
    return gains.Gamma @ (PiT.T @ r + extra)


def adaptation_derivative_baseline(gains, PiT, r, est):
    """dtheta_hat = Gamma (Pi r + gamma (Y(t_e) - Psi(t_e) theta_hat))."""
    extra = gains.gamma_baseline * (est.Y_snapshot - est.Psi_snapshot @ est.theta_hat)
    return gains.Gamma @ (PiT.T @ r + extra)


def update_te_snapshot(est, Psi_window, Y_window):
    """Running argmax over lambda_min of the window regressor.

    Replaces the snapshot only on a strict improvement, so ties keep the
    earlier window.  The window matrix is symmetrized defensively before
    the eigen-solve.
    """
    sym = 0.5 * (Psi_window + Psi_window.T)
    lam = float(np.linalg.eigvalsh(sym)[0])
    if lam > est.best_lambda_min:
        return EstimatorState(
            theta_hat=est.theta_hat,
            best_lambda_min=lam,
            Y_snapshot=np.array(Y_window, dtype=float, copy=True),
            Psi_snapshot=np.array(Psi_window, dtype=float, copy=True),
        )
    return est
