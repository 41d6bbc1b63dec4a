"""Instrumental-variables regressor extension and mixing.

Pipeline: low-pass filter the torque regression (acceleration-free via a
derivative-through-filter realization), build an instrumental regressor
from the reference trajectory, difference a sliding-window integral of the
instrument/regressor products, average with a decaying-gain filter, then
mix the square system down to independent scalar regressions with the
adjugate/determinant of the normalized matrix.

The disturbance-channel states (w, eps, Wav) need the true external torque
and therefore exist only in simulation; they quantify how fast the mixed
disturbance decays relative to the scalar regressor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Norm used to normalize the averaged regressor before mixing.  Frobenius:
# cheap, smooth in the entries, and keeps results platform-reproducible.
MATRIX_NORM = "fro"


@dataclass
class DremState:
    """Filter-chain state; everything starts at zero.

    phiM_int and phi_rest realize the acceleration-free regressor filter:
    phi = l (Phi_M(q, dq) - phiM_int) + phi_rest.  zeta is stored in the
    same (n x n_theta) orientation as every other block.
    """

    z: np.ndarray          # (n,) filtered torque
    phiM_int: np.ndarray   # (n, n_theta)
    phi_rest: np.ndarray   # (n, n_theta)
    zeta: np.ndarray       # (n, n_theta) instrumental regressor
    y: np.ndarray          # (n_theta,) window-extended regressand
    psi: np.ndarray        # (n_theta, n_theta) window-extended regressor
    Yav: np.ndarray        # (n_theta,) averaged regressand
    Psiav: np.ndarray      # (n_theta, n_theta) averaged regressor
    eps: np.ndarray        # (n_theta,) diagnostic window disturbance
    Wav: np.ndarray        # (n_theta,) diagnostic averaged disturbance
    w: np.ndarray          # (n,) diagnostic filtered disturbance

    @classmethod
    def zeros(cls, n, n_theta):
        return cls(
            z=np.zeros(n),
            phiM_int=np.zeros((n, n_theta)),
            phi_rest=np.zeros((n, n_theta)),
            zeta=np.zeros((n, n_theta)),
            y=np.zeros(n_theta),
            psi=np.zeros((n_theta, n_theta)),
            Yav=np.zeros(n_theta),
            Psiav=np.zeros((n_theta, n_theta)),
            eps=np.zeros(n_theta),
            Wav=np.zeros(n_theta),
            w=np.zeros(n),
        )


@dataclass
class MixedRegression:
    """Scalar regressions Ycal_i = Delta * theta_i + Wcal_i."""

    Delta: float
    Ycal: np.ndarray
    Wcal: np.ndarray | None = None


def filtered_regression_derivatives(z, phiM_int, phi_rest, w, l, tau,
                                    phiM_qdq, rest_input, tau_d=None):
    """Derivatives of the torque-regression filters (pole at -l).

    ``phiM_qdq`` is Phi_M evaluated at (q, dq) so that phiM_qdq @ theta is
    M(q) dq; ``rest_input`` is -Phi_dM(q,dq,dq) + Phi_C(q,dq,dq) + Phi_FG.
    Returns (dz, dphiM_int, dphi_rest, dw); dw is None without tau_d.
    """
    dz = l * (tau - z)
    dphiM_int = l * (phiM_qdq - phiM_int)
    dphi_rest = l * (rest_input - phi_rest)
    dw = None if tau_d is None else l * (-tau_d - w)
    return dz, dphiM_int, dphi_rest, dw


def acceleration_free_phi(phiM_int, phi_rest, l, phiM_qdq):
    """Regressor of the filtered torque regression, no accelerations used.

    Algebraically equal to low-pass filtering the full regressor at
    (q, dq, ddq) because M ddq = d/dt(M dq) - Mdot dq; the initial-condition
    transient l * Phi_M(q0, dq0) e^{-l(t-t0)} vanishes when dq0 = 0.
    """
    return l * (phiM_qdq - phiM_int) + phi_rest


def instrumental_variable_derivative(zeta, l, phi_ref_total):
    """dzeta = l (Phi(q_d, dq_d, ddq_d) - zeta); the reference acceleration
    is analytic so no derivative trick is needed."""
    return l * (phi_ref_total - zeta)


def extension_derivatives(zeta, z, phi, zeta_del, z_del, phi_del,
                          w=None, w_del=None):
    """Sliding-window derivatives: d/dt of the moving integrals of
    zeta^T z, zeta^T phi and (diagnostic) zeta^T w.

    All blocks arrive in the (n x n_theta) orientation; the products below
    contract over the joint index.  Returns (dy, dpsi, deps).
    """
    dy = zeta.T @ z - zeta_del.T @ z_del
    dpsi = zeta.T @ phi - zeta_del.T @ phi_del
    deps = None
    if w is not None:
        deps = zeta.T @ w - zeta_del.T @ w_del
    return dy, dpsi, deps


def averaging_gain(t, p, F0, t0=0.0):
    """Fdot/F with F(t) = F0 + t^p - t0^p (analytic, never integrated)."""
    if F0 <= 0.0:
        raise ValueError("F0 must be positive")
    F = F0 + t ** p - t0 ** p
    dF = p * t ** (p - 1.0)
    return dF / F


def averaging_derivatives(Yav, Psiav, Wav, y, psi, eps, gain):
    """Decaying-gain averages pulled toward the window quantities."""
    dYav = gain * (y - Yav)
    dPsiav = gain * (psi - Psiav)
    dWav = None if Wav is None else gain * (eps - Wav)
    return dYav, dPsiav, dWav


def _minor_det(A, rows, cols):
    """Determinant of A[rows][:, cols] by Laplace expansion (exact ops,
    no pivoting, no branching on values)."""
    m = len(rows)
    if m == 1:
        return A[rows[0], cols[0]]
    r0, r1 = rows[0], rows[1]
    if m == 2:
        return A[r0, cols[0]] * A[r1, cols[1]] - A[r0, cols[1]] * A[r1, cols[0]]
    if m == 3:
        r2 = rows[2]
        c0, c1, c2 = cols
        return (A[r0, c0] * (A[r1, c1] * A[r2, c2] - A[r1, c2] * A[r2, c1])
                - A[r0, c1] * (A[r1, c0] * A[r2, c2] - A[r1, c2] * A[r2, c0])
                + A[r0, c2] * (A[r1, c0] * A[r2, c1] - A[r1, c1] * A[r2, c0]))
    rest = rows[1:]
    det = 0.0
    sign = 1.0
    for j in range(m):
        sub = cols[:j] + cols[j + 1:]
        det += sign * A[r0, cols[j]] * _minor_det(A, rest, sub)
        sign = -sign
    return det


def adjugate(A):
    """Adjugate matrix, adj(A) A = det(A) I; defined for singular A too.

    Cofactor expansion up to 6x6 (exact and branch-free at the sizes the
    mixing step uses); larger matrices go through an LU det with column
    solves, falling back to LU-evaluated minors when singular.
    """
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    if A.shape != (m, m):
        raise ValueError("adjugate needs a square matrix")
    if m == 1:
        return np.ones((1, 1))
    if m <= 6:
        idx = tuple(range(m))
        adj = np.empty((m, m))
        for i in range(m):
            rows = idx[:i] + idx[i + 1:]
            for j in range(m):
                cols = idx[:j] + idx[j + 1:]
                adj[j, i] = (-1.0) ** (i + j) * _minor_det(A, rows, cols)
        return adj
    det = np.linalg.det(A)
    try:
        return det * np.linalg.solve(A, np.eye(m))
    except np.linalg.LinAlgError:
        idx = np.arange(m)
        adj = np.empty((m, m))
        for i in range(m):
            rows = idx[idx != i]
            for j in range(m):
                cols = idx[idx != j]
                adj[j, i] = (-1.0) ** (i + j) * np.linalg.det(A[np.ix_(rows, cols)])
        return adj


def cofactor_det(A):
    """Determinant by Laplace expansion; independent of any LU path."""
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    return _minor_det(A, tuple(range(m)), tuple(range(m)))


def mix(Yav, Psiav, Wav=None):
    """Collapse the averaged regression to scalar form.

    The regression Yav = Psiav theta + Wav is first normalized by
    s = 1 + ||Psiav|| and then multiplied by adj(Psiav / s), giving
    Ycal = Delta theta + Wcal with Delta = det(Psiav / s).  Normalizing the
    regressand along with the regressor is what keeps that identity exact;
    it also bounds every mixed signal even when the raw window quantities
    grow.
    """
    Yav = np.asarray(Yav, dtype=float)
    Psiav = np.asarray(Psiav, dtype=float)
    m = Psiav.shape[0]
    s = 1.0 + np.linalg.norm(Psiav, MATRIX_NORM)
    A = Psiav / s
    if m == 1:
        adj = np.ones((1, 1))
        Delta = A[0, 0]
    else:
        adj = adjugate(A)
        # first-row cofactor expansion reuses the adjugate entries
        Delta = float(A[0] @ adj[:, 0])
    Ycal = adj @ (Yav / s)
    Wcal = None if Wav is None else adj @ (np.asarray(Wav, dtype=float) / s)
    return MixedRegression(Delta=float(Delta), Ycal=Ycal, Wcal=Wcal)
