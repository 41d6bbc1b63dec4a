"""High-gain unknown-input observer.

The observer filters the auxiliary state x = M(q) r together with matched
regressor blocks so the control law can cancel the external torque without
ever differentiating measurements.  All filter states start at zero and all
matrix states use the (n x n_theta) orientation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ObserverState:
    """Filter bank state: x_f, Phi_f, Phi_Mf and the filtered input u_f."""

    xf: np.ndarray      # (n,)
    Phif: np.ndarray    # (n, n_theta)
    PhiMf: np.ndarray   # (n, n_theta)
    uf: np.ndarray      # (n,)

    @classmethod
    def zeros(cls, n, n_theta):
        return cls(np.zeros(n), np.zeros((n, n_theta)),
                   np.zeros((n, n_theta)), np.zeros(n))


def auxiliary_state(model, params, q, r):
    """x = M(q) r."""
    return model.inertia(params, q) @ r


def observer_derivatives(state, mu, dmu, x, reg_track, reg_r, tau):
    """Time derivatives of the observer filters.

    ``reg_track`` is the regressor set at (q, dq, v, dv) and ``reg_r`` the
    set at (q, dq, r, r), so reg_r carries Phi_M(q, r), Phi_C(q, dq, r) and
    Phi_dM(q, dq, r).  The filtered input integrates u = -tau.
    """
    dxf = (mu + dmu / mu) * (x - state.xf)
    dPhif = mu * (reg_track.total - reg_r.phiC + reg_r.phidM - state.Phif)
    dPhiMf = mu * (reg_r.phiM - state.PhiMf)
    duf = mu * (-tau - state.uf)
    return ObserverState(dxf, dPhif, dPhiMf, duf)


def pi_regressor(state, mu, phi_total, phiM_r):
    """Observer-derived regressor mu (Phi_M(q,r) - Phi_Mf) + Phi - Phi_f."""
    return mu * (phiM_r - state.PhiMf) + phi_total - state.Phif


def disturbance_estimate(state, mu, phiM_r, theta_hat):
    """Reconstructed external torque; reporting only, never fed back.

    tau_d_hat = -[mu (Phi_M(q,r) - Phi_Mf) - Phi_f] theta_hat + u_f.
    """
    return -(mu * (phiM_r - state.PhiMf) - state.Phif) @ theta_hat + state.uf
