"""State layout, integrator, full runs, guards and backend agreement."""
import math
import threading

import numpy as np
import pytest

import ivdrem
from ivdrem import backend as bk
from ivdrem.control import EstimatorState
from ivdrem.sim import (ConfigError, DelaySet, DivergenceError, StateLayout,
                        _initial_state, _phi_from_state, _run_python,
                        energy_drift, rhs, rk4_step)


# ---------------------------------------------------------------- layout

def test_layout_lengths():
    assert StateLayout(2, 5, "proposed").dim == 137
    assert StateLayout(2, 5, "none").dim == 132
    assert StateLayout(2, 5, "baseline").dim == 167


def test_layout_round_trip():
    rng = np.random.default_rng(1)
    layout = StateLayout(2, 5, "baseline")
    members = {name: rng.normal(size=shape)
               for name, (_, shape) in layout.slices.items()}
    x = layout.pack(**members)
    back = layout.unpack(x)
    for name, value in members.items():
        np.testing.assert_array_equal(back[name], value)


def test_layout_matches_compiled_offsets():
    if not bk.HAVE_COMPILED:
        pytest.skip("extension not built")
    from ivdrem import _fastcore
    offs = _fastcore.layout_offsets()
    for law in ("proposed", "baseline", "none"):
        layout = StateLayout(2, 5, law)
        for name, (sl, _) in layout.slices.items():
            if name == "theta_hat":
                expected = offs["base"] + (30 if law == "baseline" else 0)
                assert sl.start == expected
            else:
                assert sl.start == offs[name], name


# ------------------------------------------------------------------- rhs

def _fresh_loop(law="proposed", disturbance=True):
    scen = ivdrem.paper2dof()
    if not disturbance:
        scen.disturbance = ivdrem.DisturbanceProfile.off(2)
    layout = StateLayout(2, 5, law)
    x = _initial_state(scen, layout)
    delays = DelaySet(2, 5, 1e-3, scen.gains.T, 0.0)
    V = layout.unpack(x)
    delays.append(V["z"], _phi_from_state(scen, V), V["zeta"], V["w"])
    snap = EstimatorState(theta_hat=scen.theta_hat0)
    return scen, layout, x, delays, snap


def test_rhs_finite_and_deterministic():
    scen, layout, x, delays, snap = _fresh_loop()
    d1 = rhs(0.0, x, scen, delays, law="proposed", layout=layout, snapshot=snap)
    d2 = rhs(0.0, x, scen, delays, law="proposed", layout=layout, snapshot=snap)
    assert np.all(np.isfinite(d1))
    np.testing.assert_array_equal(d1, d2)  # bit-exact purity


def test_rhs_equilibrium_accelerations():
    # perfect initialization with the true parameters: the plant follows the
    # reference acceleration exactly and the error dynamics stay at zero
    scen, layout, x, delays, snap = _fresh_loop(law="none", disturbance=False)
    qd0, dqd0, ddqd0 = scen.reference.eval(0.0)
    scen.initial = ivdrem.JointState(q=qd0, dq=dqd0)
    scen.theta_hat0 = scen.params.theta.copy()
    x = _initial_state(scen, layout)
    d = layout.unpack(rhs(0.0, x, scen, delays, law="none", layout=layout,
                          snapshot=snap))
    np.testing.assert_allclose(d["dq"], ddqd0, atol=1e-12)
    np.testing.assert_allclose(d["xf"], np.zeros(2), atol=1e-12)


def test_initial_torque_hand_value(run_proposed_100):
    # zero filter states and theta_hat0 = 0 give tau(t0) = (K + dmu mu0) r0
    trace, _, _ = run_proposed_100
    r0 = np.array([math.pi, 0.3 * math.pi])  # de0 + alpha e0 for the preset
    expected = (2.0 + 0.8 * 15.0) * r0
    np.testing.assert_allclose(trace[0].tau, expected, rtol=1e-12)


# ------------------------------------------------------------------- rk4

def test_rk4_single_step_filter():
    # one step of dz = l(1-z) at l = 50, h = 1e-3; the classical scheme's
    # one-step truncation for lh = 0.05 is ~2.6e-9
    l, h = 50.0, 1e-3
    z = rk4_step(lambda t, y: l * (1.0 - y), 0.0, np.array([0.0]), h)
    assert abs(z[0] - (1.0 - math.exp(-l * h))) <= 5e-9


def test_rk4_order_four_on_scalar_filter():
    l = 2.0

    def final_err(h):
        y = np.array([0.0])
        f = lambda t, s: l * (1.0 - s)
        for k in range(int(round(1.0 / h))):
            y = rk4_step(f, k * h, y, h)
        return abs(y[0] - (1.0 - math.exp(-l)))

    e1, e2, e3 = final_err(2e-2), final_err(1e-2), final_err(5e-3)
    assert 12.0 <= e1 / e2 <= 20.0
    assert 12.0 <= e2 / e3 <= 20.0


def test_rk4_zero_rhs_identity():
    y = np.array([1.0, -2.0, 3.5])
    out = rk4_step(lambda t, s: np.zeros_like(s), 0.0, y, 0.1)
    np.testing.assert_array_equal(out, y)


def test_energy_conservation():
    scen = ivdrem.paper2dof()
    drift = energy_drift(scen.model, scen.params, np.array([0.3, -0.2]),
                         np.array([1.0, 0.5]), 10.0, 1e-3)
    assert drift <= 1e-6


def test_full_system_step_size_convergence():
    # halving h from 4e-3 to 1e-3 must shrink the final-state difference by
    # at least 8x (order >= 3 with the delayed terms in play)
    scen = ivdrem.paper2dof()
    finals = {}
    for h in (4e-3, 2e-3, 1e-3):
        cfg = ivdrem.SimConfig(t_end=24.0, h=h, law="proposed",
                               decimation=int(round(24.0 / h)))
        out = bk.run_compiled(scen, cfg) if bk.HAVE_COMPILED \
            else _run_python(scen, cfg)
        finals[h] = out.states[-1]
    d1 = np.linalg.norm(finals[4e-3] - finals[2e-3])
    d2 = np.linalg.norm(finals[2e-3] - finals[1e-3])
    assert d1 / d2 >= 8.0


# ------------------------------------------------------------------- run

def test_run_deterministic():
    scen = ivdrem.paper2dof()
    cfg = ivdrem.SimConfig(t_end=3.0, decimation=100, law="proposed")
    tr1, m1 = ivdrem.run(scen, cfg)
    tr2, m2 = ivdrem.run(scen, cfg)
    for a, b in zip(tr1, tr2):
        np.testing.assert_array_equal(a.q, b.q)
        np.testing.assert_array_equal(a.theta_hat, b.theta_hat)
        assert a.Delta == b.Delta and a.V == b.V
    assert m1.to_dict() == m2.to_dict()


def test_trace_record_exact_identities():
    scen = ivdrem.paper2dof()
    cfg = ivdrem.SimConfig(t_end=2.0, decimation=100, law="proposed")
    trace, _ = ivdrem.run(scen, cfg)
    theta = scen.params.theta
    for rec in trace:
        np.testing.assert_array_equal(rec.tau_d_err, rec.tau_d - rec.tau_d_hat)
        np.testing.assert_array_equal(rec.theta_err, theta - rec.theta_hat)
        assert np.all(np.isfinite(rec.q)) and np.all(np.isfinite(rec.tau))


def test_metrics_all_finite(run_proposed_100):
    _, metrics, _ = run_proposed_100
    for name, value in metrics.to_dict().items():
        if isinstance(value, str):
            continue
        arr = np.asarray(value, dtype=float)
        assert np.all(np.isfinite(arr)), name


def test_divergence_guard_compiled():
    if not bk.HAVE_COMPILED:
        pytest.skip("extension not built")
    scen = ivdrem.paper2dof()
    scen.gains.l = 1e5  # way past the explicit stability limit
    cfg = ivdrem.SimConfig(t_end=1.0, decimation=10, law="proposed")
    with pytest.raises(DivergenceError):
        ivdrem.run(scen, cfg, backend="compiled")


def test_divergence_guard_python():
    scen = ivdrem.paper2dof()
    scen.gains.l = 1e5
    cfg = ivdrem.SimConfig(t_end=0.05, decimation=10, law="proposed")
    with pytest.raises(DivergenceError):
        ivdrem.run(scen, cfg, backend="python")


def test_backend_equivalence():
    if not bk.HAVE_COMPILED:
        pytest.skip("extension not built")
    scen = ivdrem.paper2dof()
    scen.gains.T = 0.5  # delays active within a short horizon
    for law in ("proposed", "baseline", "none"):
        cfg = ivdrem.SimConfig(t_end=1.5, decimation=100, law=law)
        out_c = bk.run_compiled(scen, cfg)
        out_p = _run_python(scen, cfg)
        gap = np.max(np.abs(out_c.states - out_p.states)
                     / (1.0 + np.abs(out_c.states)))
        assert gap <= 1e-9, law
        for key in ("cum_delta_sq", "eq19_sup_final", "eq20_sup", "sup_tau_d"):
            a = float(np.asarray(out_c.acc[key]))
            b = float(np.asarray(out_p.acc[key]))
            assert abs(a - b) <= 1e-9 * (1.0 + abs(a)), (law, key)


def test_parallel_runs_are_independent():
    scen_a = ivdrem.paper2dof()
    scen_b = ivdrem.paper2dof()
    scen_b.disturbance = ivdrem.DisturbanceProfile.off(2)
    cfg = ivdrem.SimConfig(t_end=2.0, decimation=100, law="proposed")
    serial = [ivdrem.run(scen_a, cfg), ivdrem.run(scen_b, cfg)]
    results = [None, None]

    def work(i, scen):
        results[i] = ivdrem.run(scen, cfg)

    threads = [threading.Thread(target=work, args=(0, scen_a)),
               threading.Thread(target=work, args=(1, scen_b))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for (tr_s, _), (tr_t, _) in zip(serial, results):
        np.testing.assert_array_equal(tr_s[-1].theta_hat, tr_t[-1].theta_hat)
        np.testing.assert_array_equal(tr_s[-1].q, tr_t[-1].q)


# ------------------------------------------------------------ validation

def test_scenario_dimension_validation():
    scen = ivdrem.paper2dof()
    scen.theta_hat0 = np.zeros(4)
    with pytest.raises(ConfigError):
        scen.validate()


def test_config_validation():
    scen = ivdrem.paper2dof()
    with pytest.raises(ConfigError, match="integer multiple"):
        ivdrem.SimConfig(h=3e-3).validate(scen.gains)
    with pytest.raises(ConfigError):
        ivdrem.SimConfig(t_end=-1.0).validate(scen.gains)
    with pytest.raises(ConfigError):
        ivdrem.SimConfig(decimation=0).validate(scen.gains)
    with pytest.raises(ConfigError):
        ivdrem.SimConfig(law="magic").validate(scen.gains)


def test_unknown_backend_rejected():
    scen = ivdrem.paper2dof()
    cfg = ivdrem.SimConfig(t_end=1.0, decimation=10)
    with pytest.raises(ValueError):
        ivdrem.run(scen, cfg, backend="gpu")
