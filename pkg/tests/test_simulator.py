import math

import numpy as np
import pytest

from delaysync.adaptation import chen_law, proposed_law
from delaysync.analysis import lyapunov_joint
from delaysync.controllers import chen_controller, proposed_controller
from delaysync.models import DivergenceError, drive_deriv, response_deriv
from delaysync.simulator import (
    DelayHistory, SimSetup, delayed_state, error_rate, read_trace_csv, rk4_step, simulate,
    trace_columns, write_trace_csv,
)

from .conftest import LORENZ_THETA, X0, Y0

K10 = 10.0 * np.eye(3)
L01 = 0.1 * np.eye(3)


def lorenz_setup(model, **kw):
    theta = LORENZ_THETA[: model.m]
    base = dict(model=model, x0=X0, y0=Y0, theta=theta, K=K10, L=L01, h=0.001, t_final=2.0,
                decimation=10)
    base.update(kw)
    return SimSetup(**base)


# --- rk4_step ----------------------------------------------------------------


def test_rk4_zero_derivative():
    s = np.array([1.0, -2.0])
    assert np.array_equal(rk4_step(lambda t, s: np.zeros(2), 0.0, s, 0.1), s)


def test_rk4_exponential_decay():
    out = rk4_step(lambda t, s: -s, 0.0, np.array([1.0]), 0.001)
    assert abs(out[0] - math.exp(-0.001)) <= 1e-15


def test_rk4_constant_rate_is_exact():
    assert rk4_step(lambda t, s: np.ones(1), 0.0, np.zeros(1), 0.1)[0] == 0.1


def test_rk4_divergence_and_bad_step():
    with pytest.raises(DivergenceError) as info:
        rk4_step(lambda t, s: s * np.inf, 1.0, np.ones(1), 0.5)
    assert info.value.t == 1.5
    with pytest.raises(ValueError):
        rk4_step(lambda t, s: s, 0.0, np.ones(1), 0.0)


# --- delay history -------------------------------------------------------------


def test_delay_history_bookkeeping():
    h = 0.01
    hist = DelayHistory(h, [9.0, 9.0], t0=1.0)
    samples = [np.array([k, -k], dtype=float) for k in range(8)]
    for s in samples:
        hist.push(s)
    t = 1.0 + 5 * h
    assert np.array_equal(delayed_state(hist, t, 0, 0.03), samples[5])
    # replay: t0 + 5h minus 3h is sample 2
    assert np.array_equal(delayed_state(hist, t, 1, 3 * h), samples[2])
    assert np.array_equal(delayed_state(hist, t, 3, 3 * h), [9.0, 9.0])
    assert np.array_equal(delayed_state(hist, 1.0, 2, 0.02), [9.0, 9.0])
    with pytest.raises(ValueError, match="beyond"):
        delayed_state(hist, 1.0 + 10 * h, 0, 0.02)
    with pytest.raises(ValueError, match="multiple"):
        delayed_state(hist, t, 1, 0.015)


def test_delay_history_capacity_drops_oldest():
    hist = DelayHistory(1.0, [0.0], capacity=3)
    for k in range(6):
        hist.push([float(k)])
    assert hist.lookup(5.0)[0] == 5.0
    assert hist.lookup(3.0)[0] == 3.0
    with pytest.raises(ValueError, match="dropped"):
        hist.lookup(1.0)
    assert hist.lookup(-2.0)[0] == 0.0


def test_delay_history_empty_lookup_at_t0():
    hist = DelayHistory(0.1, [4.0, 2.0])
    assert np.array_equal(hist.lookup(0.0), [4.0, 2.0])


# --- setup validation ----------------------------------------------------------


def test_setup_rejects_bad_combinations(lorenz4):
    with pytest.raises(ValueError, match="delayed blocks"):
        lorenz_setup(lorenz4, method="chen", r=2)
    with pytest.raises(ValueError, match="multiple"):
        lorenz_setup(lorenz4, method="proposed-augmented", r=1, delta=0.0105)
    with pytest.raises(ValueError, match="positive definite"):
        lorenz_setup(lorenz4, K=np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(ValueError, match="symmetric"):
        lorenz_setup(lorenz4, L=np.array([[1.0, 0.5, 0], [0, 1, 0], [0, 0, 1]]))
    with pytest.raises(ValueError, match="unknown method"):
        lorenz_setup(lorenz4, method="gradient")


# --- simulate ------------------------------------------------------------------


def test_perfect_knowledge_decay(lorenz4):
    setup = lorenz_setup(lorenz4, method="proposed", K=0.1 * np.eye(3), alpha0=LORENZ_THETA,
                         adapt=False, t_final=10.0, decimation=100)
    tr = simulate(setup)
    e = tr.e
    ratio = np.linalg.norm(e, axis=1) / np.linalg.norm(e[0])
    np.testing.assert_allclose(ratio, np.exp(-0.1 * tr.t), rtol=1e-3)
    assert np.all(tr.alpha == LORENZ_THETA)


@pytest.mark.parametrize("method", ["chen", "proposed"])
def test_equilibrium_is_preserved(lorenz4, method):
    setup = lorenz_setup(lorenz4, method=method, y0=X0, alpha0=LORENZ_THETA, t_final=10.0,
                         decimation=100)
    tr = simulate(setup)
    assert np.abs(tr.e).max() <= 1e-9
    assert np.abs(tr.param_error).max() <= 1e-9


def test_constant_prehistory_disturbs_delayed_blocks(lorenz4):
    # a delayed target frozen at x0 is not an equilibrium for a controlled response
    setup = lorenz_setup(lorenz4, method="proposed-augmented", r=1, y0=X0, alpha0=LORENZ_THETA,
                         t_final=0.1, decimation=100)
    tr = simulate(setup)
    assert np.abs(tr.y[-1, 1] - X0).max() > 1e-3
    # the shared estimate is pushed off theta through the delayed block's error
    assert np.abs(tr.param_error[-1]).max() > 1e-6


def test_empty_horizon(lorenz4):
    tr = simulate(lorenz_setup(lorenz4, t_final=0.0))
    assert len(tr) == 0 and tr.diverged_at is None


def test_record_grid(lorenz4):
    tr = simulate(lorenz_setup(lorenz4, t_final=1.0, decimation=100))
    np.testing.assert_allclose(tr.t, np.arange(11) * 0.1, atol=1e-12)
    assert np.all(np.diff(tr.t) > 0)
    assert tr.y.shape == (11, 1, 3)


def test_determinism(lorenz4):
    setup = lorenz_setup(lorenz4, method="proposed-augmented", r=3, t_final=3.0)
    a, b = simulate(setup), simulate(setup)
    for name in ("t", "x", "y", "alpha", "V", "V1", "min_eig_G"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_divergence_truncates(lorenz4):
    # large L with a coarse step is far outside RK4's stability region
    setup = lorenz_setup(lorenz4, method="proposed-augmented", r=3, K=0.1 * np.eye(3),
                         L=10 * np.eye(3), t_final=20.0, decimation=1)
    tr = simulate(setup)
    assert tr.diverged_at is not None
    assert len(tr) < setup.steps + 1
    assert np.all(np.isfinite(tr.alpha))


def _reference_simulation(setup, nsteps):
    """Plain-numpy integration on a flat state via rk4_step.

    For r = 1 the delayed drive is an explicit state copy that stays at x0
    until its delay has elapsed and then follows the drive vector field.
    """
    model, n, m = setup.model, setup.model.n, setup.model.m
    nb = setup.r + 1
    d = setup.delay_steps
    dx0 = drive_deriv(model, setup.x0, setup.theta)
    s = np.concatenate([setup.x0] * nb + [setup.y0] * nb + [setup.alpha0])
    for k in range(nsteps):
        active = [True] + [k - i * d >= 0 for i in range(1, nb)]

        def deriv(t, s):
            xs = s[: nb * n].reshape(nb, n)
            ys = s[nb * n: 2 * nb * n].reshape(nb, n)
            alpha = s[2 * nb * n:]
            dxs = np.array([drive_deriv(model, xs[i], setup.theta) if active[i] else np.zeros(n)
                            for i in range(nb)])
            dys = np.empty((nb, n))
            dalpha = np.zeros(m)
            for i in range(nb):
                if setup.method == "chen":
                    u = chen_controller(model, ys[i], xs[i], alpha)
                else:
                    u = proposed_controller(model, ys[i], xs[i], alpha, setup.K)
                dys[i] = response_deriv(model, ys[i], alpha, u)
                e = ys[i] - xs[i]
                edot = dys[i] - (dxs[i] if active[i] else dx0)
                Fx = model.F(xs[i])
                dalpha += chen_law(Fx, e) if setup.method == "chen" else proposed_law(Fx, e, edot, setup.K, setup.L)
            return np.concatenate([dxs.ravel(), dys.ravel(), dalpha])

        s = rk4_step(deriv, k * setup.h, s, setup.h)
    return s[:n], s[nb * n: 2 * nb * n].reshape(nb, n), s[2 * nb * n:]


@pytest.mark.parametrize("method,r", [("chen", 0), ("proposed", 0), ("proposed-augmented", 1)])
def test_kernel_matches_reference_integration(lorenz4, method, r):
    setup = lorenz_setup(lorenz4, method=method, r=r, h=0.002, delta=0.02, t_final=0.5, decimation=250)
    tr = simulate(setup)
    x, ys, alpha = _reference_simulation(setup, setup.steps)
    np.testing.assert_allclose(tr.x[-1], x, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(tr.y[-1], ys, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(tr.alpha[-1], alpha, rtol=1e-10, atol=1e-10)


def test_delayed_block_tracks_delayed_drive(lorenz4):
    # with frozen true parameters each block decays as exp(-k t) once its delay has elapsed
    setup = lorenz_setup(lorenz4, method="proposed-augmented", r=1, delta=0.5, K=np.eye(3),
                         alpha0=LORENZ_THETA, adapt=False, t_final=3.0, decimation=100)
    tr = simulate(setup)
    lag = 5  # 0.5 s at 0.1 s per row
    e1 = tr.y[lag:, 1, :] - tr.x[:-lag]
    t = tr.t[lag:]
    ratio = np.linalg.norm(e1, axis=1) / np.linalg.norm(e1[0])
    np.testing.assert_allclose(ratio, np.exp(-(t - t[0])), rtol=1e-6)


def test_step_refinement_is_fourth_order(lorenz4):
    finals = []
    for h in (0.01, 0.005, 0.0025):
        setup = lorenz_setup(lorenz4, method="proposed-augmented", r=1, h=h, t_final=1.0,
                             decimation=int(round(1.0 / h)))
        tr = simulate(setup)
        finals.append(np.concatenate([tr.x[-1], tr.y[-1].ravel(), tr.alpha[-1]]))
    e1 = np.linalg.norm(finals[0] - finals[1])
    e2 = np.linalg.norm(finals[1] - finals[2])
    assert 8.0 <= e1 / e2 <= 32.0


def test_joint_lyapunov_non_increasing(lorenz3):
    tr = simulate(lorenz_setup(lorenz3, method="proposed", t_final=50.0, decimation=10))
    V = np.array([lyapunov_joint(e, d) for e, d in zip(tr.e, tr.param_error)])
    np.testing.assert_allclose(V, tr.V1, rtol=1e-12)
    assert np.all(np.diff(V) <= 1e-6)


def test_error_rate_matches_closed_loop(lorenz4, rng):
    setup = lorenz_setup(lorenz4, method="proposed")
    for _ in range(20):
        x, y = rng.normal(scale=5, size=(2, 3))
        alpha = rng.normal(size=4)
        expected = -setup.K @ (y - x) + lorenz4.F(x) @ (alpha - LORENZ_THETA)
        np.testing.assert_allclose(error_rate(setup, x, y, alpha), expected, atol=1e-10)


def test_min_eig_column(lorenz4, lorenz3):
    tr4 = simulate(lorenz_setup(lorenz4, method="proposed", t_final=5.0))
    assert np.all(np.abs(tr4.min_eig_G) <= 1e-9)
    tr_aug = simulate(lorenz_setup(lorenz4, method="proposed-augmented", r=1, t_final=5.0))
    assert np.median(tr_aug.min_eig_G[tr_aug.t > 0.1]) > 1e-6


# --- trace files -----------------------------------------------------------------


def test_trace_columns():
    assert trace_columns(3, 4, 0) == ["t", "x1", "x2", "x3", "y1", "y2", "y3", "alpha1", "alpha2",
                                       "alpha3", "alpha4", "V", "V1", "min_eig_G"]
    assert trace_columns(2, 1, 1)[5:7] == ["y1_d1", "y2_d1"]


def test_trace_csv_round_trip(lorenz4, tmp_path):
    tr = simulate(lorenz_setup(lorenz4, method="proposed-augmented", r=2, t_final=1.0))
    path = tmp_path / "trace.csv"
    write_trace_csv(tr, path)
    back = read_trace_csv(path, LORENZ_THETA, method="proposed-augmented", r=2)
    for name in ("t", "x", "y", "alpha", "V", "V1", "min_eig_G"):
        assert np.array_equal(getattr(back, name), getattr(tr, name))
    first_data = path.read_text().splitlines()[1].split(",")
    assert len(first_data) == 1 + 3 + 9 + 4 + 3


def test_trace_csv_divergence_marker(lorenz4, tmp_path):
    setup = lorenz_setup(lorenz4, method="proposed-augmented", r=3, K=0.1 * np.eye(3),
                         L=10 * np.eye(3), t_final=20.0, decimation=1)
    tr = simulate(setup)
    path = tmp_path / "div.csv"
    write_trace_csv(tr, path)
    assert path.read_text().splitlines()[-1].startswith("# diverged t=")
    back = read_trace_csv(path, LORENZ_THETA)
    assert back.diverged_at == tr.diverged_at
    assert len(back) == len(tr)


def test_trace_csv_empty(lorenz4, tmp_path):
    tr = simulate(lorenz_setup(lorenz4, t_final=0.0))
    path = tmp_path / "empty.csv"
    write_trace_csv(tr, path)
    assert path.read_text().strip() == ",".join(trace_columns(3, 4, 0))
    assert len(read_trace_csv(path, LORENZ_THETA)) == 0
