import math

import numpy as np
import pytest

from ropekit import analytic as an
from ropekit import oracle as o
from ropekit.reduced import ControlSchedule, propagate
from ropekit.synthesis import synthesize


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        xi = rng.uniform(0, 3)
        n = int(rng.integers(10, 40))
        c = o.DiscretizedControls(rng.uniform(0.2, 2.5), rng.uniform(0.05, 0.95, (n, 2)))
        g = o.adjoint_gradient(c, xi)
        d = rng.normal(size=c.u.shape)
        h = 1e-6
        up = o.forward(o.DiscretizedControls(c.duration, c.u + h * d), xi)[-1, 1]
        dn = o.forward(o.DiscretizedControls(c.duration, c.u - h * d), xi)[-1, 1]
        fd = (up - dn) / (2 * h)
        worst = max(worst, abs(fd - np.sum(g * d)) / max(abs(fd), 1e-8))
    assert worst < 1e-6


def test_forward_agrees_with_reduced_propagator():
    rng = np.random.default_rng(1)
    c = o.DiscretizedControls(1.2, rng.uniform(0, 1, (60, 2)))
    # piecewise-constant controls expressed as a schedule with doubled knots
    t = np.repeat(np.arange(61) * c.step, 2)[1:-1]
    t[1::2] -= 1e-12
    u = np.repeat(c.u, 2, axis=0)
    sched = ControlSchedule(np.concatenate([[0], t[1:]]), u[:, 0], u[:, 1])
    assert propagate((1, 0), sched, 0.8, step=1e-3).final[1] == pytest.approx(o.forward(c, 0.8)[-1, 1], abs=1e-8)


def test_lossless_constant_control_is_stationary():
    c = o.DiscretizedControls.constant(math.pi / 2, 50)
    g = o.adjoint_gradient(c, 0.0)
    assert np.max(np.abs(g)) < 1e-12
    assert o.forward(c, 0.0)[-1, 1] == pytest.approx(1.0, abs=1e-14)


def test_closed_form_controls_are_nearly_stationary():
    c = o.DiscretizedControls.from_schedule(synthesize(0.263, 1.0).schedule, 400)
    pg = o.projected_gradient_norm(c.u, o.adjoint_gradient(c, 1.0))
    assert pg < 1e-5


@pytest.mark.parametrize("xi,T", [(1.0, 0.263), (0.5, 0.6), (2.0, 0.3)])
def test_optimize_reaches_closed_form(xi, T):
    res = o.optimize(xi, T, N=100)
    assert res.converged and res.pg_norm <= o.PG_TOLERANCE
    assert abs(res.efficiency - an.eta_optimal(T, xi)) < 5e-4
    assert res.efficiency <= an.eta_optimal(T, xi) + 1e-4
    assert [s.label for s in res.starts] == ["constant", "random0", "random1", "analytic"]
    assert res.efficiency == pytest.approx(o.forward(res.controls, xi)[-1, 1], abs=1e-14)
    assert "global" in res.note


def test_three_phase_structure_of_cold_start():
    xi, T, N = 1.0, 0.263, 100
    res = o.optimize(xi, T, N=N)
    cold = max((s for s in res.starts if s.label != "analytic"), key=lambda s: s.efficiency)
    assert abs(cold.efficiency - res.efficiency) < 1e-6
    u = cold.controls.u
    g = an.tau_of_time(T, xi)
    h = cold.controls.step
    below1 = np.nonzero(u[:, 0] < 1 - 1e-3)[0]
    below2 = np.nonzero(u[:, 1] < 1 - 1e-3)[0]
    assert abs((below1.max() + 1) * h - g.tau_rescaled) <= 2 * h
    assert abs(cold.controls.duration - below2.min() * h - g.tau_rescaled) <= 2 * h
    # middle phase at the corner
    assert np.all(u[below1.max() + 2:below2.min() - 1] > 1 - 1e-3)
    # mirror symmetry u1(t) = u2(T - t)
    assert np.max(np.abs(u[:, 0] - u[::-1, 1])) <= 0.02


def test_critical_regime_gives_constant_controls():
    xi = 1.0
    T = 0.9 * an.critical_time(xi)
    res = o.optimize(xi, T, N=60)
    assert np.all(res.controls.u == 1.0)
    assert res.efficiency == pytest.approx(an.eta_constant(T, xi), abs=1e-12)


def test_reproducible_and_worker_independent():
    a = o.optimize(0.5, 0.6, N=60, seed=9)
    b = o.optimize(0.5, 0.6, N=60, seed=9, workers=3)
    np.testing.assert_array_equal(a.controls.u, b.controls.u)
    assert a.efficiency == b.efficiency and a.seed == 9


def test_non_convergence_signal():
    with pytest.raises(o.NonConvergence) as err:
        o.optimize(1.0, 3.0, N=200, max_iter=1)
    assert err.value.result is not None
    res = o.optimize(1.0, 3.0, N=200, max_iter=1, strict=False)
    assert not res.converged


def test_argument_validation():
    with pytest.raises(ValueError):
        o.optimize(1.0, 0.3, N=20)
    with pytest.raises(ValueError):
        o.optimize(1.0, 0.3, restarts=3)
    with pytest.raises(ValueError):
        o.DiscretizedControls(1.0, np.ones((5, 2)))
    with pytest.raises(ValueError):
        o.dp_value_grid(1.0, 1.0, resolution=10)


def test_schedule_round_trip():
    t = (np.arange(200) + 0.5) / 200
    c = o.DiscretizedControls(1.0, np.column_stack([0.5 + 0.3 * np.sin(2 * np.pi * t), 0.6 + 0.2 * t]))
    back = o.DiscretizedControls.from_schedule(c.to_schedule(), 200)
    # smooth controls: interior cell averages differ by O(h^2); the end cells
    # hold the endpoint value for half a cell, an O(h) difference
    err = np.abs(back.u - c.u)
    h, curvature = 1 / 200, 0.3 * (2 * np.pi) ** 2
    assert np.max(err[1:-1]) <= 1.05 * h * h * curvature / 8
    assert np.max(err) < 2e-3
    np.testing.assert_array_equal(c.to_schedule().u1[1:-1], c.u[:, 0])


@pytest.fixture(scope="module")
def dp_long():
    return o.dp_value_grid(1.0, 20.0)


def test_dp_long_horizon_value(dp_long):
    assert abs(dp_long.value(1.0, 0.0) - an.eta_max(1.0)) < 2e-3
    assert dp_long.value(0.0, 0.37) == pytest.approx(0.37, abs=1e-12)


def test_dp_homogeneous_and_monotone(dp_long):
    assert dp_long.value(2.0, 1.0) == pytest.approx(2 * dp_long.value(1.0, 0.5), rel=1e-12)
    _, _, V = dp_long.table(32)
    assert np.all(np.diff(V, axis=0) >= -1e-12)
    assert np.all(np.diff(V, axis=1) >= -1e-12)
    # the value can only shrink as the remaining time shrinks
    assert dp_long.value(1.0, 0.0, 0.0) >= dp_long.value(1.0, 0.0, 15.0) - 1e-12


def test_dp_matches_closed_form_finite_horizon():
    xi, T = 1.0, 0.263
    grid = o.dp_value_grid(xi, math.pi * T)
    assert abs(grid.value(1.0, 0.0) - an.eta_optimal(T, xi)) < 2e-3
