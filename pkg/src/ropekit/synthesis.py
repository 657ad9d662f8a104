"""Optimal control schedules for the reduced system.

Finite horizon: three phases.  During phase I (``0 <= t' <= tau'``) ``u2 = 1``
and ``u1`` rises to 1; phase II holds ``u1 = u2 = 1``; phase III is the
time-mirror of phase I acting on ``u2``.

Phase I is rebuilt from the adjoint ratio ``a = lambda2 / lambda1``.  With
``u2 = 1`` the costate equations give

    da/dt' = u1 (1 + a^2) + xi a (1 - u1^2),   u1 = a (1 - kappa) / (2 xi),

and the state ratio ``b = r2 / r1`` equals ``kappa * a``.  The switch at
``tau`` fixes ``a(tau) = 2 xi / (1 - kappa(tau))`` exactly (there ``u1 = 1``),
so the equation is integrated backward from ``tau`` to 0; ``u1(0) = a(0)/(2 xi)``
then follows without any limit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from . import analytic
from .analytic import InepRegime, SwitchingGeometry, check_xi
from .reduced import ControlSchedule, Trajectory, constant_schedule, propagate, DEFAULT_STEP

__all__ = [
    "RatioCoordinates",
    "HamiltonianNotPositive",
    "SynthesisResult",
    "policy_from_ratios",
    "synthesize",
    "synthesize_rope",
    "phase_one",
    "feedback_controls",
    "verify_symmetry",
    "propagate_adjoint",
]

SAMPLES_PER_PHASE = 2000


class HamiltonianNotPositive(ValueError):
    """(a - b)^2 <= 4 xi^2 a b: the pair lies outside the finite-time regime."""


@dataclass(frozen=True)
class RatioCoordinates:
    a: float  # lambda2 / lambda1
    b: float  # r2 / r1


def policy_from_ratios(coords: RatioCoordinates, xi: float) -> tuple[float, float]:
    """Maximiser of the factored Hamiltonian over the control box."""
    xi = check_xi(xi, positive=True)
    a, b = float(coords.a), float(coords.b)
    if a < 0 or b < 0:
        raise ValueError("ratio coordinates must be non-negative")
    d = a - b
    if d * d <= 4.0 * xi * xi * a * b:
        raise HamiltonianNotPositive(f"(a-b)^2 = {d * d:.6g} <= 4 xi^2 ab = {4 * xi * xi * a * b:.6g}")
    if d < 2.0 * xi:
        return min(1.0, max(0.0, d / (2.0 * xi))), 1.0
    # a*b == 0 makes the Case III ratio infinite, i.e. Case II
    if a * b == 0.0 or d / (a * b) >= 2.0 * xi:
        return 1.0, 1.0
    return 1.0, min(1.0, max(0.0, d / (2.0 * xi * a * b)))


def _kappa_rescaled(t, xi: float) -> np.ndarray:
    s = math.hypot(1.0, xi)
    return 1.0 + 2.0 * xi * xi - 2.0 * xi * s / np.tanh(s * np.asarray(t, dtype=float) + 2.0 * math.asinh(xi))


def _clustered(length: float, n: int) -> np.ndarray:
    """n+1 nodes on [0, length], dense near both ends."""
    s = np.linspace(0.0, 1.0, n + 1)
    t = 0.5 * length * (1.0 - np.cos(np.pi * s))
    t[0], t[-1] = 0.0, length
    return t


@dataclass
class PhaseOne:
    times: np.ndarray  # rescaled, 0 .. tau'
    a: np.ndarray
    u1: np.ndarray
    kappa: np.ndarray


def phase_one(geom: SwitchingGeometry, samples: int = SAMPLES_PER_PHASE) -> PhaseOne:
    """Phase-I control u1(t') from backward integration of the adjoint ratio."""
    xi = geom.xi
    tau_r = geom.tau_rescaled
    times = _clustered(tau_r, samples)
    k_tau = float(_kappa_rescaled(tau_r, xi))
    a_tau = 2.0 * xi / (1.0 - k_tau)

    def rhs(t, a):
        u = a * (1.0 - _kappa_rescaled(t, xi)) / (2.0 * xi)
        return u * (1.0 + a * a) + xi * a * (1.0 - u * u)

    sol = solve_ivp(rhs, (tau_r, 0.0), [a_tau], method="DOP853", t_eval=times[::-1], rtol=1e-12, atol=1e-14)
    if not sol.success:
        raise RuntimeError(f"phase-I integration failed: {sol.message}")
    a = sol.y[0][::-1]
    kap = _kappa_rescaled(times, xi)
    u1 = np.clip(a * (1.0 - kap) / (2.0 * xi), 0.0, 1.0)
    u1[-1] = 1.0
    return PhaseOne(times=times, a=a, u1=u1, kappa=kap)


@dataclass
class SynthesisResult:
    schedule: ControlSchedule
    regime: str  # "inept", "rope" or "lossless"
    xi: float
    geometry: SwitchingGeometry | None = None
    phase_one: PhaseOne | None = None

    @property
    def predicted_efficiency(self) -> float:
        if self.geometry is not None:
            return self.geometry.eta_T
        return analytic.eta_optimal(self.schedule.duration / math.pi, self.xi)


def synthesize(T: float, xi: float, samples_per_phase: int = SAMPLES_PER_PHASE) -> SynthesisResult:
    """Optimal schedule for horizon T (units 1/J)."""
    xi = check_xi(xi)
    if not T > 0:
        raise ValueError("horizon T must be positive")
    if xi == 0.0:
        duration = math.pi * min(T, 0.5)
        return SynthesisResult(constant_schedule(duration, samples=samples_per_phase + 1), "lossless", xi)
    try:
        geom = analytic.tau_of_time(T, xi)
    except InepRegime:
        return SynthesisResult(constant_schedule(math.pi * T, samples=samples_per_phase + 1), "inept", xi)

    p1 = phase_one(geom, samples_per_phase)
    T_r, tau_r = geom.T_rescaled, geom.tau_rescaled
    mid_len = T_r - 2.0 * tau_r
    n_mid = max(16, min(4 * samples_per_phase, math.ceil(samples_per_phase * mid_len / max(tau_r, 1e-12))))
    mid = np.linspace(tau_r, T_r - tau_r, n_mid + 1)[1:-1] if mid_len > 0 else np.empty(0)

    t_first = p1.times
    t_last = (T_r - p1.times)[::-1]
    times = np.concatenate([t_first, mid, t_last])
    u1 = np.concatenate([p1.u1, np.ones(mid.size), np.ones(t_last.size)])
    u2 = np.concatenate([np.ones(t_first.size), np.ones(mid.size), p1.u1[::-1]])
    if mid_len <= 0 or t_last[0] <= t_first[-1]:
        # degenerate (tau numerically T/2): drop the duplicated midpoint
        keep = np.concatenate([[True], np.diff(times) > 0])
        times, u1, u2 = times[keep], u1[keep], u2[keep]
    times[-1] = T_r
    schedule = ControlSchedule(times, u1, u2)
    return SynthesisResult(schedule, "rope", xi, geometry=geom, phase_one=p1)


def synthesize_rope(T: float, xi: float, samples_per_phase: int = SAMPLES_PER_PHASE) -> ControlSchedule:
    return synthesize(T, xi, samples_per_phase).schedule


def feedback_controls(state, xi: float) -> tuple[float, float]:
    """Unlimited-horizon optimal feedback: keep u2 r2 = eta u1 r1 with max(u1, u2) = 1."""
    eta = analytic.eta_max(xi)
    r1, r2 = float(state[0]), float(state[1])
    if r1 + r2 <= 0:
        raise ValueError("feedback law needs r1 + r2 > 0")
    if r2 <= eta * r1:
        return min(1.0, r2 / (eta * r1)), 1.0
    return 1.0, min(1.0, eta * r1 / r2)


def verify_symmetry(schedule: ControlSchedule) -> float:
    """max |u1(t) - u2(T - t)| over the schedule grid and its mirror."""
    T = schedule.duration
    t = np.union1d(schedule.times, T - schedule.times)
    t = t[(t >= 0) & (t <= T)]
    u1 = np.interp(t, schedule.times, schedule.u1)
    u2m = np.interp(T - t, schedule.times, schedule.u2)
    return float(np.max(np.abs(u1 - u2m)))


def propagate_adjoint(schedule: ControlSchedule, xi: float, step: float = DEFAULT_STEP) -> Trajectory:
    """Costate (lambda1, lambda2) on the schedule grid, from (0, 1) at t' = T.

    Backward in time the costate obeys the state equation with the controls
    swapped, so this is a forward propagation of the mirrored schedule.
    """
    back = propagate((1.0, 0.0), schedule.mirrored(), xi, step)
    T = schedule.duration
    times = T - back.times[::-1]
    lam = back.states[::-1][:, ::-1]
    return Trajectory(times, lam)
