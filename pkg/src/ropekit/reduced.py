"""Reduced two-dimensional bilinear control system.

State ``(r1, r2)``: magnitudes of the relaxing/protected pairs
``(<Ix>, <Iz>)`` and ``(<2IySz>, <2IzSz>)``.  Controls ``u = (u1, u2)`` in
``[0, 1]^2``.  Time is rescaled, ``t' = pi * J * t``, so that

    d/dt' [r1, r2] = [[-xi u1^2, -u1 u2], [u1 u2, -xi u2^2]] [r1, r2].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .analytic import check_xi, eta_inept, eta_max

__all__ = [
    "ControlSchedule",
    "Trajectory",
    "generator",
    "expm2",
    "reduced_rhs",
    "propagate",
    "propagate_feedback",
    "inept_schedule",
    "constant_schedule",
    "return_function",
    "hjb_dissipation",
    "norm_dissipation",
]

DEFAULT_STEP = 1e-3


def clamp_controls(u) -> np.ndarray:
    return np.clip(np.asarray(u, dtype=float), 0.0, 1.0)


def generator(u1, u2, xi: float) -> np.ndarray:
    """Generator matrix A(u), vectorised over leading control axes: shape (..., 2, 2)."""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    A = np.empty(np.broadcast(u1, u2).shape + (2, 2))
    A[..., 0, 0] = -xi * u1 * u1
    A[..., 0, 1] = -u1 * u2
    A[..., 1, 0] = u1 * u2
    A[..., 1, 1] = -xi * u2 * u2
    return A


def expm2(A: np.ndarray) -> np.ndarray:
    """Matrix exponential of a stack of real 2x2 matrices (closed form)."""
    A = np.asarray(A, dtype=float)
    half_tr = 0.5 * (A[..., 0, 0] + A[..., 1, 1])
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    disc = half_tr * half_tr - det
    q = np.sqrt(disc.astype(complex))
    qr = np.abs(q)
    # cosh(q) and sinh(q)/q are real for real disc of either sign
    small = qr < 1e-6
    q_safe = np.where(small, 1.0, q)
    c = np.where(small, 1.0 + disc / 2.0 + disc * disc / 24.0, np.cosh(q_safe)).real
    s = np.where(small, 1.0 + disc / 6.0 + disc * disc / 120.0, np.sinh(q_safe) / q_safe).real
    scale = np.exp(half_tr)
    out = np.empty_like(A)
    out[..., 0, 0] = scale * (c + s * (A[..., 0, 0] - half_tr))
    out[..., 1, 1] = scale * (c + s * (A[..., 1, 1] - half_tr))
    out[..., 0, 1] = scale * s * A[..., 0, 1]
    out[..., 1, 0] = scale * s * A[..., 1, 0]
    return out


def reduced_rhs(state, u, xi: float) -> np.ndarray:
    """Time derivative (dr1/dt', dr2/dt') at ``state`` under controls ``u``."""
    r1, r2 = state
    u1, u2 = u
    return np.array([-xi * u1 * u1 * r1 - u1 * u2 * r2, u1 * u2 * r1 - xi * u2 * u2 * r2])


def norm_dissipation(state, u, xi: float) -> float:
    """Closed form of d(r1^2 + r2^2)/dt'."""
    r1, r2 = state
    u1, u2 = u
    return -2.0 * xi * (u1 * u1 * r1 * r1 + u2 * u2 * r2 * r2)


@dataclass
class ControlSchedule:
    """Sampled controls on a rescaled-time grid, linearly interpolated between samples."""

    times: np.ndarray
    u1: np.ndarray
    u2: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.u1 = np.asarray(self.u1, dtype=float)
        self.u2 = np.asarray(self.u2, dtype=float)
        if not (self.times.ndim == 1 and self.times.shape == self.u1.shape == self.u2.shape):
            raise ValueError("times, u1 and u2 must be 1-D arrays of equal length")
        if self.times.size < 2:
            raise ValueError("a schedule needs at least two samples")
        if self.times[0] != 0.0:
            raise ValueError("schedule must start at t' = 0")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("schedule times must be strictly increasing")
        if not (np.all(np.isfinite(self.u1)) and np.all(np.isfinite(self.u2))):
            raise ValueError("controls must be finite")
        if self.u1.min() < -1e-12 or self.u2.min() < -1e-12 or self.u1.max() > 1 + 1e-12 or self.u2.max() > 1 + 1e-12:
            raise ValueError("controls must lie in [0, 1]")
        self.u1 = np.clip(self.u1, 0.0, 1.0)
        self.u2 = np.clip(self.u2, 0.0, 1.0)

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    @property
    def grid_spacing(self) -> float:
        """Largest gap between consecutive samples."""
        return float(np.max(np.diff(self.times)))

    def __len__(self) -> int:
        return self.times.size

    def at(self, t):
        """Interpolated controls at time(s) t."""
        return np.interp(t, self.times, self.u1), np.interp(t, self.times, self.u2)

    def mirrored(self) -> "ControlSchedule":
        """Schedule with t -> T - t and the two controls swapped."""
        T = self.duration
        return ControlSchedule(T - self.times[::-1], self.u2[::-1].copy(), self.u1[::-1].copy())

    # -- columnar text format -------------------------------------------------
    def to_text(self, header: Iterable[str] = ()) -> str:
        lines = [f"# {h}" for h in header]
        lines.append("# time_unit=rescaled (t' = pi*J*t)")
        lines.append(f"# duration={self.duration:.17g}")
        lines.append("# t u1 u2")
        lines.extend(f"{t:.17g} {a:.17g} {b:.17g}" for t, a, b in zip(self.times, self.u1, self.u2))
        return "\n".join(lines) + "\n"

    def save(self, path, header: Iterable[str] = ()) -> None:
        Path(path).write_text(self.to_text(header))

    @classmethod
    def from_text(cls, text: str) -> "ControlSchedule":
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        data = np.array(rows, dtype=float)
        if data.ndim != 2 or data.shape[1] != 3:
            raise ValueError("expected three columns: t u1 u2")
        return cls(data[:, 0], data[:, 1], data[:, 2])

    @classmethod
    def load(cls, path) -> "ControlSchedule":
        return cls.from_text(Path(path).read_text())


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n, 2)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def constant_schedule(duration: float, u1: float = 1.0, u2: float = 1.0, samples: int = 2) -> ControlSchedule:
    times = np.linspace(0.0, duration, samples)
    return ControlSchedule(times, np.full(samples, u1), np.full(samples, u2))


def inept_schedule(xi: float) -> ControlSchedule:
    """Constant full controls for the duration that maximises r2."""
    xi = check_xi(xi)
    _, t_star = eta_inept(xi)
    return constant_schedule(t_star)


def _rk4(f: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_step(r1, r2, h, xi, p1, p2, m1, m2, q1, q2):
    """One RK4 step with controls (p) at the start, (m) at the midpoint, (q) at the end."""

    def f(a, b, v1, v2):
        return -xi * v1 * v1 * a - v1 * v2 * b, v1 * v2 * a - xi * v2 * v2 * b

    k1a, k1b = f(r1, r2, p1, p2)
    k2a, k2b = f(r1 + 0.5 * h * k1a, r2 + 0.5 * h * k1b, m1, m2)
    k3a, k3b = f(r1 + 0.5 * h * k2a, r2 + 0.5 * h * k2b, m1, m2)
    k4a, k4b = f(r1 + h * k3a, r2 + h * k3b, q1, q2)
    return (r1 + h / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a),
            r2 + h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b))


def propagate(state, schedule: ControlSchedule, xi: float, step: float = DEFAULT_STEP) -> Trajectory:
    """Fixed-step RK4 integration through the schedule.

    Each interval between schedule samples is split into ``ceil(gap/step)``
    equal substeps, so the kinks of the interpolated controls fall on step
    boundaries.  The returned trajectory holds the state at every schedule
    sample.
    """
    xi = check_xi(xi)
    if not step > 0:
        raise ValueError("step must be positive")
    y = np.array(state, dtype=float)
    if y.shape != (2,) or not np.all(np.isfinite(y)):
        raise ValueError("state must be two finite numbers")
    ts, u1s, u2s = schedule.times, schedule.u1, schedule.u2
    out = np.empty((ts.size, 2))
    out[0] = y
    r1, r2 = float(y[0]), float(y[1])
    for i in range(ts.size - 1):
        t0, t1 = float(ts[i]), float(ts[i + 1])
        gap = t1 - t0
        n = max(1, math.ceil(gap / step - 1e-9))
        h = gap / n
        a1, d1 = float(u1s[i]), float(u1s[i + 1] - u1s[i])
        a2, d2 = float(u2s[i]), float(u2s[i + 1] - u2s[i])
        for j in range(n):
            w0 = j / n
            wm = (j + 0.5) / n
            w1 = (j + 1) / n
            r1, r2 = _rk4_step(r1, r2, h, xi, a1 + w0 * d1, a2 + w0 * d2,
                               a1 + wm * d1, a2 + wm * d2, a1 + w1 * d1, a2 + w1 * d2)
        if not (math.isfinite(r1) and math.isfinite(r2)):
            raise FloatingPointError(f"non-finite state at t'={t1:g}")
        out[i + 1] = (r1, r2)
    return Trajectory(ts.copy(), out)


def propagate_feedback(
    state,
    law: Callable[[np.ndarray], tuple[float, float]],
    xi: float,
    duration: float,
    step: float = DEFAULT_STEP,
    record_every: int = 1,
) -> tuple[Trajectory, np.ndarray]:
    """RK4 integration under a state-feedback law; returns trajectory and applied controls."""
    xi = check_xi(xi)
    n = max(1, math.ceil(duration / step - 1e-9))
    h = duration / n

    def f(_t, r):
        return reduced_rhs(r, law(r), xi)

    y = np.array(state, dtype=float)
    times, states, controls = [0.0], [y.copy()], [np.asarray(law(y), dtype=float)]
    for j in range(n):
        y = _rk4(f, j * h, y, h)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"non-finite state at t'={(j + 1) * h:g}")
        if (j + 1) % record_every == 0 or j == n - 1:
            times.append((j + 1) * h)
            states.append(y.copy())
            controls.append(np.asarray(law(y), dtype=float))
    return Trajectory(np.array(times), np.array(states)), np.array(controls)


def return_function(state, xi: float):
    """Optimal return V = sqrt(eta^2 r1^2 + r2^2) for an unlimited horizon."""
    eta = eta_max(xi)
    r1, r2 = state
    return np.sqrt(eta * eta * np.square(r1) + np.square(r2))


def hjb_dissipation(state, u, xi: float):
    """dV/dt' along the reduced dynamics; never positive, zero at the optimal control."""
    eta = eta_max(xi)
    r1, r2 = (np.asarray(s, dtype=float) for s in state)
    u1, u2 = (np.asarray(v, dtype=float) for v in u)
    V = np.sqrt(eta * eta * r1 * r1 + r2 * r2)
    x = u1 * r1
    y = u2 * r2
    # grad V . f written as a quadratic form in (u1 r1, u2 r2); its discriminant vanishes
    num = -xi * eta * eta * x * x + (1.0 - eta * eta) * x * y - xi * y * y
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(V > 0, num / np.where(V > 0, V, 1.0), 0.0)
    return out if out.ndim else float(out)
