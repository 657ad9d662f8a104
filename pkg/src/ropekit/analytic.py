"""Closed-form efficiencies and finite-time switching geometry.

Times passed to and returned from this module are physical times in units
of 1/J (so ``T = 0.263`` means 0.263/J).  Internally everything is converted
to rescaled time ``t' = pi * J * t``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.optimize import brentq

__all__ = [
    "InepRegime",
    "SwitchingGeometry",
    "check_xi",
    "eta_max",
    "eta_inept",
    "eta_constant",
    "inphase_efficiencies",
    "gain_ratio",
    "inphase_gain",
    "kappa",
    "kappa_rate",
    "angles",
    "time_of_tau",
    "tau_of_time",
    "eta_finite",
    "eta_optimal",
    "critical_time",
]


class InepRegime(ValueError):
    """Horizon too short for switching: constant full controls are optimal."""

    def __init__(self, T: float, xi: float, T_c: float):
        super().__init__(
            f"T={T:.6g}/J does not exceed the critical time {T_c:.6g}/J for xi={xi:g}; "
            "use constant controls u1=u2=1"
        )
        self.T = T
        self.xi = xi
        self.critical_time = T_c


def check_xi(xi: float, *, positive: bool = False) -> float:
    """Validate a relative relaxation rate k/J and return it as float."""
    xi = float(xi)
    if not math.isfinite(xi) or xi < 0.0:
        raise ValueError(f"relative relaxation rate must be finite and >= 0, got {xi!r}")
    if positive and xi == 0.0:
        raise ValueError("xi = 0 has no switching geometry (lossless case)")
    return xi


def _arccot(x: float) -> float:
    # principal branch on [0, inf): arccot(0) = pi/2
    return math.atan2(1.0, x)


def eta_max(xi: float) -> float:
    """Unconstrained-time optimum sqrt(1 + xi^2) - xi."""
    xi = check_xi(xi)
    # same value, written without the cancellation at large xi
    return 1.0 / (math.hypot(1.0, xi) + xi)


def eta_inept(xi: float) -> tuple[float, float]:
    """Best constant-control efficiency and the rescaled time at which it occurs."""
    xi = check_xi(xi)
    t_star = _arccot(xi)
    return math.exp(-xi * t_star) * math.sin(t_star), t_star


def eta_constant(T: float, xi: float) -> float:
    """r2(T) under u1 = u2 = 1 for the whole horizon T (units 1/J)."""
    xi = check_xi(xi)
    t = math.pi * T
    return math.exp(-xi * t) * math.sin(t)


def inphase_efficiencies(xi: float) -> tuple[float, float]:
    """(eta^2, eta_INEPT^2) for the in-phase to in-phase transfer."""
    eta = eta_max(xi)
    inept, _ = eta_inept(xi)
    return eta * eta, inept * inept


def gain_ratio(xi: float) -> float:
    return eta_max(xi) / eta_inept(xi)[0]


def inphase_gain(xi: float) -> float:
    eta_in, eta_ref = inphase_efficiencies(xi)
    return eta_in / eta_ref


def critical_time(xi: float) -> float:
    """Horizon (units 1/J) below which the optimum is plain constant controls."""
    xi = check_xi(xi)
    return _arccot(2.0 * xi) / math.pi


def kappa(t: float, xi: float) -> float:
    """Phase-I ratio b/a at physical time t (units 1/J)."""
    xi = check_xi(xi, positive=True)
    if t < 0:
        raise ValueError("kappa is defined for t >= 0")
    s = math.hypot(1.0, xi)
    arg = math.pi * s * t + 2.0 * math.asinh(xi)
    return 1.0 + 2.0 * xi * xi - 2.0 * xi * s / math.tanh(arg)


def kappa_rate(k: float, xi: float) -> float:
    """d(kappa)/dt' in rescaled time, as satisfied by the closed form of `kappa`.

    Note the sign: this is (k - 1)^2/(2 xi) - 2 xi k, which is positive at k = 0.
    """
    xi = check_xi(xi, positive=True)
    return (k - 1.0) ** 2 / (2.0 * xi) - 2.0 * xi * k


def angles(kappa_val: float, xi: float) -> tuple[float, float]:
    """Trajectory angles (theta1, theta2) at the two switches."""
    xi = check_xi(xi, positive=True)
    theta1 = math.atan2(2.0 * xi * kappa_val, 1.0 - kappa_val)
    theta2 = math.atan2(1.0 - kappa_val, 2.0 * xi)
    return theta1, theta2


def time_of_tau(tau: float, xi: float) -> float:
    """Total horizon T (units 1/J) whose optimal phase I lasts tau."""
    k = kappa(tau, xi)
    theta1, theta2 = angles(k, xi)
    return 2.0 * tau + (theta2 - theta1) / math.pi


@dataclass(frozen=True)
class SwitchingGeometry:
    """Finite-time optimum descriptor.  T and tau in units of 1/J."""

    xi: float
    T: float
    tau: float
    kappa: float
    theta1: float
    theta2: float
    eta_T: float

    @property
    def tau_rescaled(self) -> float:
        return math.pi * self.tau

    @property
    def T_rescaled(self) -> float:
        return math.pi * self.T

    def residual(self) -> float:
        """T - (2 tau + (theta2 - theta1)/pi); zero for a consistent geometry."""
        return self.T - (2.0 * self.tau + (self.theta2 - self.theta1) / math.pi)


def eta_finite(geometry: SwitchingGeometry) -> float:
    """Optimal finite-time efficiency from the switching angles."""
    xi = geometry.xi
    th1, th2 = geometry.theta1, geometry.theta2
    return math.exp(xi * (th1 - th2)) * (1.0 - xi * math.sin(2.0 * th2)) / math.sin(th1 + th2)


def tau_of_time(T: float, xi: float, *, xtol: float = 1e-14) -> SwitchingGeometry:
    """Solve for the phase-I duration tau given the horizon T (units 1/J).

    Raises
    ------
    InepRegime
        If T does not exceed `critical_time(xi)`.
    """
    xi = check_xi(xi, positive=True)
    T = float(T)
    T_c = critical_time(xi)
    if not T > T_c:
        raise InepRegime(T, xi, T_c)
    hi = 0.5 * T
    # time_of_tau(0) = T_c < T and time_of_tau(T/2) >= T bracket the root
    if time_of_tau(hi, xi) - T <= 0.0:
        tau = hi
    else:
        tau = brentq(lambda s: time_of_tau(s, xi) - T, 0.0, hi, xtol=xtol, rtol=1e-15, maxiter=500)
    k = kappa(tau, xi)
    th1, th2 = angles(k, xi)
    geom = SwitchingGeometry(xi=xi, T=T, tau=tau, kappa=k, theta1=th1, theta2=th2, eta_T=float("nan"))
    return SwitchingGeometry(**{**geom.__dict__, "eta_T": eta_finite(geom)})


def eta_optimal(T: float, xi: float) -> float:
    """Best achievable r2(T) for horizon T (units 1/J), either regime."""
    xi = check_xi(xi)
    if xi == 0.0:
        return math.sin(math.pi * min(T, 0.5))
    if T <= critical_time(xi):
        return eta_constant(T, xi)
    return tau_of_time(T, xi).eta_T
