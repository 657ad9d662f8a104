"""Numerical optimal control on the reduced model, independent of the closed forms.

Two tools:

* :func:`optimize` maximises ``r2(T)`` over piecewise-constant controls by
  projected gradient ascent.  Gradients are exact for the discretised problem:
  each cell propagator is ``P_k = exp(A(u_k) h)`` and its control derivative is
  the Frechet derivative of the exponential, read off the upper-right block of
  ``exp([[A h, dA h], [0, A h]])``.
* :func:`dp_value_grid` tabulates the optimal return by backward value
  iteration.  The dynamics are linear, so ``V(c r, t) = c V(r, t)`` for c >= 0
  and the table only needs the polar angle of the state.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import analytic
from .analytic import check_xi
from .reduced import ControlSchedule, expm2, generator

__all__ = [
    "DiscretizedControls",
    "NonConvergence",
    "OptimizeResult",
    "StartResult",
    "forward",
    "adjoint_gradient",
    "projected_gradient_norm",
    "optimize",
    "DPValueGrid",
    "dp_value_grid",
]

DEFAULT_SEED = 20031
PG_TOLERANCE = 1e-4  # a best start above this is reported as not converged
STOP_TOLERANCE = 1e-8  # iterations continue until the projected gradient falls below this


class NonConvergence(RuntimeError):
    def __init__(self, message: str, result: "OptimizeResult | None" = None):
        super().__init__(message)
        self.result = result


@dataclass
class DiscretizedControls:
    """N piecewise-constant control pairs on a uniform grid over [0, T'] (rescaled)."""

    duration: float
    u: np.ndarray  # (N, 2)

    def __post_init__(self):
        self.u = np.clip(np.asarray(self.u, dtype=float), 0.0, 1.0)
        if self.u.ndim != 2 or self.u.shape[1] != 2:
            raise ValueError("controls must have shape (N, 2)")
        if self.u.shape[0] < 10:
            raise ValueError("need at least 10 control cells")
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ValueError("duration must be positive")

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def step(self) -> float:
        return self.duration / self.n

    @property
    def centres(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.step

    @classmethod
    def constant(cls, duration: float, n: int, u1: float = 1.0, u2: float = 1.0) -> "DiscretizedControls":
        return cls(duration, np.tile([u1, u2], (n, 1)))

    @classmethod
    def from_schedule(cls, schedule: ControlSchedule, n: int) -> "DiscretizedControls":
        """Cell averages of a linearly interpolated schedule (5-point Gauss-Legendre per cell)."""
        T = schedule.duration
        h = T / n
        nodes, weights = np.polynomial.legendre.leggauss(5)
        t = (np.arange(n)[:, None] + 0.5 * (nodes[None, :] + 1.0)) * h
        u1, u2 = schedule.at(t)
        w = 0.5 * weights
        return cls(T, np.column_stack([u1 @ w, u2 @ w]))

    def to_schedule(self) -> ControlSchedule:
        """Samples at cell centres plus both endpoints, in the schedule text format."""
        t = np.concatenate([[0.0], self.centres, [self.duration]])
        u1 = np.concatenate([[self.u[0, 0]], self.u[:, 0], [self.u[-1, 0]]])
        u2 = np.concatenate([[self.u[0, 1]], self.u[:, 1], [self.u[-1, 1]]])
        return ControlSchedule(t, u1, u2)


# --------------------------------------------------------------------------- #
# forward / adjoint

def forward(controls: DiscretizedControls, xi: float, state=(1.0, 0.0)) -> np.ndarray:
    """States at the N+1 cell boundaries."""
    P = expm2(generator(controls.u[:, 0], controls.u[:, 1], xi) * controls.step)
    r = np.empty((controls.n + 1, 2))
    r[0] = state
    for k in range(controls.n):
        r[k + 1] = P[k] @ r[k]
    return r


def _costates(P: np.ndarray) -> np.ndarray:
    """lam[k] = e2^T P_{N-1} ... P_k, so r2(T) = lam[k] . r[k]; lam[N] = (0, 1)."""
    n = P.shape[0]
    lam = np.empty((n + 1, 2))
    lam[n] = (0.0, 1.0)
    for k in range(n - 1, -1, -1):
        lam[k] = lam[k + 1] @ P[k]
    return lam


def _frechet_blocks(A: np.ndarray, dA: np.ndarray, h: float) -> np.ndarray:
    n = A.shape[0]
    M = np.zeros((n, 4, 4))
    M[:, :2, :2] = A * h
    M[:, 2:, 2:] = A * h
    M[:, :2, 2:] = dA * h
    return expm(M)[:, :2, 2:]


def adjoint_gradient(controls: DiscretizedControls, xi: float, *, return_details: bool = False):
    """Exact gradient of r2(T) with respect to every control value, shape (N, 2).

    With ``return_details`` also returns ``(r2(T), states, costates)``.
    """
    xi = check_xi(xi)
    u1, u2 = controls.u[:, 0], controls.u[:, 1]
    h = controls.step
    A = generator(u1, u2, xi)
    P = expm2(A * h)
    r = np.empty((controls.n + 1, 2))
    r[0] = (1.0, 0.0)
    for k in range(controls.n):
        r[k + 1] = P[k] @ r[k]
    lam = _costates(P)

    dA1 = np.zeros_like(A)
    dA1[:, 0, 0] = -2.0 * xi * u1
    dA1[:, 0, 1] = -u2
    dA1[:, 1, 0] = u2
    dA2 = np.zeros_like(A)
    dA2[:, 0, 1] = -u1
    dA2[:, 1, 0] = u1
    dA2[:, 1, 1] = -2.0 * xi * u2
    D1 = _frechet_blocks(A, dA1, h)
    D2 = _frechet_blocks(A, dA2, h)
    g = np.column_stack([
        np.einsum("ki,kij,kj->k", lam[1:], D1, r[:-1]),
        np.einsum("ki,kij,kj->k", lam[1:], D2, r[:-1]),
    ])
    if return_details:
        return g, float(r[-1, 1]), r, lam
    return g


def projected_gradient_norm(u: np.ndarray, g: np.ndarray) -> float:
    """Euclidean norm of P(u + g) - u, zero exactly at KKT points of the box problem."""
    return float(np.linalg.norm(np.clip(u + g, 0.0, 1.0) - u))


def _objective(u: np.ndarray, duration: float, xi: float) -> float:
    return float(forward(DiscretizedControls(duration, u), xi)[-1, 1])


# --------------------------------------------------------------------------- #
# optimiser

@dataclass
class StartResult:
    label: str
    controls: DiscretizedControls
    efficiency: float
    pg_norm: float
    iterations: int
    converged: bool


@dataclass
class OptimizeResult:
    controls: DiscretizedControls
    efficiency: float
    pg_norm: float
    seed: int
    starts: list = field(default_factory=list)
    note: str = "best local optimum over the listed starts; global optimality is not certified"

    @property
    def converged(self) -> bool:
        return self.pg_norm <= PG_TOLERANCE


def _ascend(u0: np.ndarray, duration: float, xi: float, max_iter: int, tol: float, label: str) -> StartResult:
    """Spectral (Barzilai-Borwein) projected gradient ascent with Armijo backtracking."""
    u = np.clip(u0, 0.0, 1.0)
    g, f, _, _ = adjoint_gradient(DiscretizedControls(duration, u), xi, return_details=True)
    alpha = 1.0 / max(np.max(np.abs(g)), 1e-12)
    pg = projected_gradient_norm(u, g)
    it = 0
    while pg > tol and it < max_iter:
        it += 1
        step = alpha
        for _ in range(60):
            cand = np.clip(u + step * g, 0.0, 1.0)
            d = cand - u
            f_new = _objective(cand, duration, xi)
            if f_new >= f + 1e-4 * float(np.sum(g * d)):
                break
            step *= 0.5
        else:
            break  # no ascent possible at machine precision
        g_new, f_new, _, _ = adjoint_gradient(DiscretizedControls(duration, cand), xi, return_details=True)
        s = cand - u
        y = g - g_new  # ascent: curvature of -f
        sy = float(np.sum(s * y))
        alpha = float(np.sum(s * s)) / sy if sy > 1e-30 else 10.0 * step
        alpha = min(max(alpha, 1e-6), 1e8)
        u, g, f = cand, g_new, f_new
        pg = projected_gradient_norm(u, g)
    return StartResult(label, DiscretizedControls(duration, u), f, pg, it, pg <= PG_TOLERANCE)


def _warm_start(xi: float, T: float, n: int) -> DiscretizedControls:
    from .synthesis import synthesize  # the warm start is only a starting point

    return DiscretizedControls.from_schedule(synthesize(T, xi, samples_per_phase=400).schedule, n)


def optimize(xi: float, T: float, N: int = 400, restarts: int = 4, *, seed: int = DEFAULT_SEED,
             max_iter: int = 4000, tol: float = STOP_TOLERANCE, workers: int = 1,
             strict: bool = True) -> OptimizeResult:
    """Maximise r2(T) over N piecewise-constant control cells; T in units of 1/J.

    Starts: constant (1, 1), ``restarts - 2`` uniform random fields from a
    generator seeded with ``seed``, and the closed-form schedule sampled on the
    grid.  Independent starts may run on a thread pool (``workers > 1``); the
    result does not depend on the worker count.

    Each start iterates until its projected gradient norm drops below ``tol``
    or ``max_iter`` is reached.  Raises :class:`NonConvergence` when ``strict``
    and the best start's projected gradient norm still exceeds
    ``PG_TOLERANCE``.
    """
    xi = check_xi(xi)
    if N < 50:
        raise ValueError("N must be at least 50")
    if restarts < 4:
        raise ValueError("restarts must be at least 4")
    if not T > 0:
        raise ValueError("T must be positive")
    duration = math.pi * T
    rng = np.random.default_rng(seed)
    starts = [("constant", DiscretizedControls.constant(duration, N).u)]
    for i in range(restarts - 2):
        starts.append((f"random{i}", rng.uniform(0.0, 1.0, size=(N, 2))))
    starts.append(("analytic", _warm_start(xi, T, N).u))

    def run(item):
        label, u0 = item
        return _ascend(u0, duration, xi, max_iter, tol, label)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(s) for s in starts]
    best = max(results, key=lambda r: r.efficiency)
    out = OptimizeResult(best.controls, best.efficiency, best.pg_norm, seed, results)
    if strict and best.pg_norm > PG_TOLERANCE:
        raise NonConvergence(
            f"projected gradient norm {best.pg_norm:.3g} > {PG_TOLERANCE:g} after the iteration cap", out
        )
    return out


# --------------------------------------------------------------------------- #
# dynamic programming

_N_CONTROL = 17


def _boundary_controls(s: np.ndarray) -> np.ndarray:
    """Path over the outer faces of the control box: (s, 1) for s in [0, 1], (1, 2 - s) for s in [1, 2]."""
    s = np.asarray(s, dtype=float)
    return np.stack([np.minimum(s, 1.0), np.minimum(1.0, 2.0 - s)], axis=-1)


@dataclass
class DPValueGrid:
    """Optimal return tabulated as V(R cos phi, R sin phi, t') = R W(phi, t')."""

    xi: float
    duration: float  # rescaled
    phi: np.ndarray
    times: np.ndarray  # rescaled, 0 .. duration
    W: np.ndarray  # (len(times), len(phi))
    policy: np.ndarray  # (len(times) - 1, len(phi), 2) maximising controls

    def _w(self, phi, t_index: int) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        inside = np.interp(np.minimum(phi, math.pi / 2), self.phi, self.W[t_index])
        # beyond the first quadrant r2 can only decay, so V = r2 there
        return np.where(phi > math.pi / 2, np.sin(phi), inside)

    def value(self, r1, r2, t: float = 0.0):
        """V(r1, r2, t') with linear interpolation in angle and time."""
        r1 = np.asarray(r1, dtype=float)
        r2 = np.asarray(r2, dtype=float)
        R = np.hypot(r1, r2)
        phi = np.arctan2(r2, r1)
        pos = np.interp(t, self.times, np.arange(self.times.size))
        i = min(int(pos), self.times.size - 2)
        w = pos - i
        W = (1.0 - w) * self._w(phi, i) + w * self._w(phi, i + 1)
        return R * W

    def table(self, n: int = 64, t: float = 0.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """V on a uniform n x n grid over [0, 1]^2 of (r1, r2)."""
        g = np.linspace(0.0, 1.0, n)
        r1, r2 = np.meshgrid(g, g, indexing="ij")
        return g, g, self.value(r1, r2, t)


def dp_value_grid(xi: float, T: float, resolution: int = 256, time_steps: int | None = None,
                  refinements: int = 1) -> DPValueGrid:
    """Backward value iteration for the horizon T' (rescaled units).

    Each cell maximises over 17 controls on the outer faces of the control box
    plus the idle control (0, 0).  Interior controls need no samples: since
    A(c u) = c^2 A(u), a scaled control is an outer-face control run for part
    of the step.  The best face sample is then refined ``refinements`` times,
    each pass placing 17 samples across the bracket around the current best.
    Refinement runs even where idling wins the coarse pass: on a long horizon
    the coarse face samples can all lose to idling while a finer one does not.

    Linear interpolation in angle overestimates the (convex) value slightly;
    the bias falls off with the square of ``resolution``.
    """
    xi = check_xi(xi)
    if resolution < 64:
        raise ValueError("resolution must be at least 64")
    if not T > 0:
        raise ValueError("T must be positive")
    if refinements < 0:
        raise ValueError("refinements must be non-negative")
    n_t = time_steps if time_steps is not None else max(resolution, math.ceil(T / 0.02))
    if n_t < 1:
        raise ValueError("time_steps must be positive")
    dt = T / n_t
    phi = np.linspace(0.0, math.pi / 2, resolution)
    times = np.linspace(0.0, T, n_t + 1)
    start = np.stack([np.cos(phi), np.sin(phi)], axis=-1)  # (n_phi, 2)

    s_coarse = np.linspace(0.0, 2.0, _N_CONTROL)
    coarse = np.vstack([_boundary_controls(s_coarse), [[0.0, 0.0]]])  # (18, 2)
    P_coarse = expm2(generator(coarse[:, 0], coarse[:, 1], xi) * dt)  # (18, 2, 2)
    ds = s_coarse[1] - s_coarse[0]
    unit = np.linspace(-1.0, 1.0, _N_CONTROL)

    W = np.empty((n_t + 1, resolution))
    W[-1] = np.sin(phi)
    policy = np.empty((n_t, resolution, 2))
    grid = DPValueGrid(xi, T, phi, times, W, policy)

    def score(nxt: np.ndarray, n_index: int) -> np.ndarray:
        return np.hypot(nxt[..., 0], nxt[..., 1]) * grid._w(np.arctan2(nxt[..., 1], nxt[..., 0]), n_index)

    for n in range(n_t - 1, -1, -1):
        vals = score(np.einsum("kij,pj->pki", P_coarse, start), n + 1)  # (n_phi, 18)
        best = np.argmax(vals, axis=1)
        best_val = vals[np.arange(resolution), best]
        best_u = coarse[best]
        # refine around the best face sample even where idling currently wins
        sel = np.arange(resolution)
        s_best = s_coarse[np.argmax(vals[:, :_N_CONTROL], axis=1)]
        width = ds
        for _ in range(refinements):
            s_fine = np.clip(s_best[:, None] + width * unit[None, :], 0.0, 2.0)  # (m, 17)
            u_fine = _boundary_controls(s_fine)
            P_fine = expm2(generator(u_fine[..., 0], u_fine[..., 1], xi) * dt)
            fv = score(np.einsum("mkij,mj->mki", P_fine, start[sel]), n + 1)
            j = np.argmax(fv, axis=1)
            rows = np.arange(sel.size)
            fbest = fv[rows, j]
            better = fbest > best_val[sel]
            best_val[sel[better]] = fbest[better]
            best_u[sel[better]] = u_fine[rows[better], j[better]]
            s_best = np.where(better, s_fine[rows, j], s_best)
            width = width / (0.5 * (_N_CONTROL - 1))
        W[n] = best_val
        policy[n] = best_u
    return grid
