"""Two-spin Liouville-space simulator in the product-operator basis.

The density operator is expanded as ``rho = sum_i c_i B_i`` over the 16
operators ``E/2, Ix, Iy, Iz, Sx, Sy, Sz, 2IaSb``, which are orthonormal under
``tr(A^dagger B)``.  Then ``<B_i> = tr(rho B_i) = c_i`` and every generator is
a real 16x16 matrix in rad/s.

Conventions (right-handed rotations): rf along +x on spin I turns Iz into -Iy,
rf along +y turns Iz into +Ix.  Relaxation is
``-pi k [2IzSz, [2IzSz, rho]]``, which damps the transverse single-spin and
antiphase terms at rate pi*k.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import expm

__all__ = [
    "BASIS_LABELS",
    "SpinSystemParams",
    "index",
    "basis_matrices",
    "coherence_vector",
    "commutator_superop",
    "build_coupling",
    "build_relaxation",
    "build_rf",
    "rotation",
    "run_sequence",
    "SimulationResult",
]

_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex) / 2,
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex) / 2,
    "z": np.array([[1, 0], [0, -1]], dtype=complex) / 2,
}
_ID2 = np.eye(2, dtype=complex)

BASIS_LABELS: tuple[str, ...] = (
    ("E/2", "Ix", "Iy", "Iz", "Sx", "Sy", "Sz")
    + tuple(f"2I{a}S{b}" for a, b in itertools.product("xyz", repeat=2))
)
_INDEX = {lab: i for i, lab in enumerate(BASIS_LABELS)}


def index(label: str) -> int:
    try:
        return _INDEX[label]
    except KeyError:
        raise KeyError(f"unknown product operator {label!r}; expected one of {BASIS_LABELS}") from None


@lru_cache(maxsize=None)
def basis_matrices() -> np.ndarray:
    """(16, 4, 4) Hilbert-space matrices of the basis operators."""
    mats = [np.eye(4, dtype=complex) / 2]
    mats += [np.kron(_PAULI[a], _ID2) for a in "xyz"]
    mats += [np.kron(_ID2, _PAULI[a]) for a in "xyz"]
    mats += [2 * np.kron(_PAULI[a], _PAULI[b]) for a, b in itertools.product("xyz", repeat=2)]
    out = np.array(mats)
    out.setflags(write=False)
    return out


def _operator(label: str) -> np.ndarray:
    return basis_matrices()[index(label)]


def _to_superop(action) -> np.ndarray:
    """Matrix of a linear map on operators, expressed in the basis."""
    B = basis_matrices()
    L = np.empty((16, 16))
    for j in range(16):
        img = action(B[j])
        coeffs = np.einsum("iab,ab->i", B.conj(), img)  # tr(B_i^dagger img)
        if np.max(np.abs(coeffs.imag)) > 1e-12:
            raise ValueError("map does not preserve Hermiticity")
        L[:, j] = coeffs.real
    return L


def commutator_superop(H: np.ndarray) -> np.ndarray:
    """Generator of rho -> -i [H, rho]."""
    return _to_superop(lambda rho: -1j * (H @ rho - rho @ H))


def double_commutator_superop(A: np.ndarray) -> np.ndarray:
    """Matrix of rho -> [A, [A, rho]]."""

    def act(rho):
        inner = A @ rho - rho @ A
        return A @ inner - inner @ A

    return _to_superop(act)


@lru_cache(maxsize=None)
def _unit_generators() -> dict[str, np.ndarray]:
    g = {
        "J": commutator_superop(_operator("2IzSz")),
        "R": -double_commutator_superop(_operator("2IzSz")),
    }
    for spin in "IS":
        for ax in "xyz":
            g[f"{spin}{ax}"] = commutator_superop(_operator(f"{spin}{ax}"))
    for v in g.values():
        v.setflags(write=False)
    return g


@dataclass(frozen=True)
class SpinSystemParams:
    J: float  # Hz
    k: float  # Hz

    def __post_init__(self):
        if not (math.isfinite(self.J) and self.J > 0):
            raise ValueError("J must be positive")
        if not (math.isfinite(self.k) and self.k >= 0):
            raise ValueError("k must be non-negative")

    @property
    def xi(self) -> float:
        return self.k / self.J


def coherence_vector(**coeffs: float) -> np.ndarray:
    """Coherence vector from keyword coefficients, e.g. ``coherence_vector(Ix=1)``.

    Bilinear terms use their basis labels without the factor, so
    ``coherence_vector(IySz=1)`` is ``2IySz``.
    """
    v = np.zeros(16)
    for name, c in coeffs.items():
        lab = name if name in _INDEX else f"2{name}"
        v[index(lab)] = c
    return v


def build_coupling(J: float) -> np.ndarray:
    """Generator of -i pi J [2IzSz, rho] (rad/s)."""
    if not J > 0:
        raise ValueError("J must be positive")
    return math.pi * J * _unit_generators()["J"]


def build_relaxation(k: float) -> np.ndarray:
    """Generator of -pi k [2IzSz, [2IzSz, rho]] (rad/s)."""
    if not k >= 0:
        raise ValueError("k must be non-negative")
    return math.pi * k * _unit_generators()["R"]


def build_rf(nu_x: float, nu_y: float, spin: str = "I") -> np.ndarray:
    """Generator of -i [2 pi (nu_x A_x + nu_y A_y), rho] on spin A (amplitudes in Hz)."""
    if spin not in ("I", "S"):
        raise ValueError("spin must be 'I' or 'S'")
    if not (math.isfinite(nu_x) and math.isfinite(nu_y)):
        raise ValueError("rf amplitudes must be finite")
    g = _unit_generators()
    return 2.0 * math.pi * (nu_x * g[f"{spin}x"] + nu_y * g[f"{spin}y"])


_AXES = {"x": ("x", 1.0), "-x": ("x", -1.0), "y": ("y", 1.0), "-y": ("y", -1.0)}


def rotation(spin: str, angle: float, axis: str) -> np.ndarray:
    """Propagator of an ideal hard pulse: rotation by ``angle`` about ``axis`` on ``spin``."""
    if axis not in _AXES:
        raise ValueError(f"phase axis must be one of {sorted(_AXES)}")
    ax, sign = _AXES[axis]
    return expm(sign * angle * _unit_generators()[f"{spin}{ax}"])


# --------------------------------------------------------------------------- #
# sequence execution


@dataclass
class SimulationResult:
    final: np.ndarray
    times: np.ndarray  # seconds
    states: np.ndarray  # (n, 16)

    def expectation(self, label: str) -> np.ndarray:
        return self.states[:, index(label)]

    def to_text(self, target: str = "2IySz", header: Iterable[str] = ()) -> str:
        cols = ("Ix", "Iy", "Iz", "2IySz", "2IzSz")
        lines = [f"# {h}" for h in header]
        lines.append(f"# t_s <Ix> <Iy> <Iz> <2IySz> <2IzSz> <{target}>")
        tcol = self.expectation(target)
        data = np.column_stack([self.times] + [self.expectation(c) for c in cols] + [tcol])
        lines.extend(" ".join(f"{v:.12g}" for v in row) for row in data)
        return "\n".join(lines) + "\n"

    def save(self, path, target: str = "2IySz", header: Iterable[str] = ()) -> None:
        Path(path).write_text(self.to_text(target, header))


def _segment_generators(free: np.ndarray, nu: np.ndarray, spin: str) -> np.ndarray:
    g = _unit_generators()
    gx, gy = g[f"{spin}x"], g[f"{spin}y"]
    return free[None] + 2.0 * math.pi * (nu[:, 0, None, None] * gx[None] + nu[:, 1, None, None] * gy[None])


def run_sequence(seq, params: SpinSystemParams, initial: np.ndarray | None = None,
                 sample_dt: float | None = None) -> SimulationResult:
    """Propagate a pulse sequence exactly, segment by segment.

    Hard pulses are instantaneous rotations.  Shaped segments are piecewise
    constant and delays evolve under coupling plus relaxation only.  The
    trajectory records the state at every element boundary (before and after
    each hard pulse) and, if ``sample_dt`` is given, on the uniform grid
    ``0, sample_dt, 2 sample_dt, ...`` as well.
    """
    from .compiler import Delay, HardPulse, ShapedSegment  # circular at import time

    state = coherence_vector(Ix=1.0) if initial is None else np.array(initial, dtype=float)
    if state.shape != (16,):
        raise ValueError("initial coherence vector must have 16 components")
    free = build_coupling(params.J) + build_relaxation(params.k)
    times: list[float] = [0.0]
    states: list[np.ndarray] = [state.copy()]
    t = 0.0
    next_sample = sample_dt if sample_dt else math.inf

    def evolve(L: np.ndarray, duration: float, state: np.ndarray, t: float) -> np.ndarray:
        nonlocal next_sample
        if not np.all(np.isfinite(L)):
            raise ValueError("non-finite generator in sequence segment")
        while next_sample < t + duration - 1e-15:
            times.append(next_sample)
            states.append(expm(L * (next_sample - t)) @ state)
            next_sample += sample_dt
        return expm(L * duration) @ state

    for el in seq.elements:
        if isinstance(el, HardPulse):
            state = rotation(el.target_spin, el.flip_angle, el.phase_axis) @ state
        elif isinstance(el, Delay):
            state = evolve(free, el.duration, state, t)
            t += el.duration
        elif isinstance(el, ShapedSegment):
            starts = el.times
            ends = np.append(starts[1:], el.duration)
            dts = ends - starts
            gens = _segment_generators(free, np.column_stack([el.nu_x, el.nu_y]), el.spin)
            if not np.all(np.isfinite(gens)):
                raise ValueError("non-finite generator in shaped segment")
            if sample_dt:
                for L, dt in zip(gens, dts):
                    state = evolve(L, dt, state, t)
                    t += dt
            else:
                props = expm(gens * dts[:, None, None])
                for P in props:
                    state = P @ state
                t += el.duration
        else:
            raise TypeError(f"unknown sequence element {el!r}")
        times.append(t)
        states.append(state.copy())
    return SimulationResult(final=state, times=np.array(times), states=np.array(states))
