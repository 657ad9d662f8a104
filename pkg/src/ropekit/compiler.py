"""Compile reduced-model control schedules into rf pulse sequences.

A transfer element works on four operators: a relaxing source ``A`` with its
protected partner ``P_A``, and a relaxing product ``B`` with its protected
partner ``P_B``.  Free evolution moves ``A`` into ``B``.  The schedule gives
``u1 = cos(beta1)``, the share of source magnitude kept in ``A``, and
``u2 = cos(beta2)`` for the product.  Holding ``beta1(t)`` on its prescribed path
needs an rf rotation rate (rescaled units, about the axis taking ``P_A`` into ``A``)

    Omega1 = sin(beta1) (xi cos(beta1) + r2/r1) - d(beta1)/dt',

where the first term cancels the rotation that coupling and relaxation impose
on the (A, P_A) direction.  For the product pair,

    Omega3 = d(beta2)/dt' + sin(beta2) (r1/r2 - xi cos(beta2)),

about the axis taking ``B`` into ``P_B``.  Physical amplitude: ``nu = J * Omega / 2`` Hz.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .analytic import check_xi
from .quantum import SpinSystemParams, coherence_vector, index, run_sequence
from .reduced import ControlSchedule, propagate

__all__ = [
    "CompileError",
    "HardPulse",
    "ShapedSegment",
    "Delay",
    "PulseSequence",
    "ANTIPHASE_TARGETS",
    "INPHASE_TARGETS",
    "compile",
    "compile_schedule",
    "roundtrip_check",
    "save_sequence",
    "load_sequence",
]

DEFAULT_RF_CAP = 100.0  # in units of J
_UNIT_TOL = 1e-12


class CompileError(ValueError):
    pass


@dataclass(frozen=True)
class HardPulse:
    target_spin: str
    flip_angle: float  # rad
    phase_axis: str

    def __post_init__(self):
        if self.target_spin not in ("I", "S"):
            raise ValueError("target_spin must be 'I' or 'S'")
        if self.phase_axis not in ("x", "-x", "y", "-y"):
            raise ValueError("phase_axis must be one of x, -x, y, -y")
        if not (0.0 < self.flip_angle <= math.pi + 1e-12):
            raise ValueError(f"flip angle must lie in (0, pi], got {self.flip_angle!r}")

    @property
    def duration(self) -> float:
        return 0.0


@dataclass(frozen=True)
class Delay:
    duration: float  # s

    def __post_init__(self):
        if not (math.isfinite(self.duration) and self.duration >= 0):
            raise ValueError("delay must be finite and non-negative")


@dataclass
class ShapedSegment:
    """Piecewise-constant rf on one spin; sample i holds from times[i] to times[i+1]."""

    times: np.ndarray  # s, relative to segment start
    nu_x: np.ndarray  # Hz
    nu_y: np.ndarray  # Hz
    duration: float  # s
    spin: str = "I"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.nu_x = np.asarray(self.nu_x, dtype=float)
        self.nu_y = np.asarray(self.nu_y, dtype=float)
        if not (self.times.shape == self.nu_x.shape == self.nu_y.shape and self.times.ndim == 1):
            raise ValueError("times, nu_x and nu_y must be equal-length 1-D arrays")
        if not (np.all(np.isfinite(self.nu_x)) and np.all(np.isfinite(self.nu_y))):
            raise ValueError("rf amplitudes must be finite")
        if self.times.size == 0 or self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0) \
                or self.times[-1] >= self.duration:
            raise ValueError("sample times must start at 0, increase, and end before the duration")

    @property
    def peak_amplitude(self) -> float:
        return float(np.max(np.hypot(self.nu_x, self.nu_y)))


Element = Union[HardPulse, Delay, ShapedSegment]


@dataclass
class PulseSequence:
    elements: list
    J: float  # Hz
    k: float  # Hz
    target: str
    notes: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return float(sum(el.duration for el in self.elements))

    @property
    def hard_pulses(self) -> list[HardPulse]:
        return [el for el in self.elements if isinstance(el, HardPulse)]

    @property
    def shaped_segments(self) -> list[ShapedSegment]:
        return [el for el in self.elements if isinstance(el, ShapedSegment)]

    @property
    def params(self) -> SpinSystemParams:
        return SpinSystemParams(self.J, self.k)


# --------------------------------------------------------------------------- #
# operator bookkeeping

@dataclass(frozen=True)
class _Channel:
    spin: str
    source_axis: str  # rf axis turning P_A into A
    product_axis: str  # rf axis turning B into P_B
    initial_axis: str  # hard pulse turning A toward P_A
    final_axis: str  # hard pulse turning P_B back into B


# I-spin element: A = Ix, P_A = Iz, B = 2IySz, P_B = 2IzSz
_CH_I = _Channel("I", source_axis="y", product_axis="x", initial_axis="-y", final_axis="-x")
# S-spin element: A = 2IzSy, P_A = 2IzSz, B = -Sx, P_B = Sz
_CH_S = _Channel("S", source_axis="-x", product_axis="y", initial_axis="x", final_axis="-y")

_HALF = math.pi / 2
# hard pulses taking 2IySz to 2I_b S_c
_I_FROM_Y = {"x": [("I", "x", _HALF), ("I", "y", _HALF)], "y": [], "z": [("I", "x", _HALF)]}
_S_FROM_Z = {"x": [("S", "y", _HALF)], "y": [("S", "-x", _HALF)], "z": []}
# hard pulses taking Sx to S_b
_S_FROM_X = {"x": [], "y": [("S", "-y", _HALF), ("S", "-x", _HALF)], "z": [("S", "-y", _HALF)]}

ANTIPHASE_TARGETS = tuple(f"2I{b}S{c}" for b in "xyz" for c in "xyz")
INPHASE_TARGETS = ("Sx", "Sy", "Sz")


def _rf_components(axis: str, nu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    zero = np.zeros_like(nu)
    return {
        "x": (nu, zero), "-x": (-nu, zero), "y": (zero, nu), "-y": (zero, -nu),
    }[axis]


def _pulse(spin: str, axis: str, angle: float) -> HardPulse | None:
    """Hard pulse for a signed rotation angle; None when negligible."""
    if abs(angle) < 1e-15:
        return None
    if angle < 0:
        axis = axis[1:] if axis.startswith("-") else "-" + axis
        angle = -angle
    return HardPulse(spin, min(angle, math.pi), axis)


def _classify(schedule: ControlSchedule) -> np.ndarray:
    """Per-interval kind: 0 free, 1 source rotation (u1 < 1), 3 product rotation (u2 < 1)."""
    u1, u2 = schedule.u1, schedule.u2
    one1 = np.abs(u1 - 1.0) <= _UNIT_TOL
    one2 = np.abs(u2 - 1.0) <= _UNIT_TOL
    free = one1[:-1] & one1[1:] & one2[:-1] & one2[1:]
    src = ~free & one2[:-1] & one2[1:]
    prod = ~free & one1[:-1] & one1[1:]
    bad = ~(free | src | prod)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise CompileError(
            f"controls u1 and u2 are both below 1 on [{schedule.times[i]:.6g}, {schedule.times[i + 1]:.6g}]; "
            "the two rotations act in different operator planes and cannot be combined"
        )
    return np.where(free, 0, np.where(src, 1, 3))


def _element(schedule: ControlSchedule, J: float, xi: float, ch: _Channel, rf_cap: float,
             substitute: bool, step: float) -> tuple[list, dict]:
    if schedule.u2[0] < 1.0 - _UNIT_TOL:
        raise CompileError("u2(0) < 1 cannot be realised: the product starts empty")
    kinds = _classify(schedule)
    traj = propagate((1.0, 0.0), schedule, xi, step)
    r1, r2 = traj.states[:, 0], traj.states[:, 1]
    t = schedule.times
    h = np.diff(t)
    beta1 = np.arccos(schedule.u1)
    beta2 = np.arccos(schedule.u2)

    omega = np.zeros(h.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = np.sin(beta1) * (xi * np.cos(beta1) + r2 / r1)
        d3 = np.sin(beta2) * (r1 / r2 - xi * np.cos(beta2))
    src = kinds == 1
    prod = kinds == 3
    omega[src] = 0.5 * (d1[:-1] + d1[1:])[src] - (np.diff(beta1) / h)[src]
    omega[prod] = 0.5 * (d3[:-1] + d3[1:])[prod] + (np.diff(beta2) / h)[prod]
    if not np.all(np.isfinite(omega)):
        raise CompileError("rf rate is not finite (a magnitude vanished during a rotation phase)")

    cap = 2.0 * rf_cap  # |nu| <= rf_cap * J  <=>  |Omega| <= 2 rf_cap
    over = (np.abs(omega) > cap) & (kinds != 0)
    if np.any(over) and not substitute:
        i = int(np.argmax(over))
        raise CompileError(
            f"rf amplitude {0.5 * abs(omega[i]):.4g} J exceeds the cap {rf_cap:g} J at t'={t[i]:.6g}"
        )

    to_s = 1.0 / (math.pi * J)
    elements: list = []
    p = _pulse(ch.spin, ch.initial_axis, float(beta1[0]))
    if p:
        elements.append(p)
    n_sub = 0
    i = 0
    n = h.size
    while i < n:
        j = i
        if kinds[i] == 0:
            while j < n and kinds[j] == 0:
                j += 1
            elements.append(Delay(float(t[j] - t[i]) * to_s))
        elif over[i]:
            # merge the run of over-cap intervals into one centred hard pulse
            while j < n and over[j] and kinds[j] == kinds[i]:
                j += 1
            axis = ch.source_axis if kinds[i] == 1 else ch.product_axis
            angle = float(np.sum(omega[i:j] * h[i:j]))
            half = 0.5 * float(t[j] - t[i]) * to_s
            elements.append(Delay(half))
            p = _pulse(ch.spin, axis, angle)
            if p:
                elements.append(p)
            elements.append(Delay(half))
            n_sub += 1
        else:
            while j < n and kinds[j] == kinds[i] and not over[j]:
                j += 1
            axis = ch.source_axis if kinds[i] == 1 else ch.product_axis
            nu = 0.5 * J * omega[i:j]
            nx, ny = _rf_components(axis, nu)
            seg_t = (t[i:j] - t[i]) * to_s
            elements.append(ShapedSegment(seg_t, nx, ny, float(t[j] - t[i]) * to_s, ch.spin))
        i = j
    p = _pulse(ch.spin, ch.final_axis, float(beta2[-1]))
    if p:
        elements.append(p)
    info = {
        "hard_pulse_substitutions": n_sub,
        "predicted_r2": float(r2[-1]),
        "initial_flip_rad": float(beta1[0]),
        "final_flip_rad": float(beta2[-1]),
    }
    return _merge_delays(elements), info


def _merge_delays(elements: list) -> list:
    out: list = []
    for el in elements:
        if isinstance(el, Delay):
            if el.duration == 0.0:
                continue
            if out and isinstance(out[-1], Delay):
                out[-1] = Delay(out[-1].duration + el.duration)
                continue
        out.append(el)
    return out


def _pulses(specs) -> list[HardPulse]:
    return [HardPulse(s, a, ax) for s, ax, a in specs]


def compile_schedule(schedule: ControlSchedule, J: float, xi: float, target: str = "2IySz", *,
                     rf_cap: float = DEFAULT_RF_CAP, substitute_hard_pulses: bool = True,
                     step: float = 1e-3) -> PulseSequence:
    """Build the pulse sequence realising ``schedule`` for the transfer Ix -> ``target``.

    Antiphase targets ``2I{b}S{c}`` use one element.  In-phase targets ``S{b}``
    chain two elements through ``2IzSy`` with the same schedule.
    """
    xi = check_xi(xi)
    if not (math.isfinite(J) and J > 0):
        raise ValueError("J must be positive")
    first, info1 = _element(schedule, J, xi, _CH_I, rf_cap, substitute_hard_pulses, step)
    notes = {"element_I": info1, "xi": xi, "schedule_duration_rescaled": schedule.duration}
    if target in ANTIPHASE_TARGETS:
        b, c = target[2], target[4]
        elements = first + _pulses(_I_FROM_Y[b]) + _pulses(_S_FROM_Z[c])
    elif target in INPHASE_TARGETS:
        second, info2 = _element(schedule, J, xi, _CH_S, rf_cap, substitute_hard_pulses, step)
        notes["element_S"] = info2
        bridge = _pulses([("I", "x", _HALF), ("S", "-x", _HALF)])  # 2IySz -> 2IzSy
        flip = [HardPulse("S", math.pi, "y")]  # -Sx -> Sx
        elements = first + bridge + second + flip + _pulses(_S_FROM_X[target[1]])
    else:
        raise ValueError(f"unsupported target {target!r}; expected one of {ANTIPHASE_TARGETS + INPHASE_TARGETS}")
    return PulseSequence(elements, J=float(J), k=float(xi * J), target=target, notes=notes)


# short public name; shadows the builtin only inside this module
compile = compile_schedule  # noqa: A001


def roundtrip_check(seq: PulseSequence, J: float | None = None, k: float | None = None,
                    sample_dt: float | None = None) -> float:
    """Run the full two-spin simulation from Ix and return <target> at the end."""
    params = SpinSystemParams(seq.J if J is None else J, seq.k if k is None else k)
    res = run_sequence(seq, params, coherence_vector(Ix=1.0), sample_dt=sample_dt)
    return float(res.final[index(seq.target)])


# --------------------------------------------------------------------------- #
# export / import

def _fmt(v: float) -> str:
    return f"{v:.12g}"


def shaped_text(seg: ShapedSegment, J: float, k: float, header=()) -> str:
    lines = [f"# {h}" for h in header]
    lines += [f"# J_Hz={_fmt(J)}", f"# k_Hz={_fmt(k)}", f"# spin={seg.spin}",
              f"# duration_s={_fmt(seg.duration)}",
              "# t_s nu_x_Hz nu_y_Hz nu_x_J nu_y_J"]
    for t, x, y in zip(seg.times, seg.nu_x, seg.nu_y):
        lines.append(" ".join(_fmt(v) for v in (t, x, y, x / J, y / J)))
    return "\n".join(lines) + "\n"


def _read_shaped(path: Path) -> tuple[dict, np.ndarray]:
    meta, rows = {}, []
    for ln in path.read_text().splitlines():
        if ln.startswith("#"):
            body = ln[1:].strip()
            if "=" in body and " " not in body:
                key, val = body.split("=", 1)
                meta[key] = val
        elif ln.strip():
            rows.append([float(v) for v in ln.split()])
    return meta, np.array(rows)


def save_sequence(seq: PulseSequence, directory, stem: str = "sequence", header=()) -> Path:
    """Write ``<stem>.json`` plus one ``<stem>_shape<n>.txt`` per shaped segment."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    items = []
    n_shape = 0
    for el in seq.elements:
        if isinstance(el, HardPulse):
            items.append({"type": "hard_pulse", "spin": el.target_spin, "flip_angle_rad": float(_fmt(el.flip_angle)),
                          "phase_axis": el.phase_axis, "duration_s": 0.0})
        elif isinstance(el, Delay):
            items.append({"type": "delay", "duration_s": float(_fmt(el.duration))})
        else:
            name = f"{stem}_shape{n_shape}.txt"
            n_shape += 1
            (d / name).write_text(shaped_text(el, seq.J, seq.k, header))
            items.append({"type": "shaped", "spin": el.spin, "file": name, "samples": int(el.times.size),
                          "duration_s": float(_fmt(el.duration)), "peak_nu_Hz": float(_fmt(el.peak_amplitude))})
    manifest = {
        "provenance": list(header),
        "J_Hz": float(_fmt(seq.J)),
        "k_Hz": float(_fmt(seq.k)),
        "target": seq.target,
        "initial_operator": "Ix",
        "total_duration_s": float(_fmt(seq.duration)),
        "elements": items,
    }
    path = d / f"{stem}.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_sequence(manifest_path) -> PulseSequence:
    path = Path(manifest_path)
    m = json.loads(path.read_text())
    elements: list = []
    for it in m["elements"]:
        if it["type"] == "hard_pulse":
            elements.append(HardPulse(it["spin"], it["flip_angle_rad"], it["phase_axis"]))
        elif it["type"] == "delay":
            elements.append(Delay(it["duration_s"]))
        elif it["type"] == "shaped":
            _, rows = _read_shaped(path.parent / it["file"])
            elements.append(ShapedSegment(rows[:, 0], rows[:, 1], rows[:, 2], it["duration_s"], it["spin"]))
        else:
            raise ValueError(f"unknown element type {it['type']!r}")
    return PulseSequence(elements, J=m["J_Hz"], k=m["k_Hz"], target=m["target"])
