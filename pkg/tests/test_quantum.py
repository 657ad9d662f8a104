import math

import numpy as np
import pytest
from scipy.linalg import expm

from ropekit import quantum as q
from ropekit.compiler import Delay, HardPulse, PulseSequence, ShapedSegment, compile_schedule
from ropekit.reduced import ControlSchedule, propagate
from ropekit.synthesis import synthesize

PX = np.array([[0, 1], [1, 0]]) / 2
PY = np.array([[0, -1j], [1j, 0]]) / 2
PZ = np.array([[1, 0], [0, -1]]) / 2
E2 = np.eye(2)
OPS = {
    "Ix": np.kron(PX, E2), "Iy": np.kron(PY, E2), "Iz": np.kron(PZ, E2),
    "Sx": np.kron(E2, PX), "Sy": np.kron(E2, PY), "Sz": np.kron(E2, PZ),
}
ZZ = 2 * OPS["Iz"] @ OPS["Sz"]


def brute_liouvillian(H, k):
    """Row-major vec: vec(A rho B) = kron(A, B.T) vec(rho)."""
    I4 = np.eye(4)
    comm = lambda A: np.kron(A, I4) - np.kron(I4, A.T)  # noqa: E731
    return -1j * comm(H) - math.pi * k * comm(ZZ) @ comm(ZZ)


def brute_evolve(rho, H, k, t):
    v = expm(brute_liouvillian(H, k) * t) @ rho.reshape(-1)
    return v.reshape(4, 4)


def expectations(rho):
    B = q.basis_matrices()
    return np.real(np.einsum("iab,ba->i", B, rho))


def test_basis_orthonormal():
    B = q.basis_matrices()
    G = np.einsum("iab,jab->ij", B.conj(), B)
    np.testing.assert_allclose(G, np.eye(16), atol=1e-15)


def test_generators_against_hilbert_space_oracle():
    rng = np.random.default_rng(3)
    J, k = 120.0, 35.0
    for _ in range(5):
        nu = rng.normal(0, 80, 4)
        H = (math.pi * J * ZZ + 2 * math.pi * (nu[0] * OPS["Ix"] + nu[1] * OPS["Iy"])
             + 2 * math.pi * (nu[2] * OPS["Sx"] + nu[3] * OPS["Sy"]))
        L = q.build_coupling(J) + q.build_relaxation(k) + q.build_rf(nu[0], nu[1], "I") + q.build_rf(nu[2], nu[3], "S")
        M = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        rho = M + M.conj().T
        t = rng.uniform(1e-4, 5e-3)
        np.testing.assert_allclose(expm(L * t) @ expectations(rho), expectations(brute_evolve(rho, H, k, t)),
                                   atol=1e-11)


def test_coupling_examples():
    J = 90.0
    L = q.build_coupling(J)
    out = expm(L / (2 * J)) @ q.coherence_vector(Ix=1)
    np.testing.assert_allclose(out, q.coherence_vector(IySz=1), atol=1e-14)
    out = expm(L / (2 * J)) @ q.coherence_vector(Sx=1)
    np.testing.assert_allclose(out, q.coherence_vector(IzSy=1), atol=1e-14)
    for lab in ("Iz", "Sz", "2IzSz", "E/2"):
        assert np.all(L[:, q.index(lab)] == 0)
    np.testing.assert_allclose(L, -L.T, atol=0)


def test_relaxation_rates_and_spectrum():
    k = 17.0
    R = q.build_relaxation(k)
    np.testing.assert_allclose(R, np.diag(np.diag(R)), atol=0)
    decaying = {"Ix", "Iy", "Sx", "Sy", "2IxSz", "2IySz", "2IzSx", "2IzSy"}
    for lab in q.BASIS_LABELS:
        expected = -math.pi * k if lab in decaying else 0.0
        assert R[q.index(lab), q.index(lab)] == pytest.approx(expected, abs=1e-12)
    ev = np.linalg.eigvals(R)
    assert all(min(abs(e), abs(e + math.pi * k)) < 1e-12 for e in ev)
    # decay of Ix with the coupling off, and protected operators
    t = 0.013
    out = expm(R * t) @ q.coherence_vector(Ix=1, Iz=0.3, IzSz=0.2)
    assert out[q.index("Ix")] == pytest.approx(math.exp(-math.pi * k * t), abs=1e-14)
    assert out[q.index("Iz")] == pytest.approx(0.3, abs=1e-15)
    assert out[q.index("2IzSz")] == pytest.approx(0.2, abs=1e-15)


def test_identity_row_column_zero_and_dissipative():
    L = q.build_coupling(50) + q.build_relaxation(20)
    assert np.all(L[0] == 0) and np.all(L[:, 0] == 0)
    sym = 0.5 * (L + L.T)
    assert np.max(np.linalg.eigvalsh(sym[1:, 1:])) <= 1e-12


def test_rf_conventions():
    nu = 250.0
    L = q.build_rf(nu, 0.0, "I")
    quarter = 1 / (4 * nu)
    np.testing.assert_allclose(expm(L * quarter) @ q.coherence_vector(Iz=1), q.coherence_vector(Iy=-1), atol=1e-14)
    Ly = q.build_rf(0.0, nu, "I")
    np.testing.assert_allclose(expm(Ly * quarter) @ q.coherence_vector(Iz=1), q.coherence_vector(Ix=1), atol=1e-14)
    v = q.coherence_vector(Sx=0.2, Sy=-0.4, Sz=0.7)
    np.testing.assert_allclose(expm(L * 0.37e-3) @ v, v, atol=1e-15)
    a = math.radians(55)
    out = q.rotation("I", a, "-y") @ q.coherence_vector(Ix=1)
    np.testing.assert_allclose(out, q.coherence_vector(Ix=math.cos(a), Iz=math.sin(a)), atol=1e-14)
    with pytest.raises(ValueError):
        q.build_rf(float("nan"), 0, "I")


def _delay_sequence(duration, J, k):
    return PulseSequence([Delay(duration)], J=J, k=k, target="2IySz")


def test_run_sequence_inept_examples():
    J = 140.0
    res = q.run_sequence(_delay_sequence(1 / (2 * J), J, 0.0), q.SpinSystemParams(J, 0.0))
    assert res.final[q.index("2IySz")] == pytest.approx(1.0, abs=1e-12)
    t = math.atan2(1, 1) / (math.pi * J)
    res = q.run_sequence(_delay_sequence(t, J, J), q.SpinSystemParams(J, J))
    assert res.final[q.index("2IySz")] == pytest.approx(0.32240, abs=1e-5)
    assert res.final[q.index("2IySz")] == pytest.approx(math.exp(-math.pi / 4) * math.sin(math.pi / 4), abs=1e-12)


def test_norm_behaviour_without_rf():
    J = 100.0
    seq = _delay_sequence(0.02, J, 0.0)
    v0 = q.coherence_vector(Ix=0.6, Sy=0.3, IzSz=0.1, IxSy=0.5)
    res = q.run_sequence(seq, q.SpinSystemParams(J, 0.0), v0, sample_dt=1e-3)
    norms = np.linalg.norm(res.states[:, 1:], axis=1)
    np.testing.assert_allclose(norms, norms[0], atol=1e-12)
    res = q.run_sequence(_delay_sequence(0.02, J, 40.0), q.SpinSystemParams(J, 40.0), v0, sample_dt=1e-3)
    norms = np.linalg.norm(res.states[:, 1:], axis=1)
    assert np.all(np.diff(norms) <= 1e-14)
    v0 = q.coherence_vector(Ix=0.6, Sy=0.3)
    v0[0] = 0.5
    res = q.run_sequence(_delay_sequence(0.01, J, 40.0), q.SpinSystemParams(J, 40.0), v0, sample_dt=1e-3)
    assert np.all(res.states[:, 0] == 0.5)


def test_elements_reject_bad_values():
    with pytest.raises(ValueError):
        ShapedSegment([0.0], [float("inf")], [0.0], 1e-3)
    with pytest.raises(ValueError):
        HardPulse("I", 0.0, "x")


def _magnitudes(states):
    r1 = np.hypot(states[:, q.index("Ix")], states[:, q.index("Iz")])
    r2 = np.hypot(states[:, q.index("2IySz")], states[:, q.index("2IzSz")])
    return r1, r2


@pytest.mark.parametrize("xi", [0.4, 1.5])
def test_projection_equivalence_arbitrary_waveforms(xi):
    """Arbitrary y-phase rf with 2IzSz empty, then x-phase rf with Iz empty."""
    J = 100.0
    n = 3000
    dur = 2.5e-3
    t = np.arange(n) * dur / n
    nu_y = 150 * np.sin(2 * math.pi * t / dur) + 60 * np.cos(6 * math.pi * t / dur)
    seg1 = ShapedSegment(t, np.zeros(n), nu_y, dur, "I")
    nu_x = 150 * np.sin(math.pi * t / dur) ** 2
    seg3 = ShapedSegment(t, nu_x, np.zeros(n), dur, "I")
    params = q.SpinSystemParams(J, xi * J)
    for seg, init in ((seg1, q.coherence_vector(Ix=1.0)), (seg3, q.coherence_vector(Ix=0.5, IySz=0.3))):
        seq = PulseSequence([seg], J=J, k=xi * J, target="2IySz")
        res = q.run_sequence(seq, params, init, sample_dt=dur / 600)
        r1, r2 = _magnitudes(res.states)
        with np.errstate(invalid="ignore", divide="ignore"):
            u1 = np.where(r1 > 0, np.abs(res.states[:, q.index("Ix")]) / r1, 1.0)
            u2 = np.where(r2 > 0, np.abs(res.states[:, q.index("2IySz")]) / r2, 1.0)
        times, idx = np.unique(res.times * math.pi * J, return_index=True)
        sched = ControlSchedule(times, u1[idx], u2[idx])
        red = propagate((r1[0], r2[0]), sched, xi, step=1e-4)
        np.testing.assert_allclose(red.states[:, 0], r1[idx], atol=1e-6)
        np.testing.assert_allclose(red.states[:, 1], r2[idx], atol=1e-6)


def test_projection_equivalence_compiled_optimum():
    xi, J = 1.0, 100.0
    syn = synthesize(0.263, xi)
    seq = compile_schedule(syn.schedule, J, xi)
    res = q.run_sequence(seq, q.SpinSystemParams(J, xi * J))
    red = propagate((1, 0), syn.schedule, xi)
    r1, r2 = _magnitudes(res.states)
    # boundary states after the final hard pulse are unit rotations, magnitudes unaffected
    assert r2[-1] == pytest.approx(red.final[1], abs=1e-6)
    assert res.final[q.index("2IySz")] == pytest.approx(syn.geometry.eta_T, abs=5e-3)


def test_trajectory_export(tmp_path):
    J = 100.0
    res = q.run_sequence(_delay_sequence(1 / (2 * J), J, 0.0), q.SpinSystemParams(J, 0.0), sample_dt=1e-3)
    p = tmp_path / "tr.txt"
    res.save(p, "2IySz", ["test"])
    rows = np.loadtxt(p)
    assert rows.shape[1] == 7
    np.testing.assert_allclose(rows[:, 0], res.times, rtol=1e-11)
