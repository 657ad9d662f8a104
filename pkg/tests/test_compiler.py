import math

import numpy as np
import pytest

from ropekit import quantum as q
from ropekit.analytic import eta_max
from ropekit.compiler import (
    ANTIPHASE_TARGETS,
    INPHASE_TARGETS,
    CompileError,
    Delay,
    HardPulse,
    ShapedSegment,
    compile_schedule,
    load_sequence,
    roundtrip_check,
    save_sequence,
)
from ropekit.reduced import ControlSchedule, constant_schedule, propagate
from ropekit.synthesis import synthesize

J = 100.0


@pytest.fixture(scope="module")
def rope():
    syn = synthesize(0.263, 1.0)
    return syn, compile_schedule(syn.schedule, J, 1.0)


def test_structure_and_flip_angles(rope):
    syn, seq = rope
    first, last = seq.elements[0], seq.elements[-1]
    assert isinstance(first, HardPulse) and first.phase_axis == "-y" and first.target_spin == "I"
    assert isinstance(last, HardPulse) and last.phase_axis == "-x"
    assert first.flip_angle == pytest.approx(math.acos(syn.schedule.u1[0]), abs=1e-12)
    assert math.degrees(first.flip_angle) == pytest.approx(55, abs=0.5)
    assert last.flip_angle == pytest.approx(math.acos(syn.schedule.u2[-1]), abs=1e-12)
    assert seq.duration == pytest.approx(0.263 / J, rel=1e-12)


def test_phase_specific_rf_components(rope):
    _, seq = rope
    shaped = seq.shaped_segments
    assert len(shaped) == 2
    ph1, ph3 = shaped
    assert np.all(ph1.nu_x == 0) and np.any(ph1.nu_y != 0)
    assert np.all(ph3.nu_y == 0) and np.any(ph3.nu_x != 0)
    assert all(s.spin == "I" for s in shaped)


def test_product_pair_untouched_in_phase_one(rope):
    syn, seq = rope
    res = q.run_sequence(seq, seq.params, sample_dt=seq.duration / 2000)
    tau_s = syn.geometry.tau_rescaled / (math.pi * J)
    early = res.times < tau_s * 0.999
    assert np.max(np.abs(res.expectation("2IzSz")[early])) < 1e-12
    mid = (res.times > tau_s * 1.001) & (res.times < seq.duration - tau_s * 1.001)
    assert np.max(np.abs(res.expectation("Iz")[mid])) < 1e-6
    assert np.max(np.abs(res.expectation("2IzSz")[mid])) < 1e-6


def test_roundtrip_matches_reduced_prediction(rope):
    syn, seq = rope
    predicted = propagate((1, 0), syn.schedule, 1.0).final[1]
    assert roundtrip_check(seq) == pytest.approx(predicted, abs=1e-6)
    assert roundtrip_check(seq) == pytest.approx(syn.geometry.eta_T, abs=5e-3)
    assert seq.notes["element_I"]["predicted_r2"] == pytest.approx(predicted, abs=1e-12)


@pytest.mark.parametrize("target", ["2IySz", "2IxSx", "2IzSy", "Sx", "Sy", "Sz"])
def test_targets_round_trip(target):
    xi = 0.6
    syn = synthesize(0.4, xi)
    seq = compile_schedule(syn.schedule, J, xi, target)
    r1_end, pred = propagate((1, 0), syn.schedule, xi).final
    expected = pred if target in ANTIPHASE_TARGETS else pred * pred
    assert target in ANTIPHASE_TARGETS + INPHASE_TARGETS
    assert roundtrip_check(seq) == pytest.approx(expected, abs=1e-6)
    if target in ANTIPHASE_TARGETS:
        # whatever is not in the target is the untransferred source magnitude
        res = q.run_sequence(seq, seq.params)
        rest = [res.final[q.index(lab)] for lab in q.BASIS_LABELS if lab not in (target, "E/2")]
        assert math.hypot(*rest) == pytest.approx(r1_end, abs=1e-6)


def test_constant_schedule_is_a_pure_delay():
    seq = compile_schedule(constant_schedule(math.pi / 4), J, 1.0)
    assert len(seq.elements) == 1 and isinstance(seq.elements[0], Delay)
    assert seq.elements[0].duration == pytest.approx(1 / (4 * J), rel=1e-14)
    assert roundtrip_check(seq) == pytest.approx(math.exp(-math.pi / 4) * math.sin(math.pi / 4), abs=1e-12)


def test_lossless_transfer():
    syn = synthesize(0.5, 0.0)
    assert roundtrip_check(compile_schedule(syn.schedule, J, 0.0)) == pytest.approx(1.0, abs=1e-12)


def test_long_horizon_approaches_bound():
    xi = 1.0
    seq = compile_schedule(synthesize(2.0, xi).schedule, J, xi)
    val = roundtrip_check(seq)
    assert val <= eta_max(xi)
    assert eta_max(xi) - val < 5e-3


def test_rf_cap_and_substitution(rope):
    syn, seq = rope
    assert seq.notes["element_I"]["hard_pulse_substitutions"] >= 1
    for s in seq.shaped_segments:
        assert s.peak_amplitude <= 100 * J * (1 + 1e-12)
    with pytest.raises(CompileError):
        compile_schedule(syn.schedule, J, 1.0, substitute_hard_pulses=False)
    tight = compile_schedule(syn.schedule, J, 1.0, rf_cap=2.0)
    assert all(s.peak_amplitude <= 2 * J * (1 + 1e-12) for s in tight.shaped_segments)
    assert roundtrip_check(tight) == pytest.approx(syn.geometry.eta_T, abs=5e-3)


def test_rejected_schedules():
    both = ControlSchedule([0, 0.5, 1.0], [0.5, 0.6, 1.0], [1.0, 0.5, 1.0])
    with pytest.raises(CompileError):
        compile_schedule(both, J, 1.0)
    starts_low = ControlSchedule([0, 1.0], [1.0, 1.0], [0.5, 1.0])
    with pytest.raises(CompileError):
        compile_schedule(starts_low, J, 1.0)
    with pytest.raises(ValueError):
        compile_schedule(constant_schedule(1.0), J, 1.0, target="Iz")
    with pytest.raises(ValueError):
        compile_schedule(constant_schedule(1.0), -1.0, 1.0)


def test_save_load_round_trip(rope, tmp_path):
    _, seq = rope
    manifest = save_sequence(seq, tmp_path, "rope", ["test header"])
    back = load_sequence(manifest)
    assert back.target == seq.target and back.J == seq.J
    assert [type(e) for e in back.elements] == [type(e) for e in seq.elements]
    assert roundtrip_check(back) == pytest.approx(roundtrip_check(seq), abs=1e-9)
    text = (tmp_path / "rope_shape0.txt").read_text()
    assert text.startswith("# test header\n# J_Hz=100\n")
    rows = np.loadtxt(tmp_path / "rope_shape0.txt")
    np.testing.assert_allclose(rows[:, 2] / J, rows[:, 4], rtol=1e-11)


def test_shaped_segment_validation():
    with pytest.raises(ValueError):
        ShapedSegment([0.1, 0.2], [0, 0], [0, 0], 1.0)
    with pytest.raises(ValueError):
        ShapedSegment([0.0, 1.0], [0, 0], [0, 0], 1.0)
    with pytest.raises(ValueError):
        Delay(-1e-3)
