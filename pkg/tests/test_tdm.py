import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tdmpol.tdm import (
    ENVELOPE_0V,
    ENVELOPE_REVERSE_BIAS,
    FramePhase,
    GateEnvelope,
    NoDarkWindowFound,
    SlotId,
    SlotSchedule,
    gate_envelope,
    recover_clock,
    slot_at,
    source_envelope,
    write_envelope_csv,
)

SCHED = SlotSchedule()


def replica(offset_ns, n_frames=2, dt=1.0, sched=SCHED):
    """Total power of the three gated sources, frames starting at ``offset_ns``."""
    t = np.arange(int(round(n_frames * sched.period_ns / dt))) * dt
    tau = np.mod(t - offset_ns, sched.period_ns)
    return sum(source_envelope(ENVELOPE_0V, sched, s, tau)
               for s in (SlotId.PILOT0, SlotId.PILOT45, SlotId.PROBE))


def wrapped_error(a, b, period=SCHED.period_ns):
    return abs((a - b + period / 2) % period - period / 2)


def test_default_frame_layout():
    assert SCHED.starts == (0.0, 600.0, 1200.0, 1760.0)
    assert SCHED.gated_window(SlotId.PILOT45, 40.0) == (640.0, 1200.0)
    with pytest.raises(ValueError):
        SlotSchedule(600, 600, 570, 30, 1800)
    with pytest.raises(ValueError):
        SlotSchedule(600, 600, 560, 40, 1900)


def test_slot_boundaries_are_half_open():
    ph = FramePhase(100.0)
    assert slot_at(SCHED, ph, 100.0) == SlotId.PILOT0
    assert slot_at(SCHED, ph, 699.999) == SlotId.PILOT0
    assert slot_at(SCHED, ph, 700.0) == SlotId.PILOT45
    assert slot_at(SCHED, ph, 1860.0) == SlotId.DARK
    assert slot_at(SCHED, ph, 1900.0) == SlotId.PILOT0
    assert list(slot_at(SCHED, ph, np.array([150.0, 1500.0]))) == [0, 2]
    with pytest.raises(ValueError):
        FramePhase(0.0, 1.5)


def test_envelope_shape():
    tau = np.linspace(0, 50, 5001)
    e = gate_envelope(ENVELOPE_0V, 600 + tau, 600.0)
    assert np.all(np.diff(e) <= 0)
    assert np.all((e >= ENVELOPE_0V.floor) & (e <= 1))
    assert gate_envelope(ENVELOPE_0V, 610.0, 600.0) <= 0.01
    # before the floor clamp the tail is knee * exp(-30 / 2) ~ 3e-9
    assert gate_envelope(GateEnvelope(off_floor_db=-200), 640.0, 600.0) <= 1e-8
    assert gate_envelope(ENVELOPE_0V, 300.0, 600.0) == 1.0
    assert gate_envelope(ENVELOPE_0V, -5.0, 600.0) == ENVELOPE_0V.floor


def test_bias_presets_share_the_envelope():
    t = np.linspace(-10, 700, 300)
    assert np.array_equal(gate_envelope(ENVELOPE_0V, t, 600), gate_envelope(ENVELOPE_REVERSE_BIAS, t, 600))


def test_fine_envelope_dump_extinction(tmp_path):
    t, p = write_envelope_csv(tmp_path / "envelope.csv", dt=0.1)
    data = np.loadtxt(tmp_path / "envelope.csv", delimiter=",", skiprows=1)
    assert np.allclose(data[:, 0], t, atol=1e-4)
    assert np.diff(data[:, 0]).max() == pytest.approx(0.1, abs=1e-6)
    at40 = data[np.argmin(np.abs(data[:, 0] - 40.0)), 1]
    assert 10 * np.log10(at40) <= -60.0


@given(st.floats(0.0, 1799.0), st.floats(-900.0, 900.0))
def test_clock_shift_equivariance(offset, shift):
    a = recover_clock(replica(offset), SCHED, dt=1.0)
    b = recover_clock(replica(offset + shift), SCHED, dt=1.0)
    assert wrapped_error(b.offset_ns, a.offset_ns + shift) <= 1.0
    assert wrapped_error(a.offset_ns, offset) <= 1.0


def test_clock_delayed_frame():
    a = recover_clock(replica(0.0), SCHED, dt=1.0)
    b = recover_clock(replica(555.0), SCHED, dt=1.0)
    assert wrapped_error(b.offset_ns - a.offset_ns, 555.0) <= 1.0


def test_clock_locks_at_20_db_snr():
    rng = np.random.default_rng(11)
    good = 0
    for _ in range(100):
        off = rng.uniform(0, SCHED.period_ns)
        y = replica(off)
        y = y + rng.normal(0.0, 0.1, y.shape)
        good += wrapped_error(recover_clock(y, SCHED, dt=1.0).offset_ns, off) <= 2.0
    assert good >= 99


def test_clock_failures():
    with pytest.raises(NoDarkWindowFound):
        recover_clock(np.ones(3600), SCHED, dt=1.0)
    with pytest.raises(ValueError):
        recover_clock(replica(0.0, n_frames=1), SCHED, dt=1.0)
    with pytest.raises(ValueError):
        recover_clock(replica(0.0), SCHED)


def test_clock_confidence_reflects_darkness():
    clean = recover_clock(replica(10.0), SCHED, dt=1.0)
    leaky = recover_clock(replica(10.0) + 0.2, SCHED, dt=1.0)
    assert clean.confidence > 0.9
    assert leaky.confidence < clean.confidence
