"""TDM frame layout, laser gate envelopes and clock recovery.

All times in this module are in nanoseconds.  A frame is laid out as
``Pilot0 | Pilot45 | Probe | Dark`` starting at the frame offset.
"""
import csv
import enum
from dataclasses import dataclass

import numpy as np


class NoDarkWindowFound(RuntimeError):
    """The power replica has no low-light interval to lock onto."""


class SlotId(enum.IntEnum):
    PILOT0 = 0
    PILOT45 = 1
    PROBE = 2
    DARK = 3


@dataclass(frozen=True)
class SlotSchedule:
    pilot0_ns: float = 600.0
    pilot45_ns: float = 600.0
    probe_ns: float = 560.0
    dark_ns: float = 40.0
    period_ns: float = 1800.0

    def __post_init__(self):
        total = self.pilot0_ns + self.pilot45_ns + self.probe_ns + self.dark_ns
        if not np.isclose(total, self.period_ns):
            raise ValueError(f"slots sum to {total} ns, period is {self.period_ns} ns")
        if self.dark_ns < 40.0:
            raise ValueError("clock recovery needs a dark interval of at least 40 ns")

    @property
    def durations(self):
        return (self.pilot0_ns, self.pilot45_ns, self.probe_ns, self.dark_ns)

    @property
    def starts(self):
        d = self.durations
        return (0.0, d[0], d[0] + d[1], d[0] + d[1] + d[2])

    def slot_bounds(self, slot):
        start = self.starts[int(slot)]
        return start, start + self.durations[int(slot)]

    def gated_window(self, slot, guard_ns):
        """``[start + guard, end)`` of a slot, relative to the frame start."""
        start, end = self.slot_bounds(slot)
        return start + min(guard_ns, end - start), end


@dataclass(frozen=True)
class FramePhase:
    offset_ns: float = 0.0
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")


def slot_at(sched: SlotSchedule, phase: FramePhase, t):
    """SlotId of time(s) ``t``; boundaries are half-open ``[start, end)``.

    Returns a ``SlotId`` for scalar ``t`` and an integer array otherwise.
    """
    rel = np.mod(np.asarray(t, dtype=float) - phase.offset_ns, sched.period_ns)
    edges = np.array(sched.starts[1:])
    idx = np.searchsorted(edges, rel, side="right")
    if np.ndim(idx) == 0:
        return SlotId(int(idx))
    return idx


@dataclass(frozen=True)
class GateEnvelope:
    """Relative optical power of a directly modulated laser around its on-slot.

    After the slot ends the power follows a raised-cosine fall from 1 to
    ``knee`` over ``fall_initial_ns``, then an exponential tail with
    ``tail_time_constant_ns``, floored at ``off_floor_db``.
    """

    rise_ns: float = 5.0
    fall_initial_ns: float = 10.0
    knee: float = 0.01
    tail_time_constant_ns: float = 2.0
    off_floor_db: float = -100.0
    off_bias_v: float = 0.0

    @property
    def floor(self):
        return 10.0 ** (self.off_floor_db / 10.0)


# Two laser-off bias schemes were compared on hardware with indistinguishable
# results; both presets therefore share the same envelope.
ENVELOPE_0V = GateEnvelope(off_bias_v=0.0)
ENVELOPE_REVERSE_BIAS = GateEnvelope(off_bias_v=-0.7)


def gate_envelope(env: GateEnvelope, slot_relative_t, slot_len):
    """Relative power at time(s) since the gate opened for a slot of ``slot_len`` ns."""
    t = np.asarray(slot_relative_t, dtype=float)
    out = np.full(t.shape, env.floor)
    on = (t >= 0) & (t < slot_len)
    if env.rise_ns > 0:
        rising = np.clip(t / env.rise_ns, 0.0, 1.0)
    else:
        rising = np.ones_like(t)
    out = np.where(on, np.maximum(rising, env.floor), out)
    tau = t - slot_len
    fall = (tau >= 0) & (tau < env.fall_initial_ns)
    cos_part = env.knee + (1 - env.knee) * 0.5 * (
        1 + np.cos(np.pi * np.clip(tau, 0, None) / env.fall_initial_ns)
    )
    # the fall starts from the level reached at switch-off (short slots never fully rise)
    level = min(1.0, slot_len / env.rise_ns) if env.rise_ns > 0 else 1.0
    out = np.where(fall, level * cos_part, out)
    tail = tau >= env.fall_initial_ns
    tail_val = level * env.knee * np.exp(
        -(np.clip(tau, env.fall_initial_ns, None) - env.fall_initial_ns)
        / env.tail_time_constant_ns
    )
    out = np.where(tail, tail_val, out)
    out = np.maximum(out, env.floor)
    if np.ndim(out) == 0:
        return float(out)
    return out


def source_envelope(env: GateEnvelope, sched: SlotSchedule, slot, t_frame):
    """Relative power of the source gated on ``slot`` at frame-relative time(s).

    Tails that cross the frame boundary wrap into the next frame.
    """
    start, end = sched.slot_bounds(slot)
    rel = np.mod(np.asarray(t_frame, dtype=float) - start, sched.period_ns)
    return gate_envelope(env, rel, end - start)


def write_envelope_csv(path, env: GateEnvelope = ENVELOPE_0V, slot_len=600.0,
                       dt=1.0, before_ns=20.0, after_ns=60.0):
    """Dump the rear edge of one pulse as ``t_ns, relative_power``.

    ``t_ns = 0`` is the switch-off instant.
    """
    n = int(round((before_ns + after_ns) / dt)) + 1
    t = -before_ns + dt * np.arange(n)
    p = gate_envelope(env, t + slot_len, slot_len)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ns", "relative_power"])
        for ti, pi in zip(t, p):
            w.writerow([f"{ti:.4f}", f"{pi:.6e}"])
    return t, p


def recover_clock(total_power, sched: SlotSchedule, dt=None, rise_ns=5.0):
    """Frame offset from the total-power replica.

    ``total_power`` is either a ``PhotocurrentTrace`` or a plain array
    sampled at ``dt`` ns with the first sample at ``t = 0``.  The trace is
    folded modulo one period, the minimum-energy window of width ``dark_ns``
    is located, and the offset is refined on the half-power crossing of the
    rising pilot edge that follows the dark window.
    """
    if hasattr(total_power, "samples"):
        y = np.asarray(total_power.samples, dtype=float)
        dt = total_power.dt
        t0 = total_power.t0
    else:
        y = np.asarray(total_power, dtype=float)
        t0 = 0.0
    if dt is None:
        raise ValueError("sample interval required")
    if dt > sched.dark_ns / 4:
        raise ValueError("sample interval must be at most a quarter of the dark slot")
    n_per = int(round(sched.period_ns / dt))
    if not np.isclose(n_per * dt, sched.period_ns):
        raise ValueError("period must be an integer number of samples")
    n_periods = len(y) // n_per
    if n_periods < 2:
        raise ValueError("clock recovery needs at least two periods")
    folded = y[: n_periods * n_per].reshape(n_periods, n_per).mean(axis=0)
    mean_power = folded.mean()
    w = int(round(sched.dark_ns / dt))
    ext = np.concatenate([folded, folded[:w]])
    csum = np.concatenate([[0.0], np.cumsum(ext)])
    window = (csum[w:w + n_per] - csum[:n_per]) / w
    m = int(np.argmin(window))
    if mean_power <= 0 or window[m] > 0.5 * mean_power:
        raise NoDarkWindowFound(
            f"darkest {sched.dark_ns} ns window holds {window[m]:.3g} of mean {mean_power:.3g}"
        )
    coarse = (m + w) % n_per  # first sample after the dark window

    # half-power crossing of the pilot rising edge
    seg_len = int(round(4 * max(rise_ns, dt) / dt)) + 2
    back = w // 2
    idx = (coarse - back + np.arange(seg_len + back)) % n_per
    seg = folded[idx]
    low = window[m]
    on_idx = (coarse + int(round((rise_ns + 20.0) / dt)) + np.arange(int(round(20 / dt)) + 1)) % n_per
    high = folded[on_idx].mean()
    half = 0.5 * (low + high)
    above = np.nonzero(seg >= half)[0]
    offset_samples = float(coarse)
    if above.size and above[0] > 0 and high > low:
        k = above[0]
        frac = (half - seg[k - 1]) / (seg[k] - seg[k - 1])
        crossing = (coarse - back) + (k - 1) + frac
        offset_samples = crossing - rise_ns / (2 * dt)
    offset = np.mod(t0 + offset_samples * dt, sched.period_ns)
    confidence = float(np.clip(1.0 - window[m] / mean_power, 0.0, 1.0))
    if np.isclose(offset, sched.period_ns):
        offset = 0.0
    return FramePhase(float(offset), confidence)
