"""End-to-end frame simulation.

``run_slot`` evaluates each frame at the level of gated slot means: the
arrival Stokes vector of each pilot is averaged over its gated window by
midpoint quadrature, and detection noise is drawn for the window mean.
Leakage from neighbouring gate tails is below -60 dB after the 40 ns guard
and is neglected there.  The clock is taken as recovered.

``run_waveform`` synthesizes the full photocurrent traces at ``sample_dt_ns``
resolution with gate envelopes, recovers the clock from the total-power
replica, tracks the Dark-slot zero point and gates every frame.  It is
slower and is used for short runs, traces and the isolation checks.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels as K
from .channel import DgdElement, LinkModel, ScramblerModel
from .controller import ClockLost, Controller, GatedErrors, ZeroPoint
from .detection import ELEMENTARY_CHARGE, detect_stokes, reference_ratio
from .scenario import SOP_STOKES, ScenarioConfig
from .tdm import FramePhase, NoDarkWindowFound, SlotId, recover_clock, source_envelope
from .units import dbm_to_w

LOG_COLUMNS = ("frame_index", "phi_a", "phi_b", "delta_c", "rie0", "rie45", "clock_confidence")
CHUNK = 20000


class ClockFailure(RuntimeError):
    """No dark window found for longer than the grace period."""


@dataclass
class RunArtifacts:
    cfg: ScenarioConfig
    log: np.ndarray
    settle: int
    spots: dict = field(default_factory=dict)
    traces: Optional[dict] = None
    clock: Optional[FramePhase] = None

    @property
    def measured(self):
        """Log rows after the settling interval."""
        return self.log[self.settle:]

    @property
    def rie(self):
        return self.measured[:, 4:6]


def link_rows(link: LinkModel):
    rows = []
    for el in link.elements:
        if isinstance(el, ScramblerModel):
            for plate, rate in zip(el.plates, el.rates):
                rows.append([0.0, plate.orientation, rate, plate.retardation, 0.0, 0.0])
        elif isinstance(el, DgdElement):
            rows.append([1.0, *el.psp_axis, el.tau, 0.0])
    return np.array(rows, dtype=float).reshape(-1, 6)


def source_params(src):
    tc = src.chirp_time_constant_ns
    norm = -np.expm1(-src.pulse_ns / tc) if tc > 0 else 1.0
    return np.array([src.frequency_offset_hz, src.chirp_span_hz, tc, norm])


def detector_table(chain, apds):
    axes = chain.analyzer_axes()
    fr = chain.port_fractions()
    det = np.zeros((3, 9))
    for k, apd in enumerate(apds):
        det[k, :3] = axes[k]
        det[k, 3] = fr[k]
        det[k, 4] = apd.gain * apd.responsivity
        det[k, 5] = apd.gain
        det[k, 6] = apd.responsivity
        det[k, 7] = apd.noise_density ** 2 * apd.bandwidth
        det[k, 8] = 2 * ELEMENTARY_CHARGE * apd.bandwidth
    return det


def _segments(cfg: ScenarioConfig, total):
    """(first frame, frame count, probe SOP) of each probe segment."""
    sops = cfg.spot_sops or (cfg.probe_sop,)
    n_meas = total - cfg.n_settle
    bounds = [cfg.n_settle + (n_meas * i) // len(sops) for i in range(len(sops) + 1)]
    segs = [(0, cfg.n_settle, sops[0])] if cfg.n_settle else []
    segs += [(bounds[i], bounds[i + 1] - bounds[i], s) for i, s in enumerate(sops)]
    return [s for s in segs if s[1] > 0]


def _probe_count(cfg):
    if "spots" not in cfg.outputs or not cfg.probe_enabled:
        return 0
    width_ns = cfg.probe_ns - cfg.guard_ns
    return max(1, int(width_ns * 1e-9 * cfg.polarimeter_rate_hz))


def run_slot(cfg: ScenarioConfig, n_frames=None, progress: Callable = None):
    """Slot-level run of ``cfg``; ``n_frames`` overrides the measured frame count."""
    sched = cfg.schedule
    total = cfg.n_settle + (cfg.n_frames if n_frames is None else int(n_frames))
    rows = link_rows(cfg.link)
    p0, p45, probe = cfg.sources
    loss = cfg.link.total_loss_db
    pw0 = dbm_to_w(p0.peak_power_dbm - loss)
    pw45 = dbm_to_w(p45.peak_power_dbm - loss)
    chain, apds = cfg.chain, cfg.apds
    det = detector_table(chain, apds)
    k45 = reference_ratio(chain, apds)
    ctrl_cfg = cfg.control
    ctl = ctrl_cfg.vector()
    ctl[K.C_EVERY] = ctrl_cfg.check_schedule(sched)
    u, v = -chain.analyzer_axes()[0], -chain.analyzer_axes()[2]
    x = cfg.initial_state.as_array()
    mem = np.zeros(K.N_MEM)
    if ctrl_cfg.law == "observer":
        K.observer_init(x, mem, u, v)
    slots = np.array([sched.slot_bounds(s) for s in (SlotId.PILOT0, SlotId.PILOT45, SlotId.PROBE)])
    slots[:, 1] -= slots[:, 0]
    n_avg = (cfg.pilot0_ns - cfg.guard_ns) / cfg.sample_dt_ns if cfg.noise else 0.0
    src0, src45 = source_params(p0), source_params(p45)
    srcp = source_params(probe) if probe is not None else src0
    n_probe = _probe_count(cfg)
    rng = np.random.default_rng(cfg.seed)
    log = np.empty((total, 7))
    log[:, 0] = np.arange(total)
    log[:, 6] = 1.0
    spots = {}
    for first, count, sop in _segments(cfg, total):
        sp = np.asarray(SOP_STOKES[sop][1:], dtype=float)
        buf = np.empty((count if n_probe else 0, max(n_probe, 1), 3))
        done = 0
        while done < count:
            n = min(CHUNK, count - done)
            f0 = first + done
            normals = rng.standard_normal((n, 6)) if cfg.noise else np.zeros((n, 6))
            out = np.empty((n, 5))
            pbuf = buf[done:done + n] if n_probe else np.empty((n, 1, 3))
            K.track_chunk(f0, n, cfg.period_ns, rows, slots, cfg.guard_ns, cfg.quadrature_points,
                          np.array([1.0, 0.0, 0.0]), src0, pw0,
                          np.array([0.0, 1.0, 0.0]), src45, pw45,
                          sp, srcp, n_probe, det, n_avg, k45, normals,
                          x, mem, ctl, u, v, out, pbuf)
            log[f0:f0 + n, 1:6] = out
            done += n
            if progress is not None:
                progress(f0 + n, total)
        if n_probe and first >= cfg.n_settle:
            spots[sop] = buf.reshape(-1, 3)
    return RunArtifacts(cfg, log, cfg.n_settle, spots, None, FramePhase(0.0, 1.0))


# ---------------------------------------------------------------- waveform engine


def _frame_optics(cfg, rows, srcs, t_ns, sched, env):
    """Total received Stokes (W) at absolute times ``t_ns``; one row per sample."""
    tau = np.mod(t_ns - cfg.true_offset_ns, cfg.period_ns)
    total = np.zeros((len(t_ns), 4))
    for slot, src, pw, s_unit in srcs:
        e = source_envelope(env, sched, slot, tau)
        start = sched.starts[int(slot)]
        t_rel = np.clip(np.mod(tau - start, cfg.period_ns), 0.0, src.pulse_ns)
        on = np.flatnonzero(e > 1e-15)
        nu = src.frequency(t_rel[on])
        su = K.link_stokes_many(rows, t_ns[on] * 1e-9, nu, s_unit)
        p = pw * e[on]
        total[on, 0] += p
        total[on, 1:] += p[:, None] * su
    return total


def run_waveform(cfg: ScenarioConfig, n_frames=None, perturb: Callable = None,
                 progress: Callable = None):
    """Sample-level run of ``cfg``.

    ``perturb(frame_index, t_ns, tau_ns, stokes) -> stokes`` may modify the
    received Stokes samples of a frame before detection; ``tau_ns`` is the
    true frame-relative time of each sample.
    """
    sched, env = cfg.schedule, cfg.envelope
    dt = cfg.sample_dt_ns
    n_per = int(round(cfg.period_ns / dt))
    if not np.isclose(n_per * dt, cfg.period_ns):
        raise ValueError("period must be an integer number of samples")
    total = cfg.n_settle + (cfg.n_frames if n_frames is None else int(n_frames))
    rows = link_rows(cfg.link)
    loss = cfg.link.total_loss_db
    chain, apds = cfg.chain, cfg.apds
    k45 = reference_ratio(chain, apds)
    ctrl_cfg = cfg.control
    every = ctrl_cfg.check_schedule(sched)
    ctrl = Controller(ctrl_cfg, chain, cfg.initial_state, k45)
    zp = ZeroPoint(cfg.zero_point_window_frames, cfg.zero_point_mode)
    rng = np.random.default_rng(cfg.seed)
    p0, p45, probe = cfg.sources
    base = [(SlotId.PILOT0, p0), (SlotId.PILOT45, p45)]
    segs = _segments(cfg, total)

    def srcs_for(sop):
        out = [(slot, s, dbm_to_w(s.peak_power_dbm - loss), np.asarray(s.stokes[1:], float))
               for slot, s in base]
        if probe is not None:
            out.append((SlotId.PROBE, probe, dbm_to_w(probe.peak_power_dbm - loss),
                        np.asarray(SOP_STOKES[sop][1:], float)))
        return out

    def window(lo_ns, hi_ns):
        return slice(int(round(lo_ns / dt)), int(round(hi_ns / dt)))

    g0 = window(*sched.gated_window(SlotId.PILOT0, cfg.guard_ns))
    g45 = window(*sched.gated_window(SlotId.PILOT45, cfg.guard_ns))
    dark_end = sched.slot_bounds(SlotId.DARK)[1]
    gdark = window(dark_end - min(20.0, cfg.dark_ns / 2), dark_end)
    pol_step = max(1, int(round(1e9 / cfg.polarimeter_rate_hz / dt)))
    gprobe = window(*sched.gated_window(SlotId.PROBE, cfg.guard_ns))
    want_spots = "spots" in cfg.outputs and probe is not None

    log = np.full((total, 7), np.nan)
    log[:, 0] = np.arange(total)
    spots = {}
    traces = {"t_ns": [], "i90": [], "i0": [], "i45m": []}
    acq_frames = 2
    replica_hist = []
    phase = None
    confidence = 0.0
    t_next = 0.0
    misses = 0
    seg_idx = 0
    srcs = srcs_for(segs[0][2])
    for f in range(total):
        while seg_idx + 1 < len(segs) and f >= segs[seg_idx + 1][0]:
            seg_idx += 1
            srcs = srcs_for(segs[seg_idx][2])
        t = t_next + dt * np.arange(n_per)
        optics = _frame_optics(cfg, rows, srcs, t, sched, env)
        if perturb is not None:
            optics = perturb(f, t, np.mod(t - cfg.true_offset_ns, cfg.period_ns), optics)
        locked = phase is not None
        active = locked and f % every == 0
        applied = ctrl.setting() if active else ctrl.state
        m = K.actuator_rotation(applied.as_array())
        out = optics.copy()
        out[:, 1:] = optics[:, 1:] @ m.T
        normals = rng.standard_normal((n_per, 3)) if cfg.noise else None
        cur = detect_stokes(out, chain, apds, normals)
        replica = cur[:, 0] + cur[:, 1]
        if f < cfg.trace_frames:
            traces["t_ns"].append(t)
            for k, name in enumerate(("i90", "i0", "i45m")):
                traces[name].append(cur[:, k])
        replica_hist.append((t[0], replica))
        replica_hist = replica_hist[-acq_frames:]

        if locked:
            zp.push(cur[gdark].mean(axis=0))
            e = GatedErrors(cur[g0].mean(axis=0) - zp.value, cur[g45].mean(axis=0) - zp.value,
                            confidence, f)
            r0, r45 = _rie_or_nan(e, k45)
            if active:
                try:
                    ctrl.update(e)
                except ClockLost:
                    pass
            st = ctrl.state
            log[f, 1:] = (st.phi_a, st.phi_b, st.delta_c, r0, r45, confidence)
            if want_spots and segs[seg_idx][0] >= cfg.n_settle:
                sop = segs[seg_idx][2]
                pol = out[gprobe][::pol_step]
                spots.setdefault(sop, []).append(pol[:, 1:] / pol[:, :1])
        else:
            st = ctrl.state
            log[f, 1:4] = (st.phi_a, st.phi_b, st.delta_c)
            log[f, 6] = 0.0

        t_next += cfg.period_ns
        need_check = len(replica_hist) == acq_frames and (
            phase is None or (f + 1) % cfg.clock_reverify_frames == 0)
        if need_check:
            seq = np.concatenate([r for _, r in replica_hist])
            try:
                ph = recover_clock(seq, sched, dt=dt)
            except NoDarkWindowFound:
                misses += 1
                if misses > cfg.clock_grace_checks:
                    raise ClockFailure(f"no dark window for {misses} consecutive checks") from None
                continue
            misses = 0
            # the recovered offset is relative to the first sample of the replica window
            offset = np.mod(replica_hist[0][0] + ph.offset_ns, cfg.period_ns)
            offset = np.round(offset / dt) * dt
            confidence = ph.confidence
            if phase is None or not np.isclose(offset, phase.offset_ns, atol=dt / 2):
                phase = FramePhase(float(np.mod(offset, cfg.period_ns)), confidence)
                k = np.ceil((t_next - phase.offset_ns) / cfg.period_ns - 1e-9)
                t_next = phase.offset_ns + k * cfg.period_ns
                replica_hist = []
        if progress is not None:
            progress(f + 1, total)

    spots = {k: np.concatenate(v) for k, v in spots.items()}
    tr = None
    if traces["t_ns"]:
        tr = {k: np.concatenate(v) for k, v in traces.items()}
    return RunArtifacts(cfg, log, cfg.n_settle, spots, tr, phase)


def _rie_or_nan(e, k45):
    from .controller import ZeroReferencePower, compute_rie

    try:
        return compute_rie(e, k45)
    except ZeroReferencePower:
        return np.nan, np.nan


def simulate(cfg: ScenarioConfig, **kw):
    if cfg.engine == "waveform":
        return run_waveform(cfg, **kw)
    return run_slot(cfg, **kw)
