"""Compiled inner loops shared by the controller and the simulation engines.

Everything here works on 3x3 rotations of the reduced Stokes vector
``(s1, s2, s3)``.  Link elements are passed as rows of a float array::

    [0, phi0, rate, retardation, 0, 0]   rotating waveplate
    [1, n1, n2, n3, tau, 0]              first-order PMD section
"""
import math

import numpy as np
from numba import njit

LAW_DITHER = 0
LAW_OBSERVER = 1

# ctl parameter vector layout
C_LAW, C_D, C_MAXSTEP, C_GA, C_GB, C_GC, C_FLOOR, C_Q, C_R, C_RN, C_LAM, C_CONV, C_EVERY = range(13)
N_CTL = 13

# controller memory layout (dither law uses the first entries, observer the rest)
M_PHASE, M_EMINUS = 0, 1
M_Z0 = 2
M_P0 = 8
M_Z45 = 44
M_P45 = 50
N_MEM = 86

TET = np.array(
    [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
) / math.sqrt(3.0)
CONV_DIRS = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


@njit(cache=True)
def axis_rotation(n1, n2, n3, angle):
    c = math.cos(angle)
    s = math.sin(angle)
    k = 1.0 - c
    r = np.empty((3, 3))
    r[0, 0] = c + k * n1 * n1
    r[0, 1] = k * n1 * n2 - s * n3
    r[0, 2] = k * n1 * n3 + s * n2
    r[1, 0] = k * n2 * n1 + s * n3
    r[1, 1] = c + k * n2 * n2
    r[1, 2] = k * n2 * n3 - s * n1
    r[2, 0] = k * n3 * n1 - s * n2
    r[2, 1] = k * n3 * n2 + s * n1
    r[2, 2] = c + k * n3 * n3
    return r


@njit(cache=True)
def plate_rotation(phi, delta):
    return axis_rotation(math.cos(2 * phi), math.sin(2 * phi), 0.0, delta)


@njit(cache=True)
def actuator_rotation(x):
    a = plate_rotation(x[0], 0.5 * math.pi)
    b = plate_rotation(x[1], math.pi)
    c = plate_rotation(0.0, x[2])
    return c @ (b @ a)


@njit(cache=True)
def output_generators(x):
    """Columns are the output-frame rotation axes generated by each parameter."""
    a = plate_rotation(x[0], 0.5 * math.pi)
    b = plate_rotation(x[1], math.pi)
    c = plate_rotation(0.0, x[2])
    z = np.array([0.0, 0.0, 2.0])
    cb = c @ b
    j = np.empty((3, 3))
    j[:, 0] = cb @ (z - a @ z)
    j[:, 1] = c @ (z - b @ z)
    j[0, 2] = 1.0
    j[1, 2] = 0.0
    j[2, 2] = 0.0
    return j


@njit(cache=True)
def logrot(r):
    """Rotation vector ``theta * n`` of a 3x3 rotation matrix."""
    c = min(1.0, max(-1.0, 0.5 * (r[0, 0] + r[1, 1] + r[2, 2] - 1.0)))
    th = math.acos(c)
    w = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if th < 1e-9:
        return 0.5 * w
    if th > math.pi - 1e-6:
        # axis from the symmetric part
        b = 0.5 * (r + np.eye(3))
        k = 0
        for i in range(3):
            if b[i, i] > b[k, k]:
                k = i
        n = b[:, k] / math.sqrt(max(b[k, k], 1e-300))
        n = n / math.sqrt(n @ n)
        return th * n
    return th / (2 * math.sin(th)) * w


@njit(cache=True)
def damped_solve(j, w, lam, cols):
    """Minimum-norm damped least squares ``J^T (J J^T + lam I)^-1 w`` over the first ``cols`` columns."""
    jc = np.ascontiguousarray(j[:, :cols])
    g = jc @ jc.T + lam * np.eye(3)
    sol = np.linalg.solve(g, w)
    out = np.zeros(3)
    out[:cols] = jc.T @ sol
    return out


@njit(cache=True)
def link_rotation(rows, t, nu):
    m = np.eye(3)
    for i in range(rows.shape[0]):
        kind = rows[i, 0]
        if kind == 0.0:
            r = plate_rotation(rows[i, 1] + rows[i, 2] * t, rows[i, 3])
        else:
            r = axis_rotation(rows[i, 1], rows[i, 2], rows[i, 3], 2 * math.pi * nu * rows[i, 4])
        m = r @ m
    return m


@njit(cache=True)
def chirp(t_rel_ns, span, tc, norm):
    if span == 0.0:
        return 0.0
    if tc <= 0.0:
        return span
    return span * -math.expm1(-max(t_rel_ns, 0.0) / tc) / norm


@njit(cache=True)
def _rotate(n1, n2, n3, angle, v):
    c = math.cos(angle)
    s = math.sin(angle)
    d = (n1 * v[0] + n2 * v[1] + n3 * v[2]) * (1.0 - c)
    x = v[0] * c + (n2 * v[2] - n3 * v[1]) * s + n1 * d
    y = v[1] * c + (n3 * v[0] - n1 * v[2]) * s + n2 * d
    z = v[2] * c + (n1 * v[1] - n2 * v[0]) * s + n3 * d
    v[0] = x
    v[1] = y
    v[2] = z


@njit(cache=True)
def link_stokes(rows, t_s, nu, s):
    """Reduced Stokes vector ``s`` carried through the link at ``(t_s, nu)``."""
    v = s.copy()
    for i in range(rows.shape[0]):
        if rows[i, 0] == 0.0:
            phi = rows[i, 1] + rows[i, 2] * t_s
            _rotate(math.cos(2 * phi), math.sin(2 * phi), 0.0, rows[i, 3], v)
        else:
            _rotate(rows[i, 1], rows[i, 2], rows[i, 3], 2 * math.pi * nu * rows[i, 4], v)
    return v


@njit(cache=True)
def link_stokes_many(rows, t_s, nu, s):
    out = np.empty((t_s.shape[0], 3))
    for i in range(t_s.shape[0]):
        out[i] = link_stokes(rows, t_s[i], nu[i], s)
    return out


@njit(cache=True)
def slot_mean_stokes(rows, frame_t0_s, slot_start_ns, guard_ns, slot_len_ns, nq, s, src):
    """Mean arrival Stokes over the gated part of a source's own slot.

    ``src`` = (frequency offset Hz, chirp span Hz, chirp tc ns, chirp norm).
    """
    acc = np.zeros(3)
    width = slot_len_ns - guard_ns
    for q in range(nq):
        tr = guard_ns + (q + 0.5) * width / nq
        nu = src[0] + chirp(tr, src[1], src[2], src[3])
        acc += link_stokes(rows, frame_t0_s + (slot_start_ns + tr) * 1e-9, nu, s)
    return acc / nq


# ---------------------------------------------------------------- detection


@njit(cache=True)
def port_currents(stokes_unit, power_w, det, n_avg, normals):
    """Slot-mean output currents of the three ports, zero point removed.

    ``det`` rows (one per port): axis(3), fraction, gain*responsivity, gain,
    responsivity, in^2*B, 2qB.
    """
    out = np.empty(3)
    for k in range(3):
        proj = det[k, 0] * stokes_unit[0] + det[k, 1] * stokes_unit[1] + det[k, 2] * stokes_unit[2]
        p = det[k, 3] * power_w * 0.5 * (1.0 + proj)
        i = det[k, 4] * p
        if n_avg > 0:
            var = det[k, 7] + det[k, 8] * det[k, 6] * max(p, 0.0)
            i += det[k, 5] * math.sqrt(var / n_avg) * normals[k]
        out[k] = i
    return out


@njit(cache=True)
def rie_pair(c0, c45, k45):
    """RIE_0 from Pilot0-slot currents and RIE_45 from Pilot45-slot currents.

    Returns NaN for a non-positive reference.
    """
    tot0 = c0[0] + c0[1]
    tot45 = c45[0] + c45[1]
    r0 = np.nan
    r45 = np.nan
    if tot0 > 0:
        r0 = min(1.0, max(0.0, c0[0] / tot0))
    if tot45 > 0:
        r45 = min(1.0, max(0.0, c45[2] / (k45 * tot45)))
    return r0, r45


# ---------------------------------------------------------------- control laws


@njit(cache=True)
def _clip(v, lim):
    return min(lim, max(-lim, v))


@njit(cache=True)
def dither_cycle_len(ctl):
    return 4 if ctl[C_CONV] != 0.0 else 6


@njit(cache=True)
def dither_applied(x, mem, ctl):
    ph = int(mem[M_PHASE])
    j = ph // 2
    sign = 1.0 if ph % 2 == 1 else -1.0
    xa = x.copy()
    xa[j] += sign * ctl[C_D]
    return xa


@njit(cache=True)
def dither_update(x, mem, ctl, rie0, rie45):
    """Consume one frame; after a (-D, +D) pair step the dithered parameter."""
    ph = int(mem[M_PHASE])
    j = ph // 2
    e = rie45 if j == 2 else rie0
    if ph % 2 == 0:
        mem[M_EMINUS] = e
    else:
        slope = (e - mem[M_EMINUS]) / (2 * ctl[C_D])
        if math.isfinite(slope) and abs(slope) >= ctl[C_FLOOR]:
            x[j] -= _clip(ctl[C_GA + j] * slope, ctl[C_MAXSTEP])
    mem[M_PHASE] = (ph + 1) % dither_cycle_len(ctl)


@njit(cache=True)
def _kf_init(mem, zoff, poff, p):
    for i in range(6):
        mem[zoff + i] = 0.0
    for i in range(3):
        mem[zoff + i] = p[i]
    for i in range(36):
        mem[poff + i] = 0.0
    for i in range(3):
        mem[poff + 7 * i] = 1.0
        mem[poff + 7 * (i + 3)] = 1e-2


@njit(cache=True)
def _kf_update(mem, zoff, poff, a, y, r):
    z = mem[zoff:zoff + 6].copy()
    pm = mem[poff:poff + 36].copy().reshape(6, 6)
    h = np.zeros(6)
    h[:3] = a
    ph = pm @ h
    s = h @ ph + r
    k = ph / s
    innov = y - h @ z
    mem[zoff:zoff + 6] = z + k * innov
    mem[poff:poff + 36] = (pm - np.outer(k, ph)).ravel()


@njit(cache=True)
def _kf_predict(mem, zoff, poff, q):
    for i in range(3):
        mem[zoff + i] += mem[zoff + i + 3]
    pm = mem[poff:poff + 36].copy().reshape(6, 6)
    f = np.eye(6)
    for i in range(3):
        f[i, i + 3] = 1.0
    pn = f @ pm @ f.T
    for i in range(3):
        pn[i, i] += 0.1 * q
        pn[i + 3, i + 3] += q
    mem[poff:poff + 36] = pn.ravel()


@njit(cache=True)
def _kf_step(mem, zoff, poff, a, y, r, rn, q):
    _kf_update(mem, zoff, poff, a, y, r)
    p = mem[zoff:zoff + 3].copy()
    nrm = math.sqrt(p @ p)
    if nrm > 0:
        _kf_update(mem, zoff, poff, p / nrm, 1.0, rn)
    _kf_predict(mem, zoff, poff, q)


@njit(cache=True)
def observer_init(x, mem, u, v):
    """Start both estimators at the arrival states that the setting ``x`` would align."""
    m = actuator_rotation(x)
    mem[M_PHASE] = 0.0
    _kf_init(mem, M_Z0, M_P0, m.T @ u)
    _kf_init(mem, M_Z45, M_P45, m.T @ v)


@njit(cache=True)
def observer_applied(x, mem, ctl):
    k = int(mem[M_PHASE])
    j = output_generators(x)
    if ctl[C_CONV] != 0.0:
        eps = ctl[C_D] * CONV_DIRS[k % 4]
        d = damped_solve(j, eps, ctl[C_LAM], 2)
    else:
        eps = ctl[C_D] * TET[k % 4]
        d = damped_solve(j, eps, ctl[C_LAM], 3)
    xa = x.copy()
    for i in range(3):
        xa[i] += _clip(d[i], ctl[C_MAXSTEP])
    return xa


@njit(cache=True)
def _nearest(base, period, ref):
    return base + period * round((ref - base) / period)


@njit(cache=True)
def two_plate_solution(x, p0, u):
    """(phi_a, phi_b) nearest to ``x`` that send ``p0`` to ``u`` with ``delta_c`` fixed.

    The quarter-wave plate is aligned with the ellipse axis of ``p0`` (four
    branches per turn), which makes the state linear; the half-wave plate
    then rotates it onto the azimuth of ``u`` seen through the inverse of
    the fixed retarder.  Closed form avoids the local minima that gradient
    steps meet on this two-parameter chart.
    """
    out = np.empty(2)
    if p0[0] * p0[0] + p0[1] * p0[1] > 1e-18:
        psi = 0.5 * math.atan2(p0[1], p0[0])
        out[0] = _nearest(psi, 0.5 * math.pi, x[0])
    else:
        out[0] = x[0]
    lin = plate_rotation(out[0], 0.5 * math.pi) @ p0
    beta = math.atan2(lin[1], lin[0])
    uc = plate_rotation(0.0, x[2]).T @ u
    alpha = math.atan2(uc[1], uc[0])
    out[1] = _nearest(0.25 * (alpha + beta), 0.5 * math.pi, x[1])
    return out


@njit(cache=True)
def observer_update(x, mem, ctl, xa, rie0, rie45, u, v):
    """Fuse one frame into both arrival-state estimators and re-aim ``x``.

    ``u`` and ``v`` are the output Stokes directions the 0 deg and 45 deg
    pilots should take (the antipodes of the blocked analyzer axes).
    """
    m = actuator_rotation(xa)
    conv = ctl[C_CONV] != 0.0
    if math.isfinite(rie0):
        _kf_step(mem, M_Z0, M_P0, m.T @ u, 1.0 - 2.0 * rie0, ctl[C_R], ctl[C_RN], ctl[C_Q])
    if not conv and math.isfinite(rie45):
        _kf_step(mem, M_Z45, M_P45, m.T @ v, 1.0 - 2.0 * rie45, ctl[C_R], ctl[C_RN], ctl[C_Q])
    mem[M_PHASE] = (mem[M_PHASE] + 1.0) % 4.0

    p0 = mem[M_Z0:M_Z0 + 3].copy()
    p0 /= math.sqrt(p0 @ p0)
    x0 = x.copy()
    if conv:
        x[:2] = two_plate_solution(x, p0, u)
    else:
        p45 = mem[M_Z45:M_Z45 + 3].copy()
        p45 -= (p45 @ p0) * p0
        p45 /= math.sqrt(p45 @ p45)
        v2 = v - (v @ u) * u
        v2 /= math.sqrt(v2 @ v2)
        src = np.empty((3, 3))
        dst = np.empty((3, 3))
        src[:, 0] = p0
        src[:, 1] = p45
        src[:, 2] = np.cross(p0, p45)
        dst[:, 0] = u
        dst[:, 1] = v2
        dst[:, 2] = np.cross(u, v2)
        target = dst @ src.T
        for _ in range(2):
            w = logrot(target @ actuator_rotation(x).T)
            d = damped_solve(output_generators(x), w, ctl[C_LAM], 3)
            x += d
    for i in range(3):
        x[i] = x0[i] + _clip(x[i] - x0[i], ctl[C_MAXSTEP])


@njit(cache=True)
def law_applied(x, mem, ctl):
    if ctl[C_LAW] == LAW_OBSERVER:
        return observer_applied(x, mem, ctl)
    return dither_applied(x, mem, ctl)


@njit(cache=True)
def law_update(x, mem, ctl, xa, rie0, rie45, u, v):
    if ctl[C_LAW] == LAW_OBSERVER:
        observer_update(x, mem, ctl, xa, rie0, rie45, u, v)
    else:
        dither_update(x, mem, ctl, rie0, rie45)


# ---------------------------------------------------------------- slot-level engine


@njit(cache=True)
def track_chunk(frame0, n, period_ns, rows, slots, guard_ns, nq,
                s0, src0, pw0, s45, src45, pw45,
                sp, srcp, n_probe,
                det, n_avg, k45, normals,
                x, mem, ctl, u, v, log, probe_out):
    """Run ``n`` frames of the slot-level plant with the controller in the loop.

    ``slots`` holds the (start, length) in ns of Pilot0, Pilot45 and Probe.
    The law runs on every ``ctl[C_EVERY]``-th frame; other frames hold.
    ``log`` rows receive (phi_a, phi_b, delta_c, rie0, rie45) with the
    nominal parameters after the frame's update.  ``probe_out`` receives
    ``n_probe`` gated probe Stokes samples per frame behind the transformer.
    """
    for f in range(n):
        t0 = (frame0 + f) * period_ns * 1e-9
        a0 = slot_mean_stokes(rows, t0, slots[0, 0], guard_ns, slots[0, 1], nq, s0, src0)
        a45 = slot_mean_stokes(rows, t0, slots[1, 0], guard_ns, slots[1, 1], nq, s45, src45)
        active = (frame0 + f) % int(ctl[C_EVERY]) == 0
        if active:
            xa = law_applied(x, mem, ctl)
        else:
            xa = x.copy()
        m = actuator_rotation(xa)
        c0 = port_currents(m @ a0, pw0, det, n_avg, normals[f, 0:3])
        c45 = port_currents(m @ a45, pw45, det, n_avg, normals[f, 3:6])
        r0, r45 = rie_pair(c0, c45, k45)
        if active:
            law_update(x, mem, ctl, xa, r0, r45, u, v)
        log[f, 0] = x[0]
        log[f, 1] = x[1]
        log[f, 2] = x[2]
        log[f, 3] = r0
        log[f, 4] = r45
        if n_probe > 0:
            width = slots[2, 1] - guard_ns
            for q in range(n_probe):
                tr = guard_ns + (q + 0.5) * width / n_probe
                nu = srcp[0] + chirp(tr, srcp[1], srcp[2], srcp[3])
                probe_out[f, q, :] = m @ link_stokes(rows, t0 + (slots[2, 0] + tr) * 1e-9, nu, sp)


@njit(cache=True)
def link_rotations(rows, t_s, nu):
    """Vectorized ``link_rotation`` over matching arrays of times and frequencies."""
    out = np.empty((t_s.shape[0], 3, 3))
    for i in range(t_s.shape[0]):
        out[i] = link_rotation(rows, t_s[i], nu[i])
    return out
