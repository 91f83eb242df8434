import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq, minimize

from conftest import random_unitary
from tdmpol import _kernels as K
from tdmpol.controller import (
    ActuatorState,
    ClockLost,
    ControlConfig,
    Controller,
    GatedErrors,
    MaxItersExceeded,
    StaticPlant,
    ZeroPoint,
    ZeroReferencePower,
    compute_rie,
    control_step,
    converge,
    dither_points,
    transformer_matrix,
)
from tdmpol.detection import TapPbsChain
from tdmpol.polarization import jones_to_stokes, mueller_rotation, stokes_to_jones, waveplate_matrix

x3 = st.lists(st.floats(-50, 50, allow_nan=False), min_size=3, max_size=3)


def skew(w):
    return np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])


def test_zero_state_composition():
    qh = waveplate_matrix(0, np.pi) @ waveplate_matrix(0, np.pi / 2)
    assert np.allclose(transformer_matrix(ActuatorState()), qh)
    # QWP then HWP at 0 deg: total retardation 3 pi / 2 about S1
    assert np.allclose(transformer_matrix(ActuatorState()), waveplate_matrix(0, 1.5 * np.pi))


@given(x3)
def test_kernel_rotation_matches_jones_composition(x):
    a = ActuatorState(*x)
    assert np.allclose(K.actuator_rotation(a.as_array()), mueller_rotation(transformer_matrix(a)),
                       atol=1e-12)


@given(x3)
def test_output_generators_match_finite_differences(x):
    x = np.array(x)
    m = K.actuator_rotation(x)
    j = K.output_generators(x)
    h = 1e-6
    for k in range(3):
        dx = np.zeros(3)
        dx[k] = h
        dm = (K.actuator_rotation(x + dx) - K.actuator_rotation(x - dx)) / (2 * h)
        assert np.allclose(dm @ m.T, skew(j[:, k]), atol=1e-7)


def test_two_plates_reach_zero_degrees_from_any_input():
    rng = np.random.default_rng(4)
    grid = np.linspace(0, np.pi, 61)
    ga, gb = np.meshgrid(grid, grid, indexing="ij")

    def s1_after(phi_a, phi_b, s):
        m = waveplate_matrix(phi_b, np.pi) @ waveplate_matrix(phi_a, np.pi / 2)
        return jones_to_stokes(m @ stokes_to_jones(s))[..., 1]

    for _ in range(20):
        v = rng.standard_normal(3)
        s = np.concatenate([[1.0], v / np.linalg.norm(v)])
        vals = s1_after(ga, gb, s)
        k = np.unravel_index(np.argmax(vals), vals.shape)
        res = minimize(lambda p: -s1_after(p[0], p[1], s), [grid[k[0]], grid[k[1]]],
                       method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14})
        assert -res.fun > 1 - 1e-9


@given(st.floats(-20, 20), st.integers(0, 2**31))
def test_phase_dof_leaves_rie0_unchanged(delta_c, seed):
    plant = StaticPlant(random_unitary(np.random.default_rng(seed)))
    a = ActuatorState(0.3, -1.1, 0.0)
    b = ActuatorState(0.3, -1.1, delta_c)
    assert abs(plant.rie(a)[0] - plant.rie(b)[0]) <= 1e-12


def test_delta_c_rotates_45_deg_pilot_about_s1():
    plant = StaticPlant(random_unitary(np.random.default_rng(2)))
    a = ActuatorState(0.7, -0.2, 0.0)
    deltas = np.linspace(0, np.pi, 7)
    out = np.array([jones_to_stokes(transformer_matrix(ActuatorState(a.phi_a, a.phi_b, d))
                                    @ stokes_to_jones(plant.arrival(1)))[1:] for d in deltas])
    assert np.allclose(out[:, 0], out[0, 0], atol=1e-12)
    turn = np.unwrap(np.arctan2(out[:, 2], out[:, 1]))
    assert np.allclose(turn - turn[0], deltas, atol=1e-12)
    rie0 = [plant.rie(ActuatorState(a.phi_a, a.phi_b, d))[0] for d in deltas]
    assert np.allclose(rie0, rie0[0], atol=1e-12)


def frame(i90_0, i0_0, p45=(0.5, 0.5, 0.0)):
    return GatedErrors(np.array([i90_0, i0_0, 0.0]), np.array(p45), 1.0)


def test_compute_rie_examples():
    assert compute_rie(frame(0.0, 1.0, (0.5, 0.5, 0.0)), 1.0) == (0.0, 0.0)
    assert compute_rie(frame(1.0, 0.0), 1.0)[0] == 1.0
    assert compute_rie(frame(0.5, 0.5), 1.0)[0] == 0.5
    # small negatives after zero-point removal clamp to 0
    assert compute_rie(GatedErrors(np.array([-1e-9, 1.0, 0]), np.array([0.5, 0.5, -1e-9])), 1.0) == (0, 0)
    with pytest.raises(ZeroReferencePower):
        compute_rie(frame(0.0, 0.0), 1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        ControlConfig(dither_amplitude=0.6, max_step=0.5)
    with pytest.raises(ValueError):
        ControlConfig(law="pid")
    from tdmpol.tdm import SlotSchedule

    with pytest.raises(ValueError):
        ControlConfig(iteration_period=1e-6).check_schedule(SlotSchedule())
    assert ControlConfig(iteration_period=3.6e-6).check_schedule(SlotSchedule()) == 2


def test_dither_points_order():
    pts = dither_points(ActuatorState(1.0, 2.0, 3.0), ControlConfig(dither_amplitude=0.1))
    assert [p.as_array().tolist() for p in pts[:2]] == [[0.9, 2.0, 3.0], [1.1, 2.0, 3.0]]
    assert len(pts) == 6
    assert len(dither_points(ActuatorState(), ControlConfig(phase_dof=False))) == 4


def test_gradient_sign_fidelity():
    rng = np.random.default_rng(5)
    d, h = 0.05, 1e-6
    agree = total = 0
    for _ in range(200):
        plant = StaticPlant(random_unitary(rng))
        x = rng.uniform(0, 2 * np.pi, 3)
        for j in range(3):
            which = 0 if j < 2 else 1

            def f(delta):
                y = x.copy()
                y[j] += delta
                return plant.rie(ActuatorState.from_array(y))[which]

            fd = (f(h) - f(-h)) / (2 * h)
            if abs(fd) < 1e-3:
                continue
            total += 1
            agree += np.sign((f(d) - f(-d)) / (2 * d)) == np.sign(fd)
    assert total > 500
    assert agree / total >= 0.99


def test_first_step_moves_against_the_gradient():
    rng = np.random.default_rng(8)
    cfg = ControlConfig()
    for _ in range(20):
        plant = StaticPlant(random_unitary(rng))
        x = rng.uniform(0, 2 * np.pi, 3)
        h = 1e-6
        fd = (plant.rie(ActuatorState(x[0] + h, *x[1:]))[0]
              - plant.rie(ActuatorState(x[0] - h, *x[1:]))[0]) / (2 * h)
        if abs(fd) < 1e-2:
            continue
        new = control_step(ActuatorState.from_array(x), plant.measure, cfg)
        assert np.sign(new.phi_a - x[0]) == -np.sign(fd)


def test_phi_a_saddle_holds_phi_a_and_moves_phi_b():
    plant = StaticPlant(random_unitary(np.random.default_rng(21)))
    cfg = ControlConfig()
    d = cfg.dither_amplitude
    phi_b, delta_c = 0.4, 0.0

    def slope(phi_a):
        lo = plant.rie(ActuatorState(phi_a - d, phi_b, delta_c))[0]
        hi = plant.rie(ActuatorState(phi_a + d, phi_b, delta_c))[0]
        return (hi - lo) / (2 * d)

    grid = np.linspace(0, np.pi, 400)
    s = np.array([slope(g) for g in grid])
    k = np.nonzero(np.sign(s[:-1]) != np.sign(s[1:]))[0][0]
    phi_a = brentq(slope, grid[k], grid[k + 1], xtol=1e-15)
    assert abs(slope(phi_a)) < cfg.slope_floor
    start = ActuatorState(phi_a, phi_b, delta_c)
    r_before = plant.rie(start)[0]
    assert r_before > 1e-3
    new = control_step(start, plant.measure, cfg)
    assert new.phi_a == phi_a
    assert new.phi_b != phi_b
    assert plant.rie(ActuatorState(new.phi_a, new.phi_b, delta_c))[0] < r_before


def test_converged_at_iteration_zero_for_aligned_identity():
    plant = StaticPlant()
    x0 = converge(ActuatorState(), plant, ControlConfig())[0]
    state, hist = converge(x0, plant, ControlConfig())
    assert len(hist) == 1 and state == x0


@pytest.mark.parametrize("law", ["dither", "observer"])
def test_converge_random_channels(law):
    rng = np.random.default_rng(99)
    for _ in range(10):
        plant = StaticPlant(random_unitary(rng))
        state, hist = converge(ActuatorState(), plant, ControlConfig(law=law))
        r0, r45 = plant.rie(state)
        assert r0 <= 1e-4 and r45 <= 1e-3
        assert np.array_equal(hist[-1], [r0, r45])


def test_misset_analyzer_leaves_relative_minimum():
    chain = TapPbsChain(analyzer45m_deg=-40.0)
    plant = StaticPlant(chain=chain)
    with pytest.raises(MaxItersExceeded) as info:
        converge(ActuatorState(), plant, ControlConfig(), max_iters=1500)
    # oracle: pin the 0 deg pilot with phi_a, phi_b, then scan delta_c alone
    x = converge(ActuatorState(), plant, ControlConfig(), rie45_tol=1.0)[0]
    scan = np.linspace(0, 2 * np.pi, 20001)
    floor = min(plant.rie(ActuatorState(x.phi_a, x.phi_b, c))[1] for c in scan)
    assert floor == pytest.approx((1 - np.sin(np.deg2rad(80))) / 2, rel=1e-3)
    assert info.value.rie45 == pytest.approx(floor, abs=2e-4)
    assert info.value.rie0 <= 1e-4


def test_clock_lost_holds_state():
    cfg = ControlConfig()
    plant = StaticPlant(random_unitary(np.random.default_rng(1)))

    def dark_clock(a):
        e = plant.measure(a)
        return GatedErrors(e.pilot0, e.pilot45, 0.1)

    with pytest.raises(ClockLost):
        control_step(ActuatorState(0.1, 0.2, 0.3), dark_clock, cfg)
    ctrl = Controller(ControlConfig(law="observer"), plant.chain, ActuatorState(0.1, 0.2, 0.3), plant.k45)
    before = ctrl.state
    with pytest.raises(ClockLost):
        ctrl.update(dark_clock(ctrl.setting()))
    assert ctrl.state == before and ctrl.held == 1
    ctrl.update(plant.measure(ctrl.setting()))
    assert ctrl.state != before


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=40),
       st.sampled_from(["dither", "observer"]))
def test_every_update_moves_each_parameter_at_most_max_step(rie_seq, law):
    cfg = ControlConfig(law=law, max_step=0.2, dither_amplitude=0.05)
    ctrl = Controller(cfg, TapPbsChain(), ActuatorState(), k45=1.0)
    prev = ctrl.state.as_array()
    for r0, r45 in rie_seq:
        ctrl.setting()
        ctrl.update(GatedErrors(np.array([r0, 1 - r0, 0.0]), np.array([0.5, 0.5, r45]), 1.0))
        now = ctrl.state.as_array()
        assert np.all(np.abs(now - prev) <= cfg.max_step + 1e-12)
        prev = now


def test_zero_point_rolling_and_frozen():
    zp = ZeroPoint(window_frames=3)
    for v in (1.0, 2.0, 3.0, 4.0):
        zp.push([v, 0, 0])
    assert zp.value[0] == pytest.approx(3.0)
    fz = ZeroPoint(mode="frozen")
    fz.push([5.0, 1.0, 0.0])
    fz.push([9.0, 9.0, 9.0])
    assert np.array_equal(fz.value, [5.0, 1.0, 0.0])
    assert np.array_equal(ZeroPoint().value, np.zeros(3))
    with pytest.raises(ValueError):
        ZeroPoint(mode="median")
