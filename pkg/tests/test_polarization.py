import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from tdmpol.polarization import (
    NotFullyPolarized,
    analyzer_power,
    antipode,
    degree_of_polarization,
    is_lossless,
    jones_to_stokes,
    linear_stokes,
    mueller_rotation,
    rotate_vectors,
    rotation_matrix,
    sphere_angle,
    stokes_to_jones,
    waveplate_matrix,
)

angles = st.floats(-20.0, 20.0, allow_nan=False)
retard = st.floats(0.0, 4 * np.pi, allow_nan=False)
r2 = np.sqrt(0.5)


def unit_vec(draw_floats):
    v = np.array(draw_floats)
    return v / np.linalg.norm(v)


components = st.lists(st.floats(-1, 1, allow_nan=False), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 0.1)


@pytest.mark.parametrize("jones, stokes", [
    ((1, 0), (1, 1, 0, 0)),
    ((0, 1), (1, -1, 0, 0)),
    ((r2, r2), (1, 0, 1, 0)),
    ((r2, -r2), (1, 0, -1, 0)),
    ((r2, 1j * r2), (1, 0, 0, 1)),
    ((r2, -1j * r2), (1, 0, 0, -1)),
])
def test_basis_states(jones, stokes):
    assert np.allclose(jones_to_stokes(np.array(jones, dtype=complex)), stokes)


def test_quarter_wave_at_45_deg_makes_horizontal_circular():
    # worked by hand: M (1, 0) = (1, -i)/sqrt(2), so s3 = 2 Im(ex* ey) = -1
    out = jones_to_stokes(waveplate_matrix(np.pi / 4, np.pi / 2) @ np.array([1, 0], dtype=complex))
    assert np.allclose(out, [1, 0, 0, -1])


def test_half_wave_at_22_5_deg_makes_horizontal_diagonal():
    out = jones_to_stokes(waveplate_matrix(np.pi / 8, np.pi) @ np.array([1, 0], dtype=complex))
    assert np.allclose(out, [1, 0, 1, 0])


@given(components, st.floats(0.01, 10.0))
@example([-1.0, 0.0, 1e-6], 1.0)
def test_stokes_jones_round_trip(v, power):
    s = np.concatenate([[power], power * unit_vec(v)])
    assert np.allclose(jones_to_stokes(stokes_to_jones(s)), s, atol=1e-9 * power)


@given(angles, retard)
def test_waveplates_are_lossless(phi, delta):
    assert is_lossless(waveplate_matrix(phi, delta))


@given(components, st.floats(-10, 10))
def test_rotation_matrix_matches_rodrigues(axis, angle):
    n = unit_vec(axis)
    r = mueller_rotation(rotation_matrix(n, angle))
    assert np.allclose(r, rotate_vectors(n, angle, np.eye(3)).T, atol=1e-12)


@given(angles, retard)
def test_waveplate_is_rotation_about_equatorial_axis(phi, delta):
    axis = [np.cos(2 * phi), np.sin(2 * phi), 0.0]
    r = mueller_rotation(waveplate_matrix(phi, delta))
    assert np.allclose(r, rotate_vectors(axis, delta, np.eye(3)).T, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_mueller_rotation_is_proper_orthogonal(seed):
    from conftest import random_unitary

    u = random_unitary(np.random.default_rng(seed))
    r = mueller_rotation(u)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.isclose(np.linalg.det(r), 1.0)
    # and it agrees with pushing a Jones vector through u
    v = np.array([0.6, 0.8j])
    assert np.allclose(r @ jones_to_stokes(v)[1:], jones_to_stokes(u @ v)[1:], atol=1e-12)


def test_broadcasting_shapes():
    m = waveplate_matrix(np.linspace(0, 1, 5)[:, None], np.linspace(0, 2, 4))
    assert m.shape == (5, 4, 2, 2)
    assert rotation_matrix([[0, 0, 1]] * 3, [0.1, 0.2, 0.3]).shape == (3, 2, 2)


def test_partially_polarized_rejected():
    with pytest.raises(NotFullyPolarized):
        stokes_to_jones([1.0, 0.5, 0.0, 0.0])
    with pytest.raises(NotFullyPolarized):
        stokes_to_jones([0.0, 0.0, 0.0, 0.0])
    assert np.isclose(degree_of_polarization([2.0, 1.0, 0.0, 0.0]), 0.5)


def test_sphere_angle_and_antipode():
    h = np.array([1.0, 1.0, 0.0, 0.0])
    assert np.isclose(sphere_angle(h, antipode(h)), np.pi)
    assert np.isclose(sphere_angle(h, [1.0, 0.0, 1.0, 0.0]), np.pi / 2)


@given(st.floats(-np.pi, np.pi))
def test_malus_law(theta):
    v = stokes_to_jones(linear_stokes(theta))
    assert np.isclose(analyzer_power(v, linear_stokes(0.0)), np.cos(theta) ** 2, atol=1e-12)


def test_south_pole_conversion():
    v = stokes_to_jones([2.0, -2.0, 0.0, 0.0])
    assert np.allclose(np.abs(v), [0.0, np.sqrt(2.0)])
