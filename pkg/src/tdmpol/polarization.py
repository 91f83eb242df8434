"""Jones and Stokes algebra on the Poincare sphere.

Conventions used throughout the package:

* Jones vectors are complex arrays ``(..., 2)`` holding ``(ex, ey)``.
* Stokes vectors are real arrays ``(..., 4)`` holding ``(s0, s1, s2, s3)`` with
  ``s_k = v^H sigma_k v`` for the Pauli set

      sigma_1 = diag(1, -1),  sigma_2 = [[0, 1], [1, 0]],  sigma_3 = [[0, -i], [i, 0]]

  so that ``s1 = |ex|^2 - |ey|^2``, ``s2 = 2 Re(ex* ey)``, ``s3 = 2 Im(ex* ey)``.
  ``s3 > 0`` is called right circular; ``(1, i)/sqrt(2)`` maps to ``s3 = +1``.
* ``exp(-i angle/2 n.sigma)`` rotates the sphere right-handedly about ``n``.
* Orientation and retardation angles are plain floats and are never wrapped.
"""
from dataclasses import dataclass

import numpy as np

PAULI = np.array(
    [
        [[1, 0], [0, -1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
    ],
    dtype=complex,
)

LOSSLESS_ATOL = 1e-12
CONVERSION_ATOL = 1e-9


class NotFullyPolarized(ValueError):
    """A Stokes vector is required to lie on the sphere but does not."""


@dataclass(frozen=True)
class WaveplateStage:
    """Linear retarder with fast axis at ``orientation`` (rad) and ``retardation`` (rad)."""

    orientation: float = 0.0
    retardation: float = np.pi

    def matrix(self):
        return waveplate_matrix(self.orientation, self.retardation)


def waveplate_matrix(orientation, retardation):
    """Jones matrix ``R(phi) diag(exp(-i d/2), exp(i d/2)) R(-phi)``.

    Broadcasts over array-valued ``orientation`` and ``retardation``; the
    result has shape ``broadcast_shape + (2, 2)``.  On the sphere this is a
    rotation by ``retardation`` about the equatorial axis at azimuth
    ``2*orientation``.
    """
    phi, delta = np.broadcast_arrays(
        np.asarray(orientation, dtype=float), np.asarray(retardation, dtype=float)
    )
    c2, s2 = np.cos(2 * phi), np.sin(2 * phi)
    ch, sh = np.cos(delta / 2), np.sin(delta / 2)
    m = np.empty(phi.shape + (2, 2), dtype=complex)
    m[..., 0, 0] = ch - 1j * sh * c2
    m[..., 1, 1] = ch + 1j * sh * c2
    m[..., 0, 1] = -1j * sh * s2
    m[..., 1, 0] = -1j * sh * s2
    return m


def rotation_matrix(axis, angle):
    """Unitary Jones matrix rotating the sphere by ``angle`` about unit ``axis``.

    ``axis`` has shape ``(..., 3)`` and is normalized here; ``angle`` broadcasts.
    """
    axis = np.asarray(axis, dtype=float)
    n = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = np.asarray(angle, dtype=float)
    shape = np.broadcast_shapes(n.shape[:-1], angle.shape)
    n = np.broadcast_to(n, shape + (3,))
    c = np.cos(angle / 2)
    s = np.sin(angle / 2)
    m = np.empty(shape + (2, 2), dtype=complex)
    m[..., 0, 0] = c - 1j * s * n[..., 0]
    m[..., 1, 1] = c + 1j * s * n[..., 0]
    m[..., 0, 1] = -1j * s * n[..., 1] - s * n[..., 2]
    m[..., 1, 0] = -1j * s * n[..., 1] + s * n[..., 2]
    return m


def jones_to_stokes(v):
    v = np.asarray(v, dtype=complex)
    ex, ey = v[..., 0], v[..., 1]
    ax, ay = np.abs(ex) ** 2, np.abs(ey) ** 2
    cross = np.conj(ex) * ey
    return np.stack([ax + ay, ax - ay, 2 * cross.real, 2 * cross.imag], axis=-1)


def degree_of_polarization(s):
    s = np.asarray(s, dtype=float)
    return np.linalg.norm(s[..., 1:], axis=-1) / s[..., 0]


def _check_polarized(s, tol=CONVERSION_ATOL):
    s = np.asarray(s, dtype=float)
    if np.any(~np.isfinite(s)):
        raise NotFullyPolarized("Stokes vector is not finite")
    if np.any(s[..., 0] <= 0):
        raise NotFullyPolarized("Stokes vector has no power")
    if np.any(np.abs(degree_of_polarization(s) - 1.0) > tol):
        raise NotFullyPolarized(
            f"degree of polarization {degree_of_polarization(s)} differs from 1"
        )
    return s


def stokes_to_jones(s):
    """Jones representative of a fully polarized Stokes vector with ``ex`` real >= 0."""
    s = _check_polarized(s)
    s0, s1, s2, s3 = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    ax = np.sqrt(np.maximum((s0 + s1) / 2, 0.0))
    ay = np.sqrt(np.maximum((s0 - s1) / 2, 0.0))
    # ex* ey = (s2 + i s3)/2 with ex real: |ey| = ay and arg(ey) = arg(s2 + i s3).
    # Taking the magnitude from s1 stays accurate next to the south pole.
    ey = ay * np.exp(1j * np.arctan2(s3, s2))
    return np.stack([ax + 0j, ey], axis=-1)


def unit_stokes(s):
    """Normalized ``(s1, s2, s3)`` part of a Stokes vector (shape ``(..., 3)``)."""
    s = np.asarray(s, dtype=float)
    return s[..., 1:] / s[..., :1]


def sphere_angle(a, b):
    """Great-circle angle between two fully polarized Stokes vectors, in [0, pi]."""
    ua = unit_stokes(_check_polarized(a))
    ub = unit_stokes(_check_polarized(b))
    dot = np.sum(ua * ub, axis=-1)
    return np.arccos(np.clip(dot, -1.0, 1.0))


def antipode(s):
    s = np.asarray(s, dtype=float)
    return np.concatenate([s[..., :1], -s[..., 1:]], axis=-1)


def analyzer_power(v, axis):
    """Power passed by an ideal polarizer transmitting the state ``axis``."""
    axis = _check_polarized(axis)
    a = stokes_to_jones(axis / axis[..., :1])
    return np.abs(np.sum(np.conj(a) * np.asarray(v, dtype=complex), axis=-1)) ** 2


def linear_stokes(angle, power=1.0):
    """Stokes vector of linear polarization at physical ``angle`` (rad)."""
    angle = np.asarray(angle, dtype=float)
    p = np.broadcast_to(np.asarray(power, dtype=float), angle.shape)
    return np.stack(
        [p, p * np.cos(2 * angle), p * np.sin(2 * angle), np.zeros_like(angle)], axis=-1
    )


def mueller_rotation(u):
    """3x3 rotation acting on ``(s1, s2, s3)`` for a unitary Jones matrix ``u``.

    Scaled-unitary inputs are normalized by ``|det u|``.
    """
    u = np.asarray(u, dtype=complex)
    scale = np.abs(np.linalg.det(u))[..., None, None]
    # R_ij = 1/2 tr(sigma_i u sigma_j u^H)
    us = np.einsum("...ab,jbc->...jac", u, PAULI)
    usu = np.einsum("...jac,...dc->...jad", us, np.conj(u))
    r = 0.5 * np.einsum("iba,...jab->...ij", PAULI, usu).real
    return r / scale


def is_lossless(m, atol=LOSSLESS_ATOL):
    m = np.asarray(m, dtype=complex)
    eye = np.eye(2)
    prod = np.einsum("...ba,...bc->...ac", np.conj(m), m)
    return bool(np.all(np.abs(prod - eye) <= atol))


def rotate_vectors(axis, angle, vecs):
    """Rodrigues rotation of 3-vectors ``vecs`` about ``axis`` by ``angle``."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    v = np.asarray(vecs, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    return v * c + np.cross(k, v) * s + np.outer(v @ k, k).reshape(v.shape) * (1 - c)
