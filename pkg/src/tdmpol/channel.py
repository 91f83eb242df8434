"""Optical channel: chirped gated sources, rotating-waveplate scramblers,
first-order PMD and scalar loss.

Time arguments are in seconds here; the TDM module works in nanoseconds.
"""
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

from .polarization import (
    jones_to_stokes,
    rotation_matrix,
    stokes_to_jones,
    waveplate_matrix,
    WaveplateStage,
)
from .units import db_to_amplitude

CENTER_FREQUENCY_HZ = 193.4e12


class StepTooCoarse(ValueError):
    """Scrambler calibration step moves the probe too far between samples."""


@dataclass(frozen=True)
class ChirpedSource:
    """Directly modulated laser emitting one gated pulse per frame.

    The instantaneous frequency offset settles exponentially after turn-on
    and is normalized so that the offset at ``pulse_ns`` equals
    ``chirp_span_hz``.
    """

    stokes: tuple = (1.0, 1.0, 0.0, 0.0)
    peak_power_dbm: float = 0.0
    center_frequency_hz: float = CENTER_FREQUENCY_HZ
    frequency_offset_hz: float = 0.0
    chirp_span_hz: float = 700e6
    chirp_time_constant_ns: float = 150.0
    pulse_ns: float = 600.0

    @property
    def jones(self):
        s = np.asarray(self.stokes, dtype=float)
        return stokes_to_jones(s / s[0])

    def chirp(self, t_rel_ns):
        """Frequency offset (Hz) relative to the pulse start, ``t_rel_ns`` since turn-on."""
        t = np.clip(np.asarray(t_rel_ns, dtype=float), 0.0, None)
        if self.chirp_span_hz == 0.0:
            return np.zeros_like(t)
        tc = self.chirp_time_constant_ns
        if tc <= 0:
            return np.full_like(t, self.chirp_span_hz)
        norm = -np.expm1(-self.pulse_ns / tc)
        return self.chirp_span_hz * -np.expm1(-t / tc) / norm

    def frequency(self, t_rel_ns):
        """Offset from the common reference frequency, including the chirp."""
        return self.frequency_offset_hz + self.chirp(t_rel_ns)


@dataclass(frozen=True)
class ScramblerModel:
    """Cascade of endlessly rotating waveplates.

    Plate ``i`` has orientation ``plates[i].orientation + rates[i] * t``.
    """

    plates: tuple = (
        WaveplateStage(0.0, np.pi / 2),
        WaveplateStage(0.0, np.pi),
        WaveplateStage(0.0, np.pi / 2),
    )
    rates: tuple = (0.0, 0.0, 0.0)
    target_poincare_rate: float = 0.0
    insertion_loss_db: float = 0.0

    def __post_init__(self):
        if len(self.plates) < 3:
            raise ValueError("a scrambler needs at least 3 plates")
        if len(self.rates) != len(self.plates):
            raise ValueError("one angular rate per plate is required")

    @property
    def loss_db(self):
        return self.insertion_loss_db

    def scaled(self, factor):
        return replace(self, rates=tuple(float(r) * factor for r in self.rates))


@dataclass(frozen=True)
class DgdElement:
    """First-order PMD section with differential group delay ``tau`` (s)."""

    tau: float = 35e-12
    psp_axis: tuple = (0.36, 0.48, 0.80)
    loss_db: float = 0.0

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("DGD must be non-negative")
        if not np.isclose(np.linalg.norm(self.psp_axis), 1.0, atol=1e-6):
            raise ValueError("psp_axis must be a unit Stokes direction")


@dataclass(frozen=True)
class ScalarLoss:
    loss_db: float = 0.0


Element = Union[ScramblerModel, DgdElement, ScalarLoss]


@dataclass(frozen=True)
class LinkModel:
    elements: tuple = field(default_factory=tuple)
    total_loss_db: float = 0.0

    def __post_init__(self):
        s = sum(e.loss_db for e in self.elements)
        if not np.isclose(s, self.total_loss_db, atol=1e-9):
            raise ValueError(
                f"total_loss_db={self.total_loss_db} but elements sum to {s}"
            )

    @classmethod
    def from_elements(cls, elements: Sequence[Element]):
        elements = tuple(elements)
        return cls(elements, float(sum(e.loss_db for e in elements)))

    def matrix(self, t, nu_offset=0.0):
        """Jones matrix of the whole link at times ``t`` (s) and offsets ``nu_offset`` (Hz)."""
        t, nu = np.broadcast_arrays(
            np.asarray(t, dtype=float), np.asarray(nu_offset, dtype=float)
        )
        m = np.broadcast_to(np.eye(2, dtype=complex), t.shape + (2, 2))
        for el in self.elements:
            if isinstance(el, ScramblerModel):
                m = scrambler_matrix(el, t) @ m
            elif isinstance(el, DgdElement):
                m = dgd_matrix(el, nu) @ m
        return m * db_to_amplitude(self.total_loss_db)


def dgd_matrix(d: DgdElement, nu_offset):
    """Sphere rotation about the PSP by ``2 pi nu tau`` (identity at zero offset)."""
    nu = np.asarray(nu_offset, dtype=float)
    return rotation_matrix(d.psp_axis, 2 * np.pi * nu * d.tau)


def scrambler_matrix(s: ScramblerModel, t):
    """Product of the rotating plates at time(s) ``t`` (s); the first plate acts first."""
    t = np.asarray(t, dtype=float)
    m = np.broadcast_to(np.eye(2, dtype=complex), t.shape + (2, 2))
    for plate, rate in zip(s.plates, s.rates):
        m = waveplate_matrix(plate.orientation + rate * t, plate.retardation) @ m
    return m


def calibrate_scrambler(s: ScramblerModel, probe, duration, dt):
    """Mean Poincare arc-length rate (rad/s) of ``probe`` behind the scrambler."""
    n = int(round(duration / dt))
    if n < 1:
        raise ValueError("duration must cover at least one step")
    t = np.arange(n + 1) * dt
    v = stokes_to_jones(np.asarray(probe, dtype=float))
    out = jones_to_stokes(scrambler_matrix(s, t) @ v)
    u = out[:, 1:] / out[:, :1]
    dots = np.clip(np.sum(u[1:] * u[:-1], axis=1), -1.0, 1.0)
    arcs = np.arccos(dots)
    if arcs.size and arcs.max() >= 0.5:
        raise StepTooCoarse(f"per-step arc {arcs.max():.3f} rad >= 0.5 rad")
    return float(arcs.sum() / (n * dt))


# incommensurate plate-rate ratios of the default scrambler
DEFAULT_RATE_RATIOS = (1.0, np.sqrt(2.0), (1 + np.sqrt(5.0)) / 2)


def tuned_scrambler(target_rate, probe=(1.0, 1.0, 0.0, 0.0), ratios=DEFAULT_RATE_RATIOS,
                    phases=(0.0, 0.0, 0.0), insertion_loss_db=0.0,
                    revolutions=100.0):
    """Quarter-half-quarter rotating scrambler scaled to ``target_rate`` (rad/s).

    The arc rate is exactly proportional to a common scaling of all plate
    rates, so one calibration at unit scale fixes the factor.
    """
    plates = (
        WaveplateStage(phases[0], np.pi / 2),
        WaveplateStage(phases[1], np.pi),
        WaveplateStage(phases[2], np.pi / 2),
    )
    ratios = tuple(float(r) for r in ratios)
    base = ScramblerModel(plates, ratios, 0.0, insertion_loss_db)
    if target_rate == 0:
        return replace(base, rates=(0.0, 0.0, 0.0))
    unit = _unit_rate(ratios, tuple(float(p) for p in phases), tuple(map(float, probe)),
                      float(revolutions))
    return replace(base.scaled(target_rate / unit), target_poincare_rate=float(target_rate))


@lru_cache(maxsize=64)
def _unit_rate(ratios, phases, probe, revolutions):
    plates = (
        WaveplateStage(phases[0], np.pi / 2),
        WaveplateStage(phases[1], np.pi),
        WaveplateStage(phases[2], np.pi / 2),
    )
    base = ScramblerModel(plates, ratios)
    # slowest plate turns `revolutions` times, 500 steps per turn
    duration = 2 * np.pi * revolutions / min(ratios)
    return calibrate_scrambler(base, probe, duration, duration / (500 * revolutions))


def propagate(link: LinkModel, v, t, nu_offset=0.0):
    """Apply every element at ``(t, nu_offset)`` in order, then the scalar loss."""
    return np.einsum("...ab,...b->...a", link.matrix(t, nu_offset), np.asarray(v, dtype=complex))
