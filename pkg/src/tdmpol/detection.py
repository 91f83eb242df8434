"""Receiver tap/PBS chain and avalanche photodiode detection."""
import csv
from dataclasses import dataclass, replace

import numpy as np

from .polarization import jones_to_stokes, linear_stokes
from .tdm import SlotSchedule
from .units import dbm_to_w

ELEMENTARY_CHARGE = 1.602176634e-19

PILOT_PEAK_RANGE_DBM = (-11.2, 0.0)
PROBE_PATH_LOSS_DB = 5.5
AUTOBIAS_FILL = 0.7
CHANNELS = ("I90", "I0", "I45m")


class PowerOutOfRange(ValueError):
    """Pilot peak power outside the range the APD bias procedure can handle."""


class GridMismatch(ValueError):
    pass


class NoPilotPower(ValueError):
    pass


@dataclass(frozen=True)
class TapPbsChain:
    """Two taps behind the receiver transformer, each feeding a PBS.

    Tap 1 feeds a PBS whose 90 deg and 0 deg outputs are detected; tap 2
    feeds a PBS whose -45 deg output is detected.  With ``serial_taps`` tap 2
    sees the field left over after tap 1.  Analyzer angles are physical
    linear-polarizer angles in degrees.
    """

    tap1_ratio: float = 0.10
    tap2_ratio: float = 0.20
    through_loss_db: float = float(PROBE_PATH_LOSS_DB + 10 * np.log10(0.9 * 0.8))
    analyzer90_deg: float = 90.0
    analyzer0_deg: float = 0.0
    analyzer45m_deg: float = -45.0
    serial_taps: bool = True

    def __post_init__(self):
        for r in (self.tap1_ratio, self.tap2_ratio):
            if not 0.0 < r < 1.0:
                raise ValueError("tap ratios must lie in (0, 1)")

    @property
    def tap2_fraction(self):
        """Fraction of the incident power reaching the tap-2 PBS."""
        if self.serial_taps:
            return self.tap2_ratio * (1 - self.tap1_ratio)
        return self.tap2_ratio

    @property
    def probe_path_loss_db(self):
        through = (1 - self.tap1_ratio) * (1 - self.tap2_ratio)
        return -10 * np.log10(through) + self.through_loss_db

    def analyzer_axes(self):
        """Unit Stokes axes of the three detected ports, shape (3, 3)."""
        ang = np.deg2rad([self.analyzer90_deg, self.analyzer0_deg, self.analyzer45m_deg])
        return linear_stokes(ang)[:, 1:]

    def port_fractions(self):
        return np.array([self.tap1_ratio, self.tap1_ratio, self.tap2_fraction])

    def port_powers(self, stokes):
        """Optical powers (W) at the I90, I0, I45m photodiodes, shape ``(..., 3)``."""
        s = np.asarray(stokes, dtype=float)
        proj = s[..., 1:] @ self.analyzer_axes().T
        return self.port_fractions() * 0.5 * (s[..., :1] + proj)


def noise_density_for_snr(snr_db=30.0, peak_dbm=PILOT_PEAK_RANGE_DBM[0], tap=0.10,
                          responsivity=0.9, bandwidth=500e6):
    """Input-referred density (A/sqrt(Hz)) giving ``snr_db`` on a full port at ``peak_dbm``."""
    i = responsivity * tap * dbm_to_w(peak_dbm)
    sigma2 = (i / 10 ** (snr_db / 20)) ** 2
    shot2 = 2 * ELEMENTARY_CHARGE * i * bandwidth
    return float(np.sqrt(max(sigma2 - shot2, 0.0) / bandwidth))


@dataclass(frozen=True)
class ApdModel:
    """Gain, Gaussian noise and saturation of one avalanche photodiode.

    ``noise_density`` is referred to the primary photocurrent and is
    multiplied by the gain, like the shot-noise term.  ``dark_current`` is
    an output-referred offset.
    """

    responsivity: float = 0.9
    gain: float = 10.0
    noise_density: float = noise_density_for_snr()
    bandwidth: float = 500e6
    saturation_current: float = 1e-3
    dark_current: float = 50e-9

    def mean_current(self, power):
        return self.gain * self.responsivity * np.asarray(power, dtype=float) + self.dark_current

    def noise_sigma(self, power):
        primary = self.responsivity * np.clip(np.asarray(power, dtype=float), 0.0, None)
        var = self.noise_density ** 2 * self.bandwidth + 2 * ELEMENTARY_CHARGE * primary * self.bandwidth
        return self.gain * np.sqrt(var)

    def detect(self, power, normals=None):
        """Output current for optical ``power``; ``normals`` are standard-normal draws."""
        i = self.mean_current(power)
        if normals is not None:
            i = i + self.noise_sigma(power) * normals
        return np.clip(i, 0.0, self.saturation_current)


@dataclass(frozen=True)
class PhotocurrentTrace:
    samples: np.ndarray
    dt: float
    tag: str
    t0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))

    @property
    def t(self):
        return self.t0 + self.dt * np.arange(len(self.samples))

    def __len__(self):
        return len(self.samples)


def detect_stokes(stokes, chain: TapPbsChain, apds, normals=None):
    """Currents ``(..., 3)`` for received Stokes samples (W) behind the transformer."""
    p = chain.port_powers(stokes)
    out = np.empty_like(p)
    for k, apd in enumerate(apds):
        nk = None if normals is None else normals[..., k]
        out[..., k] = apd.detect(p[..., k], nk)
    return out


def detect_frame(field, chain: TapPbsChain, apds, dt, rng=None, t0=0.0):
    """I90, I0 and I45m traces for time-indexed Jones samples ``field`` (sqrt(W)).

    ``rng`` is a numpy Generator; without one the detection is noiseless.
    """
    s = jones_to_stokes(np.asarray(field, dtype=complex))
    normals = None if rng is None else rng.standard_normal(s.shape[:-1] + (3,))
    i = detect_stokes(s, chain, apds, normals)
    return tuple(PhotocurrentTrace(i[..., k], dt, tag, t0) for k, tag in enumerate(CHANNELS))


def total_power_replica(i90: PhotocurrentTrace, i0: PhotocurrentTrace):
    if len(i90) != len(i0) or not np.isclose(i90.dt, i0.dt) or not np.isclose(i90.t0, i0.t0):
        raise GridMismatch("I90 and I0 traces are sampled on different grids")
    return PhotocurrentTrace(i90.samples + i0.samples, i90.dt, "replica", i90.t0)


def _check_peak(pilot_peak_dbm):
    lo, hi = PILOT_PEAK_RANGE_DBM
    if not lo - 1e-9 <= pilot_peak_dbm <= hi + 1e-9:
        raise PowerOutOfRange(
            f"pilot peak {pilot_peak_dbm} dBm outside the bias range [{lo}, {hi}] dBm"
        )


def autobias(apds, schedule: SlotSchedule, pilot_peak_dbm, chain: TapPbsChain = TapPbsChain()):
    """Set each APD gain so that its largest on-slot current is 70 % of saturation."""
    _check_peak(pilot_peak_dbm)
    if schedule.pilot0_ns <= 0 and schedule.pilot45_ns <= 0:
        raise NoPilotPower("schedule has no pilot slots")
    peak = dbm_to_w(pilot_peak_dbm)
    out = []
    for apd, frac in zip(apds, chain.port_fractions()):
        primary = apd.responsivity * frac * peak
        out.append(replace(apd, gain=float(AUTOBIAS_FILL * apd.saturation_current / primary)))
    return tuple(out)


def gain_range(apds, chain: TapPbsChain = TapPbsChain(), schedule: SlotSchedule = SlotSchedule()):
    """``(g_min, g_max)`` per APD over the allowed pilot peak range."""
    lo, hi = PILOT_PEAK_RANGE_DBM
    g_min = [a.gain for a in autobias(apds, schedule, hi, chain)]
    g_max = [a.gain for a in autobias(apds, schedule, lo, chain)]
    return list(zip(g_min, g_max))


def mean_power_of_schedule(sched: SlotSchedule, pilot_peak_dbm):
    """Mean received power (dBm) with equal pilot peaks and a negligible probe."""
    on = sched.pilot0_ns + sched.pilot45_ns
    if on <= 0:
        raise NoPilotPower("schedule has no pilot slots")
    return float(pilot_peak_dbm + 10 * np.log10(on / sched.period_ns))


def reference_ratio(chain: TapPbsChain, apds):
    """Factor turning ``I90 + I0`` into the current a fully passed -45 deg port would carry."""
    a90, a0, a45 = apds
    g_tap1 = 0.5 * (a90.gain * a90.responsivity + a0.gain * a0.responsivity) * chain.tap1_ratio
    return a45.gain * a45.responsivity * chain.tap2_fraction / g_tap1


def write_trace_csv(path, i90, i0, i45m, replica=None):
    if replica is None:
        replica = total_power_replica(i90, i0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_ns", "i90", "i0", "i45m", "replica"])
        for row in zip(i90.t, i90.samples, i0.samples, i45m.samples, replica.samples):
            w.writerow([f"{row[0]:.3f}"] + [f"{v:.9e}" for v in row[1:]])
