"""Scenario configuration and its flat INI representation.

Every field maps to one ``key`` in one ``[section]``; key names carry
their unit.  Unknown sections or keys are rejected so that typos surface
as configuration errors.
"""
import configparser
from dataclasses import dataclass, field, fields, replace
import numpy as np

from .channel import (
    ChirpedSource,
    DgdElement,
    LinkModel,
    ScalarLoss,
    tuned_scrambler,
)
from .controller import ActuatorState, ControlConfig
from .detection import ApdModel, TapPbsChain, autobias, noise_density_for_snr
from .tdm import GateEnvelope, SlotSchedule

SOP_STOKES = {
    "+S1": (1.0, 1.0, 0.0, 0.0),
    "-S1": (1.0, -1.0, 0.0, 0.0),
    "+S2": (1.0, 0.0, 1.0, 0.0),
    "-S2": (1.0, 0.0, -1.0, 0.0),
    "+S3": (1.0, 0.0, 0.0, 1.0),
    "-S3": (1.0, 0.0, 0.0, -1.0),
}
ALL_SOPS = tuple(SOP_STOKES)
OUTPUT_SELECTORS = ("log", "rie", "ccdf", "spots", "summary", "traces")


class ConfigError(ValueError):
    """Invalid scenario; the message names the offending field."""


def _f(section, default, key=None, kind=float):
    return field(default=default, metadata={"section": section, "key": key, "kind": kind})


@dataclass(frozen=True)
class ScenarioConfig:
    # run
    name: str = _f("run", "default", kind=str)
    engine: str = _f("run", "slot", kind=str)
    seed: int = _f("run", 1, kind=int)
    duration_ms: float = _f("run", 50.0)
    settle_ms: float = _f("run", 2.0)
    noise: bool = _f("run", True, kind=bool)
    outputs: tuple = _f("run", ("log", "rie", "ccdf", "summary"), kind=tuple)
    spot_sops: tuple = _f("run", (), kind=tuple)
    polarimeter_rate_hz: float = _f("run", 100e6)
    trace_frames: int = _f("run", 3, kind=int)
    quadrature_points: int = _f("run", 12, kind=int)
    true_offset_ns: float = _f("run", 0.0)
    sample_dt_ns: float = _f("run", 1.0)
    ensemble: int = _f("run", 1, kind=int)
    # schedule
    pilot0_ns: float = _f("schedule", 600.0)
    pilot45_ns: float = _f("schedule", 600.0)
    probe_ns: float = _f("schedule", 560.0)
    dark_ns: float = _f("schedule", 40.0)
    period_ns: float = _f("schedule", 1800.0)
    guard_ns: float = _f("schedule", 40.0)
    # envelope
    rise_ns: float = _f("envelope", 5.0)
    fall_initial_ns: float = _f("envelope", 10.0)
    knee: float = _f("envelope", 0.01)
    tail_time_constant_ns: float = _f("envelope", 2.0)
    off_floor_db: float = _f("envelope", -100.0)
    off_bias_v: float = _f("envelope", 0.0)
    # sources
    launch_peak_dbm: float = _f("sources", -5.0)
    probe_peak_dbm: float = _f("sources", -5.0)
    probe_enabled: bool = _f("sources", True, kind=bool)
    probe_sop: str = _f("sources", "+S2", kind=str)
    chirp_span_mhz: float = _f("sources", 700.0)
    chirp_time_constant_ns: float = _f("sources", 150.0)
    pilot0_offset_mhz: float = _f("sources", 0.0)
    pilot45_offset_mhz: float = _f("sources", 0.0)
    probe_offset_mhz: float = _f("sources", 0.0)
    # link, in propagation order
    scrambler1_rate_rad_s: float = _f("scrambler1", 20000.0, key="rate_rad_s")
    scrambler1_loss_db: float = _f("scrambler1", 0.0, key="loss_db")
    scrambler1_phases_rad: tuple = _f("scrambler1", (0.0, 0.0, 0.0), key="phases_rad", kind=tuple)
    dgd_ps: float = _f("dgd", 35.0)
    psp: tuple = _f("dgd", (0.0, 0.0, 1.0), kind=tuple)
    scrambler2_rate_rad_s: float = _f("scrambler2", 100.0, key="rate_rad_s")
    scrambler2_loss_db: float = _f("scrambler2", 0.0, key="loss_db")
    scrambler2_phases_rad: tuple = _f("scrambler2", (0.3, 1.1, 2.0), key="phases_rad", kind=tuple)
    fiber_loss_db: float = _f("fiber", 0.0, key="loss_db")
    # receiver
    tap1_ratio: float = _f("receiver", 0.10)
    tap2_ratio: float = _f("receiver", 0.20)
    through_loss_db: float = _f("receiver", TapPbsChain().through_loss_db)
    serial_taps: bool = _f("receiver", True, kind=bool)
    analyzer90_deg: float = _f("receiver", 90.0)
    analyzer0_deg: float = _f("receiver", 0.0)
    analyzer45m_deg: float = _f("receiver", -45.0)
    responsivity_a_w: float = _f("receiver", 0.9)
    noise_density_a_rthz: float = _f("receiver", noise_density_for_snr())
    bandwidth_hz: float = _f("receiver", 500e6)
    saturation_current_a: float = _f("receiver", 1e-3)
    dark_current_a: float = _f("receiver", 50e-9)
    apd_gain: float = _f("receiver", 0.0)
    zero_point_window_frames: int = _f("receiver", 1000, kind=int)
    zero_point_mode: str = _f("receiver", "rolling", kind=str)
    clock_reverify_frames: int = _f("receiver", 1000, kind=int)
    clock_grace_checks: int = _f("receiver", 3, kind=int)
    # control
    law: str = _f("control", "observer", kind=str)
    dither_amplitude_rad: float = _f("control", 0.05)
    step_gain: float = _f("control", 1.0)
    dof_gains: tuple = _f("control", (0.25, 0.1, 1.0), kind=tuple)
    iteration_period_s: float = _f("control", 1.8e-6)
    max_step_rad: float = _f("control", 0.5)
    slope_floor: float = _f("control", 1e-6)
    clock_confidence_min: float = _f("control", 0.5)
    phase_dof: bool = _f("control", True, kind=bool)
    observer_q: float = _f("control", 1e-6)
    observer_r: float = _f("control", 1e-8)
    observer_rn: float = _f("control", 1e-6)
    damping: float = _f("control", 1e-2)
    initial_phi_a_rad: float = _f("control", 0.0)
    initial_phi_b_rad: float = _f("control", 0.0)
    initial_delta_c_rad: float = _f("control", 0.0)

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------ derived objects
    def validate(self):
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}")

        if self.engine not in ("slot", "waveform"):
            bad("engine", "must be 'slot' or 'waveform'")
        if self.duration_ms <= 0:
            bad("duration_ms", "must be positive")
        if self.settle_ms < 0:
            bad("settle_ms", "must be non-negative")
        for o in self.outputs:
            if o not in OUTPUT_SELECTORS:
                bad("outputs", f"unknown selector {o!r}")
        for s in self.spot_sops + (self.probe_sop,):
            if s not in SOP_STOKES:
                bad("spot_sops" if s != self.probe_sop else "probe_sop", f"unknown SOP {s!r}")
        if len(self.psp) != 3 or not np.isclose(np.linalg.norm(self.psp), 1.0, atol=1e-6):
            bad("psp", "must be a unit 3-vector")
        if self.dgd_ps < 0:
            bad("dgd_ps", "must be non-negative")
        if self.zero_point_mode not in ("rolling", "frozen"):
            bad("zero_point_mode", "must be 'rolling' or 'frozen'")
        if self.ensemble < 1:
            bad("ensemble", "must be at least 1")
        if self.quadrature_points < 1:
            bad("quadrature_points", "must be at least 1")
        if self.sample_dt_ns <= 0:
            bad("sample_dt_ns", "must be positive")
        for name in ("schedule", "envelope", "chain", "control", "link", "apds"):
            try:
                getattr(self, name)
            except ValueError as e:
                bad(name, str(e))
        try:
            self.control.check_schedule(self.schedule)
        except ValueError as e:
            bad("iteration_period_s", str(e))

    @property
    def schedule(self):
        return SlotSchedule(self.pilot0_ns, self.pilot45_ns, self.probe_ns, self.dark_ns,
                            self.period_ns)

    @property
    def envelope(self):
        return GateEnvelope(self.rise_ns, self.fall_initial_ns, self.knee,
                            self.tail_time_constant_ns, self.off_floor_db, self.off_bias_v)

    def _source(self, stokes, peak, offset_mhz, pulse):
        return ChirpedSource(stokes, peak, frequency_offset_hz=offset_mhz * 1e6,
                             chirp_span_hz=self.chirp_span_mhz * 1e6,
                             chirp_time_constant_ns=self.chirp_time_constant_ns,
                             pulse_ns=pulse)

    @property
    def sources(self):
        """Pilot0, Pilot45 and probe sources; the probe is ``None`` when disabled."""
        p0 = self._source(SOP_STOKES["+S1"], self.launch_peak_dbm, self.pilot0_offset_mhz,
                          self.pilot0_ns)
        p45 = self._source(SOP_STOKES["+S2"], self.launch_peak_dbm, self.pilot45_offset_mhz,
                           self.pilot45_ns)
        probe = None
        if self.probe_enabled:
            probe = self._source(SOP_STOKES[self.probe_sop], self.probe_peak_dbm,
                                 self.probe_offset_mhz, self.probe_ns)
        return p0, p45, probe

    @property
    def link(self):
        els = [
            tuned_scrambler(self.scrambler1_rate_rad_s, phases=self.scrambler1_phases_rad,
                            insertion_loss_db=self.scrambler1_loss_db),
            DgdElement(self.dgd_ps * 1e-12, tuple(self.psp)),
            tuned_scrambler(self.scrambler2_rate_rad_s, phases=self.scrambler2_phases_rad,
                            insertion_loss_db=self.scrambler2_loss_db),
        ]
        if self.fiber_loss_db:
            els.append(ScalarLoss(self.fiber_loss_db))
        return LinkModel.from_elements(els)

    @property
    def received_peak_dbm(self):
        return self.launch_peak_dbm - self.link.total_loss_db

    @property
    def chain(self):
        return TapPbsChain(self.tap1_ratio, self.tap2_ratio, self.through_loss_db,
                           self.analyzer90_deg, self.analyzer0_deg, self.analyzer45m_deg,
                           self.serial_taps)

    @property
    def apds(self):
        base = ApdModel(self.responsivity_a_w, self.apd_gain or 10.0, self.noise_density_a_rthz,
                        self.bandwidth_hz, self.saturation_current_a, self.dark_current_a)
        if self.apd_gain > 0:
            return (base,) * 3
        return autobias((base,) * 3, self.schedule, self.received_peak_dbm, self.chain)

    @property
    def control(self):
        return ControlConfig(self.law, self.dither_amplitude_rad, self.step_gain,
                             tuple(self.dof_gains), self.iteration_period_s, self.max_step_rad,
                             self.slope_floor, self.clock_confidence_min, self.phase_dof,
                             self.observer_q, self.observer_r, self.observer_rn, self.damping)

    @property
    def initial_state(self):
        return ActuatorState(self.initial_phi_a_rad, self.initial_phi_b_rad,
                             self.initial_delta_c_rad)

    @property
    def n_frames(self):
        return int(round(self.duration_ms * 1e6 / self.period_ns))

    @property
    def n_settle(self):
        return int(round(self.settle_ms * 1e6 / self.period_ns))

    def with_(self, **kw):
        try:
            return replace(self, **kw)
        except TypeError as e:
            raise ConfigError(str(e)) from None


# ------------------------------------------------------------ INI mapping


def _key(f):
    return f.metadata["key"] or f.name


def _format(value, kind):
    if kind is tuple:
        return ", ".join(_format(v, type(v)) for v in value)
    if kind is bool:
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _parse(text, f):
    kind = f.metadata["kind"]
    text = text.strip()
    if kind is tuple:
        items = [t.strip() for t in text.split(",") if t.strip()]
        if isinstance(f.default, tuple) and f.default and isinstance(f.default[0], float):
            return tuple(float(t) for t in items)
        return tuple(items)
    if kind is bool:
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def to_ini(cfg: ScenarioConfig):
    sections = {}
    for f in fields(cfg):
        sec = f.metadata["section"]
        sections.setdefault(sec, []).append(f"{_key(f)} = {_format(getattr(cfg, f.name), f.metadata['kind'])}")
    return "\n\n".join(f"[{s}]\n" + "\n".join(lines) for s, lines in sections.items()) + "\n"


def save_scenario(cfg: ScenarioConfig, path):
    with open(path, "w") as fh:
        fh.write(to_ini(cfg))


def from_ini(text, base: ScenarioConfig = None):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"unreadable scenario file: {e}") from None
    table = {(f.metadata["section"], _key(f)): f for f in fields(ScenarioConfig)}
    known_sections = {s for s, _ in table}
    kw = {}
    for sec in parser.sections():
        if sec not in known_sections:
            raise ConfigError(f"[{sec}]: unknown section")
        for key, raw in parser.items(sec):
            f = table.get((sec, key))
            if f is None:
                raise ConfigError(f"[{sec}] {key}: unknown key")
            try:
                kw[f.name] = _parse(raw, f)
            except ValueError as e:
                raise ConfigError(f"[{sec}] {key}: {e}") from None
    base = base or ScenarioConfig()
    return base.with_(**kw)


def load_scenario(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read scenario file: {e}") from None
    return from_ini(text)


# ------------------------------------------------------------ presets

BACK_TO_BACK = dict(name="b2b", dgd_ps=0.0, scrambler2_rate_rad_s=0.0)
DGD35 = dict(name="dgd35", dgd_ps=35.0)
FIBER_63KM = dict(name="63km", dgd_ps=0.0, scrambler2_rate_rad_s=0.0, scrambler1_loss_db=3.0, fiber_loss_db=14.0,
                  launch_peak_dbm=5.8, probe_enabled=False)


def preset(which, /, **overrides):
    """Preset link ``which`` ("b2b", "dgd35" or "63km") with field overrides."""
    table = {"b2b": BACK_TO_BACK, "dgd35": DGD35, "63km": FIBER_63KM}
    if which not in table:
        raise ConfigError(f"unknown preset {which!r}")
    return ScenarioConfig().with_(**{**table[which], **overrides})
