"""Endless three-parameter polarization and differential-phase controller.

The receiver transformer is a quarter-wave plate at ``phi_a``, a half-wave
plate at ``phi_b`` and a 0 deg oriented variable retarder ``delta_c``, in
propagation order.  Only Pilot0- and Pilot45-slot currents reach the
control law.

Two laws share the same state and gating:

``"dither"``
    Sequential single-parameter dither.  Each parameter is measured at
    ``x - D`` and ``x + D`` on consecutive frames and stepped against the
    measured slope of RIE_0 (``phi_a``, ``phi_b``) or RIE_45 (``delta_c``).
``"observer"``
    Each frame's RIE is a linear measurement of the unknown pilot arrival
    state, ``1 - 2 RIE = (M_T^T u) . p``, with ``M_T`` the known rotation of
    the applied setting.  A constant-velocity Kalman filter per pilot tracks
    ``p``; the setting is re-aimed every frame by damped Gauss-Newton on the
    rotation error, and a small tetrahedral dither keeps the measurements
    informative.
"""
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels as K
from .detection import TapPbsChain, reference_ratio
from .polarization import waveplate_matrix
from .tdm import SlotId, SlotSchedule

LAWS = {"dither": K.LAW_DITHER, "observer": K.LAW_OBSERVER}


class ClockLost(RuntimeError):
    """Frame phase confidence below the gating threshold."""


class ZeroReferencePower(ValueError):
    pass


class MaxItersExceeded(RuntimeError):
    def __init__(self, iters, rie0, rie45):
        super().__init__(
            f"not converged after {iters} iterations: RIE_0={rie0:.3g}, RIE_45={rie45:.3g}"
        )
        self.iters = iters
        self.rie0 = rie0
        self.rie45 = rie45


@dataclass(frozen=True)
class ActuatorState:
    phi_a: float = 0.0
    phi_b: float = 0.0
    delta_c: float = 0.0

    def as_array(self):
        return np.array([self.phi_a, self.phi_b, self.delta_c], dtype=float)

    @classmethod
    def from_array(cls, x):
        return cls(float(x[0]), float(x[1]), float(x[2]))


@dataclass(frozen=True)
class ControlConfig:
    """Control-law settings.

    ``dither_amplitude`` is a parameter offset (rad) for the dither law and
    an output-sphere rotation angle (rad) for the observer law.  The
    effective per-parameter gain of the dither law is
    ``step_gain * dof_gains[j]``.  ``phase_dof=False`` freezes ``delta_c``
    (conventional two-parameter control).
    """

    law: str = "dither"
    dither_amplitude: float = 0.05
    step_gain: float = 1.0
    dof_gains: tuple = (0.25, 0.1, 1.0)
    iteration_period: float = 1.8e-6
    max_step: float = 0.5
    slope_floor: float = 1e-6
    clock_confidence_min: float = 0.5
    phase_dof: bool = True
    observer_q: float = 1e-6
    observer_r: float = 1e-8
    observer_rn: float = 1e-6
    damping: float = 1e-2

    def __post_init__(self):
        if self.law not in LAWS:
            raise ValueError(f"law must be one of {sorted(LAWS)}, got {self.law!r}")
        if not 0 < self.dither_amplitude < self.max_step:
            raise ValueError("dither_amplitude must be positive and below max_step")
        if len(self.dof_gains) != 3:
            raise ValueError("dof_gains needs one entry per parameter")
        if self.iteration_period <= 0:
            raise ValueError("iteration_period must be positive")

    def check_schedule(self, sched: SlotSchedule):
        if self.iteration_period < sched.period_ns * 1e-9 * (1 - 1e-9):
            raise ValueError("iteration_period must be at least one frame period")
        return max(1, int(round(self.iteration_period / (sched.period_ns * 1e-9))))

    def vector(self):
        """Packed parameters for the compiled kernels."""
        c = np.zeros(K.N_CTL)
        c[K.C_LAW] = LAWS[self.law]
        c[K.C_D] = self.dither_amplitude
        c[K.C_MAXSTEP] = self.max_step
        c[K.C_GA:K.C_GC + 1] = self.step_gain * np.asarray(self.dof_gains, dtype=float)
        c[K.C_FLOOR] = self.slope_floor
        c[K.C_Q] = self.observer_q
        c[K.C_R] = self.observer_r
        c[K.C_RN] = self.observer_rn
        c[K.C_LAM] = self.damping
        c[K.C_CONV] = 0.0 if self.phase_dof else 1.0
        c[K.C_EVERY] = 1.0
        return c


@dataclass(frozen=True)
class ErrorSample:
    slot: SlotId
    value: float


@dataclass(frozen=True)
class GatedErrors:
    """Gated slot means of one frame, zero point removed.

    ``pilot0`` and ``pilot45`` hold the (I90, I0, I45m) currents in A.
    """

    pilot0: np.ndarray
    pilot45: np.ndarray
    clock_confidence: float = 1.0
    frame_index: int = 0

    def samples(self):
        return [ErrorSample(SlotId.PILOT0, float(self.pilot0[0])),
                ErrorSample(SlotId.PILOT45, float(self.pilot45[2]))]


def transformer_matrix(a: ActuatorState):
    return (
        waveplate_matrix(0.0, a.delta_c)
        @ waveplate_matrix(a.phi_b, np.pi)
        @ waveplate_matrix(a.phi_a, np.pi / 2)
    )


def compute_rie(errors: GatedErrors, k45):
    """(RIE_0, RIE_45) of one frame; ``k45`` scales ``I90 + I0`` to the -45 deg reference."""
    tot0 = errors.pilot0[0] + errors.pilot0[1]
    tot45 = errors.pilot45[0] + errors.pilot45[1]
    if tot0 <= 0 or tot45 <= 0 or k45 <= 0:
        raise ZeroReferencePower("no pilot power on the tap-1 ports")
    r0 = min(1.0, max(0.0, errors.pilot0[0] / tot0))
    r45 = min(1.0, max(0.0, errors.pilot45[2] / (k45 * tot45)))
    return float(r0), float(r45)


def target_axes(chain: TapPbsChain):
    """Output Stokes directions that null the 90 deg and -45 deg ports."""
    axes = chain.analyzer_axes()
    return -axes[0], -axes[2]


class Controller:
    """Frame-by-frame controller state machine.

    Call :meth:`setting` to get the parameters to apply during the next
    frame, then :meth:`update` with that frame's gated errors.
    """

    def __init__(self, cfg: ControlConfig, chain: TapPbsChain = TapPbsChain(),
                 initial: ActuatorState = ActuatorState(), k45=None):
        self.cfg = cfg
        self.ctl = cfg.vector()
        self.u, self.v = target_axes(chain)
        self.x = initial.as_array()
        self.mem = np.zeros(K.N_MEM)
        self.k45 = k45
        self.held = 0
        if cfg.law == "observer":
            K.observer_init(self.x, self.mem, self.u, self.v)
        self._applied = None

    @property
    def state(self):
        return ActuatorState.from_array(self.x)

    def setting(self):
        self._applied = K.law_applied(self.x, self.mem, self.ctl)
        return ActuatorState.from_array(self._applied)

    def update(self, errors: GatedErrors, k45=None):
        """Consume one frame.  Raises ``ClockLost`` (state held) on a weak clock."""
        if self._applied is None:
            self._applied = K.law_applied(self.x, self.mem, self.ctl)
        if errors.clock_confidence < self.cfg.clock_confidence_min:
            self.held += 1
            self._applied = None
            raise ClockLost(f"clock confidence {errors.clock_confidence:.3f}")
        k45 = self.k45 if k45 is None else k45
        r0, r45 = compute_rie(errors, k45)
        K.law_update(self.x, self.mem, self.ctl, self._applied, r0, r45, self.u, self.v)
        self._applied = None
        return r0, r45


class StaticPlant:
    """Fixed channel followed by the receiver, evaluated slot by slot.

    ``channel`` is a 2x2 Jones matrix applied to both pilots.  Currents are
    noiseless and zero-point corrected.
    """

    def __init__(self, channel=np.eye(2), chain: TapPbsChain = TapPbsChain(), apds=None,
                 pilot_peak_dbm=-5.0):
        from .detection import ApdModel, autobias

        self.channel = np.asarray(channel, dtype=complex)
        self.chain = chain
        if apds is None:
            apds = autobias((ApdModel(),) * 3, SlotSchedule(), pilot_peak_dbm, chain)
        self.apds = tuple(apds)
        self.k45 = reference_ratio(chain, self.apds)
        self.power = 10 ** (pilot_peak_dbm / 10) * 1e-3
        s = np.sqrt(0.5)
        self.pilots = (np.array([1.0, 0.0], dtype=complex), np.array([s, s], dtype=complex))

    def arrival(self, slot):
        from .polarization import jones_to_stokes

        return jones_to_stokes(self.channel @ self.pilots[int(slot)])

    def measure(self, a: ActuatorState, frame_index=0):
        from .polarization import jones_to_stokes

        t = transformer_matrix(a)
        out = []
        for pilot in self.pilots:
            s = jones_to_stokes(t @ self.channel @ pilot) * self.power
            p = self.chain.port_powers(s)
            out.append(np.array([apd.gain * apd.responsivity * pk for apd, pk in zip(self.apds, p)]))
        return GatedErrors(out[0], out[1], 1.0, frame_index)

    def rie(self, a: ActuatorState):
        return compute_rie(self.measure(a), self.k45)

    __call__ = measure


def dither_points(state: ActuatorState, cfg: ControlConfig):
    """Parameter settings of one dither cycle, in measurement order."""
    x = state.as_array()
    d = cfg.dither_amplitude
    pts = []
    for j in range(3 if cfg.phase_dof else 2):
        for sign in (-1.0, 1.0):
            xa = x.copy()
            xa[j] += sign * d
            pts.append(ActuatorState.from_array(xa))
    return pts


def control_step(state: ActuatorState, measure: Callable, cfg: ControlConfig, k45=None):
    """One full dither-gradient cycle over all controlled parameters.

    ``measure(ActuatorState) -> GatedErrors`` supplies the gated slot means
    of each frame.  ``phi_a`` and ``phi_b`` are stepped on Pilot0 RIE_0
    slopes, ``delta_c`` on Pilot45 RIE_45 slopes.  A parameter whose slope
    magnitude is below ``cfg.slope_floor`` is held while the cycle moves
    on.  Raises ``ClockLost`` without touching the state.
    """
    if cfg.law != "dither":
        raise ValueError("control_step implements the dither law; use Controller for others")
    if k45 is None:
        k45 = getattr(measure, "k45", None)
        if k45 is None:
            k45 = getattr(getattr(measure, "__self__", None), "k45", 1.0)
    ctl = cfg.vector()
    x = state.as_array()
    mem = np.zeros(K.N_MEM)
    for _ in range(K.dither_cycle_len(ctl)):
        xa = K.dither_applied(x, mem, ctl)
        e = measure(ActuatorState.from_array(xa))
        if e.clock_confidence < cfg.clock_confidence_min:
            raise ClockLost(f"clock confidence {e.clock_confidence:.3f}")
        r0, r45 = compute_rie(e, k45)
        K.dither_update(x, mem, ctl, r0, r45)
    return ActuatorState.from_array(x)


def converge(initial: ActuatorState, plant: StaticPlant, cfg: ControlConfig = ControlConfig(),
             max_iters=4000, rie0_tol=1e-4, rie45_tol=1e-3):
    """Iterate the control law on a static plant until both RIEs are below tolerance.

    One iteration is one dither cycle (dither law) or one frame (observer
    law).  RIEs are evaluated at the nominal, undithered setting.  Returns
    ``(state, history)`` with ``history`` an array of ``(RIE_0, RIE_45)``
    rows, the first row being the initial setting.
    """
    state = initial
    r = plant.rie(state)
    hist = [r]
    ctrl = Controller(cfg, plant.chain, initial, plant.k45) if cfg.law != "dither" else None
    for it in range(max_iters):
        if r[0] <= rie0_tol and (r[1] <= rie45_tol or not cfg.phase_dof):
            return state, np.array(hist)
        if ctrl is None:
            state = control_step(state, plant.measure, cfg, plant.k45)
        else:
            ctrl.update(plant.measure(ctrl.setting()))
            state = ctrl.state
        r = plant.rie(state)
        hist.append(r)
    if r[0] <= rie0_tol and (r[1] <= rie45_tol or not cfg.phase_dof):
        return state, np.array(hist)
    raise MaxItersExceeded(max_iters, *r)


class ZeroPoint:
    """Rolling per-channel offset from Dark-slot samples.

    ``mode="frozen"`` keeps the first estimate forever.
    """

    def __init__(self, window_frames=1000, mode="rolling"):
        if mode not in ("rolling", "frozen"):
            raise ValueError("mode must be 'rolling' or 'frozen'")
        self.mode = mode
        self.window = deque(maxlen=window_frames)
        self._sum = np.zeros(3)
        self._frozen: Optional[np.ndarray] = None

    def push(self, dark_means):
        dark_means = np.asarray(dark_means, dtype=float)
        if self.mode == "frozen":
            if self._frozen is None:
                self._frozen = dark_means.copy()
            return
        if len(self.window) == self.window.maxlen:
            self._sum -= self.window[0]
        self.window.append(dark_means)
        self._sum += dark_means

    @property
    def value(self):
        if self.mode == "frozen":
            return np.zeros(3) if self._frozen is None else self._frozen
        if not self.window:
            return np.zeros(3)
        return self._sum / len(self.window)


@dataclass
class ControllerLog:
    rows: list = field(default_factory=list)

    def append(self, frame_index, state: ActuatorState, rie0, rie45, confidence):
        self.rows.append((frame_index, state.phi_a, state.phi_b, state.delta_c, rie0, rie45,
                          confidence))
