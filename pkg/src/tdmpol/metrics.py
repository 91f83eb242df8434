"""RIE statistics, Poincare-sphere spot analysis and run artifacts on disk."""
import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .channel import DgdElement, ScramblerModel, scrambler_matrix
from .polarization import jones_to_stokes, rotation_matrix, stokes_to_jones
from .scenario import ScenarioConfig

FLOAT_FMT = "{:.10g}"


class EmptySamples(ValueError):
    pass


class InsufficientSamples(ValueError):
    pass


# ---------------------------------------------------------------- CCDF


@dataclass(frozen=True)
class ComplementaryCdf:
    """Empirical ``1 - F(r)``: the fraction of samples strictly greater than ``r``."""

    values: np.ndarray

    def __call__(self, r):
        n = len(self.values)
        return (n - np.searchsorted(self.values, r, side="right")) / n

    def table(self):
        """Abscissa (distinct sample values) and ordinate pairs."""
        x = np.unique(self.values)
        return x, self(x)


def ccdf(samples):
    v = np.asarray(samples, dtype=float).ravel()
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise EmptySamples("ccdf needs at least one finite sample")
    return ComplementaryCdf(np.sort(v))


# ---------------------------------------------------------------- sphere spots

S1 = np.array([1.0, 0.0, 0.0])
S2 = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class SphereSpot:
    """Gated normalized Stokes samples of one probe SOP and their spread.

    ``along`` is the direction of rotation about the pole (the ±45 deg /
    circular great circle when the pole is S1).  Spots sitting on the pole
    use ``pole x secondary`` instead.  ``arc_extent`` is the length of the
    smallest arc around the pole that holds every sample's azimuth.
    """

    samples: np.ndarray
    mean_axis: np.ndarray
    spread_along: float
    spread_across: float
    rms_radius: float
    arc_extent: float

    @property
    def ellipticity(self):
        if self.spread_across == 0:
            return math.inf if self.spread_along > 0 else 1.0
        return self.spread_along / self.spread_across


def _unit(v):
    return v / np.linalg.norm(v)


def spot_statistics(samples, pole=S1, secondary=S2):
    s = np.asarray(samples, dtype=float)
    s = s / np.linalg.norm(s, axis=1, keepdims=True)
    pole = _unit(np.asarray(pole, dtype=float))
    secondary = np.asarray(secondary, dtype=float)
    secondary = _unit(secondary - (secondary @ pole) * pole)
    m = s.mean(axis=0)
    m = _unit(m) if np.linalg.norm(m) > 1e-12 else s[0]
    along = np.cross(pole, m)
    if np.linalg.norm(along) < 1e-6:
        along = np.cross(pole, secondary)
    along = _unit(along - (along @ m) * m)
    across = np.cross(m, along)
    theta = np.arccos(np.clip(s @ m, -1.0, 1.0))
    tang = s - np.outer(s @ m, m)
    norm = np.linalg.norm(tang, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(norm > 0, theta / norm, 0.0)
    xa = (tang @ along) * scale
    xc = (tang @ across) * scale
    third = np.cross(pole, secondary)
    az = np.sort(np.arctan2(s @ third, s @ secondary))
    gaps = np.diff(np.concatenate([az, az[:1] + 2 * np.pi]))
    arc = float(2 * np.pi - gaps.max()) if az.size > 1 else 0.0
    return SphereSpot(s, m, float(np.sqrt(np.mean(xa ** 2))), float(np.sqrt(np.mean(xc ** 2))),
                      float(np.sqrt(np.mean(theta ** 2))), arc)


def sphere_spots(samples_by_sop, min_samples=1000, pole=S1, secondary=S2):
    """Spot statistics for each probe SOP's polarimeter samples.

    ``min_samples`` stands in for the accumulation time per SOP of the
    bench measurement.
    """
    out = {}
    for sop, samples in samples_by_sop.items():
        n = len(samples)
        if n < min_samples:
            raise InsufficientSamples(f"{sop}: {n} samples, need {min_samples}")
        out[sop] = spot_statistics(samples, pole, secondary)
    return out


# ---------------------------------------------------------------- chirp x DGD


def chirp_excursion_report(cfg: ScenarioConfig, slot="pilot0", dt_ns=0.1, t0_s=0.0):
    """Arc length (rad) a chirped pulse traces on the sphere behind the DGD section.

    Scramblers ahead of the DGD are evaluated at ``t0_s`` and held for the
    duration of the pulse; elements after the DGD are ignored.
    """
    p0, p45, probe = cfg.sources
    src = {"pilot0": p0, "pilot45": p45, "probe": probe}[slot]
    if src is None:
        raise ValueError(f"source {slot!r} is disabled")
    elements = cfg.link.elements
    idx = [i for i, e in enumerate(elements) if isinstance(e, DgdElement)]
    if not idx:
        raise ValueError("link has no DGD element")
    v = stokes_to_jones(np.asarray(src.stokes, dtype=float))
    for e in elements[: idx[0]]:
        if isinstance(e, ScramblerModel):
            v = scrambler_matrix(e, t0_s) @ v
    dgd = elements[idx[0]]
    n = int(round(src.pulse_ns / dt_ns))
    t = np.arange(n + 1) * dt_ns
    nu = src.frequency(t)
    out = jones_to_stokes(rotation_matrix(dgd.psp_axis, 2 * np.pi * nu * dgd.tau) @ v)
    u = out[:, 1:] / out[:, :1]
    dots = np.clip(np.sum(u[1:] * u[:-1], axis=1), -1.0, 1.0)
    return float(np.arccos(dots).sum())


# ---------------------------------------------------------------- summaries


def summary_stats(rie):
    rie = np.asarray(rie, dtype=float)
    out = {"frames": int(rie.shape[0])}
    for k, name in enumerate(("rie0", "rie45")):
        v = rie[:, k]
        v = v[np.isfinite(v)]
        if v.size == 0:
            out.update({f"{name}_max": np.nan, f"{name}_median": np.nan, f"{name}_p999": np.nan})
            continue
        out[f"{name}_max"] = float(v.max())
        out[f"{name}_median"] = float(np.median(v))
        out[f"{name}_p999"] = float(np.quantile(v, 0.999))
    return out


SWEEP_AXES = {"scrambling_rate": "scrambler1_rate_rad_s", "dgd": "dgd_ps"}


def derived_seeds(seed, n):
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def ensemble_members(cfg: ScenarioConfig):
    """Scrambler start phases of the realizations pooled by ``sweep``.

    A slowly scrambled short run only visits a small part of the sphere, so
    its statistics depend on where the scramblers happen to start.  With
    ``cfg.ensemble > 1`` each realization starts both scramblers at phases
    drawn from ``cfg.seed``.
    """
    if cfg.ensemble == 1:
        return [{}]
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 1]))
    members = []
    for _ in range(cfg.ensemble):
        p1 = tuple(float(v) for v in rng.uniform(0.0, 2 * np.pi, len(cfg.scrambler1_phases_rad)))
        p2 = tuple(float(v) for v in rng.uniform(0.0, 2 * np.pi, len(cfg.scrambler2_phases_rad)))
        members.append({"scrambler1_phases_rad": p1, "scrambler2_phases_rad": p2})
    return members


def pooled_rie(cfg: ScenarioConfig, members, runner):
    """RIE samples of every realization in ``members``, concatenated."""
    if members == [{}]:
        return runner(cfg).rie
    seeds = derived_seeds(cfg.seed, len(members))
    return np.concatenate([runner(cfg.with_(seed=s, **m)).rie for m, s in zip(members, seeds)])


def sweep(cfg: ScenarioConfig, axis, values, runner=None, out_dir=None):
    """One run per grid value with derived seeds; failed runs keep their row with the error.

    Every grid value pools the same ``ensemble_members(cfg)``, so only the
    swept field and the noise differ between rows.
    """
    from .engine import simulate

    runner = runner or simulate
    field_name = SWEEP_AXES.get(axis, axis)
    if not hasattr(cfg, field_name):
        from .scenario import ConfigError

        raise ConfigError(f"sweep axis {axis!r} is not a scenario field")
    members = ensemble_members(cfg)
    rows = []
    for value, seed in zip(values, derived_seeds(cfg.seed, len(values))):
        row = {"axis": axis, "value": float(value), "seed": seed, "error": ""}
        try:
            run_cfg = cfg.with_(**{field_name: type(getattr(cfg, field_name))(value), "seed": seed})
            row.update(summary_stats(pooled_rie(run_cfg, members, runner)))
        except Exception as e:  # a failed grid point must not stop the sweep
            row["error"] = f"{type(e).__name__}: {e}"
        rows.append(row)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_summary_csv(os.path.join(out_dir, "summary.csv"), rows)
    return rows


# ---------------------------------------------------------------- CSV writers


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT.format(float(v))
    return str(v)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


SUMMARY_COLUMNS = ("axis", "value", "seed", "frames", "rie0_max", "rie0_median", "rie0_p999",
                   "rie45_max", "rie45_median", "rie45_p999", "error")


def write_summary_csv(path, rows):
    write_rows(path, SUMMARY_COLUMNS, [[r.get(c, "") for c in SUMMARY_COLUMNS] for r in rows])


def write_ccdf_csv(path, samples):
    x, y = ccdf(samples).table()
    write_rows(path, ("rie", "ccdf"), zip(x, y))


def spot_file_name(sop):
    return "spots_" + sop.replace("+", "p").replace("-", "m") + ".csv"


def run_scenario(cfg: ScenarioConfig, out_dir=None, progress=None, **engine_kw):
    """Simulate ``cfg`` and write the selected artifacts into ``out_dir``."""
    from .engine import LOG_COLUMNS, simulate

    art = simulate(cfg, progress=progress, **engine_kw)
    if out_dir is None:
        return art
    os.makedirs(out_dir, exist_ok=True)
    outs = set(cfg.outputs)
    if "log" in outs:
        write_rows(os.path.join(out_dir, "controller_log.csv"), LOG_COLUMNS,
                   ([int(r[0]), *r[1:]] for r in art.log))
    if "rie" in outs:
        m = art.measured
        write_rows(os.path.join(out_dir, "rie_samples.csv"), ("frame_index", "rie0", "rie45"),
                   ([int(r[0]), r[4], r[5]] for r in m))
    if "ccdf" in outs:
        write_ccdf_csv(os.path.join(out_dir, "ccdf_rie0.csv"), art.rie[:, 0])
        write_ccdf_csv(os.path.join(out_dir, "ccdf_rie45.csv"), art.rie[:, 1])
    if "spots" in outs:
        for sop, s in art.spots.items():
            write_rows(os.path.join(out_dir, spot_file_name(sop)), ("s1", "s2", "s3"), s)
    if "traces" in outs and art.traces is not None:
        tr = art.traces
        cols = (tr["t_ns"], tr["i90"], tr["i0"], tr["i45m"], tr["i90"] + tr["i0"])
        write_rows(os.path.join(out_dir, "traces.csv"),
                   ("t_ns", "i90", "i0", "i45m", "replica"), zip(*cols))
    if "summary" in outs:
        row = {"axis": "run", "value": 0.0, "seed": cfg.seed, "error": ""}
        row.update(summary_stats(art.rie))
        write_summary_csv(os.path.join(out_dir, "summary.csv"), [row])
    return art
