import filecmp
import os

import numpy as np
import pytest

from tdmpol.engine import ClockFailure, LOG_COLUMNS, run_slot, run_waveform, simulate
from tdmpol.metrics import run_scenario
from tdmpol.scenario import ALL_SOPS, preset


def short_waveform(**kw):
    base = dict(engine="waveform", duration_ms=0.5, settle_ms=0.0, true_offset_ns=437.3)
    base.update(kw)
    return preset("b2b", **base)


def bright_noise(lo_ns, hi_ns, first_frame=0, seed=0):
    """Perturbation hook that overwrites ``[lo_ns, hi_ns)`` of every frame with random bright light."""
    rng = np.random.default_rng(seed)

    def perturb(f, t, tau, stokes):
        sel = (tau >= lo_ns) & (tau < hi_ns)
        if f < first_frame or not sel.any():
            return stokes
        out = stokes.copy()
        n = int(sel.sum())
        power = rng.uniform(0.0, 3.0, n) * stokes[:, 0].max()
        v = rng.standard_normal((n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        out[sel, 0] = power
        out[sel, 1:] = power[:, None] * v
        return out

    return perturb


def test_probe_slot_perturbation_leaves_controller_bit_identical():
    cfg = short_waveform()
    ref = run_waveform(cfg)
    hit = run_waveform(cfg, perturb=bright_noise(1200.0, 1760.0))
    assert ref.clock.offset_ns == hit.clock.offset_ns
    assert np.array_equal(ref.log[:, :6], hit.log[:, :6], equal_nan=True)
    assert np.isfinite(ref.log[10:, 4]).all()


def test_dark_slot_perturbation_is_invisible_with_frozen_zero_point():
    cfg = short_waveform(zero_point_mode="frozen")
    ref = run_waveform(cfg)
    # the clock locks on frames 0-1 and the zero point freezes on frame 2
    hit = run_waveform(cfg, perturb=bright_noise(1760.0, 1800.0, first_frame=3))
    assert np.array_equal(ref.log[:, :6], hit.log[:, :6], equal_nan=True)


def test_waveform_acquires_clock_and_tracks():
    cfg = short_waveform(duration_ms=1.0)
    art = run_waveform(cfg)
    assert abs(art.clock.offset_ns - 437.0) <= 1.0
    locked = art.log[:, 6] > 0
    assert not locked[:2].any() and locked[2:].all()
    assert np.nanmax(art.log[100:, 4]) < 0.02


def test_lost_dark_window_raises_clock_failure():
    cfg = short_waveform(duration_ms=0.1)
    flood = bright_noise(0.0, 1800.0)
    with pytest.raises(ClockFailure):
        run_waveform(cfg, perturb=flood)


def test_slot_and_waveform_engines_agree():
    cfg = short_waveform(duration_ms=3.0, settle_ms=0.5)
    w = run_waveform(cfg)
    s = run_slot(cfg)
    for k in (0, 1):
        a = np.nanmedian(w.rie[:, k])
        b = np.median(s.rie[:, k])
        assert a == pytest.approx(b, rel=0.35)


def test_slot_engine_log_layout():
    cfg = preset("dgd35", duration_ms=1.0, settle_ms=0.2)
    art = run_slot(cfg)
    assert art.log.shape == (cfg.n_frames + cfg.n_settle, len(LOG_COLUMNS))
    assert np.array_equal(art.log[:, 0], np.arange(len(art.log)))
    assert art.measured.shape[0] == cfg.n_frames
    assert np.all((art.rie >= 0) & (art.rie <= 1))


def test_spot_segments_cover_every_sop():
    cfg = preset("b2b", duration_ms=1.2, settle_ms=0.2, outputs=("spots",), spot_sops=ALL_SOPS)
    art = simulate(cfg)
    assert set(art.spots) == set(ALL_SOPS)
    per_frame = int((cfg.probe_ns - cfg.guard_ns) * 1e-9 * cfg.polarimeter_rate_hz)
    total = sum(len(v) for v in art.spots.values())
    assert total == cfg.n_frames * per_frame
    for v in art.spots.values():
        assert np.allclose(np.linalg.norm(v, axis=1), 1.0)


def test_progress_callback():
    calls = []
    cfg = preset("b2b", duration_ms=0.2, settle_ms=0.0)
    run_slot(cfg, progress=lambda done, total: calls.append((done, total)))
    assert calls[-1][0] == calls[-1][1] == cfg.n_frames


def test_reruns_are_byte_identical(tmp_path):
    for name, cfg in (("slot", preset("dgd35", duration_ms=2.0, settle_ms=0.2,
                                      outputs=("log", "rie", "ccdf", "spots", "summary"),
                                      spot_sops=("+S1", "+S2"))),
                      ("wave", short_waveform(duration_ms=0.3,
                                              outputs=("log", "rie", "ccdf", "summary", "traces")))):
        a, b = tmp_path / f"{name}_a", tmp_path / f"{name}_b"
        run_scenario(cfg, str(a))
        run_scenario(cfg, str(b))
        files = sorted(os.listdir(a))
        assert files == sorted(os.listdir(b)) and files
        match, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
        assert mismatch == [] and errors == []


def test_seed_changes_the_noise():
    cfg = preset("dgd35", duration_ms=0.5, settle_ms=0.0)
    a = run_slot(cfg).rie
    b = run_slot(cfg.with_(seed=2)).rie
    assert not np.array_equal(a, b)


def test_noiseless_run_is_noise_free():
    cfg = preset("b2b", duration_ms=0.5, settle_ms=0.0, noise=False)
    assert np.array_equal(run_slot(cfg).rie, run_slot(cfg.with_(seed=9)).rie)


def test_medians_are_stationary_under_run_length_doubling():
    cfg = preset("dgd35", duration_ms=25.0)
    short = run_slot(cfg).rie
    long_ = run_slot(cfg.with_(duration_ms=50.0, seed=2)).rie
    for k in (0, 1):
        assert np.median(long_[:, k]) == pytest.approx(np.median(short[:, k]), rel=0.10)


def test_output_files(tmp_path):
    cfg = short_waveform(duration_ms=0.2, outputs=("log", "rie", "ccdf", "summary", "traces"),
                         trace_frames=2)
    run_scenario(cfg, str(tmp_path))
    assert sorted(os.listdir(tmp_path)) == ["ccdf_rie0.csv", "ccdf_rie45.csv", "controller_log.csv",
                                            "rie_samples.csv", "summary.csv", "traces.csv"]
    head = (tmp_path / "controller_log.csv").read_text().splitlines()[0]
    assert head == ",".join(LOG_COLUMNS)
    traces = np.loadtxt(tmp_path / "traces.csv", delimiter=",", skiprows=1)
    assert traces.shape == (2 * 1800, 5)
    assert np.allclose(traces[:, 4], traces[:, 1] + traces[:, 2])
    rie = np.loadtxt(tmp_path / "rie_samples.csv", delimiter=",", skiprows=1)
    assert rie.shape[1] == 3
