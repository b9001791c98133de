import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal

from ductflight import CircularDuct, RectangularDuct
from ductflight.errors import CutoffAboveNyquist, MissingPositions, OutOfDuct
from ductflight.forcemap import (FieldAmplitudes, ForceField, RawForceRecord, baseline_subtract, build_grid,
                                 butterworth_lowpass, butterworth_sos, cell_stats, default_grid, process_record,
                                 synthesize_field, synthetic_force)

FS = 7000.0


def analytic_gain(f, fc=1.0, order=4):
    return 1.0 / math.sqrt(1.0 + (f / fc) ** (2 * order))


def steady_amplitude(f, seconds=12.0):
    t = np.arange(int(seconds * FS)) / FS
    y = butterworth_lowpass(np.sin(2 * math.pi * f * t))
    tail = y[t > seconds - 3.0]
    return 0.5 * (tail.max() - tail.min())


def test_gain_at_cutoff():
    assert steady_amplitude(1.0) == pytest.approx(0.7079, abs=0.01)
    assert steady_amplitude(1.0) == pytest.approx(analytic_gain(1.0), abs=2e-3)


def test_frequency_response_matches_analytic():
    f = np.array([0.0, 0.25, 0.5, 1.0, 2.0, 5.0])
    _, h = signal.sosfreqz(butterworth_sos(), worN=f, fs=FS)
    np.testing.assert_allclose(np.abs(h), [analytic_gain(x) for x in f], rtol=1e-3)
    assert abs(abs(h[0]) - 1.0) < 1e-6


def test_dc_passthrough_and_50hz_rejection():
    t = np.arange(int(12 * FS)) / FS
    const = butterworth_lowpass(np.full_like(t, 2.5))
    np.testing.assert_allclose(const, 2.5, rtol=1e-8)
    y = butterworth_lowpass(0.4 + np.sin(2 * math.pi * 50 * t))
    assert np.abs(y[t > 6] - 0.4).max() < 1e-3
    _, h = signal.sosfreqz(butterworth_sos(), worN=[50.0], fs=FS)
    assert 20 * np.log10(abs(h[0])) <= -80


def test_cutoff_above_nyquist():
    with pytest.raises(CutoffAboveNyquist):
        butterworth_sos(4, 3500.0, FS)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_filter_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 4000))
    lhs = butterworth_lowpass(a * x + b * y, cutoff=20.0, fs=1000.0)
    rhs = a * butterworth_lowpass(x, cutoff=20.0, fs=1000.0) + b * butterworth_lowpass(y, cutoff=20.0, fs=1000.0)
    scale = max(np.abs(lhs).max(), 1e-12)
    assert np.abs(lhs - rhs).max() <= 1e-9 * scale + 1e-15


def test_baseline_examples():
    t = np.arange(0, 10, 1 / 100)
    np.testing.assert_allclose(baseline_subtract(t, np.full((len(t), 2), 0.7)), 0.0, atol=1e-14)
    step = np.where(t < 5, 0.5, 0.8)
    out = baseline_subtract(t, step)
    np.testing.assert_allclose(out[t >= 5], 0.3, atol=1e-12)
    with pytest.raises(ValueError):
        baseline_subtract(t[:100], step[:100])


def test_baseline_monte_carlo():
    rng = np.random.default_rng(7)
    sigma, n = 0.02, 35000
    t = np.arange(2 * n) / FS
    x = np.r_[rng.normal(0.5, sigma, n), rng.normal(0.8, sigma, n)]
    plateau = baseline_subtract(t, x)[n:].mean()
    # both the baseline and plateau means carry sampling error
    assert abs(plateau - 0.3) < 3 * sigma * math.sqrt(2 / n)


def test_baseline_idempotent():
    rng = np.random.default_rng(1)
    t = np.arange(0, 8, 0.01)
    x = baseline_subtract(t, rng.standard_normal(len(t)))
    np.testing.assert_allclose(baseline_subtract(t, x), x, atol=1e-15)


def test_cell_stats_examples():
    m, c = cell_stats(np.tile([0.1, -0.2], (50, 1)))
    np.testing.assert_allclose(m, [0.1, -0.2])
    np.testing.assert_allclose(c, 0.0, atol=1e-30)
    rng = np.random.default_rng(3)
    _, c = cell_stats(rng.normal(0, 0.05, (100_000, 2)))
    np.testing.assert_allclose(np.linalg.eigvalsh(c), 0.0025, rtol=0.05)
    u = rng.standard_normal(500)
    w = np.linalg.eigvalsh(cell_stats(np.c_[u, 2 * u])[1])
    assert w[0] < 1e-12 * w[1]
    with pytest.raises(ValueError):
        cell_stats([[0.0, 0.0]])


def test_cell_stats_matches_numpy():
    x = np.random.default_rng(0).standard_normal((300, 2)) @ [[1.0, 0.3], [0.0, 0.5]]
    m, c = cell_stats(x)
    np.testing.assert_allclose(m, x.mean(axis=0))
    np.testing.assert_allclose(c, np.cov(x.T, ddof=1), rtol=1e-12)


def _small_field():
    duct = CircularDuct(0.2)
    ys, zs = np.array([-0.05, 0.0, 0.05]), np.array([-0.05, 0.05])
    mean = np.arange(12.0).reshape(3, 2, 2)
    cov = np.ones((3, 2, 3)) * np.arange(3.0)[:, None, None] + [1.0, 0.0, 2.0]
    return ForceField(duct, ys, zs, mean, cov)


def test_lookup_nodes_and_midpoints():
    f = _small_field()
    m, c = f.lookup(0.05, -0.05)
    np.testing.assert_allclose(m, f.mean[2, 0])
    np.testing.assert_allclose(c, [[f.cov[2, 0, 0], f.cov[2, 0, 1]], [f.cov[2, 0, 1], f.cov[2, 0, 2]]])
    m, _ = f.lookup(0.025, -0.05)
    np.testing.assert_allclose(m, 0.5 * (f.mean[1, 0] + f.mean[2, 0]))
    m, _ = f.lookup(0.0, 0.0)
    np.testing.assert_allclose(m, 0.5 * (f.mean[1, 0] + f.mean[1, 1]))


def test_lookup_outside_hull_uses_border():
    f = _small_field()
    np.testing.assert_allclose(f.lookup(0.0, -0.15)[0], f.mean[1, 0])
    np.testing.assert_allclose(f.lookup(0.12, 0.1)[0], f.mean[2, 1])
    with pytest.raises(OutOfDuct):
        f.lookup(0.0, 0.25)


def test_lookup_continuity():
    f = synthesize_field(CircularDuct(0.175))
    rng = np.random.default_rng(5)
    for _ in range(100):
        r, a = 0.15 * math.sqrt(rng.random()), 2 * math.pi * rng.random()
        y, z = r * math.cos(a), r * math.sin(a)
        m0, c0 = f.lookup(y, z)
        m1, c1 = f.lookup(y + 1e-7, z - 1e-7)
        assert np.abs(m1 - m0).max() < 1e-5 and np.abs(c1 - c0).max() < 1e-6


def test_synthetic_circular_structure():
    duct = CircularDuct(0.2)
    fld = synthesize_field(duct)
    fy, fz = synthetic_force(duct, 0.0, -duct.radius + 0.10)
    assert math.hypot(fy, fz) < 0.2 * fld.max_magnitude()
    assert synthetic_force(duct, 0.0, 0.0)[1] < 0
    # strong lift right above the floor
    assert synthetic_force(duct, 0.0, -duct.radius + 0.02)[1] > 0.05
    # top quadrants: pulled towards the nearest wall
    assert synthetic_force(duct, 0.15, 0.1)[0] > 0 and synthetic_force(duct, -0.15, 0.1)[0] < 0


def test_synthetic_rectangular_ceiling_pull():
    duct = RectangularDuct(0.5, 0.5)
    assert synthetic_force(duct, 0.0, 0.25 - 0.05)[1] > 0
    assert synthetic_force(duct, 0.0, -0.25 + 0.05)[1] > 0
    assert synthetic_force(duct, 0.2, 0.0)[0] > 0


@settings(max_examples=100)
@given(st.floats(0.0, 0.16), st.floats(-0.16, 0.16))
def test_synthetic_mirror_symmetry(y, z):
    duct = CircularDuct(0.175)
    if not duct.contains(y, z):
        return
    a = synthetic_force(duct, y, z)
    b = synthetic_force(duct, -y, z)
    assert b[0] == pytest.approx(-a[0], abs=1e-15)
    assert b[1] == pytest.approx(a[1], abs=1e-15)


def test_regime_scaling_monotone():
    duct = CircularDuct(0.175)
    mags = [synthesize_field(duct, regime=r).max_magnitude() for r in (0.3, 0.5, 0.7)]
    assert mags[0] < mags[1] < mags[2]


def test_field_cells_inside_duct_and_psd():
    for duct in (CircularDuct(0.175), CircularDuct(0.28), RectangularDuct(0.5, 0.4)):
        fld = synthesize_field(duct)
        assert fld.shape == (16, 12)
        for cell in fld.cells():
            assert duct.contains(cell.y, cell.z)
            assert np.linalg.eigvalsh(cell.cov).min() >= 0


def test_default_grid_has_192_nodes():
    ys, zs = default_grid(CircularDuct(0.2))
    assert len(ys) * len(zs) == 192


def test_covariance_model():
    amps = FieldAmplitudes()
    fld = synthesize_field(CircularDuct(0.175), amplitudes=amps)
    sig = amps.sigma_floor + amps.sigma_gain * np.hypot(fld.mean[..., 0], fld.mean[..., 1])
    np.testing.assert_allclose(fld.cov[..., 0], sig**2)
    np.testing.assert_allclose(fld.cov[..., 2], (0.7 * sig) ** 2)


def _record(mean, cov, rng, fs=1000.0, base_s=5.0, in_s=10.0, offset=(0.01, 0.2, -0.1)):
    n0, n1 = int(base_s * fs), int(in_s * fs)
    t = np.arange(n0 + n1) / fs
    f = np.tile(offset, (len(t), 1))
    f[n0:, 1:] += mean + rng.multivariate_normal([0, 0], cov, n1)
    return RawForceRecord(t, f, np.zeros_like(f), fs)


def test_process_record_hand_fixture():
    # noiseless step: the mean is exact and the covariance is zero
    rec = _record(np.array([0.02, -0.03]), np.zeros((2, 2)), np.random.default_rng(0))
    pr = process_record(rec)
    np.testing.assert_allclose(pr.mean, [0.02, -0.03], atol=1e-12)
    np.testing.assert_allclose(pr.cov, 0.0, atol=1e-20)
    assert pr.n == 10_000
    filt = process_record(rec, stats_on="filtered", settle=5.0)
    np.testing.assert_allclose(filt.mean, [0.02, -0.03], atol=2e-4)


def test_build_grid_assembles_and_reports_gaps():
    rng = np.random.default_rng(2)
    pos = [(y, z) for y in (-0.02, 0.0, 0.02) for z in (-0.01, 0.01)]
    means = {p: np.array([10 * p[0], 10 * p[1]]) for p in pos}
    recs = {p: _record(means[p], 1e-6 * np.eye(2), rng) for p in pos}
    fld = build_grid(recs, duct=CircularDuct(0.175))
    assert fld.shape == (3, 2)
    for i, y in enumerate(fld.ys):
        for j, z in enumerate(fld.zs):
            np.testing.assert_allclose(fld.mean[i, j], means[(y, z)], atol=5e-5)
    del recs[(0.0, 0.01)]
    with pytest.raises(MissingPositions) as exc:
        build_grid(recs, positions=pos)
    assert (0.0, 0.01) in exc.value.missing


def test_raw_record_validation():
    with pytest.raises(ValueError):
        RawForceRecord([0.0, 0.0], np.zeros((2, 3)), np.zeros((2, 3)))
