import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsdering.dsp import (
    DB_FLOOR,
    bandpass_ideal,
    denormalize_gather,
    fk_spectrum,
    metrics,
    normalize_gather,
    spectral_energy,
)
from vsdering.gather import Gather
from vsdering.synthetics import SynthConfig, synth_gather

DT = 0.002


def test_in_band_sinusoid_round_trips():
    n = 1000
    t = np.arange(n) * DT
    x = np.sin(2 * np.pi * 30.0 * t + 0.3)  # bin 60 of df = 0.5 Hz
    y = bandpass_ideal(x, DT, 6, 72)
    assert np.linalg.norm(y - x) <= 1e-6 * np.linalg.norm(x)


def test_band_edges_are_kept():
    n = 1000
    t = np.arange(n) * DT
    for f in (6.0, 72.0):
        x = np.cos(2 * np.pi * f * t)
        np.testing.assert_allclose(bandpass_ideal(x, DT, 6, 72), x, atol=1e-9)
    x = np.cos(2 * np.pi * 72.5 * t)
    assert np.abs(bandpass_ideal(x, DT, 6, 72)).max() < 1e-9


def test_dc_removed():
    np.testing.assert_allclose(bandpass_ideal(np.full(500, 3.0), DT, 6, 72), 0, atol=1e-12)


def test_white_noise_out_of_band_and_parseval():
    rng = np.random.default_rng(0)
    for n in (1000, 999):
        x = rng.standard_normal(n)
        y = bandpass_ideal(x, DT, 6, 72)
        f = np.fft.rfftfreq(n, DT)
        keep = (f >= 6) & (f <= 72)
        spec_y = np.fft.rfft(y)
        assert np.abs(spec_y[~keep]).max() < 1e-10 * np.abs(spec_y).max()
        kept_energy = spectral_energy(np.fft.rfft(x), n)[keep].sum()
        assert abs(np.sum(y**2) - kept_energy) <= 1e-6 * kept_energy


def test_parseval_full_spectrum():
    rng = np.random.default_rng(1)
    for n in (64, 65):
        x = rng.standard_normal(n)
        e = spectral_energy(np.fft.rfft(x), n).sum()
        assert e == pytest.approx(np.sum(x**2), rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16), n=st.integers(16, 400), a=st.floats(-5, 5), b=st.floats(-5, 5))
def test_bandpass_idempotent_and_linear(seed, n, a, b):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.standard_normal((2, n))
    once = bandpass_ideal(x1, DT, 6, 72)
    twice = bandpass_ideal(once, DT, 6, 72)
    assert np.abs(twice - once).max() <= 1e-6 * max(np.abs(once).max(), 1e-12) + 1e-15
    lhs = bandpass_ideal(a * x1 + b * x2, DT, 6, 72)
    rhs = a * once + b * bandpass_ideal(x2, DT, 6, 72)
    assert np.abs(lhs - rhs).max() <= 1e-9 * (1 + np.abs(rhs).max())


def test_bandpass_errors():
    with pytest.raises(ValueError):
        bandpass_ideal(np.zeros(10), DT, 72, 6)
    with pytest.raises(ValueError):
        bandpass_ideal(np.zeros(10), DT, 6, 6)
    with pytest.raises(ValueError, match="Nyquist"):
        bandpass_ideal(np.zeros(10), DT, 6, 251)


# -- f-k ---------------------------------------------------------------------


def test_fk_impulse_is_flat():
    data = np.zeros((32, 16))
    data[5, 3] = 1.0
    spec = fk_spectrum(Gather(data, DT, 3.125))
    assert spec.magnitude_db.shape == (17, 16)
    np.testing.assert_allclose(spec.magnitude_db, 0.0, atol=1e-9)


def test_fk_max_is_zero_db_and_floor():
    g = synth_gather(SynthConfig(n_t=128, n_x=64, num_events=3, seed=2))
    db = fk_spectrum(g).magnitude_db
    assert db.max() == pytest.approx(0.0, abs=1e-12)
    assert db.min() >= DB_FLOOR


def test_fk_empty_spectrum():
    with pytest.raises(ValueError, match="empty spectrum"):
        fk_spectrum(Gather(np.zeros((8, 8)), DT, 1.0))


def test_fk_plane_wave_peak():
    n_t, n_x, dx = 200, 64, 3.125
    fi, ki = 30, 5  # bins: 75 Hz, 0.025 cycles/m
    f1, k1 = fi / (n_t * DT), ki / (n_x * dx)
    t = np.arange(n_t)[:, None] * DT
    x = np.arange(n_x)[None, :] * dx
    spec = fk_spectrum(Gather(np.cos(2 * np.pi * (f1 * t - k1 * x)), DT, dx))
    row, col = np.unravel_index(np.argmax(spec.magnitude_db), spec.magnitude_db.shape)
    assert abs(spec.freqs[row] - f1) <= spec.df * (1 + 1e-9)
    assert abs(spec.wavenumbers[col] - k1) <= spec.dk * (1 + 1e-9)


def test_fk_linear_event_ridge():
    v = 2000.0
    cfg = SynthConfig(
        n_t=256, n_x=128, num_events=1, velocities=(v,), intercepts=(0.05,), amplitudes=(1.0,)
    )
    spec = fk_spectrum(synth_gather(cfg))
    mid = (spec.freqs >= 20) & (spec.freqs <= 100)
    for row in np.flatnonzero(mid):
        k_peak = spec.wavenumbers[np.argmax(spec.magnitude_db[row])]
        assert abs(k_peak - spec.freqs[row] / v) <= spec.dk * (1 + 1e-9)


# -- normalization -----------------------------------------------------------


def test_normalize_hand_case():
    g, scale = normalize_gather(Gather(np.array([[-2.0, 1.0]]), DT, 1.0))
    assert scale == 2.0
    np.testing.assert_array_equal(g.data, [[-1.0, 0.5]])


def test_normalize_degenerate():
    g0 = Gather(np.zeros((3, 3)), DT, 1.0)
    g, scale = normalize_gather(g0)
    assert scale == 0 and not g.data.any()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16), mag=st.floats(1e-6, 1e6))
def test_normalize_round_trip(seed, mag):
    data = mag * np.random.default_rng(seed).standard_normal((7, 5))
    g = Gather(data, DT, 1.0)
    normed, scale = normalize_gather(g)
    assert np.abs(normed.data).max() == pytest.approx(1.0)
    back = denormalize_gather(normed, scale)
    np.testing.assert_allclose(back.data, data, rtol=1e-6)


# -- metrics -----------------------------------------------------------------


@pytest.fixture(scope="module")
def ref():
    return synth_gather(SynthConfig(n_t=200, n_x=40, num_events=4, seed=3))


def test_metrics_identity(ref):
    m = metrics(ref, ref, 6, 72)
    assert m["nrmse"] == 0 and m["corr"] == pytest.approx(1.0) and m["outband_energy_ratio"] == 1.0


def test_metrics_bandpassed(ref):
    cand = Gather(bandpass_ideal(ref.data, ref.dt, 6, 72), ref.dt, ref.dx)
    assert metrics(cand, ref, 6, 72)["outband_energy_ratio"] <= 1e-10


def test_metrics_half(ref):
    m = metrics(Gather(0.5 * ref.data, ref.dt, ref.dx), ref, 6, 72)
    assert m["corr"] == pytest.approx(1.0)
    assert m["nrmse"] == pytest.approx(0.5)


def test_metrics_errors(ref):
    with pytest.raises(ValueError, match="zero norm"):
        metrics(ref, Gather(np.zeros_like(ref.data), ref.dt, ref.dx), 6, 72)
    with pytest.raises(ValueError, match="shape"):
        metrics(Gather(ref.data[:, :5], ref.dt, ref.dx), ref, 6, 72)
