"""Frequency-domain helpers: brick-wall band-pass, f-k spectra, normalization, metrics."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .gather import Gather

DB_FLOOR = -120.0
DEGENERATE_SCALE = 1e-12


def _band_mask(n: int, dt: float, lo: float, hi: float) -> np.ndarray:
    f = np.fft.rfftfreq(n, dt)
    tol = 1e-9 * max(hi, 1.0)
    return (f >= lo - tol) & (f <= hi + tol)


def _check_band(dt: float, lo: float, hi: float) -> None:
    nyq = 0.5 / dt
    if not 0 <= lo < hi:
        raise ValueError(f"band-pass needs 0 <= lo < hi, got lo={lo}, hi={hi}")
    if hi > nyq * (1 + 1e-12):
        raise ValueError(f"hi={hi} Hz exceeds the Nyquist frequency {nyq} Hz")


def bandpass_ideal(
    trace: np.ndarray, dt: float, lo: float, hi: float, axis: int = 0
) -> np.ndarray:
    """Zero every frequency bin outside ``[lo, hi]`` (edges kept), unit gain inside.

    Works along ``axis`` so a whole gather can be filtered trace by trace in
    one call.
    """
    _check_band(dt, lo, hi)
    trace = np.asarray(trace, dtype=np.float64)
    n = trace.shape[axis]
    spec = np.fft.rfft(trace, axis=axis)
    shape = [1] * trace.ndim
    shape[axis] = -1
    spec *= _band_mask(n, dt, lo, hi).reshape(shape)
    return np.fft.irfft(spec, n=n, axis=axis)


def spectral_energy(spec: np.ndarray, n: int, axis: int = 0) -> np.ndarray:
    """Time-domain energy carried by each one-sided rfft bin (Parseval weights)."""
    w = np.full(spec.shape[axis], 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    shape = [1] * spec.ndim
    shape[axis] = -1
    return w.reshape(shape) * np.abs(spec) ** 2 / n


@dataclass
class FkSpectrum:
    magnitude_db: np.ndarray  # (n_t // 2 + 1, n_x), wavenumber centered
    df: float
    dk: float
    freqs: np.ndarray
    wavenumbers: np.ndarray


def fk_spectrum(gather: Gather) -> FkSpectrum:
    """Normalized f-k amplitude spectrum in dB.

    Sign convention: an event with moveout ``t = x / v`` (v > 0) maps onto
    the line ``f = v * k`` with positive wavenumbers.
    """
    n_t, n_x = gather.data.shape
    if n_t < 2 or n_x < 2:
        raise ValueError(f"f-k spectrum needs at least 2x2 samples, got {n_t}x{n_x}")
    data = np.asarray(gather.data, dtype=np.float64)
    spec = np.fft.rfft(data, axis=0)
    # forward transform in time, inverse sign in space
    spec = np.fft.ifft(spec, axis=1) * n_x
    spec = np.fft.fftshift(spec, axes=1)
    mag = np.abs(spec)
    peak = mag.max()
    if not peak > 0:
        raise ValueError("empty spectrum: gather is all zeros")
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag / peak)
    db = np.maximum(db, DB_FLOOR)
    freqs = np.fft.rfftfreq(n_t, gather.dt)
    ks = np.fft.fftshift(np.fft.fftfreq(n_x, gather.dx))
    return FkSpectrum(db, 1.0 / (n_t * gather.dt), 1.0 / (n_x * gather.dx), freqs, ks)


def normalize_gather(g: Gather) -> tuple[Gather, float]:
    """Scale to unit max amplitude; scale 0 flags an (almost) all-zero gather."""
    scale = float(np.max(np.abs(g.data))) if g.data.size else 0.0
    if scale < DEGENERATE_SCALE:
        return g, 0.0
    return replace(g, data=g.data / scale), scale


def denormalize_gather(g: Gather, scale: float) -> Gather:
    if scale == 0:
        return g
    return replace(g, data=g.data * scale)


def outband_energy(g: Gather, lo: float, hi: float) -> float:
    data = np.asarray(g.data, dtype=np.float64)
    spec = np.fft.rfft(data, axis=0)
    energy = spectral_energy(spec, g.n_t, axis=0)
    outside = ~_band_mask(g.n_t, g.dt, lo, hi)
    return float(energy[outside].sum())


def metrics(candidate: Gather, reference: Gather, lo: float, hi: float) -> dict:
    """nrmse, Pearson correlation and out-of-band energy ratio vs a reference."""
    if candidate.data.shape != reference.data.shape:
        raise ValueError(
            f"shape mismatch: candidate {candidate.data.shape}, "
            f"reference {reference.data.shape}"
        )
    if not np.isclose(candidate.dt, reference.dt, rtol=1e-12):
        raise ValueError(f"dt mismatch: {candidate.dt} vs {reference.dt}")
    _check_band(reference.dt, lo, hi)
    c = np.asarray(candidate.data, dtype=np.float64).ravel()
    r = np.asarray(reference.data, dtype=np.float64).ravel()
    ref_norm = np.linalg.norm(r)
    if ref_norm == 0:
        raise ValueError("reference gather has zero norm")
    nrmse = float(np.linalg.norm(c - r) / ref_norm)
    cc, rc = c - c.mean(), r - r.mean()
    denom = np.linalg.norm(cc) * np.linalg.norm(rc)
    corr = float(cc @ rc / denom) if denom > 0 else 0.0
    ref_out = outband_energy(reference, lo, hi)
    if ref_out == 0:
        raise ValueError("reference has no energy outside the band; ratio undefined")
    ratio = outband_energy(candidate, lo, hi) / ref_out
    return {"nrmse": nrmse, "corr": corr, "outband_energy_ratio": float(ratio)}
