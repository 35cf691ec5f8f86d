"""STA/LTA first-break picking and pick-continuity statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gather import Gather

RATIO_EPS = 1e-12
MIN_TRACE_ENERGY = 1e-12


def sta_lta_ratio(trace: np.ndarray, sta_len: int, lta_len: int) -> np.ndarray:
    """Trailing-window STA/LTA of the squared trace.

    At sample ``i`` both averages cover the window ending at ``i``; near the
    start they average over the samples available so far.
    """
    x = np.asarray(trace, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= sta_len < lta_len <= n:
        raise ValueError(
            f"need 1 <= sta_len < lta_len <= n_t, got sta={sta_len}, lta={lta_len}, n_t={n}"
        )
    csum = np.concatenate(([0.0], np.cumsum(x * x)))
    idx = np.arange(1, n + 1)

    def trailing_mean(length: int) -> np.ndarray:
        start = np.maximum(idx - length, 0)
        total = np.maximum(csum[idx] - csum[start], 0.0)
        return total / (idx - start)

    return trailing_mean(sta_len) / (trailing_mean(lta_len) + RATIO_EPS)


@dataclass
class PickSet:
    picks: list[int | None]  # sample index per trace, None when absent
    sta_len: int
    lta_len: int
    mode: str
    threshold: float
    ratio_max: np.ndarray
    dt: float

    @property
    def present(self) -> np.ndarray:
        return np.array([p is not None for p in self.picks])

    def times(self) -> list[float | None]:
        return [None if p is None else p * self.dt for p in self.picks]


def pick_first_breaks(
    gather: Gather,
    sta_s: float = 0.02,
    lta_s: float = 0.2,
    mode: str = "argmax",
    thr: float = 4.0,
) -> PickSet:
    """Pick one first break per trace from its STA/LTA ratio.

    ``argmax`` takes the global ratio maximum; ``threshold`` takes the first
    sample whose ratio reaches ``thr``.
    """
    if mode not in ("argmax", "threshold"):
        raise ValueError(f"unknown picking mode {mode!r}")
    sta = int(round(sta_s / gather.dt))
    lta = int(round(lta_s / gather.dt))
    if sta < 1 or lta < 1:
        raise ValueError(
            f"windows sta={sta_s}s, lta={lta_s}s are shorter than one sample dt={gather.dt}"
        )
    picks: list[int | None] = []
    ratio_max = np.zeros(gather.n_x)
    for j in range(gather.n_x):
        trace = np.asarray(gather.data[:, j], dtype=np.float64)
        ratio = sta_lta_ratio(trace, sta, lta)
        ratio_max[j] = ratio.max()
        if np.sum(trace * trace) < MIN_TRACE_ENERGY:
            picks.append(None)
        elif mode == "argmax":
            picks.append(int(np.argmax(ratio)))
        else:
            hits = np.flatnonzero(ratio >= thr)
            picks.append(int(hits[0]) if hits.size else None)
    return PickSet(picks, sta, lta, mode, thr, ratio_max, gather.dt)


def pick_consistency(picks: PickSet, dx: float) -> dict:
    """Mean absolute adjacent-trace pick jump and pick coverage.

    ``mad_adjacent`` is in samples (None with fewer than two picks or no
    adjacent present pair); ``mad_slope`` is the same jump per meter.
    """
    if not dx > 0:
        raise ValueError(f"dx must be positive, got {dx}")
    p = picks.picks
    coverage = sum(q is not None for q in p) / len(p) if p else 0.0
    jumps = [
        abs(b - a) for a, b in zip(p[:-1], p[1:]) if a is not None and b is not None
    ]
    mad = float(np.mean(jumps)) if jumps else None
    return {
        "mad_adjacent": mad,
        "mad_slope": None if mad is None else mad / dx,
        "coverage": float(coverage),
    }
