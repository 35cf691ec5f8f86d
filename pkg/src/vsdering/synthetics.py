"""Synthetic shot gathers built from linear-moveout Ricker events."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .dsp import bandpass_ideal
from .gather import Gather

__all__ = [
    "Event",
    "Gather",
    "SynthConfig",
    "draw_events",
    "event_arrivals",
    "make_ringing",
    "ricker",
    "synth_gather",
]


def ricker(f0: float, t):
    """Zero-phase Ricker wavelet with peak frequency ``f0``, unit value at t=0."""
    if not f0 > 0:
        raise ValueError(f"f0 must be positive, got {f0}")
    a = (np.pi * f0 * np.asarray(t, dtype=np.float64)) ** 2
    return (1.0 - 2.0 * a) * np.exp(-a)


@dataclass(frozen=True)
class Event:
    t0: float  # intercept time at trace 0, seconds
    velocity: float  # m/s
    amplitude: float


@dataclass(frozen=True)
class SynthConfig:
    n_t: int = 1000
    n_x: int = 1200
    dt: float = 0.002
    dx: float = 3.125
    v_min: float = 1300.0
    v_max: float = 2300.0
    f0: float = 60.0
    num_events: int = 12
    amplitudes: tuple[float, ...] | None = None  # default +1, -1, +1, ...
    seed: int = 0
    # optional fixed layout; drawn from the seed when None
    velocities: tuple[float, ...] | None = None
    intercepts: tuple[float, ...] | None = None
    noise_std: float = 0.0

    def validate(self) -> None:
        if self.n_t < 1:
            raise ValueError(f"n_t must be >= 1, got {self.n_t}")
        if self.n_x < 1:
            raise ValueError(f"n_x must be >= 1, got {self.n_x}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.dx > 0:
            raise ValueError(f"dx must be positive, got {self.dx}")
        if not 0 < self.v_min <= self.v_max:
            raise ValueError(
                f"v_min/v_max must satisfy 0 < v_min <= v_max, got {self.v_min}, {self.v_max}"
            )
        if not 0 < self.f0 < 0.5 / self.dt:
            raise ValueError(f"f0={self.f0} must lie in (0, Nyquist={0.5 / self.dt})")
        if self.num_events < 0:
            raise ValueError(f"num_events must be >= 0, got {self.num_events}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        for name in ("amplitudes", "velocities", "intercepts"):
            value = getattr(self, name)
            if value is not None and len(value) != self.num_events:
                raise ValueError(
                    f"{name} has {len(value)} entries for {self.num_events} events"
                )
        if self.velocities is not None and any(v <= 0 for v in self.velocities):
            raise ValueError("velocities must be positive")


def draw_events(config: SynthConfig) -> list[Event]:
    """Event layout for ``config``: uniform velocities, intercepts in [0.1 T, 0.8 T]."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.num_events
    record = config.n_t * config.dt
    v = rng.uniform(config.v_min, config.v_max, n)
    t0 = rng.uniform(0.1 * record, 0.8 * record, n)
    if config.velocities is not None:
        v = np.asarray(config.velocities, dtype=np.float64)
    if config.intercepts is not None:
        t0 = np.asarray(config.intercepts, dtype=np.float64)
    if config.amplitudes is not None:
        amp = np.asarray(config.amplitudes, dtype=np.float64)
    else:
        amp = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    return [Event(float(a), float(b), float(c)) for a, b, c in zip(t0, v, amp)]


def event_arrivals(event: Event, n_x: int, dx: float) -> np.ndarray:
    """Peak time of ``event`` on every trace, in seconds."""
    return event.t0 + np.arange(n_x) * dx / event.velocity


def _render(events: Sequence[Event], config: SynthConfig) -> np.ndarray:
    t = np.arange(config.n_t)[:, None] * config.dt
    data = np.zeros((config.n_t, config.n_x))
    for ev in events:
        arrivals = event_arrivals(ev, config.n_x, config.dx)
        data += ev.amplitude * ricker(config.f0, t - arrivals[None, :])
    return data


def synth_gather(config: SynthConfig | None = None) -> Gather:
    """Clean gather: sum of Ricker events sampled on the ``dt`` grid."""
    config = config or SynthConfig()
    events = draw_events(config)
    data = _render(events, config)
    if config.noise_std > 0:
        # separate stream so the noise switch leaves the event layout alone
        noise_rng = np.random.default_rng([config.seed, 1])
        data += config.noise_std * noise_rng.standard_normal(data.shape)
    return Gather(data, config.dt, config.dx)


def make_ringing(clean: Gather, lo: float = 6.0, hi: float = 72.0) -> Gather:
    """Ideal band-pass copy of ``clean``; the truncated spectrum rings."""
    return replace(clean, data=bandpass_ideal(clean.data, clean.dt, lo, hi, axis=0))
