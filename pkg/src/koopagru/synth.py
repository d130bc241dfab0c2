"""Synthetic series with known dynamics and known anomaly positions.

Everything here is a pure function of its arguments and a seed, so fixtures
are byte-for-byte reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data_io import RawSeries
from .exceptions import SpecError, UnstableSystemError

MAX_SPECTRAL_RADIUS = 1.05


@dataclass(frozen=True)
class LinearSystemSpec:
    A: np.ndarray
    x0: np.ndarray
    steps: int
    noise_std: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class AnomalySpec:
    kind: str
    positions: Sequence[int]
    magnitude: float = 1.0
    width: int = 1
    # channels affected; None means all of them
    channels: Optional[Sequence[int]] = None
    # only for ``freq_shift``: replacement frequency in cycles per sample
    frequency: float = 0.25
    seed: int = 0

    KINDS = ("spike", "level_shift", "freq_shift")


def spectral_radius(A) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(A, dtype=np.float64)))))


def gen_linear_system(spec: LinearSystemSpec) -> RawSeries:
    """Iterate ``x[k+1] = A x[k] + noise`` for ``spec.steps`` rows starting at ``x0``."""
    A = np.atleast_2d(np.asarray(spec.A, dtype=np.float64))
    x0 = np.asarray(spec.x0, dtype=np.float64).ravel()
    if A.shape[0] != A.shape[1] or A.shape[0] != x0.shape[0]:
        raise SpecError(f"A {A.shape} and x0 {x0.shape} are inconsistent")
    if spec.steps < 1:
        raise SpecError("steps must be positive")
    if spec.noise_std < 0:
        raise SpecError("noise_std must be non-negative")
    rho = spectral_radius(A)
    if rho > MAX_SPECTRAL_RADIUS:
        raise UnstableSystemError(f"spectral radius {rho:.4f} exceeds {MAX_SPECTRAL_RADIUS}")

    rng = np.random.default_rng(spec.seed)
    values = np.empty((spec.steps, x0.shape[0]))
    values[0] = x0
    for k in range(1, spec.steps):
        values[k] = A @ values[k - 1]
        if spec.noise_std > 0:
            values[k] += rng.normal(0.0, spec.noise_std, size=x0.shape[0])
    return RawSeries(values, labels=np.zeros(spec.steps, dtype=np.int64))


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def gen_sine_mixture(
    freqs: Sequence[tuple],
    L: int,
    n_windows: int,
    m: int = 1,
    noise_std: float = 0.0,
    seed: int = 0,
    channel_phase: Optional[Sequence[float]] = None,
) -> RawSeries:
    """Sum of sinusoids, each given as ``(cycles_per_window, amplitude, phase)``.

    ``channel_phase`` optionally offsets every tone of channel ``j`` by
    ``channel_phase[j]`` radians, which leaves the amplitude spectrum untouched.
    """
    if L < 1 or n_windows < 1 or m < 1:
        raise SpecError("L, n_windows and m must be positive")
    for f, _, _ in freqs:
        if not 0 <= f < L / 2:
            raise SpecError(f"frequency {f} cycles/window is outside [0, {L / 2})")
    offsets = np.zeros(m) if channel_phase is None else np.asarray(channel_phase, dtype=np.float64)
    if offsets.shape != (m,):
        raise SpecError("channel_phase needs one entry per channel")

    t = np.arange(L * n_windows, dtype=np.float64)
    values = np.zeros((t.size, m))
    for f, amp, phase in freqs:
        values += amp * np.sin(2 * np.pi * f * t[:, None] / L + phase + offsets[None, :])
    if noise_std > 0:
        values += np.random.default_rng(seed).normal(0.0, noise_std, size=values.shape)
    return RawSeries(values, labels=np.zeros(t.size, dtype=np.int64))


def inject_anomalies(series: RawSeries, spec: AnomalySpec) -> RawSeries:
    if spec.kind not in AnomalySpec.KINDS:
        raise SpecError(f"unknown anomaly kind {spec.kind!r}")
    if spec.width < 1:
        raise SpecError("width must be positive")
    T, m = series.values.shape
    channels = list(range(m)) if spec.channels is None else list(spec.channels)
    if any(c < 0 or c >= m for c in channels):
        raise SpecError("channel index out of range")
    values = np.array(series.values)
    labels = np.zeros(T, dtype=np.int64) if series.labels is None else np.array(series.labels)

    for pos in spec.positions:
        if not 0 <= pos < T:
            raise SpecError(f"position {pos} outside series of length {T}")
        if spec.kind == "level_shift":
            seg = slice(pos, T)
            values[seg, channels] += spec.magnitude
        else:
            seg = slice(pos, min(pos + spec.width, T))
            if spec.kind == "spike":
                values[seg, channels] += spec.magnitude
            else:
                k = np.arange(seg.stop - seg.start, dtype=np.float64)
                tone = spec.magnitude * np.sin(2 * np.pi * spec.frequency * k)
                values[seg, channels] = tone[:, None]
        labels[seg] = 1
    return RawSeries(values, series.channel_names, labels)


def spike_positions(T: int, n: int, width: int, margin: int, seed: int = 0) -> list:
    """Draw ``n`` well-separated spike positions in ``[margin, T - margin)``."""
    rng = np.random.default_rng(seed)
    slots = np.array_split(np.arange(margin, T - margin - width), n)
    return sorted(int(rng.choice(s)) for s in slots)


@dataclass(frozen=True)
class SpikeFixture:
    """A clean sine-mixture training block followed by a spiked test block."""

    train: RawSeries
    test: RawSeries
    L: int
    positions: tuple = field(default=())


def spike_fixture(
    L: int = 100,
    n_windows: int = 200,
    m: int = 3,
    n_spikes: int = 10,
    magnitude: float = 4.0,
    width: int = 4,
    test_windows: int = 80,
    noise_std: float = 0.8,
    seed: int = 0,
) -> SpikeFixture:
    """Sine mixture of 2, 5 and 11 cycles per window with ``n_spikes`` injected spikes.

    The last ``test_windows`` windows form the test block.  Needs ``L >= 23`` so
    the fastest tone stays below Nyquist.
    """
    freqs = [(2.0, 1.0, 0.0), (5.0, 0.5, 0.3), (11.0, 0.2, 1.1)]
    phases = np.linspace(0.0, np.pi / 2, m)
    series = gen_sine_mixture(freqs, L, n_windows, m, noise_std=noise_std, seed=seed, channel_phase=phases)
    cut = (n_windows - test_windows) * L
    train = series.slice(0, cut)
    test = series.slice(cut)
    positions = spike_positions(len(test), n_spikes, width, margin=L // 2, seed=seed + 1)
    test = inject_anomalies(test, AnomalySpec("spike", positions, magnitude, width))
    return SpikeFixture(train, test, L, tuple(positions))
