"""Classical fault detectors: sample comparison, phasor comparison, moving sum.

Each detector is a small streaming state machine whose ``update`` consumes one
sample and returns the index for that sample (NaN while its buffers fill).
Index values are aligned to the arrival sample, so nothing is ever reported
before the data that caused it has been seen.  Vectorized ``*_series``
functions compute the same quantities for a whole record.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class DetectorConfig:
    window_n: int = 20
    omega: float = 2 * math.pi / 20
    threshold: float = 0.0
    consecutive_m: int = 3

    def __post_init__(self):
        if self.window_n < 2:
            raise ValueError("window_n must be >= 2")
        if not 0 < self.omega < math.pi:
            raise ValueError("omega must lie in (0, pi)")
        if self.threshold < 0:
            raise ValueError("threshold must be nonnegative")
        if self.consecutive_m < 1:
            raise ValueError("consecutive_m must be >= 1")

    @classmethod
    def for_frequency(cls, fs_hz: float, freq_hz: float, **kw) -> "DetectorConfig":
        return cls(window_n=int(round(fs_hz / freq_hz)), omega=2 * math.pi * freq_hz / fs_hz, **kw)


@dataclass(frozen=True)
class IndexSeries:
    values: np.ndarray
    first_valid_k: int

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self):
        return self.values.size

    @property
    def valid(self) -> np.ndarray:
        return self.values[self.first_valid_k:]


@dataclass(frozen=True)
class Verdict:
    detected: bool
    detection_k: int | None = None


# -- sample comparison -------------------------------------------------------

class SampleComparison:
    """|i(k) - i(k-N)|."""

    def __init__(self, window_n: int):
        self.window_n = window_n
        self._buf = deque(maxlen=window_n)
        self.first_valid_k = window_n

    def update(self, sample: float) -> float:
        if len(self._buf) < self.window_n:
            self._buf.append(sample)
            return math.nan
        old = self._buf[0]
        self._buf.append(sample)
        return abs(sample - old)


def sc_series(x, window_n: int) -> IndexSeries:
    x = np.asarray(x, dtype=float)
    out = np.full(x.size, np.nan)
    out[window_n:] = np.abs(x[window_n:] - x[:-window_n])
    return IndexSeries(out, window_n)


# -- phasor comparison ---------------------------------------------------------

def pc_peak_estimate(prev: float, cur: float, nxt: float, omega: float) -> float:
    """Peak of a sinusoid from a three-sample stencil centred on ``cur``.

    First and second derivatives are central differences divided by
    ``sin(omega)`` and ``(2 sin(omega/2))**2``; with these divisors the estimate
    is exact for a noiseless discrete sinusoid of angular frequency ``omega``.
    """
    d1 = 0.5 * (nxt - prev) / math.sin(omega)
    d2 = (nxt - 2.0 * cur + prev) / (2.0 * math.sin(omega / 2.0)) ** 2
    return math.sqrt(d1 * d1 + d2 * d2)


class PhasorComparison:
    """|I(k) - I(k-3)| where I is the stencil peak estimate.

    The estimate needs the sample after its centre, so the peak reported at
    arrival ``k`` belongs to sample ``k-1``.
    """

    lag = 3

    def __init__(self, omega: float):
        self.omega = omega
        self._samples = deque(maxlen=3)
        self._peaks = deque(maxlen=self.lag + 1)
        self.first_valid_k = 2 + self.lag
        self.last_peak = math.nan

    def update(self, sample: float) -> float:
        self._samples.append(sample)
        if len(self._samples) < 3:
            return math.nan
        self.last_peak = pc_peak_estimate(*self._samples, self.omega)
        self._peaks.append(self.last_peak)
        if len(self._peaks) <= self.lag:
            return math.nan
        return abs(self._peaks[-1] - self._peaks[0])


def pc_peak_series(x, omega: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.full(x.size, np.nan)
    if x.size >= 3:
        d1 = 0.5 * (x[2:] - x[:-2]) / math.sin(omega)
        d2 = (x[2:] - 2.0 * x[1:-1] + x[:-2]) / (2.0 * math.sin(omega / 2.0)) ** 2
        out[2:] = np.sqrt(d1 * d1 + d2 * d2)
    return out


def pc_series(x, omega: float) -> IndexSeries:
    peaks = pc_peak_series(x, omega)
    lag = PhasorComparison.lag
    out = np.full(peaks.size, np.nan)
    out[2 + lag:] = np.abs(peaks[2 + lag:] - peaks[2:-lag])
    return IndexSeries(out, 2 + lag)


# -- one-cycle moving sum -----------------------------------------------------

class MovingSum:
    """|sum of the last N samples|, updated with one addition and one subtraction.

    The running sum carries a Neumaier compensation term so that it does not
    drift from the direct sum over long streams.
    """

    def __init__(self, window_n: int):
        self.window_n = window_n
        self._buf = deque(maxlen=window_n)
        self._sum = 0.0
        self._comp = 0.0
        self.first_valid_k = window_n - 1

    def _add(self, v: float) -> None:
        s = self._sum + v
        if abs(self._sum) >= abs(v):
            self._comp += (self._sum - s) + v
        else:
            self._comp += (v - s) + self._sum
        self._sum = s

    @property
    def running_sum(self) -> float:
        return self._sum + self._comp

    def update(self, sample: float) -> float:
        if len(self._buf) == self.window_n:
            self._add(-self._buf[0])
        self._buf.append(sample)
        self._add(sample)
        if len(self._buf) < self.window_n:
            return math.nan
        return abs(self.running_sum)


def ocms_series(x, window_n: int) -> IndexSeries:
    x = np.asarray(x, dtype=float)
    out = np.full(x.size, np.nan)
    if x.size >= window_n:
        out[window_n - 1:] = np.abs(sliding_window_view(x, window_n).sum(axis=1))
    return IndexSeries(out, window_n - 1)


def stream(detector, x) -> IndexSeries:
    """Feed samples one at a time and collect the index series."""
    values = np.array([detector.update(float(v)) for v in np.asarray(x, dtype=float)])
    return IndexSeries(values, detector.first_valid_k)


# -- decision rule ------------------------------------------------------------

def decide(indices: IndexSeries, cfg: DetectorConfig, start_k: int = 0) -> Verdict:
    """First k >= start_k at which the index exceeded the threshold at k and the
    ``consecutive_m - 1`` samples before it. Warm-up samples never count."""
    over = indices.values > cfg.threshold
    over[:indices.first_valid_k] = False
    m = cfg.consecutive_m
    run = 0
    for k, flag in enumerate(over):
        run = run + 1 if flag else 0
        if run >= m and k >= start_k:
            return Verdict(True, k)
    return Verdict(False, None)


def calibrate_threshold(prefault, k_sigma: float = 6.0, floor: float = 1e-6) -> float:
    """``mean + k_sigma * std`` of pre-fault index values, never below ``floor``.

    ``prefault`` is an IndexSeries (warm-up samples are skipped) or an array;
    NaNs are ignored.
    """
    values = prefault.valid if isinstance(prefault, IndexSeries) else np.asarray(prefault, float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        raise ValueError("calibration window holds no valid index values")
    return max(float(values.mean() + k_sigma * values.std()), floor)
