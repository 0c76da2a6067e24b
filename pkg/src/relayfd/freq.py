"""Variable-leakage LMS frequency tracking and cycle-window sizing.

A single-phase current is turned into a complex phasor stream with a
quarter-cycle delay; a one-tap complex LMS predictor ``v(k) ~ w v(k-1)``
then converges to ``w = exp(j*omega)`` and the frequency is read from
``arg(w)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .signal_gen import Waveform


@dataclass(frozen=True)
class VllmsState:
    weight: complex
    fs_hz: float
    nominal_hz: float = 50.0
    mu: float = 0.1
    leak: float = 0.01
    leak_max: float = 0.1
    leak_step: float = 1e-3
    last_err2: float | None = None
    resets: int = 0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not 0 <= self.leak <= self.leak_max < 1:
            raise ValueError("need 0 <= leak <= leak_max < 1")

    @classmethod
    def initial(cls, fs_hz: float, nominal_hz: float = 50.0, **kw) -> "VllmsState":
        return cls(weight=complex(np.exp(2j * np.pi * nominal_hz / fs_hz)), fs_hz=fs_hz,
                   nominal_hz=nominal_hz, **kw)

    @property
    def freq_estimate_hz(self) -> float:
        return self.fs_hz / (2 * math.pi) * math.atan2(self.weight.imag, self.weight.real)


WEIGHT_GUARD = 1.5


def quarter_cycle_delay(fs_hz: float, nominal_hz: float) -> int:
    if fs_hz < 4 * nominal_hz:
        raise ValueError("need fs_hz >= 4 * nominal_hz for a quarter-cycle delay")
    # a non-integer quarter cycle is rounded; the resulting quadrature error is
    # what the compensated quadrature in track_frequency removes
    return int(round(fs_hz / nominal_hz / 4))


def make_analytic(w: Waveform, nominal_freq_hz: float = 50.0) -> np.ndarray:
    """``v(k) = i(k) + j i(k - D)`` with D a quarter cycle at the nominal frequency.

    The first D entries are NaN.  ``sin(theta) + j sin(theta - pi/2)`` is
    ``-j exp(j theta)``, so v rotates forward at the signal frequency.
    """
    d = quarter_cycle_delay(w.fs_hz, nominal_freq_hz)
    x = w.samples
    v = np.full(x.size, complex(np.nan, np.nan))
    v[d:] = x[d:] + 1j * x[:-d]
    return v


def quadrature(x_now: float, x_delayed: float, delay: int, freq_hz: float, fs_hz: float) -> complex:
    """Phasor sample from a current and its ``delay``-sample-old value.

    For a sinusoid at ``freq_hz`` the delayed sample is ``sin(theta - beta)``
    with ``beta = delay * omega``; solving for ``cos(theta)`` gives an exact
    quadrature pair.  At the nominal quarter-cycle ``beta = pi/2`` this
    reduces to ``x_now + j x_delayed``.
    """
    beta = delay * 2 * math.pi * freq_hz / fs_hz
    cos_theta = (x_now * math.cos(beta) - x_delayed) / math.sin(beta)
    return complex(x_now, -cos_theta)


def vllms_step(state: VllmsState, v_prev: complex, v_now: complex) -> VllmsState:
    """One normalized leaky-LMS update of the phase-rotation weight."""
    p = abs(v_prev) ** 2
    if p == 0.0 and v_now == 0:
        return state
    err = v_now - state.weight * v_prev
    step = state.mu / (p + 1e-12)
    w = (1.0 - step * state.leak * p) * state.weight + step * v_prev.conjugate() * err
    err2 = abs(err) ** 2
    leak = state.leak
    if state.last_err2 is not None and err2 != state.last_err2:
        # grow leakage while the error grows, shrink it as the error falls
        leak += state.leak_step if err2 > state.last_err2 else -state.leak_step
        leak = min(max(leak, 0.0), state.leak_max)
    if abs(w) > WEIGHT_GUARD or not np.isfinite(w):
        fresh = VllmsState.initial(state.fs_hz, state.nominal_hz, mu=state.mu,
                                   leak_max=state.leak_max, leak_step=state.leak_step)
        return replace(fresh, resets=state.resets + 1)
    return replace(state, weight=complex(w), leak=leak, last_err2=err2)


def track_frequency(w: Waveform, nominal_hz: float = 50.0, compensate: bool = True,
                    **params) -> np.ndarray:
    """Per-sample frequency estimate (Hz) for a whole record.

    With ``compensate`` the quadrature uses the running estimate instead of
    the nominal frequency, which removes the ellipse distortion of a fixed
    quarter-cycle delay when the system runs off nominal.
    """
    state = VllmsState.initial(w.fs_hz, nominal_hz, **params)
    d = quarter_cycle_delay(w.fs_hz, nominal_hz)
    x = w.samples
    est = np.full(x.size, nominal_hz)
    v_prev = None
    for k in range(d, x.size):
        f_q = state.freq_estimate_hz if compensate else nominal_hz
        if not 0.5 * nominal_hz < f_q < 1.5 * nominal_hz:
            f_q = nominal_hz
        v = quadrature(x[k], x[k - d], d, f_q, w.fs_hz)
        if v_prev is not None:
            state = vllms_step(state, v_prev, v)
        v_prev = v
        est[k] = state.freq_estimate_hz
    return est


def sinusoid_fit_residual(x, freq_hz: float, fs_hz: float) -> float:
    """Residual energy of the best ``a sin + b cos + c`` fit at ``freq_hz``."""
    theta = 2 * np.pi * freq_hz / fs_hz * np.arange(len(x))
    basis = np.column_stack([np.sin(theta), np.cos(theta), np.ones_like(theta)])
    coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
    r = x - basis @ coef
    return float(r @ r)


def refine_frequency(w: Waveform, initial_hz: float, search_hz: float = 2.0) -> float:
    """Least-squares frequency of a sinusoid in ``w``, searched near ``initial_hz``.

    Averaging the tracker over a few cycles of noisy data leaves a spread of
    several tenths of a hertz; a batch fit over the same samples is close to
    the Cramer-Rao bound.  The search interval must stay well inside the
    spectral main lobe (``fs / len(w)``) so the fit has a single minimum.
    """
    x = np.asarray(w.samples, dtype=float)
    lo = max(initial_hz - search_hz, 1e-6)
    hi = min(initial_hz + search_hz, 0.5 * w.fs_hz * (1 - 1e-9))
    res = minimize_scalar(lambda f: sinusoid_fit_residual(x, f, w.fs_hz), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-6})
    return float(res.x)


def adapt_window(fs_hz: float, freq_estimate_hz: float) -> int:
    """Samples per cycle at the estimated frequency (at least 4)."""
    if not freq_estimate_hz > 0:
        raise ValueError("frequency estimate must be positive")
    return max(4, int(round(fs_hz / freq_estimate_hz)))
