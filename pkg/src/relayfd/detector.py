"""ICA residual fault detector for a single current channel.

The live signal is delay-embedded over a sliding window and unmixed with
FastICA.  The same unmixing operator is applied to a stored pre-fault
reference taken at the same point on the wave; the squared norm of the
difference between the two most recent source vectors is the fault index.
Before a fault the live window and the reference agree, so the index is
close to zero; afterwards the reference stays pre-fault and the index stays
high.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .baseline import DetectorConfig, IndexSeries, Verdict, calibrate_threshold, decide
from .ica import DemixingModel, fastica, separate, whiten
from .signal_gen import Waveform


@dataclass(frozen=True)
class EmbeddingConfig:
    embed_dim: int = 4
    window_len: int = 40
    hop: int = 1
    n_sources: int = 2

    def __post_init__(self):
        if not 2 <= self.embed_dim <= self.window_len / 4:
            raise ValueError("need 2 <= embed_dim <= window_len / 4")
        if not 1 <= self.n_sources <= self.embed_dim:
            raise ValueError("need 1 <= n_sources <= embed_dim")
        if self.hop < 1:
            raise ValueError("hop must be >= 1")

    @property
    def n_columns(self) -> int:
        return self.window_len - self.embed_dim + 1


def _samples(w) -> np.ndarray:
    return w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=float)


def embed(w, embed_dim: int, window_len: int, end_k: int) -> np.ndarray:
    """Delay-embed the ``window_len`` samples ending at ``end_k``.

    Row r holds the window delayed by r samples, columns run forward in
    time, and the last column is ``[i(end_k), i(end_k-1), ..., i(end_k-d+1)]``.
    """
    x = _samples(w)
    if embed_dim < 1 or embed_dim > window_len:
        raise ValueError("need 1 <= embed_dim <= window_len")
    start = end_k - window_len + 1
    if start < 0 or end_k >= x.size:
        raise ValueError(f"window [{start}, {end_k}] is outside the signal")
    return _embed_window(x[start:end_k + 1], embed_dim)


def _embed_window(window: np.ndarray, d: int) -> np.ndarray:
    # sliding_window_view gives columns [x(j), ..., x(j+d-1)]; reverse for delay order
    return sliding_window_view(window, d)[:, ::-1].T.copy()


@dataclass(frozen=True)
class ReferenceModel:
    samples: np.ndarray        # stored pre-fault stretch (window_len samples)
    t0_s: float                # absolute time of samples[0]
    fs_hz: float
    period_samples: float      # samples per fundamental cycle used for phase alignment
    cfg: EmbeddingConfig
    cal_mean: float
    cal_std: float
    cal_values: np.ndarray = field(repr=False)

    @property
    def x_n(self) -> np.ndarray:
        return _embed_window(self.samples, self.cfg.embed_dim)

    def threshold(self, k_sigma: float = 6.0, floor: float = 1e-6) -> float:
        return calibrate_threshold(self.cal_values, k_sigma, floor)

    def aligned_column(self, position: int) -> np.ndarray:
        """Reference embedding vector at the same phase as a live sample.

        ``position`` counts samples from ``samples[0]`` (it may lie far past
        the reference).  The phase-matched point is shifted back by whole
        cycles into the reference and linearly interpolated when the cycle
        length is fractional.
        """
        d = self.cfg.embed_dim
        last = self.samples.size - 1
        m = math.ceil((position - last) / self.period_samples - 1e-9)
        r = position - m * self.period_samples
        lo = math.floor(r + 1e-9)
        frac = r - lo
        col = self.samples[lo - d + 1:lo + 1][::-1]
        if frac > 1e-9:
            nxt = self.samples[lo - d + 2:lo + 2][::-1]
            col = (1.0 - frac) * col + frac * nxt
        return col


@dataclass
class ProposedIndexState:
    model: DemixingModel | None = None
    unmixing: np.ndarray | None = None     # W_f composed with whitening, n x d
    residual: np.ndarray | None = None
    raw_index: float = math.nan
    index: float = math.nan                # raw / running max, in [0, 1]
    running_max: float = 0.0
    converged: bool = True
    evaluations: int = 0
    unconverged_evaluations: int = 0


@dataclass(frozen=True)
class IcaSettings:
    tol: float = 1e-6
    max_iter: int = 200
    eig_cutoff_ratio: float = 1e-6
    nonlinearity: str = "logcosh"


def residual(model: DemixingModel, x_n, sources_last=None) -> np.ndarray:
    """|W_f x_n - s_f| at the most recent column."""
    s_ref = separate(model, x_n)[:, -1]
    s_live = model.sources[:, -1] if sources_last is None else sources_last
    return np.abs(s_ref - s_live)


def _unmix_window(x_f, n_sources, state, seed, ica):
    white = whiten(x_f, ica.eig_cutoff_ratio, n_components=n_sources)
    n = min(n_sources, white.retained_dims)
    w_init = None
    if state.unmixing is not None and state.unmixing.shape[0] == n:
        w_init = state.unmixing @ white.dewhitening_matrix
    return fastica(white, n, tol=ica.tol, max_iter=ica.max_iter, seed=seed,
                   nonlinearity=ica.nonlinearity, w_init=w_init)


def _evaluate(state, ref, window, position, cfg, seed, ica):
    x_f = _embed_window(window, cfg.embed_dim)
    model = _unmix_window(x_f, cfg.n_sources, state, seed, ica)
    x_n = ref.aligned_column(position)[:, np.newaxis]
    r = residual(model, x_n)
    raw = float(r @ r)
    state.model = model
    state.unmixing = model.unmixing_matrix
    state.residual = r
    state.raw_index = raw
    state.running_max = max(state.running_max, raw)
    state.index = raw / state.running_max if state.running_max > 0 else 0.0
    state.converged = model.converged
    state.evaluations += 1
    state.unconverged_evaluations += not model.converged
    return raw


def proposed_index(state: ProposedIndexState, ref: ReferenceModel, w: Waveform, k: int,
                   cfg: EmbeddingConfig | None = None, seed: int = 0,
                   ica: IcaSettings = IcaSettings()) -> float:
    """Evaluate the index at sample ``k`` of ``w``; returns the normalized value.

    The raw squared-norm index is left in ``state.raw_index``.  ``w`` must
    share the reference's sampling grid.
    """
    cfg = cfg or ref.cfg
    if cfg != ref.cfg:
        raise ValueError("reference was fitted with a different embedding")
    if k < cfg.window_len - 1 or k >= len(w):
        raise ValueError(f"k={k} leaves no full window")
    window = w.samples[k - cfg.window_len + 1:k + 1]
    position = int(round((w.t0_s - ref.t0_s) * ref.fs_hz)) + k
    _evaluate(state, ref, window, position, cfg, seed, ica)
    return state.index


class IcaFaultDetector:
    """Streaming wrapper: push samples, get the raw index back (NaN in warm-up).

    With ``hop > 1`` the index is re-evaluated every ``hop`` samples and held
    in between.
    """

    def __init__(self, ref: ReferenceModel, t0_s: float | None = None, seed: int = 0,
                 ica: IcaSettings = IcaSettings()):
        self.ref = ref
        self.cfg = ref.cfg
        self.seed = seed
        self.ica = ica
        self.state = ProposedIndexState()
        self._offset = 0 if t0_s is None else int(round((t0_s - ref.t0_s) * ref.fs_hz))
        self._buf = np.zeros(self.cfg.window_len)
        self._count = 0
        self.first_valid_k = self.cfg.window_len - 1

    def update(self, sample: float) -> float:
        L = self.cfg.window_len
        self._buf[:-1] = self._buf[1:]
        self._buf[-1] = sample
        k = self._count
        self._count += 1
        if k < L - 1:
            return math.nan
        if (k - (L - 1)) % self.cfg.hop == 0:
            _evaluate(self.state, self.ref, self._buf, self._offset + k, self.cfg, self.seed,
                      self.ica)
        return self.state.raw_index


def index_series(w: Waveform, ref: ReferenceModel, seed: int = 0,
                 ica: IcaSettings = IcaSettings()) -> tuple[IndexSeries, ProposedIndexState]:
    det = IcaFaultDetector(ref, t0_s=w.t0_s, seed=seed, ica=ica)
    values = np.array([det.update(v) for v in w.samples])
    return IndexSeries(values, det.first_valid_k), det.state


def fit_reference(prefault: Waveform, cfg: EmbeddingConfig = EmbeddingConfig(),
                  period_samples: float | None = None, calibration_len: int | None = None,
                  seed: int = 0, ica: IcaSettings = IcaSettings()) -> ReferenceModel:
    """Store a pre-fault reference and calibrate the index on held-out data.

    The record is split into ``[reference (window_len) | calibration]``: the
    reference is the window immediately preceding the last
    ``calibration_len`` samples (default: everything after the first
    window).  The index is then run over the calibration stretch, whose live
    samples never coincide with the stored ones.
    """
    x = prefault.samples
    L = cfg.window_len
    if calibration_len is None:
        calibration_len = x.size - L
    if calibration_len < 1 or x.size < L + calibration_len:
        raise ValueError(f"need at least {L} reference samples plus a calibration stretch, "
                         f"got {x.size} samples")
    if period_samples is None:
        raise ValueError("period_samples (samples per fundamental cycle) is required")
    if cfg.window_len - cfg.embed_dim < period_samples:
        raise ValueError("window too short to hold one cycle of reference phases")
    ref_start = x.size - calibration_len - L
    ref_t0 = prefault.t0_s + ref_start / prefault.fs_hz
    ref = ReferenceModel(x[ref_start:ref_start + L].copy(), ref_t0,
                         prefault.fs_hz, float(period_samples), cfg, math.nan, math.nan,
                         np.empty(0))
    series, _ = index_series(prefault, ref, seed=seed, ica=ica)
    cal = series.values[x.size - calibration_len:]
    return ReferenceModel(ref.samples, ref.t0_s, ref.fs_hz, ref.period_samples, cfg,
                          float(cal.mean()), float(cal.std()), cal)


def detect_stream(w: Waveform, ref: ReferenceModel, cfg: EmbeddingConfig | None = None,
                  decision: DetectorConfig | None = None, seed: int = 0,
                  ica: IcaSettings = IcaSettings()) -> tuple[IndexSeries, Verdict]:
    """Run the index over ``w`` and apply the consecutive-crossing rule to the raw values.

    Without an explicit ``decision`` the threshold is the reference's
    mean + 6 sigma calibration (floored at 1.0 whitened units).
    """
    if cfg is not None and cfg != ref.cfg:
        raise ValueError("reference was fitted with a different embedding")
    if decision is None:
        decision = DetectorConfig(threshold=ref.threshold(floor=ICA_THRESHOLD_FLOOR))
    series, _ = index_series(w, ref, seed=seed, ica=ica)
    return series, decide(series, decision)


# Whitened residuals are measured in source standard deviations; a live sample
# within one unit of the reference is never treated as a fault.
ICA_THRESHOLD_FLOOR = 1.0


def running_max_normalize(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    out = np.full(raw.size, np.nan)
    peak = 0.0
    for k, v in enumerate(raw):
        if math.isnan(v):
            continue
        peak = max(peak, v)
        out[k] = v / peak if peak > 0 else 0.0
    return out
