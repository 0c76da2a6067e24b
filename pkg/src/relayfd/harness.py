"""Side-by-side benchmark of the four detectors on synthetic scenarios.

Calibration protocol (identical for every detector): the scenario is
rendered with four nominal cycles of pre-fault history ahead of t = 0.  The
first two cycles are warm-up (the ICA detector stores its reference there),
the next two calibrate thresholds, and everything from t = 0 on is
monitored.  Sample indices in reports and CSVs count from t = 0.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import baseline as bl
from .baseline import DetectorConfig, IndexSeries, Verdict, calibrate_threshold, decide
from .detector import (ICA_THRESHOLD_FLOOR, EmbeddingConfig, IcaSettings, fit_reference,
                       index_series)
from .freq import adapt_window, refine_frequency, track_frequency
from .signal_gen import ScenarioSpec, Waveform, load_spec, synthesize

log = logging.getLogger(__name__)

DETECTORS = ("sc", "pc", "ocms", "ica")
CANONICAL = {
    "A": "A_clean.json",
    "B": "B_noise_20db.json",
    "C": "C_dc_offset.json",
    "D": "D_harmonics.json",
    "E": "E_52hz.json",
}

WARMUP_CYCLES = 2
CALIBRATION_CYCLES = 2
K_SIGMA = 6.0
BASELINE_FLOOR = 1e-6
# below this offset the tracked frequency is treated as nominal
FREQ_DEADBAND_HZ = 0.5


@dataclass
class DetectorResult:
    name: str
    raw: np.ndarray            # monitored region, scenario sample indices
    normalized: np.ndarray
    threshold: float
    verdict: Verdict           # first firing anywhere in the monitored region
    fault_verdict: Verdict     # first firing at or after inception
    metrics: dict
    seconds_per_sample: float


@dataclass
class RunReport:
    scenario_id: str
    fs_hz: float
    fault_k: int | None
    freq_estimate_hz: float
    window_n: int
    t_s: np.ndarray
    results: dict[str, DetectorResult] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "fs_hz": self.fs_hz,
            "fault_k": self.fault_k,
            "freq_estimate_hz": self.freq_estimate_hz,
            "window_n": self.window_n,
            "detectors": {
                name: {
                    "threshold": r.threshold,
                    "detected": r.verdict.detected,
                    "detection_k": r.verdict.detection_k,
                    **r.metrics,
                    "seconds_per_sample": r.seconds_per_sample,
                }
                for name, r in self.results.items()
            },
        }


def normalize_indices(series):
    """Divide by the series maximum; an all-zero series stays zero. NaNs pass through."""
    values = series.values if isinstance(series, IndexSeries) else np.asarray(series, float)
    peak = np.nanmax(values) if np.any(np.isfinite(values)) else 0.0
    out = values / peak if peak > 0 else np.where(np.isnan(values), np.nan, 0.0)
    if isinstance(series, IndexSeries):
        return IndexSeries(out, series.first_valid_k)
    return out


def detection_metrics(raw, threshold: float, verdict: Verdict, fault_k: int | None) -> dict:
    """Delay, false crossings and miss flag for one detector.

    ``raw`` is the monitored raw index (scenario sample indices); ``verdict``
    is the detection attributed to the fault.
    """
    raw = np.asarray(raw, dtype=float)
    pre = raw if fault_k is None else raw[:fault_k]
    false_crossings = int(np.count_nonzero(pre > threshold))
    delay = None
    if fault_k is not None and verdict.detected:
        delay = verdict.detection_k - fault_k
    first_crossing = None
    if fault_k is not None:
        hits = np.flatnonzero(raw[fault_k:] > threshold)
        first_crossing = int(hits[0]) if hits.size else None
    return {
        "delay": delay,
        "first_crossing_delay": first_crossing,
        "false_crossings": false_crossings,
        "missed": fault_k is not None and not verdict.detected,
    }


def canonical_spec_path(name: str) -> Path:
    return Path(str(resources.files("relayfd") / "scenarios" / CANONICAL[name]))


def resolve_spec(spec) -> tuple[str, ScenarioSpec]:
    if isinstance(spec, ScenarioSpec):
        return "custom", spec
    if isinstance(spec, str) and spec.upper() in CANONICAL:
        spec = canonical_spec_path(spec.upper())
    path = Path(spec)
    if not path.exists():
        raise ValueError(f"scenario file not found: {path}")
    return path.stem, load_spec(path)


def parse_detectors(names) -> list[str]:
    if isinstance(names, str):
        names = [n.strip() for n in names.split(",") if n.strip()]
    names = [n.lower() for n in names]
    unknown = [n for n in names if n not in DETECTORS]
    if unknown or not names:
        raise ValueError(f"unknown detector(s) {unknown}; choose from {','.join(DETECTORS)}")
    return [d for d in DETECTORS if d in names]


def estimate_frequency(prefault: Waveform, nominal_hz: float, calib_start: int) -> float:
    """Tracker average over the calibration stretch, refined by a batch fit of the
    whole fault-free lead-in; offsets inside the deadband count as nominal."""
    est = track_frequency(prefault, nominal_hz)
    f_hat = refine_frequency(prefault, float(np.mean(est[calib_start:])))
    return nominal_hz if abs(f_hat - nominal_hz) < FREQ_DEADBAND_HZ else f_hat


def baseline_series(name: str, x, cfg: DetectorConfig) -> IndexSeries:
    if name == "sc":
        return bl.sc_series(x, cfg.window_n)
    if name == "pc":
        return bl.pc_series(x, cfg.omega)
    if name == "ocms":
        return bl.ocms_series(x, cfg.window_n)
    raise ValueError(f"not a baseline detector: {name}")


def compute_indices(w: Waveform, detectors, lead_n: int, warm_n: int, nominal_hz: float,
                    seed: int, embedding: EmbeddingConfig, ica: IcaSettings,
                    floors: dict | None = None):
    """Calibrate and run detectors on a record whose first ``lead_n`` samples are
    fault-free history. Returns ``(freq, window_n, {name: (series, threshold, cost)})``."""
    floors = {**{d: BASELINE_FLOOR for d in DETECTORS}, "ica": ICA_THRESHOLD_FLOOR,
              **(floors or {})}
    prefault = Waveform(w.samples[:lead_n], w.fs_hz, w.t0_s)
    f_used = estimate_frequency(prefault, nominal_hz, warm_n)
    window_n = adapt_window(w.fs_hz, f_used)
    base_cfg = DetectorConfig(window_n=window_n, omega=2 * math.pi * f_used / w.fs_hz)
    out = {}
    for name in detectors:
        if name == "ica":
            ref = fit_reference(prefault, embedding, period_samples=w.fs_hz / f_used,
                                calibration_len=lead_n - warm_n, seed=seed, ica=ica)
            t = time.perf_counter()
            series, _ = index_series(w, ref, seed=seed, ica=ica)
            threshold = ref.threshold(K_SIGMA, floors["ica"])
        else:
            t = time.perf_counter()
            series = baseline_series(name, w.samples, base_cfg)
            threshold = calibrate_threshold(series.values[warm_n:lead_n], K_SIGMA, floors[name])
        cost = (time.perf_counter() - t) / len(w)
        out[name] = (series, threshold, cost)
    return f_used, window_n, out


def run_scenario(spec, detectors=DETECTORS, out_dir=None, seed: int | None = None,
                 nominal_hz: float = 50.0, embedding: EmbeddingConfig = EmbeddingConfig(),
                 ica: IcaSettings = IcaSettings(), consecutive_m: int = 3,
                 floors: dict | None = None) -> RunReport:
    """Render a scenario, calibrate and run the detectors, optionally write outputs.

    ``spec`` is a ScenarioSpec, a path to a scenario file, or a canonical
    scenario letter (A-E).  ``seed`` overrides the scenario's noise seed and
    also seeds FastICA.
    """
    scenario_id, spec = resolve_spec(spec)
    detectors = parse_detectors(detectors)
    if seed is not None:
        spec = spec.replace(rng_seed=int(seed))
    seed = spec.rng_seed

    warm_n, lead_n = protocol_lengths(spec.fs_hz, nominal_hz)
    w = synthesize(spec, t0_s=-lead_n / spec.fs_hz)
    fault_k = spec.fault_sample

    f_used, window_n, computed = compute_indices(w, detectors, lead_n, warm_n, nominal_hz,
                                                 seed, embedding, ica, floors)
    report = RunReport(scenario_id, spec.fs_hz, fault_k, f_used, window_n,
                       w.times[lead_n:])
    for name, (series, threshold, cost) in computed.items():
        cfg = DetectorConfig(window_n=window_n, threshold=threshold, consecutive_m=consecutive_m)
        first = decide(series, cfg, start_k=lead_n)
        at_fault = Verdict(False)
        if fault_k is not None:
            at_fault = decide(series, cfg, start_k=lead_n + fault_k)
        verdict = _shift(first, lead_n)
        fault_verdict = _shift(at_fault, lead_n)
        raw = series.values[lead_n:]
        metrics = detection_metrics(raw, threshold, fault_verdict, fault_k)
        pre_end = len(raw) if fault_k is None else fault_k
        metrics["false_detection"] = verdict.detected and verdict.detection_k < pre_end
        report.results[name] = DetectorResult(name, raw, normalize_indices(raw), threshold,
                                              verdict, fault_verdict, metrics, cost)
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def _shift(v: Verdict, offset: int) -> Verdict:
    return Verdict(True, v.detection_k - offset) if v.detected else v


def _fmt(v: float) -> str:
    return "" if not math.isfinite(v) else repr(float(v))


def index_rows(report: RunReport):
    names = list(report.results)
    header = (["k", "t_s"] + [f"index_{n}" for n in names] + [f"verdict_{n}" for n in names]
              + [f"index_{n}_raw" for n in names])
    yield header
    for k, t in enumerate(report.t_s):
        row = [str(k), _fmt(t)]
        row += [_fmt(report.results[n].normalized[k]) for n in names]
        for n in names:
            v = report.results[n].verdict
            row.append("1" if v.detected and k >= v.detection_k else "0")
        row += [_fmt(report.results[n].raw[k]) for n in names]
        yield row


def write_report(report: RunReport, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{report.scenario_id}_indices.csv"
    with open(csv_path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(index_rows(report))
    (out / f"{report.scenario_id}_report.json").write_text(
        json.dumps(report.summary(), indent=2) + "\n")
    return csv_path


def run_suite(out_dir=None, seed: int | None = None, detectors=DETECTORS, workers: int = 1,
              **kw) -> dict[str, RunReport]:
    """Run the five canonical scenarios; each scenario is independent."""
    def one(name):
        return name, run_scenario(name, detectors, out_dir, seed, **kw)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return dict(pool.map(one, CANONICAL))
    return dict(one(n) for n in CANONICAL)


def protocol_lengths(fs_hz: float, freq_hz: float) -> tuple[int, int]:
    """``(warm_n, lead_n)``: warm-up length and warm-up plus calibration length."""
    cycle_n = int(round(fs_hz / freq_hz))
    warm_n = WARMUP_CYCLES * cycle_n
    return warm_n, warm_n + CALIBRATION_CYCLES * cycle_n


def _record_lengths(name, fs_hz, freq_hz, embedding):
    warm_n, lead_n = protocol_lengths(fs_hz, freq_hz)
    if name == "ica" and warm_n < embedding.window_len:
        # the stored reference needs a full window of warm-up
        extra = embedding.window_len - warm_n
        warm_n, lead_n = warm_n + extra, lead_n + extra
    return warm_n, lead_n


def detect_waveform(w: Waveform, detector: str, freq_hz: float = 50.0, seed: int = 0,
                    consecutive_m: int = 3, embedding: EmbeddingConfig = EmbeddingConfig(),
                    ica: IcaSettings = IcaSettings()) -> dict:
    """Run one detector on a recorded waveform.

    The first four cycles of the record must be fault-free: two cycles of
    warm-up, two of calibration.  Sample indices in the result count from
    the start of the record.
    """
    (name,) = parse_detectors([detector])
    warm_n, lead_n = _record_lengths(name, w.fs_hz, freq_hz, embedding)
    if len(w) <= lead_n:
        raise ValueError(f"record has {len(w)} samples; need more than {lead_n} "
                         "(four cycles of fault-free lead-in) to calibrate and monitor")
    f_used, window_n, computed = compute_indices(w, [name], lead_n, warm_n, freq_hz, seed,
                                                 embedding, ica)
    series, threshold, cost = computed[name]
    verdict = decide(series, DetectorConfig(window_n=window_n, threshold=threshold,
                                            consecutive_m=consecutive_m), start_k=lead_n)
    return {"detector": name, "freq_estimate_hz": f_used, "window_n": window_n,
            "threshold": threshold, "monitor_start_k": lead_n, "detected": verdict.detected,
            "detection_k": verdict.detection_k, "seconds_per_sample": cost,
            "raw": series.values}


def calibrate_waveform(w: Waveform, detector: str, freq_hz: float = 50.0, seed: int = 0,
                       embedding: EmbeddingConfig = EmbeddingConfig(),
                       ica: IcaSettings = IcaSettings()) -> dict:
    """Threshold for one detector from a fault-free record (first two cycles are warm-up)."""
    (name,) = parse_detectors([detector])
    warm_n, _ = _record_lengths(name, w.fs_hz, freq_hz, embedding)
    if len(w) <= warm_n + 1:
        raise ValueError(f"record has {len(w)} samples; too short to calibrate {name}")
    f_used, window_n, computed = compute_indices(w, [name], len(w), warm_n, freq_hz, seed,
                                                 embedding, ica)
    series, threshold, _ = computed[name]
    cal = series.values[warm_n:]
    return {"detector": name, "freq_estimate_hz": f_used, "window_n": window_n,
            "threshold": threshold, "calibration_mean": float(np.mean(cal)),
            "calibration_std": float(np.std(cal)), "calibration_samples": int(cal.size)}
