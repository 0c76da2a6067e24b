"""Synthetic fault-current waveforms and their file formats.

A waveform is a uniformly sampled single-phase current. Scenarios describe a
pre-fault sinusoid (optionally with harmonics and white noise) and a fault
that, from its inception instant onward, scales the fundamental, shifts its
phase and adds a decaying DC component.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    fs_hz: float
    t0_s: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("waveform needs a 1-D sequence of at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform samples must be finite")
        if not self.fs_hz > 0:
            raise ValueError(f"fs_hz must be positive, got {self.fs_hz}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.t0_s + np.arange(self.samples.size) / self.fs_hz

    def sample_index(self, t_s: float) -> int:
        """Index of the sample taken at absolute time ``t_s``."""
        return int(round((t_s - self.t0_s) * self.fs_hz))

    def scaled(self, factor: float) -> "Waveform":
        return Waveform(self.samples * factor, self.fs_hz, self.t0_s)


@dataclass(frozen=True)
class ScenarioSpec:
    amplitude_pu: float = 1.0
    freq_hz: float = 50.0
    phase_rad: float = 0.0
    fs_hz: float = 1000.0
    duration_s: float = 0.2
    fault_time_s: float | None = 0.065
    fault_amplitude_ratio: float = 5.0
    fault_phase_jump_rad: float = -math.pi / 4
    dc_offset_pu: float = 0.8
    dc_tau_s: float = 0.03
    harmonic_spec: tuple[tuple[int, float, float], ...] = ()
    snr_db: float | None = None
    rng_seed: int = 0

    def __post_init__(self):
        harmonics = tuple((int(h), float(a), float(p)) for h, a, p in self.harmonic_spec)
        object.__setattr__(self, "harmonic_spec", harmonics)
        if not self.fs_hz > 2 * self.freq_hz or self.freq_hz <= 0:
            raise ValueError("need 0 < freq_hz < fs_hz / 2")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if self.fault_time_s is not None and not 0 <= self.fault_time_s < self.duration_s:
            raise ValueError("fault_time_s must lie in [0, duration_s)")
        if not self.fault_amplitude_ratio > 0:
            raise ValueError("fault_amplitude_ratio must be positive")
        if self.dc_tau_s < 0:
            raise ValueError("dc_tau_s must be nonnegative")
        if any(h < 2 for h, _, _ in harmonics):
            raise ValueError("harmonic orders must be >= 2")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.fs_hz))

    @property
    def omega(self) -> float:
        return 2 * math.pi * self.freq_hz / self.fs_hz

    @property
    def fault_sample(self) -> int | None:
        if self.fault_time_s is None:
            return None
        return int(round(self.fault_time_s * self.fs_hz))

    def replace(self, **changes) -> "ScenarioSpec":
        return dataclasses.replace(self, **changes)


SCENARIO_FIELDS = tuple(f.name for f in dataclasses.fields(ScenarioSpec))


def generate_sinusoid(amplitude: float, freq_hz: float, phase_rad: float,
                      fs_hz: float, n_samples: int, t0_s: float = 0.0) -> Waveform:
    if not fs_hz > 2 * freq_hz:
        raise ValueError(f"fs_hz={fs_hz} aliases a {freq_hz} Hz tone")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    t = t0_s + np.arange(n_samples) / fs_hz
    return Waveform(amplitude * np.sin(2 * np.pi * freq_hz * t + phase_rad), fs_hz, t0_s)


def _harmonic_sum(t, harmonics, amplitude, freq_hz, phase_rad):
    theta = 2 * np.pi * freq_hz * t + phase_rad
    total = np.zeros_like(t)
    for order, rel_amp, phase in harmonics:
        total += rel_amp * amplitude * np.sin(order * theta + phase)
    return total


def add_harmonics(w: Waveform, harmonics: Iterable[Sequence[float]], amplitude: float,
                  freq_hz: float, phase_rad: float = 0.0) -> Waveform:
    """Add ``rel_amp * amplitude * sin(order * (k*omega + phase_rad) + phase_h)`` terms.

    ``harmonics`` holds ``(order, rel_amp, phase_h)`` triples; orders start at 2.
    """
    harmonics = [tuple(h) for h in harmonics]
    if any(h[0] < 2 for h in harmonics):
        raise ValueError("harmonic orders must be >= 2")
    if not harmonics:
        return w
    extra = _harmonic_sum(w.times, harmonics, amplitude, freq_hz, phase_rad)
    return Waveform(w.samples + extra, w.fs_hz, w.t0_s)


def noise_std_for_snr(amplitude: float, snr_db: float) -> float:
    return abs(amplitude) / math.sqrt(2.0) * 10.0 ** (-snr_db / 20.0)


def synthesize(spec: ScenarioSpec, t0_s: float = 0.0) -> Waveform:
    """Render a scenario on the grid ``t0_s + k/fs`` up to ``duration_s``.

    A negative ``t0_s`` prepends pre-fault history, which the benchmark
    harness uses for warm-up and threshold calibration.
    """
    n = int(round((spec.duration_s - t0_s) * spec.fs_hz))
    base = generate_sinusoid(spec.amplitude_pu, spec.freq_hz, spec.phase_rad, spec.fs_hz, n, t0_s)
    t = base.times
    x = base.samples.copy()
    x += _harmonic_sum(t, spec.harmonic_spec, spec.amplitude_pu, spec.freq_hz, spec.phase_rad)

    fault_k = n
    if spec.fault_time_s is not None:
        fault_k = base.sample_index(spec.fault_time_s)
        post = slice(fault_k, None)
        tp = t[post]
        theta = 2 * np.pi * spec.freq_hz * tp + spec.phase_rad
        x[post] += (spec.fault_amplitude_ratio * spec.amplitude_pu
                    * np.sin(theta + spec.fault_phase_jump_rad)
                    - spec.amplitude_pu * np.sin(theta))
        if spec.dc_offset_pu and spec.dc_tau_s > 0:
            x[post] += spec.dc_offset_pu * np.exp(-(tp - spec.fault_time_s) / spec.dc_tau_s)

    if spec.snr_db is not None:
        rng = np.random.default_rng(spec.rng_seed)
        noise = rng.standard_normal(n)
        # rescale the realization so the pre-fault SNR is exact, not just expected
        ref = noise[:fault_k] if fault_k >= 2 else noise
        noise *= noise_std_for_snr(spec.amplitude_pu, spec.snr_db) / np.sqrt(np.mean(ref ** 2))
        x += noise
    return Waveform(x, spec.fs_hz, t0_s)


def frequency_step(amplitude: float, f_before: float, f_after: float, step_k: int,
                   fs_hz: float, n_samples: int, phase_rad: float = 0.0) -> Waveform:
    """Phase-continuous sinusoid whose frequency jumps at sample ``step_k``."""
    k = np.arange(n_samples)
    w0, w1 = 2 * np.pi * f_before / fs_hz, 2 * np.pi * f_after / fs_hz
    theta = np.where(k < step_k, k * w0, step_k * w0 + (k - step_k) * w1) + phase_rad
    return Waveform(amplitude * np.sin(theta), fs_hz)


def measured_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    noise = np.asarray(noisy) - np.asarray(clean)
    return 10 * math.log10(np.mean(np.asarray(clean) ** 2) / np.mean(noise ** 2))


# -- files -----------------------------------------------------------------

def write_waveform_csv(w: Waveform, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "t_s", "i"])
        for k, (t, i) in enumerate(zip(w.times, w.samples)):
            writer.writerow([k, repr(float(t)), repr(float(i))])


def read_waveform_csv(path, fs_hz: float | None = None) -> Waveform:
    """Read a ``k,t_s,i`` file. The sampling rate is inferred from ``t_s`` unless given."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"k", "t_s", "i"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header k,t_s,i")
        rows = [(float(r["t_s"]), float(r["i"])) for r in reader]
    if not rows:
        raise ValueError(f"{path}: no samples")
    t = np.array([r[0] for r in rows])
    x = np.array([r[1] for r in rows])
    if fs_hz is None:
        if t.size < 2:
            raise ValueError("cannot infer fs_hz from a single sample; pass it explicitly")
        dt = np.diff(t)
        if np.any(dt <= 0):
            raise ValueError("t_s must be strictly increasing")
        fs_hz = 1.0 / float(np.median(dt))
        # snap to the nearest integer rate when the timestamps are just rounded
        if abs(fs_hz - round(fs_hz)) < 1e-6 * fs_hz:
            fs_hz = float(round(fs_hz))
    return Waveform(x, fs_hz, float(t[0]))


def spec_to_dict(spec: ScenarioSpec) -> dict:
    d = dataclasses.asdict(spec)
    d["harmonic_spec"] = [list(h) for h in spec.harmonic_spec]
    return d


def spec_from_dict(data: dict) -> ScenarioSpec:
    unknown = set(data) - set(SCENARIO_FIELDS)
    if unknown:
        raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
    data = dict(data)
    if "harmonic_spec" in data:
        entries = data["harmonic_spec"] or []
        if any(len(h) != 3 for h in entries):
            raise ValueError("harmonic_spec entries are [order, relative_amplitude, phase_rad]")
        data["harmonic_spec"] = tuple(tuple(h) for h in entries)
    return ScenarioSpec(**data)


def load_spec(path) -> ScenarioSpec:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: malformed scenario file ({exc})") from exc
    if not isinstance(data, dict):
        raise ValueError(f"{path}: scenario file must hold a JSON object")
    try:
        return spec_from_dict(data)
    except TypeError as exc:
        raise ValueError(f"{path}: {exc}") from exc


def save_spec(spec: ScenarioSpec, path) -> None:
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2) + "\n")
