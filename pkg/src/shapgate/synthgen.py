"""Synthetic three-component microseismic windows.

Event windows carry a P arrival polarized onto the vertical channel and a
later S arrival polarized onto the horizontals, over colored background
noise. Noise windows hold background noise and, sometimes, a single-channel
non-seismic transient (spike or short burst); that transient model is a
stand-in, not a description of any field environment.

Channel order everywhere is (E, N, Z).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import StorageError, ValidationError

CHANNELS = ("E", "N", "Z")
SAMPLE_RATE = 100.0
WINDOW_LENGTH = 3001
DATASET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PickLabels:
    has_event: bool
    p_time: int | None = None
    s_time: int | None = None

    def validate(self, length: int = WINDOW_LENGTH):
        if not self.has_event:
            if self.p_time is not None or self.s_time is not None:
                raise ValidationError("noise windows carry no picks")
            return
        if self.p_time is None or self.s_time is None:
            raise ValidationError("event windows need both p_time and s_time")
        if not 0 <= self.p_time < self.s_time < length:
            raise ValidationError(
                f"picks out of range: need 0 <= p ({self.p_time}) < s ({self.s_time}) < {length}")


NO_PICKS = PickLabels(False)


@dataclass
class Window:
    samples: np.ndarray  # (3, L), channels E, N, Z
    label: str  # "signal" or "noise"
    picks: PickLabels = NO_PICKS
    sample_rate: float = SAMPLE_RATE
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[0] != 3:
            raise ValidationError(f"window samples must be (3, L), got {self.samples.shape}")
        if self.label not in ("signal", "noise"):
            raise ValidationError(f"label must be 'signal' or 'noise', got {self.label!r}")
        if self.picks.has_event != (self.label == "signal"):
            raise ValidationError("picks must be present exactly for signal windows")
        self.picks.validate(self.samples.shape[1])

    @property
    def is_signal(self) -> bool:
        return self.label == "signal"


@dataclass(frozen=True)
class GenConfig:
    length: int = WINDOW_LENGTH
    sample_rate: float = SAMPLE_RATE
    p_range: tuple = (250, 1800)         # P onset sample
    sp_delay: tuple = (150, 800)         # S - P, samples
    wavelet: str = "ricker"              # or "damped_sine"
    freq_range: tuple = (5.0, 25.0)      # Hz
    p_ratio: float = 3.0                 # Z : horizontal at P
    s_ratio: float = 3.0                 # horizontal : Z at S
    s_to_p: tuple = (1.0, 2.5)           # S peak / P peak
    background_sd: tuple = (0.02, 0.15)  # relative to P peak
    coda: tuple = (0.1, 0.4)             # coda level relative to its arrival
    transient_prob: float = 0.3

    def validate(self):
        support = int(np.ceil(3.0 * self.sample_rate / min(self.freq_range)))
        if self.p_range[0] < 0 or self.sp_delay[0] < 1:
            raise ValidationError("p_range must start >= 0 and sp_delay >= 1")
        if self.p_range[1] + self.sp_delay[1] + support >= self.length:
            raise ValidationError(
                f"infeasible timing: p {self.p_range[1]} + delay {self.sp_delay[1]} "
                f"+ wavelet support {support} must stay below {self.length}")
        if self.p_ratio <= 1 or self.s_ratio <= 1:
            raise ValidationError("polarization ratios must exceed 1")
        if self.wavelet not in ("ricker", "damped_sine"):
            raise ValidationError(f"unknown wavelet {self.wavelet!r}")
        if min(self.freq_range) <= 0 or max(self.freq_range) >= self.sample_rate / 2:
            raise ValidationError("freq_range must lie inside (0, Nyquist)")
        return self


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "harmonic"  # or "random"
    relative_amplitude: float = 0.0
    freq_range: tuple = (5.0, 30.0)

    def __post_init__(self):
        if self.kind not in ("harmonic", "random"):
            raise ValidationError(f"noise kind must be harmonic or random, got {self.kind!r}")
        if not np.isfinite(self.relative_amplitude) or self.relative_amplitude < 0:
            raise ValidationError("relative_amplitude must be finite and >= 0")


def wavelet(kind: str, freq: float, sample_rate: float = SAMPLE_RATE) -> np.ndarray:
    """Source pulse sampled from its first non-negligible sample."""
    if kind == "ricker":
        half = int(np.ceil(1.5 * sample_rate / freq))
        t = np.arange(-half, half + 1) / sample_rate
        arg = (np.pi * freq * t) ** 2
        return (1.0 - 2.0 * arg) * np.exp(-arg)
    if kind == "damped_sine":
        n = int(np.ceil(3.0 * sample_rate / freq))
        t = np.arange(n) / sample_rate
        return np.sin(2 * np.pi * freq * t) * np.exp(-t * freq / 1.5)
    raise ValidationError(f"unknown wavelet {kind!r}")


def colored_noise(rng, length: int, sd: float) -> np.ndarray:
    """Three channels of AR(1) Gaussian noise with the given standard deviation."""
    a = rng.uniform(0.3, 0.9)
    white = rng.standard_normal((3, length))
    x = lfilter([1.0], [1.0, -a], white, axis=-1)
    return x * (sd / x.std(axis=-1, keepdims=True))


def _place(trace, pulse, start):
    end = min(start + len(pulse), len(trace))
    if start < end:
        trace[start:end] += pulse[:end - start]


def _arrival(rng, cfg: GenConfig, onset: int, amplitude: float, weights) -> np.ndarray:
    freq = rng.uniform(*cfg.freq_range)
    pulse = wavelet(cfg.wavelet, freq, cfg.sample_rate)
    pulse = pulse / np.abs(pulse).max() * amplitude * rng.choice([-1.0, 1.0])
    n_coda = int(rng.uniform(0.3, 1.0) * cfg.sample_rate * 3)
    tau = rng.uniform(0.3, 1.0) * cfg.sample_rate
    coda = np.convolve(rng.standard_normal(n_coda), pulse, mode="same")
    coda *= np.exp(-np.arange(n_coda) / tau)
    coda *= rng.uniform(*cfg.coda) * amplitude / max(np.abs(coda).max(), 1e-12)
    out = np.zeros((3, cfg.length))
    for c in range(3):
        _place(out[c], weights[c] * pulse, onset)
        _place(out[c], weights[c] * coda, onset + len(pulse) // 2)
    return out


def make_event(rng, cfg: GenConfig = GenConfig()) -> Window:
    """One normalized event window with polarized P and S arrivals."""
    cfg.validate()
    p_time = int(rng.integers(cfg.p_range[0], cfg.p_range[1] + 1))
    s_time = p_time + int(rng.integers(cfg.sp_delay[0], cfg.sp_delay[1] + 1))
    # P: vertical-dominant, horizontal share split by back-azimuth
    az = rng.uniform(0, 2 * np.pi)
    p_w = np.array([np.cos(az) / cfg.p_ratio, np.sin(az) / cfg.p_ratio, 1.0])
    # S: horizontal-dominant, transverse to the P azimuth
    az_s = az + np.pi / 2 + rng.normal(0, 0.3)
    s_w = np.array([np.cos(az_s), np.sin(az_s), 1.0 / cfg.s_ratio])
    s_amp = rng.uniform(*cfg.s_to_p)
    sd = rng.uniform(*cfg.background_sd)
    x = colored_noise(rng, cfg.length, sd)
    x += _arrival(rng, cfg, p_time, 1.0, p_w)
    x += _arrival(rng, cfg, s_time, s_amp, s_w)
    meta = {"background_sd": sd, "s_to_p": s_amp, "azimuth": az}
    return normalize(Window(x, "signal", PickLabels(True, p_time, s_time), cfg.sample_rate, meta))


def make_noise(rng, cfg: GenConfig = GenConfig()) -> Window:
    """One normalized noise window, with a single-channel transient ~30% of the time."""
    cfg.validate()
    sd = rng.uniform(*cfg.background_sd)
    x = colored_noise(rng, cfg.length, sd)
    meta = {"background_sd": sd, "transient": "none"}
    if rng.random() < cfg.transient_prob:
        channel = int(rng.integers(0, 3))
        at = int(rng.integers(0, cfg.length - 60))
        if rng.random() < 0.5:
            width = int(rng.integers(1, 4))
            x[channel, at:at + width] += rng.uniform(5, 20) * sd * rng.choice([-1.0, 1.0])
            meta["transient"] = "spike"
        else:
            n = int(rng.uniform(0.1, 0.5) * cfg.sample_rate)
            t = np.arange(n) / cfg.sample_rate
            burst = np.sin(2 * np.pi * rng.uniform(10, 40) * t) * np.hanning(n)
            x[channel, at:at + n] += rng.uniform(3, 10) * sd * burst[:cfg.length - at]
            meta["transient"] = "burst"
        meta["transient_channel"] = CHANNELS[channel]
    return normalize(Window(x, "noise", NO_PICKS, cfg.sample_rate, meta))


def normalize(w: Window) -> Window:
    """Demean each channel, then divide all channels by one global peak."""
    x = np.asarray(w.samples, dtype=np.float64)
    x = x - x.mean(axis=-1, keepdims=True)
    peak = np.abs(x).max()
    if not np.isfinite(peak) or peak == 0:
        raise ValidationError("cannot normalize an all-zero (or constant) window")
    return replace(w, samples=(x / peak).astype(np.float32))


def noise_component(spec: NoiseSpec, rng, length: int, sample_rate: float = SAMPLE_RATE):
    """Unit-peak noise of the requested kind, shaped (3, length)."""
    if spec.kind == "harmonic":
        t = np.arange(length) / sample_rate
        freqs = rng.uniform(*spec.freq_range, size=3)
        phases = rng.uniform(0, 2 * np.pi, size=3)
        n = np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])
    else:
        n = rng.standard_normal((3, length))
    return n / np.abs(n).max()


def inject_noise(w: Window, spec: NoiseSpec, rng) -> Window:
    """Add noise whose peak is ``relative_amplitude`` times the window peak, then renormalize."""
    if spec.relative_amplitude == 0:
        return replace(w, samples=w.samples.copy(), meta=dict(w.meta))
    x = np.asarray(w.samples, dtype=np.float64)
    n = noise_component(spec, rng, x.shape[1], w.sample_rate)
    n *= spec.relative_amplitude * np.abs(x).max()
    meta = dict(w.meta, noise_kind=spec.kind, noise_amplitude=spec.relative_amplitude)
    return normalize(replace(w, samples=x + n, meta=meta))


def label_order(n_signal: int, n_noise: int, seed: int) -> np.ndarray:
    labels = np.array([True] * n_signal + [False] * n_noise)
    return labels[np.random.default_rng([seed, 2**31 - 1]).permutation(len(labels))]


def generate(cfg: GenConfig, n_signal: int, n_noise: int, seed: int) -> list[Window]:
    """Balanced-or-not window list; window ``i`` depends only on ``(seed, i)``."""
    if n_signal < 0 or n_noise < 0 or n_signal + n_noise < 1:
        raise ValidationError("need at least one window")
    cfg.validate()
    windows = []
    for i, is_signal in enumerate(label_order(n_signal, n_noise, seed)):
        rng = np.random.default_rng([seed, i])
        w = make_event(rng, cfg) if is_signal else make_noise(rng, cfg)
        w.meta["uid"] = f"{seed}:{i}"
        windows.append(w)
    return windows


# -- dataset directory ---------------------------------------------------------

def write_dataset(windows: list[Window], out_path, seed: int | None = None,
                  cfg: GenConfig | None = None) -> Path:
    """Write ``manifest.json``, ``samples.f32`` and ``labels.csv`` into ``out_path``."""
    out = Path(out_path)
    n_signal = sum(w.is_signal for w in windows)
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "count": len(windows),
        "n_signal": n_signal,
        "n_noise": len(windows) - n_signal,
        "sample_rate": windows[0].sample_rate if windows else SAMPLE_RATE,
        "length": int(windows[0].samples.shape[1]) if windows else WINDOW_LENGTH,
        "channels": list(CHANNELS),
        "seed": seed,
        "generator": asdict(cfg) if cfg is not None else None,
    }
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "label", "p_time", "s_time"])
    for i, w in enumerate(windows):
        p = "" if w.picks.p_time is None else w.picks.p_time
        s = "" if w.picks.s_time is None else w.picks.s_time
        writer.writerow([i, w.label, p, s])
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        with open(out / "samples.f32", "wb") as fh:
            for w in windows:
                fh.write(np.ascontiguousarray(w.samples, dtype="<f4").tobytes())
        (out / "labels.csv").write_text(buf.getvalue())
    except OSError as exc:
        raise StorageError(f"cannot write dataset to {out}: {exc}") from exc
    return out


def build_dataset(cfg: GenConfig, n_signal: int, n_noise: int, seed: int, out_path) -> Path:
    return write_dataset(generate(cfg, n_signal, n_noise, seed), out_path, seed, cfg)


def load_dataset(path) -> list[Window]:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        raw = (path / "samples.f32").read_bytes()
        rows = list(csv.DictReader((path / "labels.csv").read_text().splitlines()))
    except (OSError, json.JSONDecodeError) as exc:
        raise StorageError(f"cannot read dataset at {path}: {exc}") from exc
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise StorageError(f"unsupported dataset format version {manifest.get('format_version')}")
    count, length = manifest["count"], manifest["length"]
    if len(raw) != count * 3 * length * 4 or len(rows) != count:
        raise StorageError(
            f"dataset at {path} inconsistent: manifest says {count} windows, "
            f"samples.f32 holds {len(raw) / (12 * length):g}, labels.csv holds {len(rows)}")
    data = np.frombuffer(raw, dtype="<f4").reshape(count, 3, length)
    windows = []
    for i, row in enumerate(rows):
        picks = NO_PICKS
        if row["label"] == "signal":
            picks = PickLabels(True, int(row["p_time"]), int(row["s_time"]))
        seed = manifest.get("seed")
        meta = {"uid": f"{seed}:{i}", "source": str(path)}
        windows.append(Window(data[i].astype(np.float32), row["label"], picks,
                              manifest["sample_rate"], meta))
    return windows
