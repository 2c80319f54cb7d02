"""Waveform handling and log mel filterbank front end.

Everything here is a pure function of its inputs. Waveforms are float64
numpy arrays with a nominal range of [-1, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import get_window

DEFAULT_SAMPLE_RATE = 16000
CMVN_MIN_VARIANCE = 1e-10


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"bad sample rate {self.sample_rate}")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def energy(self) -> float:
        """Mean squared amplitude over the whole waveform."""
        return float(np.mean(self.samples ** 2))


@dataclass
class FeatureSequence:
    frames: np.ndarray
    frame_hop: float = 0.010
    normalized: bool = False

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or min(self.frames.shape) < 1:
            raise ValueError(f"feature matrix must be T x D with T, D >= 1, got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("feature matrix contains non-finite entries")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class MixSpec:
    target_snr_db: float
    num_sources: int = 2
    pad_noise_amplitude: float = 1e-4

    def __post_init__(self):
        if self.num_sources < 2:
            raise ValueError("a mixture needs at least two sources")
        if self.pad_noise_amplitude < 0:
            raise ValueError("pad_noise_amplitude must be >= 0")


@dataclass(frozen=True)
class FeatureConfig:
    """Front-end parameters. ``n_fft=None`` picks the next power of two."""

    sample_rate: int = DEFAULT_SAMPLE_RATE
    frame_len: float = 0.025
    frame_hop: float = 0.010
    n_fft: Optional[int] = None
    n_mels: int = 16
    floor: float = 1e-10
    fmin: float = 0.0
    fmax: Optional[float] = None
    pad_noise_amplitude: float = 1e-4

    @property
    def win_samples(self) -> int:
        return int(round(self.frame_len * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.frame_hop * self.sample_rate))

    @property
    def fft_size(self) -> int:
        if self.n_fft is not None:
            return int(self.n_fft)
        return 1 << (self.win_samples - 1).bit_length()

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.win_samples:
            return 0
        return 1 + (num_samples - self.win_samples) // self.hop_samples

    def samples_for_frames(self, num_frames: int) -> int:
        """Shortest waveform length that yields exactly ``num_frames`` frames."""
        return self.win_samples + (num_frames - 1) * self.hop_samples


def energy_snr_db(target: np.ndarray, interferer: np.ndarray) -> float:
    """10 log10 of the mean-square energy ratio."""
    return 10.0 * math.log10(np.mean(np.square(target)) / np.mean(np.square(interferer)))


def mix_at_snr(target: Waveform, interferers: Sequence[Waveform],
               spec: MixSpec) -> Tuple[Waveform, List[float]]:
    """Scale every interferer to ``spec.target_snr_db`` below the target and sum.

    Returns the mixture and the per-interferer gains.
    """
    if len(interferers) != spec.num_sources - 1:
        raise ValueError(f"expected {spec.num_sources - 1} interferers, got {len(interferers)}")
    e_target = target.energy
    if e_target <= 0.0:
        raise ValueError("target has zero energy; SNR is undefined")
    mixed = target.samples.copy()
    gains = []
    for k, w in enumerate(interferers):
        if w.sample_rate != target.sample_rate:
            raise ValueError("sample rate mismatch")
        if len(w) != len(target):
            raise ValueError(f"interferer {k} has length {len(w)}, target has {len(target)}; pad first")
        e = w.energy
        if e <= 0.0:
            raise ValueError(f"interferer {k} has zero energy; SNR is undefined")
        g = math.sqrt(e_target / (e * 10.0 ** (spec.target_snr_db / 10.0)))
        gains.append(g)
        mixed = mixed + g * w.samples
    return Waveform(mixed, target.sample_rate), gains


def pad_split(w: Waveform, front: int, back: int, noise_amplitude: float,
              rng_seed: int) -> Waveform:
    """Pad with uniform noise in [-a, a]: ``front`` samples before, ``back`` after."""
    if front < 0 or back < 0:
        raise ValueError("padding must be non-negative")
    if front == 0 and back == 0:
        return Waveform(w.samples.copy(), w.sample_rate)
    rng = np.random.default_rng(rng_seed)
    noise = rng.uniform(-noise_amplitude, noise_amplitude, size=front + back)
    samples = np.concatenate([noise[:front], w.samples, noise[front:]])
    return Waveform(samples, w.sample_rate)


def pad_to_length(w: Waveform, length: int, noise_amplitude: float,
                  rng_seed: int) -> Waveform:
    """Pad to ``length`` samples; an odd deficit puts the extra sample in front."""
    deficit = length - len(w)
    if deficit < 0:
        raise ValueError(f"cannot pad a {len(w)}-sample waveform down to {length}")
    front = (deficit + 1) // 2
    return pad_split(w, front, deficit - front, noise_amplitude, rng_seed)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(cfg: FeatureConfig) -> np.ndarray:
    """Center frequencies (Hz) of the triangular filters."""
    fmax = cfg.fmax if cfg.fmax is not None else cfg.sample_rate / 2.0
    edges = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(fmax), cfg.n_mels + 2)
    return mel_to_hz(edges[1:-1])


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Triangular HTK-mel filters sampled at the rfft bin frequencies, (n_mels, n_fft//2+1)."""
    fmax = cfg.fmax if cfg.fmax is not None else cfg.sample_rate / 2.0
    hz = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(fmax), cfg.n_mels + 2))
    bins = np.fft.rfftfreq(cfg.fft_size, d=1.0 / cfg.sample_rate)
    fb = np.zeros((cfg.n_mels, bins.size))
    for m in range(cfg.n_mels):
        lo, mid, hi = hz[m], hz[m + 1], hz[m + 2]
        rising = (bins - lo) / (mid - lo)
        falling = (hi - bins) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def power_spectrogram(w: Waveform, cfg: FeatureConfig) -> np.ndarray:
    """|STFT|^2 with a periodic Hann window, shape (T, n_fft//2+1)."""
    win, hop = cfg.win_samples, cfg.hop_samples
    if len(w) < win:
        raise ValueError(f"waveform of {len(w)} samples is shorter than one {win}-sample frame")
    n = cfg.num_frames(len(w))
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, win)[::hop][:n]
    spec = np.fft.rfft(frames * get_window("hann", win), n=cfg.fft_size, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def logfbank(w: Waveform, cfg: Optional[FeatureConfig] = None) -> FeatureSequence:
    cfg = cfg or FeatureConfig(sample_rate=w.sample_rate)
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"waveform at {w.sample_rate} Hz, config expects {cfg.sample_rate} Hz")
    energies = power_spectrogram(w, cfg) @ mel_filterbank(cfg).T
    return FeatureSequence(np.log(np.maximum(energies, cfg.floor)), cfg.frame_hop, False)


def cmvn_array(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=0)
    var = x.var(axis=0)
    y = x - mu
    ok = var >= CMVN_MIN_VARIANCE
    y[:, ok] /= np.sqrt(var[ok])
    return y


def cmvn(f: FeatureSequence) -> FeatureSequence:
    """Per-utterance mean and variance normalization.

    Dimensions whose variance is below 1e-10 are only mean-subtracted.
    """
    if f.num_frames < 2:
        raise ValueError("CMVN needs at least two frames")
    return FeatureSequence(cmvn_array(f.frames), f.frame_hop, True)
