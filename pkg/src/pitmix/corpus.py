"""Synthetic multi-talker corpus.

Speakers are rendered as harmonic complexes at a speaker-specific pitch,
shaped by two formant-like resonances per label. Each label's resonance
positions are shared across speakers up to a speaker-specific vocal tract
scaling and a small per-speaker jitter, so a recognizer has to generalize
across speakers while the two sources in a mixture stay symmetric.

Utterances are laid out so that feature frame ``t`` is centered on the
span rendering label ``t``: the label sequence length always equals the
frame count under the feature config.

On-disk layout per split: ``<split>.bin`` holds back-to-back binary
records (see :func:`encode_record`) and ``<split>.manifest`` lists them.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .features import (FeatureConfig, FeatureSequence, MixSpec, Waveform, cmvn,
                       logfbank, mix_at_snr, pad_split)

SILENCE = 0
RECORD_MAGIC = b"PITMIX1\0"
SPLITS = ("train", "valid", "test")
_SPLIT_CODE = {"train": 0, "valid": 1, "test": 2, "single": 3}

GENDERS = ("A", "B")
SILENCE_NOISE = 1e-5
RAMP_SAMPLES = 64


@dataclass(frozen=True)
class CorpusConfig:
    num_speakers: int = 20
    num_mixtures: int = 400
    num_test_mixtures: int = 100
    num_streams: int = 2
    snr_grid: Tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0)
    num_labels: int = 21
    min_units: int = 4
    max_units: int = 7
    min_unit_frames: int = 3
    max_unit_frames: int = 8
    valid_fraction: float = 0.1
    min_overlap: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "snr_grid", tuple(float(x) for x in self.snr_grid))
        if self.num_labels < 2:
            raise ValueError("need at least one unit label besides silence")
        if self.num_streams < 2:
            raise ValueError("mixtures need at least two streams")


@dataclass
class SpeakerProfile:
    """Per-speaker rendering parameters.

    ``formants[u]`` holds the two resonance centers (Hz) this speaker uses
    for label ``u``; row 0 (silence) is unused.
    """

    speaker_id: int
    gender_tag: str
    f0: float
    formants: np.ndarray
    formant_gains: np.ndarray
    level: float

    @property
    def num_labels(self) -> int:
        return self.formants.shape[0]


@dataclass
class Utterance:
    waveform: Waveform
    labels: np.ndarray
    speaker_id: int


@dataclass
class MixtureSample:
    mixed_features: FeatureSequence
    source_features: List[FeatureSequence]
    source_labels: List[np.ndarray]
    snr_db: float
    speaker_ids: List[int]
    gains: List[float]
    key: str = ""
    # scaled, padded source waveforms; kept in memory only
    sources: Optional[List[Waveform]] = field(default=None, repr=False)

    @property
    def num_streams(self) -> int:
        return len(self.source_labels)

    @property
    def num_frames(self) -> int:
        return self.mixed_features.num_frames


def base_formants(num_labels: int) -> np.ndarray:
    """Speaker-independent resonance pair per unit label; row 0 is silence."""
    n = num_labels - 1
    n1 = int(math.ceil(math.sqrt(n)))
    n2 = int(math.ceil(n / n1))
    f1 = np.geomspace(320.0, 1000.0, n1)
    f2 = np.geomspace(1500.0, 4200.0, n2)
    table = np.zeros((num_labels, 2))
    for k in range(n):
        table[k + 1] = (f1[k % n1], f2[k // n1])
    return table


def make_speaker(speaker_id: int, num_labels: int, corpus_seed: int) -> SpeakerProfile:
    rng = np.random.default_rng([corpus_seed, 7, speaker_id])
    gender = GENDERS[int(rng.integers(2))]
    if gender == "A":
        f0 = rng.uniform(95.0, 140.0)
        scale = rng.uniform(0.90, 1.00)
    else:
        f0 = rng.uniform(175.0, 250.0)
        scale = rng.uniform(1.00, 1.10)
    jitter = rng.uniform(0.96, 1.04, size=(num_labels, 2))
    formants = base_formants(num_labels) * scale * jitter
    formants[SILENCE] = 0.0
    gains = np.stack([rng.uniform(0.8, 1.0, num_labels), rng.uniform(0.4, 0.7, num_labels)], axis=1)
    return SpeakerProfile(speaker_id, gender, float(f0), formants, gains, float(rng.uniform(0.05, 0.1)))


def make_speakers(num_speakers: int, num_labels: int, corpus_seed: int) -> List[SpeakerProfile]:
    return [make_speaker(i, num_labels, corpus_seed) for i in range(num_speakers)]


def random_script(rng: np.random.Generator, cfg: CorpusConfig) -> List[Tuple[int, int]]:
    """A (label, frames) script: silence, a run of units with short pauses, silence."""
    script = [(SILENCE, int(rng.integers(1, 3)))]
    n_units = int(rng.integers(cfg.min_units, cfg.max_units + 1))
    for k in range(n_units):
        if k and rng.random() < 0.15:
            script.append((SILENCE, int(rng.integers(1, 3))))
        script.append((int(rng.integers(1, cfg.num_labels)),
                       int(rng.integers(cfg.min_unit_frames, cfg.max_unit_frames + 1))))
    script.append((SILENCE, int(rng.integers(1, 3))))
    return script


def script_labels(script: Sequence[Tuple[int, int]]) -> np.ndarray:
    return np.concatenate([np.full(d, lab, dtype=np.int64) for lab, d in script])


def _render_unit(profile: SpeakerProfile, label: int, n: int, sr: int,
                 rng: np.random.Generator) -> np.ndarray:
    k = np.arange(1, int(0.45 * sr / profile.f0) + 1)
    freqs = k * profile.f0
    env = np.full(freqs.shape, 0.01)
    for (fc, g) in zip(profile.formants[label], profile.formant_gains[label]):
        bw = 60.0 + 0.08 * fc
        env += g * np.exp(-0.5 * ((freqs - fc) / bw) ** 2)
    phases = rng.uniform(0, 2 * np.pi, size=k.size)
    t = np.arange(n) / sr
    x = np.sin(2 * np.pi * np.outer(t, freqs) + phases) @ env
    x *= profile.level / max(np.sqrt(np.mean(x ** 2)), 1e-12)
    r = min(RAMP_SAMPLES, n // 2)
    if r:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        x[:r] *= ramp
        x[-r:] *= ramp[::-1]
    return x


def synth_utterance(profile: SpeakerProfile, label_script: Sequence[Tuple[int, int]],
                    rng_seed, cfg: Optional[FeatureConfig] = None) -> Utterance:
    """Render a (label, frames) script with one speaker's signatures."""
    cfg = cfg or FeatureConfig()
    if not label_script:
        raise ValueError("empty label script")
    for lab, dur in label_script:
        if dur < 1:
            raise ValueError("every script entry needs at least one frame")
        if not 0 <= lab < profile.num_labels:
            raise ValueError(f"label {lab} outside [0, {profile.num_labels})")
    rng = np.random.default_rng(rng_seed)
    hop, win = cfg.hop_samples, cfg.win_samples
    lead = (win - hop) // 2
    tail = win - hop - lead
    pieces = []
    last = len(label_script) - 1
    for k, (lab, dur) in enumerate(label_script):
        n = dur * hop + (lead if k == 0 else 0) + (tail if k == last else 0)
        if lab == SILENCE:
            pieces.append(rng.uniform(-SILENCE_NOISE, SILENCE_NOISE, n))
        else:
            pieces.append(_render_unit(profile, lab, n, cfg.sample_rate, rng))
    samples = np.concatenate(pieces)
    labels = script_labels(label_script)
    assert cfg.num_frames(samples.size) == labels.size
    return Utterance(Waveform(samples, cfg.sample_rate), labels, profile.speaker_id)


def overlap_fraction(label_seqs: Sequence[np.ndarray]) -> float:
    """Fraction of frames where at least two streams are non-silence."""
    active = np.sum([np.asarray(l) != SILENCE for l in label_seqs], axis=0)
    return float(np.mean(active >= 2))


def pad_labels(labels: np.ndarray, length: int) -> np.ndarray:
    deficit = length - labels.size
    if deficit < 0:
        raise ValueError("cannot pad labels to a shorter length")
    front = (deficit + 1) // 2
    return np.concatenate([np.full(front, SILENCE, dtype=np.int64), labels,
                           np.full(deficit - front, SILENCE, dtype=np.int64)])


def make_mixture(sources: Sequence[Utterance], snr_db: Union[float, Sequence[float]], rng_seed,
                 cfg: Optional[FeatureConfig] = None, key: str = "") -> MixtureSample:
    """Pad, scale and sum S utterances; the first one is the SNR reference.

    ``snr_db`` is a single value for every interferer or one value each.
    """
    cfg = cfg or FeatureConfig()
    S = len(sources)
    if S < 2:
        raise ValueError("a mixture needs at least two sources")
    ids = [u.speaker_id for u in sources]
    if len(set(ids)) != S:
        raise ValueError(f"speaker collision in {ids}")
    snrs = [float(snr_db)] * (S - 1) if np.ndim(snr_db) == 0 else [float(x) for x in snr_db]
    if len(snrs) != S - 1:
        raise ValueError("need one SNR per interferer")
    frames = [u.labels.size for u in sources]
    longest = max(frames)
    if 2 * min(frames) < longest:
        raise ValueError(f"overlap constraint violated: lengths {frames}")
    hop = cfg.hop_samples
    seeds = np.random.SeedSequence(rng_seed).spawn(S)
    padded, labels = [], []
    for u, seed in zip(sources, seeds):
        deficit = longest - u.labels.size
        front = (deficit + 1) // 2
        padded.append(pad_split(u.waveform, front * hop, (deficit - front) * hop,
                                cfg.pad_noise_amplitude, seed))
        labels.append(pad_labels(u.labels, longest))
    target = padded[0]
    gains = [1.0]
    scaled = [target]
    for w, snr in zip(padded[1:], snrs):
        _, (g,) = mix_at_snr(target, [w], MixSpec(snr, 2, cfg.pad_noise_amplitude))
        gains.append(g)
        scaled.append(Waveform(g * w.samples, w.sample_rate))
    mixed = target.samples.copy()
    for w in scaled[1:]:
        mixed = mixed + w.samples
    mixed_w = Waveform(mixed, target.sample_rate)
    return MixtureSample(
        mixed_features=cmvn(logfbank(mixed_w, cfg)),
        source_features=[logfbank(w, cfg) for w in scaled],
        source_labels=labels,
        snr_db=snrs[0],
        speaker_ids=ids,
        gains=gains,
        key=key,
        sources=scaled,
    )


# --- binary records -----------------------------------------------------------

def encode_record(sample: MixtureSample, num_labels: int) -> bytes:
    S, T, D = sample.num_streams, sample.num_frames, sample.mixed_features.dim
    parts = [RECORD_MAGIC, struct.pack("<IIIIf", S, T, D, num_labels, sample.snr_db),
             struct.pack(f"<{S}I", *sample.speaker_ids), struct.pack(f"<{S}f", *sample.gains),
             sample.mixed_features.frames.astype("<f4").tobytes()]
    parts += [f.frames.astype("<f4").tobytes() for f in sample.source_features]
    parts += [np.asarray(l).astype("<u4").tobytes() for l in sample.source_labels]
    return b"".join(parts)


def decode_record(buf: bytes, offset: int = 0, key: str = "") -> Tuple[MixtureSample, int]:
    """Parse one record at ``offset``; returns the sample and the next offset."""
    if buf[offset:offset + 8] != RECORD_MAGIC:
        raise ValueError(f"bad record magic at offset {offset}")
    pos = offset + 8
    S, T, D, L, snr = struct.unpack_from("<IIIIf", buf, pos)
    pos += 20
    ids = list(struct.unpack_from(f"<{S}I", buf, pos))
    pos += 4 * S
    gains = list(struct.unpack_from(f"<{S}f", buf, pos))
    pos += 4 * S

    def take(dtype, count):
        nonlocal pos
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
        pos += arr.nbytes
        return arr

    mixed = take("<f4", T * D).reshape(T, D).astype(np.float64)
    feats = [take("<f4", T * D).reshape(T, D).astype(np.float64) for _ in range(S)]
    labels = [take("<u4", T).astype(np.int64) for _ in range(S)]
    if any(l.max(initial=0) >= L for l in labels):
        raise ValueError("record label out of range")
    sample = MixtureSample(FeatureSequence(mixed, normalized=True),
                           [FeatureSequence(f) for f in feats], labels, float(snr), ids, gains, key)
    return sample, pos


# --- manifests ----------------------------------------------------------------

@dataclass
class ManifestRecord:
    file: str
    offset: int
    num_streams: int
    num_frames: int
    snr_db: float
    speaker_ids: List[int]

    def line(self) -> str:
        ids = ",".join(str(i) for i in self.speaker_ids)
        return f"{self.file} {self.offset} {self.num_streams} {self.num_frames} {self.snr_db:.6f} {ids}"

    @classmethod
    def parse(cls, line: str) -> "ManifestRecord":
        f, off, S, T, snr, ids = line.split()
        return cls(f, int(off), int(S), int(T), float(snr), [int(i) for i in ids.split(",")])


@dataclass
class DatasetManifest:
    fingerprint: str
    records: List[ManifestRecord]
    root: Optional[Path] = None

    def write(self, path) -> None:
        path = Path(path)
        lines = [self.fingerprint] + [r.line() for r in self.records]
        path.write_text("\n".join(lines) + "\n")
        self.root = path.parent

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        lines = path.read_text().splitlines()
        if not lines:
            raise ValueError(f"empty manifest {path}")
        return cls(lines[0].strip(), [ManifestRecord.parse(l) for l in lines[1:] if l.strip()],
                   path.parent)

    def __len__(self):
        return len(self.records)

    def load(self) -> List[MixtureSample]:
        root = self.root or Path(".")
        blobs: Dict[str, bytes] = {}
        samples = []
        for k, r in enumerate(self.records):
            if r.file not in blobs:
                blobs[r.file] = (root / r.file).read_bytes()
            s, _ = decode_record(blobs[r.file], r.offset, key=f"{r.file}:{k}")
            if s.num_streams != r.num_streams or s.num_frames != r.num_frames:
                raise ValueError(f"record {k} of {r.file} disagrees with its manifest line")
            samples.append(s)
        return samples


def fingerprint(cfg: CorpusConfig, feat: FeatureConfig, seed: int) -> str:
    blob = json.dumps({"corpus": asdict(cfg), "features": asdict(feat), "seed": int(seed)},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


# --- dataset generation -------------------------------------------------------

def split_speakers(cfg: CorpusConfig) -> Dict[str, List[int]]:
    """Odd ids form the test pool; even ids split into valid (first few) and train."""
    S = cfg.num_streams
    odd = [i for i in range(cfg.num_speakers) if i % 2 == 1]
    even = [i for i in range(cfg.num_speakers) if i % 2 == 0]
    n_valid = max(S, int(math.ceil(0.2 * len(even))))
    pools = {"train": even[n_valid:], "valid": even[:n_valid], "test": odd}
    for name, pool in pools.items():
        if len(pool) < S:
            raise ValueError(f"{cfg.num_speakers} speakers leave only {len(pool)} for the "
                             f"{name} split; need {S}")
    return pools


def _snrs_for(cfg: CorpusConfig, split: str, index: int, rng: np.random.Generator) -> List[float]:
    S = cfg.num_streams
    if S == 2:
        return [cfg.snr_grid[index % len(cfg.snr_grid)]]
    if split == "test":
        return [0.0] * (S - 1)
    lo, hi = min(cfg.snr_grid), max(cfg.snr_grid)
    return [float(x) for x in rng.uniform(lo, hi, size=S - 1)]


def build_sample(cfg: CorpusConfig, feat: FeatureConfig, seed: int, split: str, index: int,
                 speakers: Sequence[SpeakerProfile], pool: Sequence[int]) -> MixtureSample:
    """Deterministically generate sample ``index`` of ``split`` from its own child seed."""
    S = cfg.num_streams
    rng = np.random.default_rng([seed, _SPLIT_CODE[split], index])
    ids = [int(i) for i in rng.choice(pool, size=S, replace=False)]
    while True:
        scripts = [random_script(rng, cfg) for _ in range(S)]
        labs = [script_labels(s) for s in scripts]
        longest = max(l.size for l in labs)
        if 2 * min(l.size for l in labs) < longest:
            continue
        if overlap_fraction([pad_labels(l, longest) for l in labs]) >= cfg.min_overlap:
            break
    snrs = _snrs_for(cfg, split, index, rng)
    utts = [synth_utterance(speakers[i], sc, [seed, _SPLIT_CODE[split], index, k], feat)
            for k, (i, sc) in enumerate(zip(ids, scripts))]
    return make_mixture(utts, snrs, [seed, _SPLIT_CODE[split], index, 99], feat,
                        key=f"{split}:{index}")


def generate_dataset(cfg: CorpusConfig, feat: FeatureConfig, seed: int, out_dir,
                     split: str = "train", num_mixtures: Optional[int] = None,
                     speaker_pool: Optional[Sequence[int]] = None,
                     keep_sources: bool = False) -> Tuple[DatasetManifest, List[MixtureSample]]:
    """Generate one split, write ``<split>.bin`` and ``<split>.manifest`` into ``out_dir``.

    Returns the manifest and the in-memory samples.
    """
    S = cfg.num_streams
    if cfg.num_speakers < 2 * S:
        raise ValueError(f"need at least {2 * S} speakers for {S}-talker mixtures")
    if not cfg.snr_grid:
        raise ValueError("empty SNR grid")
    if split not in _SPLIT_CODE:
        raise ValueError(f"unknown split {split!r}")
    n = cfg.num_mixtures if num_mixtures is None else num_mixtures
    pool = list(range(cfg.num_speakers)) if speaker_pool is None else list(speaker_pool)
    if len(pool) < S:
        raise ValueError(f"speaker pool of {len(pool)} is too small for {S}-talker mixtures")
    speakers = make_speakers(cfg.num_speakers, cfg.num_labels, seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bin_name = f"{split}.bin"
    records, samples = [], []
    offset = 0
    with open(out_dir / bin_name, "wb") as fh:
        for i in range(n):
            s = build_sample(cfg, feat, seed, split, i, speakers, pool)
            blob = encode_record(s, cfg.num_labels)
            fh.write(blob)
            records.append(ManifestRecord(bin_name, offset, S, s.num_frames, s.snr_db, s.speaker_ids))
            offset += len(blob)
            if not keep_sources:
                s.sources = None
            samples.append(s)
    manifest = DatasetManifest(fingerprint(cfg, feat, seed), records)
    manifest.write(out_dir / f"{split}.manifest")
    return manifest, samples


def generate_splits(cfg: CorpusConfig, feat: FeatureConfig, seed: int, out_dir
                    ) -> Dict[str, Tuple[DatasetManifest, List[MixtureSample]]]:
    """Speaker-disjoint train/valid/test splits."""
    pools = split_speakers(cfg)
    n_valid = max(1, int(round(cfg.valid_fraction * cfg.num_mixtures)))
    counts = {"train": cfg.num_mixtures - n_valid, "valid": n_valid, "test": cfg.num_test_mixtures}
    return {split: generate_dataset(cfg, feat, seed, out_dir, split, counts[split], pools[split])
            for split in SPLITS}


def dataset_summary(samples: Sequence[MixtureSample]) -> Dict[str, object]:
    counts: Dict[float, int] = {}
    for s in samples:
        counts[round(s.snr_db, 6)] = counts.get(round(s.snr_db, 6), 0) + 1
    overlaps = [overlap_fraction(s.source_labels) for s in samples]
    return {
        "num_samples": len(samples),
        "per_snr": dict(sorted(counts.items())),
        "min_overlap": min(overlaps) if overlaps else float("nan"),
        "mean_overlap": float(np.mean(overlaps)) if overlaps else float("nan"),
        "mean_frames": float(np.mean([s.num_frames for s in samples])) if samples else float("nan"),
    }
