"""The four multi-talker architectures.

* ``A1_FixedSep``   BLSTM feature separator trained with fixed-order MSE,
  followed by a single-talker recognizer.
* ``A2_PitSep``     same layout, separator trained with PIT-MSE.
* ``A3_DirectPitCE`` one BLSTM stack with S softmax heads trained with PIT-CE.
* ``A4_Joint``      PIT-MSE separator feeding a weight-tied recognition stack,
  trained progressively (see :func:`pitmix.train.train_arch4`).

``layers`` is the total BLSTM depth of the system. Two-module architectures
give the front end ``layers // 2`` layers and the back end the rest.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import pit
from .corpus import SILENCE, MixtureSample
from .layers import BiLSTMParams, LinearParams, bidi_layer, cmvn_op, linear, param_count
from .tensor import Tensor, concat, reshape, take

A1 = "A1_FixedSep"
A2 = "A2_PitSep"
A3 = "A3_DirectPitCE"
A4 = "A4_Joint"
ARCHS = (A1, A2, A3, A4)

PRESETS: Dict[str, Dict[str, int]] = {
    "desk": dict(layers=2, hidden=32, feat_dim=16, num_labels=21),
    "paper": dict(layers=6, hidden=768, feat_dim=40, num_labels=21),
}

CHECKPOINT_MAGIC = b"PITNN1\0"


@dataclass(frozen=True)
class ArchConfig:
    arch: str = A3
    num_streams: int = 2
    layers: int = 2
    hidden: int = 32
    feat_dim: int = 16
    num_labels: int = 21

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown architecture {self.arch!r}; choose from {ARCHS}")
        if self.layers < 1 or self.hidden < 1 or self.feat_dim < 1 or self.num_labels < 2:
            raise ValueError("layers, widths and label count must be positive")
        if self.num_streams < 1:
            raise ValueError("need at least one output stream")
        if self.two_module and self.layers < 2:
            raise ValueError(f"{self.arch} needs at least 2 layers (front end + back end)")

    @classmethod
    def preset(cls, name: str, arch: str, **overrides) -> "ArchConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}")
        return cls(arch=arch, **{**PRESETS[name], **overrides})

    @property
    def two_module(self) -> bool:
        return self.arch in (A1, A2, A4)

    @property
    def front_layers(self) -> int:
        return self.layers // 2 if self.two_module else 0

    @property
    def back_layers(self) -> int:
        return self.layers - self.front_layers


class Stack:
    """Stacked bidirectional layers; layer i reads the 2H output of layer i-1."""

    def __init__(self, layers: List[BiLSTMParams]):
        self.layers = layers

    @classmethod
    def init(cls, rng, d_in: int, hidden: int, depth: int, prefix: str) -> "Stack":
        layers = []
        for i in range(depth):
            layers.append(BiLSTMParams.init(rng, d_in if i == 0 else 2 * hidden, hidden,
                                            f"{prefix}l{i}."))
        return cls(layers)

    def __call__(self, x, mask=None) -> Tensor:
        h = x
        for p in self.layers:
            h = bidi_layer(h, p, mask)
        return h

    def named(self, prefix: str):
        for i, p in enumerate(self.layers):
            for name, t in p.named():
                yield f"{prefix}l{i}.{name}", t


@dataclass
class ForwardOutput:
    """Per-stream outputs, each (B, T, D) or (B, T, L) (leading B dropped for 2-D input)."""

    separated_features: Optional[List[Tensor]] = None
    stream_logits: Optional[List[Tensor]] = None


class PitModel:
    """Parameters and wiring for one architecture.

    Parameter groups: ``front`` (separation stack and feature heads), ``back``
    (recognition stack and logit heads) and, for A1/A2, ``recognizer`` (the
    single-talker back end trained on clean sources).
    """

    def __init__(self, cfg: ArchConfig, front: Optional[Stack], feature_heads: List[LinearParams],
                 back: Optional[Stack], logit_heads: List[LinearParams],
                 recognizer: Optional[Stack] = None, recognizer_head: Optional[LinearParams] = None):
        self.cfg = cfg
        self.front = front
        self.feature_heads = feature_heads
        self.back = back
        self.logit_heads = logit_heads
        self.recognizer = recognizer
        self.recognizer_head = recognizer_head
        for name, t in self.named_parameters():
            t.name = name

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        out = []
        if self.front is not None:
            out += list(self.front.named("front."))
            for s, h in enumerate(self.feature_heads):
                out += [(f"front.head{s}.{n}", t) for n, t in h.named()]
        if self.back is not None:
            out += list(self.back.named("back."))
            if self.cfg.arch == A4:
                out += [(f"back.head.{n}", t) for n, t in self.logit_heads[0].named()]
            else:
                for s, h in enumerate(self.logit_heads):
                    out += [(f"back.head{s}.{n}", t) for n, t in h.named()]
        if self.recognizer is not None:
            out += list(self.recognizer.named("rec."))
            out += [(f"rec.head.{n}", t) for n, t in self.recognizer_head.named()]
        return out

    def group(self, *names: str) -> List[Tensor]:
        prefixes = tuple({"front": "front.", "back": "back.", "recognizer": "rec."}[n] for n in names)
        return [t for n, t in self.named_parameters() if n.startswith(prefixes)]

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def num_parameters(self, *groups: str) -> int:
        return param_count(self.group(*groups) if groups else self.parameters())

    def state(self) -> Dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.named_parameters()}

    def load_state(self, state: Dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        if set(own) != set(state):
            raise ValueError("parameter names do not match this architecture")
        for n, t in own.items():
            if t.data.shape != state[n].shape:
                raise ValueError(f"shape mismatch for {n}")
            t.data[...] = state[n]

    def zero_grad(self):
        for t in self.parameters():
            t.grad = None

    def __repr__(self):
        return f"PitModel({self.cfg}, params={self.num_parameters()})"


def build(cfg: ArchConfig, seed: int = 0) -> PitModel:
    rng = np.random.default_rng(seed)
    S, H, D, L = cfg.num_streams, cfg.hidden, cfg.feat_dim, cfg.num_labels
    front = back = rec = rec_head = None
    feature_heads: List[LinearParams] = []
    logit_heads: List[LinearParams] = []
    if cfg.two_module:
        front = Stack.init(rng, D, H, cfg.front_layers, "front.")
        feature_heads = [LinearParams.init(rng, 2 * H, D) for _ in range(S)]
    if cfg.arch in (A3, A4):
        back = Stack.init(rng, D, H, cfg.back_layers, "back.")
        if cfg.arch == A4:
            shared = LinearParams.init(rng, 2 * H, L)
            logit_heads = [shared] * S
        else:
            logit_heads = [LinearParams.init(rng, 2 * H, L) for _ in range(S)]
    if cfg.arch in (A1, A2):
        rec = Stack.init(rng, D, H, cfg.back_layers, "rec.")
        rec_head = LinearParams.init(rng, 2 * H, L)
    return PitModel(cfg, front, feature_heads, back, logit_heads, rec, rec_head)


# --- forward ------------------------------------------------------------------

def _split_batch(x: Tensor, parts: int) -> List[Tensor]:
    n = x.shape[0] // parts
    return [take(x, k * n, (k + 1) * n, axis=0) for k in range(parts)]


def recognize_streams(stack: Stack, heads: Sequence[LinearParams], streams: Sequence[Tensor],
                      mask=None, normalize: bool = True) -> List[Tensor]:
    """Run each (B, T, D) stream through one shared recognition stack.

    The S streams are stacked along the batch axis so the stack runs once.
    ``heads`` holds one head per stream (the same object when tied).
    """
    S = len(streams)
    x = concat(list(streams), axis=0) if S > 1 else streams[0]
    m = None if mask is None else np.concatenate([mask] * S, axis=0)
    if normalize:
        x = cmvn_op(x, m)
    h = stack(x, m)
    hs = _split_batch(h, S) if S > 1 else [h]
    return [linear(hk, head) for hk, head in zip(hs, heads)]


def forward(model: PitModel, mixed_features, mask=None, recognize: bool = True) -> ForwardOutput:
    """Forward pass on (T, D) or (B, T, D) mixture features.

    ``recognize=False`` skips the recognition branch of separation models.
    """
    arr = mixed_features.frames if hasattr(mixed_features, "frames") else mixed_features
    x = arr if isinstance(arr, Tensor) else Tensor(np.asarray(arr, dtype=np.float64))
    squeeze = x.data.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.shape[-1] != model.cfg.feat_dim:
        raise ValueError(f"model expects {model.cfg.feat_dim}-dim features, got {x.shape[-1]}")
    cfg = model.cfg
    sep = logits = None
    if cfg.arch == A3:
        h = model.back(x, mask)
        logits = [linear(h, head) for head in model.logit_heads]
    else:
        h = model.front(x, mask)
        sep = [linear(h, head) for head in model.feature_heads]
        if recognize:
            if cfg.arch == A4:
                logits = recognize_streams(model.back, model.logit_heads, sep, mask)
            else:
                logits = recognize_streams(model.recognizer, [model.recognizer_head] * len(sep),
                                           sep, mask)
    if squeeze:
        def sq(ts):
            return None if ts is None else [reshape(t, t.shape[1:]) for t in ts]
        sep, logits = sq(sep), sq(logits)
    return ForwardOutput(sep, logits)


def recognize_single(model: PitModel, features, mask=None) -> Tensor:
    """Single-talker recognizer of an A1/A2 model on (B, T, D) clean features."""
    if model.recognizer is None:
        raise ValueError(f"{model.cfg.arch} has no single-talker recognizer")
    x = features if isinstance(features, Tensor) else Tensor(features)
    return recognize_streams(model.recognizer, [model.recognizer_head], [x], mask)[0]


# --- batches and losses -------------------------------------------------------

@dataclass
class Batch:
    mixed: np.ndarray          # (B, T, D)
    mask: np.ndarray           # (B, T)
    targets: np.ndarray        # (B, S, T, D)
    labels: np.ndarray         # (B, S, T)
    keys: List[str]
    snr_db: List[float]

    @property
    def size(self) -> int:
        return self.mixed.shape[0]

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1).astype(int)


def collate(samples: Sequence[MixtureSample]) -> Batch:
    B = len(samples)
    S = samples[0].num_streams
    if any(s.num_streams != S for s in samples):
        raise ValueError("mixed stream counts within a batch")
    T = max(s.num_frames for s in samples)
    D = samples[0].mixed_features.dim
    mixed = np.zeros((B, T, D))
    mask = np.zeros((B, T))
    targets = np.zeros((B, S, T, D))
    labels = np.zeros((B, S, T), dtype=np.int64)
    for b, s in enumerate(samples):
        n = s.num_frames
        mixed[b, :n] = s.mixed_features.frames
        mask[b, :n] = 1.0
        for k in range(S):
            targets[b, k, :n] = s.source_features[k].frames
            labels[b, k, :n] = s.source_labels[k]
    return Batch(mixed, mask, targets, labels, [s.key for s in samples],
                 [s.snr_db for s in samples])


def collate_single(samples: Sequence[MixtureSample]) -> Batch:
    """Clean single-talker batch: every source stream becomes its own utterance."""
    singles = []
    for s in samples:
        for k in range(s.num_streams):
            singles.append((s.source_features[k].frames, s.source_labels[k], f"{s.key}/{k}", s.snr_db))
    B = len(singles)
    T = max(f.shape[0] for f, *_ in singles)
    D = singles[0][0].shape[1]
    feats = np.zeros((B, T, D))
    mask = np.zeros((B, T))
    labels = np.zeros((B, 1, T), dtype=np.int64)
    for b, (f, lab, _, _) in enumerate(singles):
        feats[b, :f.shape[0]] = f
        mask[b, :f.shape[0]] = 1.0
        labels[b, 0, :lab.size] = lab
    return Batch(feats, mask, feats[:, None], labels, [k for _, _, k, _ in singles],
                 [snr for *_, snr in singles])


def padding_weights(batch: Batch) -> np.ndarray:
    """(B, S, T) weights that drop each reference's leading and trailing silence."""
    B, S, T = batch.labels.shape
    w = np.repeat(batch.mask[:, None, :], S, axis=1)
    for b in range(B):
        n = int(batch.mask[b].sum())
        for k in range(S):
            active = np.flatnonzero(batch.labels[b, k, :n] != SILENCE)
            if active.size == 0:
                continue
            w[b, k, :active[0]] = 0.0
            w[b, k, active[-1] + 1:] = 0.0
    return w


DEFAULT_OBJECTIVE = {A1: "fixed_mse", A2: "pit_mse", A3: "pit_ce", A4: "joint_ce"}
OBJECTIVES = ("fixed_mse", "pit_mse", "pit_ce", "joint_mse", "joint_ce", "single_ce")


def loss(model: PitModel, batch: Batch, objective: Optional[str] = None,
         consistent: bool = True, mask_padding: bool = False,
         output: Optional[ForwardOutput] = None) -> Tuple[Tensor, List[pit.PitResult]]:
    """Summed objective over the batch plus one PitResult per utterance.

    ``objective`` defaults to the architecture's own criterion. ``joint_ce``
    reuses the separation assignment when ``consistent`` is set.
    """
    cfg = model.cfg
    objective = objective or DEFAULT_OBJECTIVE[cfg.arch]
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    if objective == "single_ce":
        logits = recognize_single(model, batch.mixed, batch.mask)
        pair = pit.pairwise_ce([logits], batch.labels, batch.mask)
        return pit.batch_pit(pair, pit.CE)
    S = batch.targets.shape[1]
    if S != cfg.num_streams:
        raise ValueError(f"{S}-talker batch for a {cfg.num_streams}-stream model")
    w = padding_weights(batch) if mask_padding else batch.mask
    needs_sep = objective in ("fixed_mse", "pit_mse", "joint_mse", "joint_ce")
    needs_rec = objective in ("pit_ce", "joint_ce")
    if needs_sep and cfg.arch == A3:
        raise ValueError("A3 has no separation outputs")
    if objective in ("joint_mse", "joint_ce") and cfg.arch != A4:
        raise ValueError("joint objectives need the A4 architecture")
    if objective == "pit_ce" and cfg.arch not in (A3, A4):
        raise ValueError(f"{cfg.arch} does not produce multi-stream logits under PIT-CE")
    if output is None:
        output = forward(model, batch.mixed, batch.mask, recognize=needs_rec)
    identity = [tuple(range(S))] * batch.size
    if needs_sep:
        sep_pair = pit.pairwise_mse(output.separated_features, batch.targets, w)
    if objective == "fixed_mse":
        return pit.batch_pit(sep_pair, pit.MSE, forced=identity)
    if objective in ("pit_mse", "joint_mse"):
        return pit.batch_pit(sep_pair, pit.MSE)
    ce_pair = pit.pairwise_ce(output.stream_logits, batch.labels, w)
    if objective == "joint_ce" and consistent:
        j1 = pit.perm_totals(sep_pair.data, pit.permutations(S))
        perms = pit.permutations(S)
        forced = [perms[k] for k in pit.best_perm_index(j1)]
        return pit.batch_pit(ce_pair, pit.CE, forced=forced)
    return pit.batch_pit(ce_pair, pit.CE)


# --- decoding -----------------------------------------------------------------

def collapse(frame_labels: Sequence[int]) -> List[int]:
    """Merge runs of identical labels and drop silence."""
    out: List[int] = []
    prev = None
    for lab in frame_labels:
        lab = int(lab)
        if lab != prev and lab != SILENCE:
            out.append(lab)
        prev = lab
    return out


def frame_argmax(logits) -> np.ndarray:
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(arr, axis=-1)


def decode_streams(output: ForwardOutput) -> List[List[int]]:
    """Frame-level argmax per stream, then :func:`collapse`."""
    if output.stream_logits is None:
        raise ValueError("forward output carries no stream logits")
    return [collapse(frame_argmax(l)) for l in output.stream_logits]


# --- checkpoints --------------------------------------------------------------

def write_tensors(path, tag: str, layers: int, tensors: Sequence[Tuple[str, np.ndarray]]):
    """Checkpoint layout (little-endian): magic, u32 tag length + tag, u32 layer
    count, u32 tensor count, then per tensor: u32 name length + name, u32 rank,
    rank x u32 shape, f64 data."""
    tag_b = tag.encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(tag_b)), tag_b,
             struct.pack("<II", layers, len(tensors))]
    for name, arr in tensors:
        nb = name.encode()
        arr = np.asarray(arr, dtype="<f8")
        parts += [struct.pack("<I", len(nb)), nb, struct.pack("<I", arr.ndim),
                  struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    Path(path).write_bytes(b"".join(parts))


def read_tensors(path) -> Tuple[str, int, Dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    n = len(CHECKPOINT_MAGIC)
    if buf[:n] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    pos = n
    (tlen,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tag = buf[pos:pos + tlen].decode()
    pos += tlen
    layers, count = struct.unpack_from("<II", buf, pos)
    pos += 8
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + nlen].decode()
        pos += nlen
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(buf, "<f8", size, pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    return tag, layers, tensors


def save_checkpoint(model: PitModel, path):
    write_tensors(path, model.cfg.arch, model.cfg.layers,
                  [(n, t.data) for n, t in model.named_parameters()])


def load_checkpoint(path) -> PitModel:
    """Rebuild a model from a checkpoint; widths are read off the stored shapes."""
    arch, layers, tensors = read_tensors(path)
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture tag {arch!r} in {path}")
    first = "back.l0.fwd.Wx" if arch == A3 else "front.l0.fwd.Wx"
    D, H4 = tensors[first].shape
    if arch == A3:
        S = sum(1 for n in tensors if n.startswith("back.head") and n.endswith(".W"))
        L = tensors["back.head0.W"].shape[1]
    else:
        S = sum(1 for n in tensors if n.startswith("front.head") and n.endswith(".W"))
        L = tensors["back.head.W" if arch == A4 else "rec.head.W"].shape[1]
    cfg = ArchConfig(arch, S, layers, H4 // 4, D, L)
    model = build(cfg, 0)
    model.load_state(tensors)
    return model
