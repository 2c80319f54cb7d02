"""Utterance-level permutation invariant objectives.

For S output streams and S references, every candidate assignment is
scored over the whole utterance and the cheapest one drives the update:

    J = (1/S) min_perm sum_s sum_t loss(target[perm[s]]_t, output[s]_t)

``perm[s]`` is the reference index paired with output stream ``s``. Ties go
to the lexicographically smallest permutation. Only the chosen pairing
receives gradient.

The batched core works on a pairwise loss tensor of shape (B, S, S) whose
entry ``[b, s, r]`` is the summed loss between output ``s`` and reference
``r`` of utterance ``b``. Each entry is computed by the same code path
whether it is requested alone (fixed order) or as part of the full matrix,
so fixed-order and permutation-minimum losses are bit-comparable.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .layers import check_labels, log_softmax_array
from .tensor import Tensor, as_tensor, make_op, reshape

MAX_STREAMS = 6

MSE = "MSE"
CE = "CE"

Perm = Tuple[int, ...]


def permutations(S: int) -> List[Perm]:
    """All S! permutations of range(S) in lexicographic order."""
    if not 1 <= S <= MAX_STREAMS:
        raise ValueError(f"number of streams must be in [1, {MAX_STREAMS}], got {S}")
    return list(itertools.permutations(range(S)))


def compose(perm: Sequence[int], pi: Sequence[int]) -> Perm:
    """``result[s] = pi[perm[s]]``."""
    return tuple(pi[p] for p in perm)


def inverse(perm: Sequence[int]) -> Perm:
    inv = [0] * len(perm)
    for s, r in enumerate(perm):
        inv[r] = s
    return tuple(inv)


@dataclass
class Assignment:
    perm: Perm
    loss: float

    def __post_init__(self):
        self.perm = tuple(int(p) for p in self.perm)
        if sorted(self.perm) != list(range(len(self.perm))):
            raise ValueError(f"{self.perm} is not a permutation")
        if not np.isfinite(self.loss):
            raise ValueError("assignment loss must be finite")


@dataclass
class PitResult:
    """Outcome of one utterance-level assignment search.

    ``loss`` is the differentiable scalar for the chosen permutation;
    ``best.loss`` is the same value as a float.
    """

    best: Assignment
    all_losses: List[Tuple[Perm, float]]
    criterion: str
    loss: Optional[Tensor] = field(default=None, repr=False)


# --- pairwise loss tensors --------------------------------------------------

def _pair_weights(weights, B, S, T) -> np.ndarray:
    if weights is None:
        return np.ones((B, S, T))
    w = np.asarray(weights, dtype=np.float64)
    if w.shape == (B, T):
        w = np.repeat(w[:, None, :], S, axis=1)
    if w.shape != (B, S, T):
        raise ValueError(f"weights must be (B, T) or (B, S, T), got {w.shape}")
    return w


def _all_pairs(S):
    return [(s, r) for s in range(S) for r in range(S)]


def pairwise_mse(outputs: Sequence[Tensor], targets: np.ndarray, weights=None,
                 pairs=None) -> Tensor:
    """(B, S, S) tensor of ``sum_t w[b,r,t] * ||targets[b,r,t] - outputs[s][b,t]||^2``.

    ``outputs`` holds S tensors of shape (B, T, D); ``targets`` is (B, S, T, D);
    ``weights`` masks frames per reference. Entries outside ``pairs`` are 0.
    """
    outputs = [as_tensor(o) for o in outputs]
    S = len(outputs)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 4 or targets.shape[1] != S:
        raise ValueError(f"targets must be (B, {S}, T, D), got {targets.shape}")
    B, _, T, D = targets.shape
    for o in outputs:
        if o.shape != (B, T, D):
            raise ValueError(f"output shape {o.shape} does not match targets {(B, T, D)}")
    w = _pair_weights(weights, B, S, T)
    pairs = _all_pairs(S) if pairs is None else list(pairs)
    val = np.zeros((B, S, S))
    diffs = {}
    for s, r in pairs:
        d = outputs[s].data - targets[:, r]
        diffs[s, r] = d
        val[:, s, r] = (w[:, r] * (d * d).sum(axis=-1)).sum(axis=-1)

    def backward(g):
        grads = [np.zeros((B, T, D)) for _ in range(S)]
        for (s, r), d in diffs.items():
            grads[s] += (2.0 * g[:, s, r])[:, None, None] * w[:, r][:, :, None] * d
        return grads

    return make_op(val, outputs, backward, "pairwise_mse")


def pairwise_ce(logits: Sequence[Tensor], labels: np.ndarray, weights=None,
                pairs=None) -> Tensor:
    """(B, S, S) tensor of ``sum_t w[b,r,t] * CE(labels[b,r,t], softmax(logits[s][b,t]))``."""
    logits = [as_tensor(o) for o in logits]
    S = len(logits)
    labels = np.asarray(labels)
    if labels.ndim != 3 or labels.shape[1] != S:
        raise ValueError(f"labels must be (B, {S}, T), got {labels.shape}")
    B, _, T = labels.shape
    L = logits[0].shape[-1]
    labels = check_labels(labels, L)
    for o in logits:
        if o.shape != (B, T, L):
            raise ValueError(f"logit shape {o.shape} does not match labels {(B, T, L)}")
    w = _pair_weights(weights, B, S, T)
    pairs = _all_pairs(S) if pairs is None else list(pairs)
    logps = {}
    val = np.zeros((B, S, S))
    for s, r in pairs:
        if s not in logps:
            logps[s] = log_softmax_array(logits[s].data)
        nll = -np.take_along_axis(logps[s], labels[:, r, :, None], axis=-1)[..., 0]
        val[:, s, r] = (w[:, r] * nll).sum(axis=-1)

    def backward(g):
        grads = [np.zeros((B, T, L)) for _ in range(S)]
        for s, r in pairs:
            coef = g[:, s, r][:, None] * w[:, r]
            grads[s] += coef[:, :, None] * np.exp(logps[s])
            onehot = np.zeros((B, T, L))
            np.put_along_axis(onehot, labels[:, r, :, None], 1.0, axis=-1)
            grads[s] -= coef[:, :, None] * onehot
        return grads

    return make_op(val, logits, backward, "pairwise_ce")


def perm_totals(pair: np.ndarray, perms: Sequence[Perm]) -> np.ndarray:
    """(B, P) array of ``(1/S) sum_s pair[b, s, perm[s]]`` for each candidate perm."""
    S = pair.shape[1]
    P = np.asarray(perms, dtype=np.int64)
    tot = pair[:, 0, P[:, 0]]
    for s in range(1, S):
        tot = tot + pair[:, s, P[:, s]]
    return tot / S


def best_perm_index(totals: np.ndarray) -> np.ndarray:
    """Row-wise argmin; ``np.argmin`` returns the first (lexicographic) minimum."""
    return np.argmin(totals, axis=1)


def select(pair: Tensor, perms: Sequence[Perm]) -> Tensor:
    """Scalar ``sum_b (1/S) sum_s pair[b, s, perms[b][s]]``, differentiable in ``pair``."""
    B, S, _ = pair.shape
    P = np.asarray(perms, dtype=np.int64).reshape(B, S)
    rows = np.arange(B)[:, None]
    cols = np.arange(S)[None, :]
    picked = pair.data[rows, cols, P]
    tot = picked[:, 0]
    for s in range(1, S):
        tot = tot + picked[:, s]
    val = np.sum(tot / S)

    def backward(g):
        d = np.zeros((B, S, S))
        d[rows, cols, P] = float(g) / S
        return (d,)

    return make_op(val, (pair,), backward, "pit_select")


def batch_pit(pair: Tensor, criterion: str, forced: Optional[Sequence[Perm]] = None
              ) -> Tuple[Tensor, List[PitResult]]:
    """Choose an assignment per utterance and return the summed loss plus per-utterance results.

    ``forced`` skips the search and uses the given permutation per utterance
    (``all_losses`` is still fully reported).
    """
    B, S, _ = pair.shape
    perms = permutations(S)
    totals = perm_totals(pair.data, perms)
    if forced is None:
        idx = best_perm_index(totals)
    else:
        lookup = {p: k for k, p in enumerate(perms)}
        idx = np.array([lookup[tuple(p)] for p in forced])
    chosen = [perms[k] for k in idx]
    loss = select(pair, chosen)
    results = []
    for b in range(B):
        results.append(PitResult(
            best=Assignment(chosen[b], float(totals[b, idx[b]])),
            all_losses=[(p, float(totals[b, k])) for k, p in enumerate(perms)],
            criterion=criterion))
    return loss, results


# --- single-utterance API ---------------------------------------------------

def _stack_streams(streams, name):
    streams = [as_tensor(x) for x in streams]
    if not streams:
        raise ValueError(f"no {name} streams")
    shape = streams[0].shape
    for x in streams:
        if x.shape != shape or x.data.ndim != 2:
            raise ValueError(f"{name} streams must all be T x D with equal shapes")
    return streams


def _batched(streams):
    return [reshape(x, (1,) + x.shape) for x in streams]


def _utterance_result(pair: Tensor, criterion: str, forced=None) -> PitResult:
    loss, results = batch_pit(pair, criterion, forced)
    res = results[0]
    res.loss = loss
    return res


def fixed_mse(outputs, targets, weights=None) -> Tensor:
    """Identity-assignment MSE: ``(1/S) sum_s sum_t ||target_s - output_s||^2``."""
    outputs = _stack_streams(outputs, "output")
    tgt = np.stack([np.asarray(t, dtype=np.float64) for t in targets])[None]
    if tgt.shape[1] != len(outputs):
        raise ValueError("outputs and targets differ in stream count")
    S = len(outputs)
    w = None if weights is None else np.asarray(weights, dtype=np.float64)[None]
    pair = pairwise_mse(_batched(outputs), tgt, w, pairs=[(s, s) for s in range(S)])
    return select(pair, [tuple(range(S))])


def pit_mse(outputs, targets, weights=None) -> PitResult:
    """Permutation-invariant MSE over the whole utterance."""
    outputs = _stack_streams(outputs, "output")
    tgt = np.stack([np.asarray(t, dtype=np.float64) for t in targets])[None]
    if tgt.shape[1] != len(outputs):
        raise ValueError("outputs and targets differ in stream count")
    w = None if weights is None else np.asarray(weights, dtype=np.float64)[None]
    return _utterance_result(pairwise_mse(_batched(outputs), tgt, w), MSE)


def fixed_ce(logits, labels, weights=None) -> Tensor:
    logits = _stack_streams(logits, "logit")
    lab = np.stack([np.asarray(l) for l in labels])[None]
    if lab.shape[1] != len(logits):
        raise ValueError("logits and labels differ in stream count")
    S = len(logits)
    w = None if weights is None else np.asarray(weights, dtype=np.float64)[None]
    pair = pairwise_ce(_batched(logits), lab, w, pairs=[(s, s) for s in range(S)])
    return select(pair, [tuple(range(S))])


def pit_ce(logits, labels, weights=None) -> PitResult:
    """Permutation-invariant cross entropy; frames are summed, not averaged."""
    logits = _stack_streams(logits, "logit")
    lab = np.stack([np.asarray(l) for l in labels])[None]
    if lab.shape[1] != len(logits):
        raise ValueError("logits and labels differ in stream count")
    if lab.shape[2] != logits[0].shape[0]:
        raise ValueError("label length differs from the number of frames")
    w = None if weights is None else np.asarray(weights, dtype=np.float64)[None]
    return _utterance_result(pairwise_ce(_batched(logits), lab, w), CE)


def joint_objectives(sep_outputs, sep_targets, rec_logits, rec_labels,
                     consistent: bool = True) -> Tuple[PitResult, PitResult]:
    """Separation PIT-MSE and recognition PIT-CE for the joint architecture.

    With ``consistent=True`` the CE term reuses the permutation chosen by
    the MSE term instead of searching its own.
    """
    S = len(sep_outputs)
    if not (len(sep_targets) == len(rec_logits) == len(rec_labels) == S):
        raise ValueError("inconsistent stream counts across joint objective inputs")
    j1 = pit_mse(sep_outputs, sep_targets)
    if not consistent:
        return j1, pit_ce(rec_logits, rec_labels)
    logits = _stack_streams(rec_logits, "logit")
    lab = np.stack([np.asarray(l) for l in rec_labels])[None]
    if logits[0].shape[0] != np.asarray(sep_targets[0]).shape[0]:
        raise ValueError("separation and recognition streams differ in length")
    j2 = _utterance_result(pairwise_ce(_batched(logits), lab), CE, forced=[j1.best.perm])
    return j1, j2
