"""Permutation-optimal scoring of multi-stream hypotheses.

Hypothesis streams come out of a model in arbitrary order, so every
utterance is scored under the assignment of hypotheses to references that
minimizes the total edit distance.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import permutations as _permutations
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import models
from .corpus import SILENCE, MixtureSample
from .pit import permutations

REPORT_FIELDS = ("snr_db", "stream_role", "n_utts", "unit_err", "frame_err", "subs", "dels", "ins")
ROLES = ("ref", "other")


@dataclass(frozen=True)
class EditCounts:
    distance: int
    subs: int
    dels: int
    ins: int


def levenshtein(hyp: Sequence[int], ref: Sequence[int]) -> EditCounts:
    """Unit-cost edit distance from ``ref`` to ``hyp`` with an S/D/I split.

    A deletion is a reference unit missing from the hypothesis. When several
    alignments are optimal the backtrace prefers substitution (or match),
    then deletion, then insertion.
    """
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            d[i, j] = min(d[i - 1, j - 1] + cost, d[i - 1, j] + 1, d[i, j - 1] + 1)
    i, j = n, m
    subs = dels = ins = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            if d[i, j] == d[i - 1, j - 1] + cost:
                subs += cost
                i, j = i - 1, j - 1
                continue
        if i > 0 and d[i, j] == d[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(int(d[n, m]), subs, dels, ins)


@dataclass(frozen=True)
class AssignmentScore:
    """``perm[s]`` is the reference scored against hypothesis stream ``s``."""

    perm: Tuple[int, ...]
    total: int
    per_stream: Tuple[EditCounts, ...]

    def __post_init__(self):
        if self.total != sum(e.distance for e in self.per_stream):
            raise ValueError("total must equal the sum of per-stream distances")


def best_assignment_score(hyps: Sequence[Sequence[int]], refs: Sequence[Sequence[int]]
                          ) -> AssignmentScore:
    """Minimum total distance over all S! pairings; the first minimum in
    lexicographic order wins."""
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses for {len(refs)} references")
    S = len(hyps)
    table = [[levenshtein(h, r) for r in refs] for h in hyps]
    best = None
    for perm in permutations(S):
        total = sum(table[s][perm[s]].distance for s in range(S))
        if best is None or total < best[1]:
            best = (perm, total)
    perm, total = best
    return AssignmentScore(perm, total, tuple(table[s][perm[s]] for s in range(S)))


def injections(n_hyp: int, n_ref: int) -> List[Tuple[int, ...]]:
    """Ordered choices of distinct hypothesis streams, one per reference."""
    if n_ref > n_hyp:
        raise ValueError("more references than hypothesis streams")
    return list(_permutations(range(n_hyp), n_ref))


@dataclass(frozen=True)
class InjectionScore:
    """``injection[r]`` is the hypothesis stream scored against reference ``r``."""

    injection: Tuple[int, ...]
    total: int
    per_ref: Tuple[EditCounts, ...]
    surplus: Tuple[int, ...]


def cross_count_score(hyps: Sequence[Sequence[int]], refs: Sequence[Sequence[int]]
                      ) -> InjectionScore:
    """Score the best ``len(refs)``-subset of ``hyps``; the rest are surplus."""
    if len(hyps) <= len(refs):
        raise ValueError(f"cross-count scoring needs more hypotheses ({len(hyps)}) "
                         f"than references ({len(refs)})")
    table = [[levenshtein(h, r) for r in refs] for h in hyps]
    best = None
    for inj in injections(len(hyps), len(refs)):
        total = sum(table[inj[r]][r].distance for r in range(len(refs)))
        if best is None or total < best[1]:
            best = (inj, total)
    inj, total = best
    surplus = tuple(s for s in range(len(hyps)) if s not in inj)
    return InjectionScore(inj, total, tuple(table[inj[r]][r] for r in range(len(refs))), surplus)


def frame_assignment(hyp_frames: np.ndarray, ref_frames: np.ndarray
                     ) -> Tuple[Tuple[int, ...], np.ndarray]:
    """Best mapping of reference streams to hypothesis streams by frame mismatches.

    ``hyp_frames`` is (S_h, T), ``ref_frames`` is (S_r, T) with S_r <= S_h.
    Returns the injection (reference -> hypothesis) and per-reference error counts.
    """
    S_h, S_r = hyp_frames.shape[0], ref_frames.shape[0]
    errs = (hyp_frames[:, None, :] != ref_frames[None, :, :]).sum(axis=2)
    best = None
    for inj in injections(S_h, S_r):
        total = sum(int(errs[inj[r], r]) for r in range(S_r))
        if best is None or total < best[1]:
            best = (inj, total)
    inj = best[0]
    return inj, np.array([errs[inj[r], r] for r in range(S_r)])


@dataclass
class _Cell:
    n_utts: int = 0
    ref_units: int = 0
    subs: int = 0
    dels: int = 0
    ins: int = 0
    frames: int = 0
    frame_errors: int = 0

    def add(self, e: EditCounts, ref_len: int, frame_errors: int, frames: int):
        self.n_utts += 1
        self.ref_units += ref_len
        self.subs += e.subs
        self.dels += e.dels
        self.ins += e.ins
        self.frames += frames
        self.frame_errors += frame_errors

    @property
    def unit_err(self) -> float:
        errors = self.subs + self.dels + self.ins
        if self.ref_units == 0:
            return 0.0 if errors == 0 else float("inf")
        return errors / self.ref_units

    @property
    def frame_err(self) -> float:
        return self.frame_errors / self.frames if self.frames else 0.0


@dataclass
class ScoreReport:
    """Error rates by SNR bucket and stream role.

    The ``ref`` role is the stream the mixture SNR is defined against (the
    first source); every other stream is ``other``. Rows with ``snr_db`` equal
    to ``all`` pool every bucket.
    """

    cells: Dict[Tuple[str, str], _Cell] = field(default_factory=dict)
    utterances: int = 0
    surplus_lengths: List[int] = field(default_factory=list)

    def _cell(self, snr: str, role: str) -> _Cell:
        return self.cells.setdefault((snr, role), _Cell())

    def add(self, snr_db: float, ref_index: int, e: EditCounts, ref_len: int,
            frame_errors: int, frames: int):
        role = ROLES[0] if ref_index == 0 else ROLES[1]
        for snr in (f"{snr_db:g}", "all"):
            self._cell(snr, role).add(e, ref_len, frame_errors, frames)

    def rows(self) -> List[Dict[str, object]]:
        def order(key):
            snr, role = key
            return (snr == "all", float(snr) if snr != "all" else 0.0, ROLES.index(role))
        out = []
        for key in sorted(self.cells, key=order):
            c = self.cells[key]
            out.append({"snr_db": key[0], "stream_role": key[1], "n_utts": c.n_utts,
                        "unit_err": c.unit_err, "frame_err": c.frame_err,
                        "subs": c.subs, "dels": c.dels, "ins": c.ins})
        return out

    def overall(self, metric: str = "frame_err") -> float:
        """Pooled rate over every bucket and role."""
        pooled = _Cell()
        for (snr, _), c in self.cells.items():
            if snr != "all":
                continue
            pooled.ref_units += c.ref_units
            pooled.subs += c.subs
            pooled.dels += c.dels
            pooled.ins += c.ins
            pooled.frames += c.frames
            pooled.frame_errors += c.frame_errors
        return getattr(pooled, metric)

    @property
    def surplus_mean_length(self) -> Optional[float]:
        return float(np.mean(self.surplus_lengths)) if self.surplus_lengths else None

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
            w.writeheader()
            for row in self.rows():
                row = dict(row)
                row["unit_err"] = f"{row['unit_err']:.6f}"
                row["frame_err"] = f"{row['frame_err']:.6f}"
                w.writerow(row)

    def write_surplus_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("n_utts,surplus_streams,mean_surplus_length\n")
            n = self.utterances
            k = len(self.surplus_lengths) // n if n else 0
            mean = self.surplus_mean_length
            fh.write(f"{n},{k},{'' if mean is None else f'{mean:.6f}'}\n")


# A decoder maps a list of samples to one (S_h, T) frame-label array per sample.
Decoder = Callable[[Sequence[MixtureSample]], List[np.ndarray]]


def model_decoder(model: models.PitModel, batch_size: int = 8) -> Decoder:
    def decode(samples):
        out = []
        for k in range(0, len(samples), batch_size):
            chunk = samples[k:k + batch_size]
            batch = models.collate(chunk)
            fwd = models.forward(model, batch.mixed, batch.mask)
            frames = np.stack([models.frame_argmax(l) for l in fwd.stream_logits], axis=1)
            for b, s in enumerate(chunk):
                out.append(frames[b, :, :s.num_frames])
        return out
    return decode


def oracle_decoder(perm: Optional[Sequence[int]] = None, extra_silent: int = 0) -> Decoder:
    """Feed reference labels through, optionally reordered and with silent streams appended."""
    def decode(samples):
        out = []
        for s in samples:
            labels = np.stack(s.source_labels)
            if perm is not None:
                labels = labels[list(perm)]
            if extra_silent:
                labels = np.concatenate(
                    [labels, np.full((extra_silent, labels.shape[1]), SILENCE)], axis=0)
            out.append(labels)
        return out
    return decode


def _as_decoder(model) -> Decoder:
    return model_decoder(model) if isinstance(model, models.PitModel) else model


def _num_streams(model) -> Optional[int]:
    return model.cfg.num_streams if isinstance(model, models.PitModel) else None


def score_dataset(model, dataset: Sequence[MixtureSample]) -> ScoreReport:
    """Decode every sample and score it under its best assignment.

    ``model`` is a :class:`PitModel` or a decoder callable. Frame errors use
    their own best assignment, found separately from the unit-level one.
    """
    dataset = list(dataset)
    S_model = _num_streams(model)
    for s in dataset:
        if S_model is not None and s.num_streams != S_model:
            raise ValueError(f"{S_model}-stream model on a {s.num_streams}-talker sample "
                             f"{s.key}; use cross_count_eval")
    report = ScoreReport()
    frames_all = _as_decoder(model)(dataset)
    for s, frames in zip(dataset, frames_all):
        if frames.shape[0] != s.num_streams:
            raise ValueError(f"decoder produced {frames.shape[0]} streams for {s.key}")
        refs = [models.collapse(l) for l in s.source_labels]
        hyps = [models.collapse(f) for f in frames]
        score = best_assignment_score(hyps, refs)
        _, ferr = frame_assignment(frames, np.stack(s.source_labels))
        per_ref = {score.perm[h]: score.per_stream[h] for h in range(len(hyps))}
        for r in range(len(refs)):
            report.add(s.snr_db, r, per_ref[r], len(refs[r]), int(ferr[r]), s.num_frames)
        report.utterances += 1
    return report


def cross_count_eval(model, dataset: Sequence[MixtureSample]) -> ScoreReport:
    """Score a model with more output streams than talkers in each mixture.

    Each utterance is scored under its best injection of references into
    hypothesis streams; the decoded lengths of the unused streams are kept
    in ``surplus_lengths``.
    """
    dataset = list(dataset)
    S_model = _num_streams(model)
    report = ScoreReport()
    frames_all = _as_decoder(model)(dataset)
    for s, frames in zip(dataset, frames_all):
        S_h = frames.shape[0] if S_model is None else S_model
        if S_h <= s.num_streams:
            raise ValueError(f"cross-count evaluation needs more model streams ({S_h}) "
                             f"than talkers ({s.num_streams})")
        refs = [models.collapse(l) for l in s.source_labels]
        hyps = [models.collapse(f) for f in frames]
        score = cross_count_score(hyps, refs)
        _, ferr = frame_assignment(frames, np.stack(s.source_labels))
        for r in range(len(refs)):
            report.add(s.snr_db, r, score.per_ref[r], len(refs[r]), int(ferr[r]), s.num_frames)
        report.surplus_lengths.extend(len(hyps[k]) for k in score.surplus)
        report.utterances += 1
    return report
