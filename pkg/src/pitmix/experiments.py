"""Desk-scale experiments comparing the four architectures.

The symmetric task mixes two talkers at 0 dB, so nothing but the network's
own choice distinguishes the two output streams. Under a fixed target
order that choice is arbitrary per utterance and separation training
stalls; PIT removes the ambiguity.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import corpus, models, scoring
from .config import ToolkitConfig
from .corpus import MixtureSample
from .models import A1, A2, A3, A4, PitModel
from .train import TrainLog, Trainer


@dataclass
class ArchRun:
    arch: str
    model: PitModel
    log: TrainLog
    sep_valid: Optional[float]
    final_valid: float
    frame_err: float
    unit_err: float
    seconds: float


@dataclass
class PathologyResult:
    seed: int
    runs: Dict[str, ArchRun] = field(default_factory=dict)
    data: Dict[str, List[MixtureSample]] = field(default_factory=dict)
    seconds: float = 0.0

    def ratio(self, a: str, b: str, metric: str = "frame_err") -> float:
        return getattr(self.runs[a], metric) / getattr(self.runs[b], metric)

    def summary(self) -> str:
        lines = [f"seed {self.seed}"]
        for arch, r in self.runs.items():
            sep = "" if r.sep_valid is None else f" sep-valid {r.sep_valid:.1f}"
            lines.append(f"  {arch:<15}{sep} frame-err {r.frame_err:.3f} "
                         f"unit-err {r.unit_err:.3f} ({r.seconds:.0f}s)")
        return "\n".join(lines)


def load_or_generate(cfg: ToolkitConfig, seed: int, data_dir) -> Dict[str, List[MixtureSample]]:
    splits = corpus.generate_splits(cfg.corpus, cfg.features, seed, Path(data_dir))
    return {k: v[1] for k, v in splits.items()}


def train_arch(cfg: ToolkitConfig, arch: str, seed: int, data: Dict[str, List[MixtureSample]],
               out_dir=None) -> ArchRun:
    """Train one architecture from scratch and score it on the test split."""
    t0 = time.perf_counter()
    model = models.build(cfg.arch_config(arch), seed=seed)
    tcfg = cfg.with_overrides(run={"seed": seed}).train_config()
    trainer = Trainer(model, data["train"], data["valid"], tcfg, out_dir)
    log = trainer.run()
    sep_phase = {A1: "sep", A2: "sep", A4: "a4-sep"}.get(arch)
    sep_valid = None
    if sep_phase is not None:
        sep_valid = [r.valid_loss for r in log.records if r.phase == sep_phase][-1]
    report = scoring.score_dataset(model, data["test"])
    return ArchRun(arch, model, log, sep_valid, log.records[-1].valid_loss,
                   report.overall("frame_err"), report.overall("unit_err"),
                   time.perf_counter() - t0)


def label_permutation_experiment(cfg: ToolkitConfig, seed: int, data_dir,
                                 archs: Sequence[str] = (A1, A2, A3)) -> PathologyResult:
    t0 = time.perf_counter()
    result = PathologyResult(seed)
    result.data = load_or_generate(cfg, seed, data_dir)
    for arch in archs:
        result.runs[arch] = train_arch(cfg, arch, seed, result.data)
    result.seconds = time.perf_counter() - t0
    return result


@dataclass
class CrossCountResult:
    three_stream: ArchRun
    report: scoring.ScoreReport
    two_stream_frame_err: float
    injection_checks: int

    @property
    def frame_err(self) -> float:
        return self.report.overall("frame_err")

    @property
    def relative_gap(self) -> float:
        return abs(self.frame_err - self.two_stream_frame_err) / self.two_stream_frame_err


def cross_count_experiment(cfg3: ToolkitConfig, seed: int, data_dir,
                           two_talker_test: Sequence[MixtureSample], two_stream_model: PitModel
                           ) -> CrossCountResult:
    """Train a 3-stream A3 model on 3-talker mixtures and score it on 2-talker ones."""
    data = load_or_generate(cfg3, seed, data_dir)
    run = train_arch(cfg3, A3, seed, data)
    report = scoring.cross_count_eval(run.model, two_talker_test)
    two = scoring.score_dataset(two_stream_model, two_talker_test).overall("frame_err")
    return CrossCountResult(run, report, two, len(two_talker_test))
