"""Training loops, including the three-phase schedule of the joint architecture.

Gradients are summed over the utterances of a minibatch, clipped, and
applied once per batch. Each epoch's shuffle is derived from ``(seed,
epoch)`` so a resumed run replays the same batches as an uninterrupted one.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import models
from .corpus import MixtureSample
from .layers import sgd_step
from .models import A1, A2, A3, A4, PitModel
from .tensor import NonFiniteError, Tape

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "phase", "train_loss", "valid_loss", "perm_switch_rate", "seconds")


class TrainingError(RuntimeError):
    """Raised when a loss or gradient goes non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    minibatch_utts: int = 8
    lr: float = 1e-2
    clip: float = 0.1
    clip_mode: str = "element"
    momentum: float = 0.9
    max_epochs: int = 20
    seed: int = 0
    plateau_halving: bool = True
    recognizer_epochs: Optional[int] = None
    a4_phase_epochs: Tuple[int, int, int] = (10, 10, 5)
    a4_joint_lr_scale: float = 0.1
    joint_consistent: bool = True
    mask_padding: bool = False

    def __post_init__(self):
        if self.minibatch_utts < 1:
            raise ValueError("minibatch_utts must be >= 1")
        if self.lr < 0 or self.clip <= 0:
            raise ValueError("need lr >= 0 and clip > 0")
        if not 0 < self.a4_joint_lr_scale <= 1:
            raise ValueError("a4_joint_lr_scale must be in (0, 1]")
        object.__setattr__(self, "a4_phase_epochs", tuple(int(e) for e in self.a4_phase_epochs))


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    train_loss: float
    valid_loss: float
    perm_switch_rate: float
    seconds: float

    def row(self) -> Dict[str, str]:
        return {"epoch": str(self.epoch), "phase": self.phase,
                "train_loss": repr(self.train_loss), "valid_loss": repr(self.valid_loss),
                "perm_switch_rate": repr(self.perm_switch_rate), "seconds": f"{self.seconds:.3f}"}


@dataclass
class TrainLog:
    records: List[EpochRecord] = field(default_factory=list)

    def append(self, rec: EpochRecord):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def losses(self) -> List[Tuple[int, str, float, float, float]]:
        """Everything except wall time, for reproducibility comparisons."""
        return [(r.epoch, r.phase, r.train_loss, r.valid_loss, r.perm_switch_rate)
                for r in self.records]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
            w.writeheader()
            for r in self.records:
                w.writerow(r.row())

    @classmethod
    def read_csv(cls, path) -> "TrainLog":
        out = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                out.append(EpochRecord(int(row["epoch"]), row["phase"], float(row["train_loss"]),
                                       float(row["valid_loss"]), float(row["perm_switch_rate"]),
                                       float(row["seconds"])))
        return out


@dataclass
class Phase:
    name: str
    objective: str
    groups: Tuple[str, ...]
    epochs: int
    lr_scale: float = 1.0


def schedule(arch: str, cfg: TrainConfig) -> List[Phase]:
    rec_epochs = cfg.max_epochs if cfg.recognizer_epochs is None else cfg.recognizer_epochs
    if arch == A1:
        return [Phase("sep", "fixed_mse", ("front",), cfg.max_epochs),
                Phase("rec", "single_ce", ("recognizer",), rec_epochs)]
    if arch == A2:
        return [Phase("sep", "pit_mse", ("front",), cfg.max_epochs),
                Phase("rec", "single_ce", ("recognizer",), rec_epochs)]
    if arch == A3:
        return [Phase("ce", "pit_ce", ("back",), cfg.max_epochs)]
    e1, e2, e3 = cfg.a4_phase_epochs
    return [Phase("a4-sep", "joint_mse", ("front",), e1),
            Phase("a4-rec", "joint_ce", ("back",), e2),
            Phase("a4-joint", "joint_ce", ("front", "back"), e3, cfg.a4_joint_lr_scale)]


def _batches(n: int, size: int, order: np.ndarray) -> List[np.ndarray]:
    return [order[k:k + size] for k in range(0, n, size)]


def _collate(samples, objective):
    return models.collate_single(samples) if objective == "single_ce" else models.collate(samples)


def _unit_count(objective: str, samples: Sequence[MixtureSample]) -> int:
    return sum(s.num_streams for s in samples) if objective == "single_ce" else len(samples)


@dataclass
class EvalResult:
    mean_loss: float
    perm_histogram: Counter
    perms: Dict[str, Tuple[int, ...]]
    losses: Dict[str, float]


def evaluate(model: PitModel, dataset: Sequence[MixtureSample], objective: Optional[str] = None,
             cfg: Optional[TrainConfig] = None) -> EvalResult:
    """Mean per-utterance objective with no parameter mutation."""
    cfg = cfg or TrainConfig()
    objective = objective or models.DEFAULT_OBJECTIVE[model.cfg.arch]
    hist: Counter = Counter()
    perms: Dict[str, Tuple[int, ...]] = {}
    losses: Dict[str, float] = {}
    order = np.arange(len(dataset))
    for idx in _batches(len(dataset), cfg.minibatch_utts, order):
        batch = _collate([dataset[i] for i in idx], objective)
        _, results = models.loss(model, batch, objective, cfg.joint_consistent, cfg.mask_padding)
        for key, r in zip(batch.keys, results):
            hist[r.best.perm] += 1
            perms[key] = r.best.perm
            losses[key] = r.best.loss
    mean = float(np.mean(list(losses.values()))) if losses else float("nan")
    return EvalResult(mean, hist, perms, losses)


@dataclass
class TrainerState:
    """Everything beyond the parameters that a resumed run needs."""

    phase_index: int = 0
    phase_epoch: int = 0
    global_epoch: int = 0
    lr: Optional[float] = None
    best_valid: Optional[float] = None
    last_perms: Dict[str, List[int]] = field(default_factory=dict)
    velocity: Dict[str, List] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainerState":
        return cls(**json.loads(text))


def train_epoch(model: PitModel, dataset: Sequence[MixtureSample], cfg: TrainConfig,
                epoch: int = 0, objective: Optional[str] = None,
                groups: Optional[Sequence[str]] = None, lr: Optional[float] = None,
                velocity: Optional[Dict[str, np.ndarray]] = None,
                last_perms: Optional[Dict[str, Tuple[int, ...]]] = None
                ) -> Tuple[float, float, Dict[str, Tuple[int, ...]]]:
    """One pass over ``dataset``. Returns (mean train loss, perm switch rate, chosen perms).

    The reported loss of each utterance is taken from the forward pass that
    precedes its batch's update.
    """
    if not dataset:
        raise ValueError("empty dataset")
    objective = objective or models.DEFAULT_OBJECTIVE[model.cfg.arch]
    lr = cfg.lr if lr is None else lr
    velocity = {} if velocity is None else velocity
    params = model.group(*groups) if groups else model.parameters()
    param_ids = {id(p) for p in params}
    others = [p for p in model.parameters() if id(p) not in param_ids]
    rng = np.random.default_rng([cfg.seed, epoch])
    order = rng.permutation(len(dataset))
    total = 0.0
    count = 0
    perms: Dict[str, Tuple[int, ...]] = {}
    for idx in _batches(len(dataset), cfg.minibatch_utts, order):
        batch = _collate([dataset[i] for i in idx], objective)
        model.zero_grad()
        # frozen parameters must not collect gradient work
        for p in others:
            p.requires_grad = False
        try:
            with Tape() as tape:
                loss, results = models.loss(model, batch, objective, cfg.joint_consistent,
                                            cfg.mask_padding)
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite loss at epoch {epoch} on {batch.keys}")
            tape.backward(loss)
            sgd_step(params, [p.grad for p in params], lr, cfg.clip, cfg.clip_mode,
                     cfg.momentum, velocity)
        except NonFiniteError as exc:
            raise TrainingError(f"epoch {epoch}, batch {batch.keys}: {exc}") from exc
        finally:
            for p in others:
                p.requires_grad = True
        for key, r in zip(batch.keys, results):
            perms[key] = r.best.perm
            total += r.best.loss
            count += 1
    switched = 0
    compared = 0
    if last_perms:
        for key, p in perms.items():
            if key in last_perms:
                compared += 1
                switched += tuple(last_perms[key]) != tuple(p)
    rate = switched / compared if compared else 0.0
    return total / count, rate, perms


class Trainer:
    """Runs an architecture's phase schedule with per-epoch checkpoints.

    ``out_dir`` (optional) receives ``train_log.csv``, ``epochNNN.pitnn`` and
    ``state.json`` after every epoch; :meth:`resume` continues from them.
    """

    def __init__(self, model: PitModel, train_set: Sequence[MixtureSample],
                 valid_set: Sequence[MixtureSample], cfg: TrainConfig,
                 out_dir=None, phases: Optional[List[Phase]] = None):
        self.model = model
        self.train_set = list(train_set)
        self.valid_set = list(valid_set)
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.phases = phases if phases is not None else schedule(model.cfg.arch, cfg)
        self.state = TrainerState()
        self.log = TrainLog()
        self.velocity: Dict[str, np.ndarray] = {}
        S = model.cfg.num_streams
        for s in self.train_set:
            if s.num_streams != S:
                raise ValueError(f"{s.num_streams}-talker sample for a {S}-stream model")

    def resume(self) -> bool:
        """Load the latest checkpoint in ``out_dir``; False if there is none."""
        if self.out_dir is None or not (self.out_dir / "state.json").exists():
            return False
        self.state = TrainerState.from_json((self.out_dir / "state.json").read_text())
        ckpt = self.out_dir / f"epoch{self.state.global_epoch:03d}.pitnn"
        _, _, tensors = models.read_tensors(ckpt)
        self.model.load_state(tensors)
        self.velocity = {k: np.asarray(v, dtype=np.float64) for k, v in self.state.velocity.items()}
        self.log = TrainLog.read_csv(self.out_dir / "train_log.csv")
        return True

    def _save(self):
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        models.save_checkpoint(self.model, self.out_dir / f"epoch{self.state.global_epoch:03d}.pitnn")
        self.state.velocity = {k: v.tolist() for k, v in self.velocity.items()}
        self.log.write_csv(self.out_dir / "train_log.csv")
        (self.out_dir / "state.json").write_text(self.state.to_json())

    def run(self, max_total_epochs: Optional[int] = None) -> TrainLog:
        """Train until the schedule is done (or ``max_total_epochs`` more epochs ran)."""
        ran = 0
        while self.state.phase_index < len(self.phases):
            phase = self.phases[self.state.phase_index]
            if self.state.phase_epoch >= phase.epochs:
                self.state.phase_index += 1
                self.state.phase_epoch = 0
                self.state.lr = None
                self.state.best_valid = None
                self.state.last_perms = {}
                self.velocity = {}
                continue
            if max_total_epochs is not None and ran >= max_total_epochs:
                break
            self._run_epoch(phase)
            ran += 1
        return self.log

    def _run_epoch(self, phase: Phase):
        st = self.state
        if st.lr is None:
            st.lr = self.cfg.lr * phase.lr_scale
        t0 = time.perf_counter()
        epoch = st.global_epoch + 1
        train_loss, rate, perms = train_epoch(
            self.model, self.train_set, self.cfg, epoch, phase.objective, phase.groups,
            st.lr, self.velocity, st.last_perms)
        valid = evaluate(self.model, self.valid_set, phase.objective, self.cfg).mean_loss \
            if self.valid_set else float("nan")
        rec = EpochRecord(epoch, phase.name, train_loss, valid, rate, time.perf_counter() - t0)
        self.log.append(rec)
        log.info("epoch %d [%s] train %.4f valid %.4f switch %.3f lr %.3g", epoch, phase.name,
                 train_loss, valid, rate, st.lr)
        if self.cfg.plateau_halving and self.valid_set:
            if st.best_valid is not None and not valid < st.best_valid:
                st.lr *= 0.5
            else:
                st.best_valid = valid
        st.last_perms = {k: list(p) for k, p in perms.items()}
        st.global_epoch = epoch
        st.phase_epoch += 1
        self._save()


def train(model: PitModel, train_set, valid_set, cfg: TrainConfig, out_dir=None,
          resume: bool = False) -> TrainLog:
    trainer = Trainer(model, train_set, valid_set, cfg, out_dir)
    if resume:
        trainer.resume()
    return trainer.run()


def train_arch4(model: PitModel, train_set, valid_set, cfg: TrainConfig, out_dir=None) -> TrainLog:
    """Separation under J1, then the back end under J2 with the front end frozen,
    then everything under J2 at ``lr * a4_joint_lr_scale``."""
    if model.cfg.arch != A4:
        raise ValueError("train_arch4 needs an A4 model")
    return train(model, train_set, valid_set, cfg, out_dir)
