"""Permutation invariant training for multi-talker recognition on synthetic mixtures."""

from .corpus import CorpusConfig, MixtureSample, generate_dataset, generate_splits
from .features import FeatureConfig, FeatureSequence, MixSpec, Waveform, logfbank, mix_at_snr
from .models import A1, A2, A3, A4, ARCHS, ArchConfig, PitModel, build
from .pit import fixed_ce, fixed_mse, joint_objectives, pit_ce, pit_mse
from .scoring import ScoreReport, best_assignment_score, levenshtein, score_dataset
from .train import TrainConfig, Trainer

__version__ = "0.1.0"
