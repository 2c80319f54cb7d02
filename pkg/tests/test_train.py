import numpy as np
import pytest

from pitmix import corpus, models, train
from pitmix.corpus import CorpusConfig
from pitmix.features import FeatureConfig
from pitmix.models import A1, A3, A4, ArchConfig
from pitmix.train import TrainConfig, Trainer, TrainingError


@pytest.fixture(scope="module")
def splits(tmp_path_factory):
    cfg = CorpusConfig(num_mixtures=40, num_test_mixtures=8)
    out = corpus.generate_splits(cfg, FeatureConfig(), 2, tmp_path_factory.mktemp("d"))
    return {k: v[1] for k, v in out.items()}


def desk(arch, seed=0, **kw):
    return models.build(ArchConfig.preset("desk", arch, **kw), seed=seed)


def snapshot(model, group=None):
    names = {id(t) for t in model.group(group)} if group else None
    return {n: t.data.copy() for n, t in model.named_parameters()
            if names is None or id(t) in names}


def same(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(minibatch_utts=0), dict(lr=-1.0), dict(clip=0.0),
                                    dict(a4_joint_lr_scale=1.5)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestTrainEpoch:
    def test_lr_zero_is_noop_and_matches_evaluate(self, splits):
        m = desk(A3)
        before = snapshot(m)
        cfg = TrainConfig(lr=0.0)
        loss, _, _ = train.train_epoch(m, splits["train"], cfg)
        assert same(before, snapshot(m))
        assert loss == pytest.approx(train.evaluate(m, splits["train"]).mean_loss, rel=1e-12)

    def test_deterministic(self, splits):
        runs = []
        for _ in range(2):
            m = desk(A3, seed=1)
            runs.append((train.train_epoch(m, splits["train"], TrainConfig(seed=4), epoch=1),
                         snapshot(m)))
        assert runs[0][0] == runs[1][0] and same(runs[0][1], runs[1][1])

    def test_shuffle_depends_on_epoch(self, splits):
        a, b = desk(A3), desk(A3)
        train.train_epoch(a, splits["train"], TrainConfig(), epoch=1)
        train.train_epoch(b, splits["train"], TrainConfig(), epoch=2)
        assert not same(snapshot(a), snapshot(b))

    def test_overfit_single_utterance(self, splits):
        m = desk(A3)
        one = splits["train"][:1]
        cfg = TrainConfig(minibatch_utts=1)
        velocity = {}
        first, _, _ = train.train_epoch(m, one, cfg, epoch=0, velocity=velocity)
        for epoch in range(1, 200):
            last, _, _ = train.train_epoch(m, one, cfg, epoch=epoch, velocity=velocity)
        assert last < 0.1 * first

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train.train_epoch(desk(A3), [], TrainConfig())

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_aborts(self, splits):
        m = desk(A3)
        m.logit_heads[0].W.data[0, 0] = np.nan
        with pytest.raises(TrainingError):
            train.train_epoch(m, splits["train"][:2], TrainConfig())

    def test_switch_rate(self, splits):
        m = desk(A3)
        _, rate0, perms = train.train_epoch(m, splits["train"], TrainConfig(lr=0.0))
        assert rate0 == 0.0
        flipped = {k: tuple(reversed(p)) for k, p in perms.items()}
        _, rate, _ = train.train_epoch(m, splits["train"], TrainConfig(lr=0.0), last_perms=flipped)
        assert rate == 1.0


class TestEvaluate:
    def test_pure_and_repeatable(self, splits):
        m = desk(A3)
        before = snapshot(m)
        a = train.evaluate(m, splits["valid"])
        b = train.evaluate(m, splits["valid"])
        assert a.losses == b.losses and a.perm_histogram == b.perm_histogram
        assert same(before, snapshot(m))

    def test_histogram_non_degenerate_on_symmetric_pairs(self, tmp_path):
        cfg = CorpusConfig(num_mixtures=40, snr_grid=(0.0,))
        _, samples = corpus.generate_dataset(cfg, FeatureConfig(), 6, tmp_path)
        hist = train.evaluate(desk(A3, seed=2), samples).perm_histogram
        assert hist[(0, 1)] > 0 and hist[(1, 0)] > 0


class TestSchedules:
    def test_a1_separation_then_recognizer(self, splits):
        m = desk(A1)
        cfg = TrainConfig(max_epochs=1)
        init_rec = snapshot(m, "recognizer")
        trainer = Trainer(m, splits["train"], splits["valid"], cfg)
        trainer.run(max_total_epochs=1)
        assert same(init_rec, snapshot(m, "recognizer"))
        trainer.run()
        assert [r.phase for r in trainer.log.records] == ["sep", "rec"]

    def test_a4_freeze_contracts(self, splits):
        m = desk(A4)
        cfg = TrainConfig(a4_phase_epochs=(2, 2, 1))
        init_back = snapshot(m, "back")
        trainer = Trainer(m, splits["train"], splits["valid"], cfg)
        trainer.run(max_total_epochs=2)
        assert same(init_back, snapshot(m, "back"))
        front_after_1 = snapshot(m, "front")
        trainer.run(max_total_epochs=2)
        assert same(front_after_1, snapshot(m, "front"))
        assert not same(init_back, snapshot(m, "back"))
        trainer.run()
        assert not same(front_after_1, snapshot(m, "front"))
        assert [r.phase for r in trainer.log.records] == ["a4-sep"] * 2 + ["a4-rec"] * 2 + ["a4-joint"]

    def test_a4_joint_lr_scaled(self):
        phases = train.schedule(A4, TrainConfig(a4_joint_lr_scale=0.1))
        assert [p.groups for p in phases] == [("front",), ("back",), ("front", "back")]
        assert phases[2].lr_scale == 0.1 and phases[2].objective == "joint_ce"

    def test_train_arch4_requires_a4(self, splits):
        with pytest.raises(ValueError):
            train.train_arch4(desk(A3), splits["train"], [], TrainConfig())

    def test_stream_mismatch(self, splits):
        with pytest.raises(ValueError):
            Trainer(desk(A3, num_streams=3), splits["train"], [], TrainConfig())


class TestResume:
    def test_resume_reproduces_log_and_checkpoint(self, splits, tmp_path):
        cfg = TrainConfig(max_epochs=3, a4_phase_epochs=(1, 1, 1))
        full = Trainer(desk(A4), splits["train"], splits["valid"], cfg, tmp_path / "a")
        full.run()
        part = Trainer(desk(A4), splits["train"], splits["valid"], cfg, tmp_path / "b")
        part.run(max_total_epochs=2)
        resumed = Trainer(desk(A4, seed=99), splits["train"], splits["valid"], cfg, tmp_path / "b")
        assert resumed.resume()
        resumed.run()
        assert full.log.losses() == resumed.log.losses()
        assert (tmp_path / "a" / "epoch003.pitnn").read_bytes() == \
            (tmp_path / "b" / "epoch003.pitnn").read_bytes()

    def test_resume_without_state(self, splits, tmp_path):
        assert not Trainer(desk(A3), splits["train"], [], TrainConfig(), tmp_path).resume()

    def test_log_csv_round_trip(self, splits, tmp_path):
        t = Trainer(desk(A3), splits["train"], splits["valid"], TrainConfig(max_epochs=1), tmp_path)
        t.run()
        back = train.TrainLog.read_csv(tmp_path / "train_log.csv")
        assert back.losses() == t.log.losses()
        assert all(np.isfinite(r.train_loss) and np.isfinite(r.valid_loss) for r in back.records)
