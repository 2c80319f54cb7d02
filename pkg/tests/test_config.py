import pytest

from pitmix.config import ConfigError, ToolkitConfig, load_config, parse_config
from pitmix.models import A2, A3


def test_defaults():
    cfg = parse_config("", env={})
    assert cfg == ToolkitConfig()
    assert cfg.arch_config().arch == A3 and cfg.arch_config().feat_dim == cfg.features.n_mels


def test_values_parsed_by_type():
    cfg = parse_config("""
[corpus]
snr_grid = 0, 10
num_streams = 3
[train]
lr = 0.05
joint_consistent = false
a4_phase_epochs = 2, 3, 4
recognizer_epochs = 7
[features]
n_fft = none
[model]
arch = A2_PitSep
layers = 4
""", env={})
    assert cfg.corpus.snr_grid == (0.0, 10.0) and cfg.corpus.num_streams == 3
    assert cfg.train.lr == 0.05 and cfg.train.joint_consistent is False
    assert cfg.train.a4_phase_epochs == (2, 3, 4) and cfg.train.recognizer_epochs == 7
    arch = cfg.arch_config()
    assert arch.arch == A2 and arch.layers == 4 and arch.num_streams == 3


@pytest.mark.parametrize("text", [
    "[corpus]\nnum_speakrs = 3\n",
    "[nonsense]\nx = 1\n",
    "[train]\nlr = fast\n",
    "[train]\nminibatch_utts = 0\n",
    "[model]\narch = A9\n",
    "[model]\narch = A2_PitSep\nlayers = 1\n",
    "[run]\njobs = 0\n",
    "not an ini file",
])
def test_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text, env={})


def test_seed_env_override():
    assert parse_config("[run]\nseed = 4\n", env={"PITMIX_SEED": "9"}).seed == 9
    with pytest.raises(ConfigError):
        parse_config("", env={"PITMIX_SEED": "x"})


def test_ini_round_trip_and_fingerprint(tmp_path):
    cfg = parse_config("[train]\nlr = 0.02\n[corpus]\nsnr_grid = 0\n", env={})
    (tmp_path / "c.ini").write_text(cfg.to_ini())
    back = load_config(tmp_path / "c.ini", env={})
    assert back == cfg and back.fingerprint() == cfg.fingerprint()
    assert cfg.fingerprint() != ToolkitConfig().fingerprint()


def test_overrides():
    cfg = ToolkitConfig().with_overrides(train={"max_epochs": 3})
    assert cfg.train.max_epochs == 3
    with pytest.raises(ConfigError):
        ToolkitConfig().with_overrides(train={"nope": 1})
    assert ToolkitConfig().with_overrides(run={"seed": 5}).train_config().seed == 5


def test_inline_comments():
    cfg = parse_config("[corpus]\nnum_mixtures = 40   # train + valid\n", env={})
    assert cfg.corpus.num_mixtures == 40
