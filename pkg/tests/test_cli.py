import csv
import json
import time

import pytest

from pitmix import cli, models, scoring
from pitmix.train import TrainLog

SMALL = """
[corpus]
num_mixtures = 40
num_test_mixtures = 10
[train]
max_epochs = 2
[run]
seed = 3
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "c.ini").write_text(SMALL)
    assert cli.main(["gen-data", "--config", str(root / "c.ini"), "--out", str(root / "data")]) == 0
    return root


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_gen_data_minimal_config_is_fast_and_reproducible(tmp_path, capsys):
    (tmp_path / "c.ini").write_text("[corpus]\nnum_speakers = 20\nnum_mixtures = 100\n")
    t0 = time.perf_counter()
    assert cli.main(["gen-data", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path / "a")]) == 0
    assert time.perf_counter() - t0 < 60
    assert cli.main(["gen-data", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path / "b")]) == 0
    out = capsys.readouterr().out
    assert "overlap min" in out
    for split in ("train", "valid", "test"):
        a = (tmp_path / "a" / f"{split}.manifest").read_text()
        assert a == (tmp_path / "b" / f"{split}.manifest").read_text()


def test_three_talker_test_set_reports_zero_db(tmp_path, capsys):
    (tmp_path / "c.ini").write_text(
        "[corpus]\nnum_streams = 3\nnum_mixtures = 10\nnum_test_mixtures = 4\n")
    assert cli.main(["gen-data", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path / "d")]) == 0
    test_line = [l for l in capsys.readouterr().out.splitlines() if l.startswith("test:")][0]
    assert "(0 dB: 4)" in test_line


def test_train_eval_and_resume(workspace, capsys):
    cfg, data = str(workspace / "c.ini"), str(workspace / "data")
    assert cli.main(["train", "--config", cfg, "--data", data, "--out", str(workspace / "r1")]) == 0
    assert cli.main(["train", "--config", cfg, "--data", data, "--out", str(workspace / "r2"),
                     "--max-new-epochs", "1"]) == 0
    assert cli.main(["train", "--config", cfg, "--data", data, "--out", str(workspace / "r2"),
                     "--resume"]) == 0
    a = TrainLog.read_csv(workspace / "r1" / "train_log.csv")
    b = TrainLog.read_csv(workspace / "r2" / "train_log.csv")
    assert a.losses() == b.losses() and len(a) == 2
    assert (workspace / "r1" / "final.pitnn").read_bytes() == \
        (workspace / "r2" / "final.pitnn").read_bytes()
    header = (workspace / "r1" / "train_log.csv").read_text().splitlines()[0]
    assert header == "epoch,phase,train_loss,valid_loss,perm_switch_rate,seconds"

    out = workspace / "report.csv"
    assert cli.main(["eval", "--checkpoint", str(workspace / "r1" / "final.pitnn"),
                     "--manifest", str(workspace / "data" / "test.manifest"),
                     "--out", str(out)]) == 0
    rows = _rows(out)
    assert tuple(rows[0]) == scoring.REPORT_FIELDS
    assert {r["stream_role"] for r in rows} == {"ref", "other"}


def test_eval_oracle_all_zero(workspace):
    out = workspace / "oracle.csv"
    assert cli.main(["eval", "--oracle", "--manifest", str(workspace / "data" / "test.manifest"),
                     "--out", str(out)]) == 0
    for r in _rows(out):
        assert float(r["unit_err"]) == 0 and float(r["frame_err"]) == 0


def test_eval_cross_count_emits_surplus(workspace, tmp_path, capsys):
    ckpt = tmp_path / "three.pitnn"
    models.save_checkpoint(models.build(models.ArchConfig.preset("desk", models.A3, num_streams=3)),
                           ckpt)
    manifest = str(workspace / "data" / "test.manifest")
    assert cli.main(["eval", "--checkpoint", str(ckpt), "--manifest", manifest,
                     "--out", str(tmp_path / "x.csv")]) == 1
    assert cli.main(["eval", "--checkpoint", str(ckpt), "--manifest", manifest, "--cross-count",
                     "--out", str(tmp_path / "x.csv")]) == 0
    assert "surplus" in capsys.readouterr().out
    assert (tmp_path / "x.surplus.csv").read_text().startswith("n_utts,surplus_streams")


def test_stream_mismatch_is_usage_error(workspace, tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[corpus]\nnum_streams = 3\n")
    assert cli.main(["train", "--config", str(bad), "--data", str(workspace / "data"),
                     "--out", str(tmp_path / "o")]) == 1


def test_bad_config_and_usage(tmp_path):
    (tmp_path / "bad.ini").write_text("[corpus]\nunknown = 1\n")
    assert cli.main(["gen-data", "--config", str(tmp_path / "bad.ini"), "--out", str(tmp_path)]) == 1
    assert cli.main(["nonsense"]) == 1
    assert cli.main(["eval", "--manifest", str(tmp_path / "missing"), "--out", "x"]) == 1


def test_gradcheck_exit_codes(capsys):
    assert cli.main(["gradcheck", "--ops", "linear", "pit_mse", "--configs", "2"]) == 0
    table = capsys.readouterr().out
    assert "pit_mse" in table and "PASS" in table
    assert cli.main(["gradcheck", "--ops", "linear", "--corrupt", "linear"]) == 3
    assert "FAIL" in capsys.readouterr().out


def test_gradcheck_same_seed_same_table(capsys):
    cli.main(["gradcheck", "--ops", "cmvn", "--seed", "4"])
    a = capsys.readouterr().out
    cli.main(["gradcheck", "--ops", "cmvn", "--seed", "4"])
    assert capsys.readouterr().out == a


def test_inspect(workspace, capsys):
    assert cli.main(["inspect", "--manifest", str(workspace / "data" / "valid.manifest"),
                     "--index", "1"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["num_streams"] == 2 and len(info["labels"]) == 2
    assert cli.main(["inspect", "--manifest", str(workspace / "data" / "valid.manifest"),
                     "--index", "999"]) == 1


def test_seed_env_override(tmp_path, monkeypatch, capsys):
    (tmp_path / "c.ini").write_text("[corpus]\nnum_mixtures = 10\nnum_test_mixtures = 2\n")
    monkeypatch.setenv("PITMIX_SEED", "17")
    cli.main(["gen-data", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path / "a")])
    monkeypatch.delenv("PITMIX_SEED")
    cli.main(["gen-data", "--config", str(tmp_path / "c.ini"), "--out", str(tmp_path / "b"),
              "--seed", "17"])
    assert (tmp_path / "a" / "train.manifest").read_text() == \
        (tmp_path / "b" / "train.manifest").read_text()
