"""Command-line entry point: ``pitmix <subcommand>``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure,
3 check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import corpus, gradcheck, models, scoring
from .config import ConfigError, ToolkitConfig, load_config
from .train import Trainer, TrainingError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("pitmix")


class UsageError(Exception):
    pass


def _config(args) -> ToolkitConfig:
    cfg = load_config(getattr(args, "config", None))
    run = {}
    if getattr(args, "seed", None) is not None:
        run["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        run["jobs"] = args.jobs
    return cfg.with_overrides(run=run) if run else cfg


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {out}: {exc}") from exc
    splits = corpus.generate_splits(cfg.corpus, cfg.features, cfg.seed, out)
    (out / "config.ini").write_text(cfg.to_ini())
    for split, (manifest, samples) in splits.items():
        summary = corpus.dataset_summary(samples)
        per_snr = ", ".join(f"{k:g} dB: {v}" for k, v in summary["per_snr"].items())
        print(f"{split}: {summary['num_samples']} mixtures ({per_snr}); overlap min "
              f"{summary['min_overlap']:.3f} mean {summary['mean_overlap']:.3f}; "
              f"mean frames {summary['mean_frames']:.1f}")
    print(f"fingerprint {splits['train'][0].fingerprint}")
    return EXIT_OK


def _load_split(data_dir: Path, split: str) -> List[corpus.MixtureSample]:
    path = data_dir / f"{split}.manifest"
    if not path.exists():
        raise UsageError(f"missing manifest {path}")
    return corpus.DatasetManifest.read(path).load()


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.epochs is not None:
        cfg = cfg.with_overrides(train={"max_epochs": args.epochs})
    arch_cfg = cfg.arch_config(args.arch)
    data = Path(args.data)
    train_set = _load_split(data, "train")
    valid_set = _load_split(data, "valid") if (data / "valid.manifest").exists() else []
    S = {s.num_streams for s in train_set}
    if S != {arch_cfg.num_streams}:
        raise UsageError(f"data has {sorted(S)}-talker mixtures but the config asks for "
                         f"{arch_cfg.num_streams} streams")
    model = models.build(arch_cfg, seed=cfg.seed)
    trainer = Trainer(model, train_set, valid_set, cfg.train_config(), out_dir=args.out)
    if args.resume and trainer.resume():
        print(f"resumed after epoch {trainer.state.global_epoch}")
    trainlog = trainer.run(args.max_new_epochs)
    models.save_checkpoint(model, Path(args.out) / "final.pitnn")
    for r in trainlog.records[-3:]:
        print(f"epoch {r.epoch} [{r.phase}] train {r.train_loss:.4f} valid {r.valid_loss:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    samples = corpus.DatasetManifest.read(args.manifest).load()
    if args.oracle:
        model = scoring.oracle_decoder(extra_silent=1 if args.cross_count else 0)
        S_model = samples[0].num_streams + (1 if args.cross_count else 0) if samples else 0
    else:
        if not args.checkpoint:
            raise UsageError("eval needs --checkpoint or --oracle")
        model = models.load_checkpoint(args.checkpoint)
        S_model = model.cfg.num_streams
    S_data = {s.num_streams for s in samples}
    if args.cross_count:
        if any(S_model <= s for s in S_data):
            raise UsageError(f"--cross-count needs more model streams ({S_model}) than talkers")
        report = scoring.cross_count_eval(model, samples)
    else:
        if S_data != {S_model}:
            raise UsageError(f"{S_model}-stream model on {sorted(S_data)}-talker data; "
                             "pass --cross-count")
        report = scoring.score_dataset(model, samples)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(out)
    print(out.read_text(), end="")
    if args.cross_count:
        side = out.with_suffix(".surplus.csv")
        report.write_surplus_csv(side)
        print(f"mean surplus-stream length {report.surplus_mean_length:.3f} ({side})")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    corrupt = {op: 0.01 for op in args.corrupt or []}
    results = gradcheck.run_suite(args.seed, args.configs, args.ops, corrupt=corrupt)
    print(gradcheck.format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_inspect(args) -> int:
    manifest = corpus.DatasetManifest.read(args.manifest)
    if not 0 <= args.index < len(manifest):
        raise UsageError(f"index {args.index} out of range (manifest has {len(manifest)} records)")
    rec = manifest.records[args.index]
    blob = ((manifest.root or Path(".")) / rec.file).read_bytes()
    s, _ = corpus.decode_record(blob, rec.offset, key=f"{rec.file}:{args.index}")
    info = {
        "key": s.key, "fingerprint": manifest.fingerprint, "num_streams": s.num_streams,
        "num_frames": s.num_frames, "feat_dim": s.mixed_features.dim,
        "snr_db": s.snr_db, "speaker_ids": list(s.speaker_ids),
        "gains": [float(g) for g in s.gains],
        "labels": [models.collapse(l) for l in s.source_labels],
        "frame_labels": [" ".join(str(int(x)) for x in l) for l in s.source_labels],
        "overlap": corpus.overlap_fraction(s.source_labels),
        "mixed_mean": float(np.mean(s.mixed_features.frames)),
    }
    print(json.dumps(info, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pitmix", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI config file (defaults when omitted)")
        sp.add_argument("--seed", type=int, help="overrides run.seed and PITMIX_SEED")
        sp.add_argument("--jobs", type=int, help="worker cap")

    g = sub.add_parser("gen-data", help="generate train/valid/test mixtures")
    common(g)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train one architecture")
    common(t)
    t.add_argument("--data", required=True, help="directory written by gen-data")
    t.add_argument("--out", required=True)
    t.add_argument("--arch", choices=models.ARCHS)
    t.add_argument("--epochs", type=int, help="overrides train.max_epochs")
    t.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    t.add_argument("--max-new-epochs", type=int, help="stop after this many epochs (for testing)")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a manifest")
    e.add_argument("--checkpoint")
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True, help="report CSV path")
    e.add_argument("--cross-count", action="store_true",
                   help="model has more streams than the data has talkers")
    e.add_argument("--oracle", action="store_true", help="score the reference labels themselves")
    e.add_argument("--jobs", type=int, help="worker cap")
    e.set_defaults(fn=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--configs", type=int, default=gradcheck.CONFIGS_PER_OP)
    c.add_argument("--ops", nargs="+", choices=list(gradcheck.CASES))
    c.add_argument("--corrupt", nargs="+", choices=list(gradcheck.CASES),
                   help="perturb these ops' gradients (negative control)")
    c.set_defaults(fn=cmd_gradcheck)

    i = sub.add_parser("inspect", help="print one record of a manifest")
    i.add_argument("--manifest", required=True)
    i.add_argument("--index", type=int, default=0)
    i.set_defaults(fn=cmd_inspect)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.fn(args)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
