"""Command line entry point: ``vinet <command> ...``.

Progress goes to stderr (verbosity from the VINET_LOG environment variable,
e.g. ``VINET_LOG=debug``); results go only to the paths named on the command
line.

Exit codes: 0 ok, 1 unexpected error, 2 missing input path, 3 bad
configuration, 4 gradient check failure, 5 training diverged, 6 malformed
input file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import evaluation, formats, gradcheck
from .config import SECTIONS, ConfigError, RunConfig, dump_config, fields_of, format_value, load_config
from .model import VINet
from .simulator import augment, generate_trajectory, make_dataset
from .training import TrainingDiverged, train

log = logging.getLogger("vinet")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING = 2
EXIT_CONFIG = 3
EXIT_GRADCHECK = 4
EXIT_DIVERGED = 5
EXIT_FORMAT = 6

SPLITS = ("train", "val", "test")


class MissingPath(Exception):
    pass


def _require(path):
    p = Path(path)
    if not p.exists():
        raise MissingPath(f"path not found: {p}")
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config, args.set or ())
    if args.seed is not None:
        seed = args.seed
        cfg = RunConfig(
            sim=dataclasses.replace(cfg.sim, seed=seed),
            model=cfg.model,
            train=dataclasses.replace(cfg.train, seed=seed),
            data=dataclasses.replace(cfg.data, seed=seed),
            eval=dataclasses.replace(cfg.eval, seed=seed),
        )
    if tuple(cfg.sim.image_size) != tuple(cfg.model.image_size):
        raise ConfigError(f"sim.image_size {cfg.sim.image_size} != model.image_size {cfg.model.image_size}")
    return cfg


def _read_split(root, split):
    d = _require(Path(root) / split)
    seqs = [formats.read_sequence(p) for p in sorted(d.iterdir()) if p.is_dir()]
    log.info("read %d %s sequences from %s", len(seqs), split, d)
    return seqs


def _load_model(path):
    ckpt = formats.load_checkpoint(_require(path))
    return VINet(ckpt.config, params=ckpt.params)


# ---------------------------------------------------------------------------
# Commands.


def cmd_generate(args):
    cfg = _config(args)
    n = cfg.data.n_sequences
    seqs = []
    for i in range(n):
        spec = dataclasses.replace(cfg.sim, seed=cfg.sim.seed + i)
        seqs.append(generate_trajectory(spec, name=f"seq_{i:03d}"))
        log.info("generated %s (%.1f m)", seqs[-1].name, seqs[-1].path_length())
    # augmentation happens at training time, so the split is written unaugmented
    data = make_dataset(seqs, None, seed=cfg.data.seed, n_val=cfg.data.n_val, n_test=cfg.data.n_test)
    out = Path(args.out)
    for split in SPLITS:
        for seq in getattr(data, split):
            formats.write_sequence(out / split / seq.name, seq)
    (out / "config.txt").write_text(dump_config(cfg))
    log.info("wrote %d/%d/%d sequences to %s", len(data.train), len(data.val), len(data.test), out)


def _augment(train_seqs, cfg: RunConfig):
    if not cfg.data.augment_deg:
        return train_seqs
    return augment(train_seqs, cfg.data.augment_deg, cfg.data.kappa, cfg.data.seed)


def cmd_train(args):
    cfg = _config(args)
    root = _require(args.dataset)
    train_seqs = _augment(_read_split(root, "train"), cfg)
    val_seqs = _read_split(root, "val") if (root / "val").exists() else []
    model = VINet(cfg.model, seed=cfg.train.seed)
    tcfg = dataclasses.replace(cfg.train, checkpoint_path=args.out if cfg.train.checkpoint_every else None)
    curve_path = args.curve or f"{args.out}.curve.csv"
    try:
        _, curve = train(model, train_seqs, tcfg, val_seqs)
    except TrainingDiverged as exc:
        evaluation.write_curves_csv(curve_path, {tcfg.mode: exc.curve})
        raise
    formats.save_checkpoint(args.out, formats.Checkpoint(cfg.model, model.params, epoch=tcfg.epochs, seed=tcfg.seed))
    evaluation.write_curves_csv(curve_path, {tcfg.mode: curve})
    log.info("saved %s, curve %s", args.out, curve_path)


def cmd_eval(args):
    cfg = _config(args)
    model = _load_model(args.checkpoint)
    seq = formats.read_sequence(_require(args.sequence))
    res = evaluation.evaluate(model, seq, cfg.eval.segments, cfg.eval.align)
    out = {
        "sequence": seq.name,
        "ate_m": res["ate"],
        "path_length_m": seq.path_length(),
        "segments": [dataclasses.asdict(s) for s in res["segments"]],
    }
    Path(args.out).write_text(json.dumps(out, indent=2) + "\n")
    if args.trajectory:
        formats.write_trajectory(args.trajectory, list(zip(seq.frame_times, res["poses"])))
    log.info("%s: ATE %.4f m over %.1f m", seq.name, res["ate"], seq.path_length())


def cmd_gradcheck(args):
    results = gradcheck.run_all(args.seed, args.repeats)
    bad = 0
    for r in results:
        level = logging.INFO if r.ok else logging.ERROR
        log.log(level, "%-4s %-45s rel %.3e (tol %.0e)", "ok" if r.ok else "FAIL", r.name, r.rel_error, r.tol)
        bad += not r.ok
    if bad:
        log.error("%d of %d gradient checks failed", bad, len(results))
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_robustness(args):
    cfg = _config(args)
    models = {Path(p).stem: _load_model(p) for p in args.checkpoints}
    seq = formats.read_sequence(_require(args.sequence))
    if args.sync:
        rows = evaluation.sync_sweep(models, seq, tuple(args.values or cfg.eval.offsets))
        key = "imu_offset_s"
    else:
        rows = evaluation.robustness_sweep(models, seq, tuple(args.values or cfg.eval.magnitudes), cfg.eval.kappa,
                                           cfg.eval.seed)
        key = "miscalibration_deg"
    evaluation.write_robustness_csv(args.out, rows, key)
    for r in rows:
        log.info("%s %g: %s", key, r.miscalibration_deg, r.errors)


def cmd_modes(args):
    cfg = _config(args)
    root = _require(args.dataset)
    train_seqs = _augment(_read_split(root, "train"), cfg)
    val_seqs = _read_split(root, "val")
    curves = evaluation.mode_comparison(train_seqs, val_seqs, cfg.model, cfg.train, seed=cfg.train.seed)
    evaluation.write_curves_csv(args.out, curves)
    for mode, curve in curves.items():
        log.info("%s: final val %.6g", mode, curve[-1].val_loss)


# ---------------------------------------------------------------------------
# Parser.


def _defaults_epilog():
    cfg = RunConfig()
    lines = ["configuration keys (defaults):"]
    for section in SECTIONS:
        obj = getattr(cfg, section)
        lines += [f"  {section}.{f.name} = {format_value(getattr(obj, f.name))}" for f in fields_of(section)]
    return "\n".join(lines)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
    common.add_argument("--seed", type=int, help="seed for simulation, data split, training and evaluation")

    parser = argparse.ArgumentParser(
        prog="vinet", description=__doc__.split("\n\n")[0], epilog=_defaults_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="simulate a dataset (train/val/test sequence dirs)")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="train a model; writes a checkpoint and a curve CSV")
    p.add_argument("dataset", help="dataset directory from 'generate'")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--curve", help="training curve CSV (default: <out>.curve.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="ATE and segment errors of a checkpoint on one sequence")
    p.add_argument("checkpoint")
    p.add_argument("sequence", help="sequence directory")
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.add_argument("--trajectory", help="also write the predicted trajectory here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=3, help="random draws per layer check")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("robustness", parents=[common], help="ATE under extrinsic miscalibration (or IMU clock offsets)")
    p.add_argument("checkpoints", nargs="+", help="one or more checkpoints; the file stem names the variant")
    p.add_argument("--sequence", required=True, help="test sequence directory")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--values", type=float, nargs="+", help="magnitudes in degrees (offsets in s with --sync)")
    p.add_argument("--sync", action="store_true", help="sweep IMU clock offsets instead of miscalibration")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("modes", parents=[common], help="train se3 / joint / SE3 from one init; curves CSV")
    p.add_argument("dataset")
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_modes)
    return parser


def _setup_logging():
    level = os.environ.get("VINET_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args)
    except (MissingPath, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_MISSING
    except ConfigError as exc:
        log.error("configuration: %s", exc)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except formats.FormatError as exc:
        log.error("malformed input: %s", exc)
        return EXIT_FORMAT
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure: %s", exc)
        return EXIT_ERROR
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
