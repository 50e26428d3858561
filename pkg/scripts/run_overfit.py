"""Overfit the default network on one 20 s synthetic sequence and report loss and ATE."""

import argparse
import json
import logging
from pathlib import Path

from vinet import evaluation
from vinet.experiments import OverfitConfig, run_overfit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/overfit", help="output directory")
    ap.add_argument("--epochs", type=int, help="override the epoch budget")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = OverfitConfig()
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    res = run_overfit(cfg, callback=lambda p: print(f"epoch {p.epoch:4d}  loss {p.train_loss:.5f}", flush=True))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_curves_csv(out / "curve.csv", {cfg.train.mode: res.curve})
    summary = {
        "initial_loss": res.initial_loss,
        "final_loss": res.final_loss,
        "loss_ratio": res.final_loss / res.initial_loss,
        "final_ate_m": res.final_ate,
        "path_length_m": res.path_length,
        "ate_ratio": res.final_ate / res.path_length,
        "seconds": res.seconds,
        "loss_ok": res.loss_ok(cfg),
        "ate_ok": res.ate_ok(cfg),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
