"""Train se3-only, joint and SE3-only models from one initialization per seed and
save their validation curves."""

import argparse
import logging
from pathlib import Path

from vinet import evaluation
from vinet.experiments import ModesConfig, majority, run_modes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/modes", help="output directory")
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--seeds", type=int, nargs="+")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = ModesConfig()
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    if args.seeds:
        cfg.seeds = tuple(args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_modes(cfg)
    for r in results:
        evaluation.write_curves_csv(out / f"curves_seed{r.seed}.csv", r.curves)
        imp = {m: round(r.mean_improvement(m), 4) for m in r.curves}
        print(f"seed {r.seed}: final val {({m: round(c[-1].val_loss, 4) for m, c in r.curves.items()})}, "
              f"mean improvement {imp}, joint<=SE3 late {r.joint_not_worse_late()}, se3 slowest {r.se3_slowest()}")
    print("trend holds for the majority of seeds:", majority(r.ok() for r in results))


if __name__ == "__main__":
    main()
