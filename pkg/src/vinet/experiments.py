"""Small, fixed experiment setups shared by the scripts and the acceptance tests.

Each experiment has a config dataclass with the budget baked in and returns
plain result records plus a verdict, so the runners only print and save.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import evaluation
from .model import ModelConfig, VINet
from .simulator import TrajectorySpec, augment, generate_trajectory
from .training import TrainConfig, train

log = logging.getLogger(__name__)

# a reduced network for the multi-run experiments
# short, slow sequences: enough variety for the small model to beat a zero-motion guess
SMALL_SIM = TrajectorySpec(duration=4.0, n_control=4, control_step=1.5, yaw_step=0.3, image_size=(32, 32))
SMALL_MODEL = ModelConfig(image_size=(32, 32), conv_channels=(4, 8, 16), imu_hidden=16, core_hidden=32)


def _sequences(spec: TrajectorySpec, n, seed):
    return [generate_trajectory(dataclasses.replace(spec, seed=seed * 1000 + i), name=f"seq_{i:03d}")
            for i in range(n)]


# ---------------------------------------------------------------------------
# Overfitting one sequence.


@dataclass
class OverfitConfig:
    sim: TrajectorySpec = field(default_factory=lambda: TrajectorySpec(duration=20.0, seed=1))
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=200, lr=1e-3, lr_final=3e-7))
    model_seed: int = 0
    loss_fraction: float = 0.01  # final loss below this share of the epoch-0 loss
    ate_fraction: float = 0.02  # final ATE below this share of the path length


@dataclass
class OverfitResult:
    initial_loss: float
    final_loss: float
    final_ate: float
    path_length: float
    seconds: float
    curve: list
    n_frames: int
    n_imu: int

    def loss_ok(self, cfg: OverfitConfig):
        return self.final_loss < cfg.loss_fraction * self.initial_loss

    def ate_ok(self, cfg: OverfitConfig):
        return self.final_ate < cfg.ate_fraction * self.path_length


def run_overfit(cfg: OverfitConfig, callback=None) -> OverfitResult:
    seq = generate_trajectory(cfg.sim)
    model = VINet(cfg.model, seed=cfg.model_seed)
    t0 = time.perf_counter()
    _, curve = train(model, [seq], cfg.train, callback=callback)
    seconds = time.perf_counter() - t0
    pred = model.predict_poses(seq)
    return OverfitResult(curve[0].train_loss, curve[-1].train_loss, evaluation.ate(pred, seq.gt_poses),
                         seq.path_length(), seconds, curve, seq.n_frames, len(seq.imu_times))


# ---------------------------------------------------------------------------
# Training modes.


@dataclass
class ModesConfig:
    sim: TrajectorySpec = field(default_factory=lambda: SMALL_SIM)
    model: ModelConfig = field(default_factory=lambda: SMALL_MODEL)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=100, lr=1e-3, lr_final=1e-5))
    n_train: int = 16
    n_val: int = 4
    seeds: tuple = (0, 1, 2)


@dataclass
class ModesSeedResult:
    seed: int
    curves: dict  # mode -> list of TrainingCurvePoint

    def val(self, mode):
        return np.array([p.val_loss for p in self.curves[mode]])

    def joint_not_worse_late(self):
        """Joint validation loss <= SE(3)-only at every epoch past the midpoint."""
        j, s = self.val("joint"), self.val("SE3")
        n = len(j) - 1
        late = [e for e in range(n + 1) if e > n / 2]
        return bool(np.all(j[late] <= s[late]))

    def mean_improvement(self, mode):
        """Average drop of the validation loss below its epoch-0 value over the run."""
        v = self.val(mode)
        return float(np.mean(v[0] - v[1:]))

    def se3_slowest(self):
        imp = {m: self.mean_improvement(m) for m in self.curves}
        return min(imp, key=imp.get) == "se3"

    def ok(self):
        return self.joint_not_worse_late() and self.se3_slowest()


def run_modes(cfg: ModesConfig):
    results = []
    for seed in cfg.seeds:
        seqs = _sequences(cfg.sim, cfg.n_train + cfg.n_val, seed)
        curves = evaluation.mode_comparison(seqs[: cfg.n_train], seqs[cfg.n_train :], cfg.model,
                                            dataclasses.replace(cfg.train, seed=seed), seed=seed)
        results.append(ModesSeedResult(seed, curves))
        log.info("modes seed %d: %s", seed, {m: c[-1].val_loss for m, c in curves.items()})
    return results


# ---------------------------------------------------------------------------
# Calibration robustness.


@dataclass
class RobustnessConfig:
    sim: TrajectorySpec = field(default_factory=lambda: SMALL_SIM)
    model: ModelConfig = field(default_factory=lambda: SMALL_MODEL)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=100, lr=1e-3, lr_final=1e-5))
    n_train: int = 16
    n_test: int = 1
    augment_deg: tuple = (0.0, 10.0)
    test_deg: float = 10.0
    kappa: float = 50.0
    n_draws: int = 5  # miscalibration draws averaged at the test magnitude
    seeds: tuple = (0, 1, 2)


@dataclass
class RobustnessSeedResult:
    seed: int
    baseline: dict  # variant -> ATE at 0 deg
    perturbed: dict  # variant -> ATEs over the draws at the test magnitude

    def increase(self, variant):
        vals = self.perturbed[variant]
        if self.baseline[variant] is None or any(v is None for v in vals):
            return None
        return float(np.mean(vals)) - self.baseline[variant]

    def ok(self):
        a, p = self.increase("augmented"), self.increase("plain")
        # a failed run cannot show the trend
        return a is not None and p is not None and a < p


def run_robustness(cfg: RobustnessConfig):
    results = []
    for seed in cfg.seeds:
        seqs = _sequences(cfg.sim, cfg.n_train + cfg.n_test, seed)
        train_seqs, test_seq = seqs[: cfg.n_train], seqs[cfg.n_train]
        tcfg = dataclasses.replace(cfg.train, seed=seed)
        models = {}
        for name, data in (("plain", train_seqs), ("augmented", augment(train_seqs, cfg.augment_deg, cfg.kappa, seed))):
            model = VINet(cfg.model, seed=seed)
            train(model, data, tcfg)
            models[name] = model
        base = evaluation.robustness_sweep(models, test_seq, (0.0,))[0].errors
        draws = [evaluation.robustness_sweep(models, test_seq, (cfg.test_deg,), cfg.kappa, seed * 7919 + d)[0].errors
                 for d in range(cfg.n_draws)]
        res = RobustnessSeedResult(seed, base, {v: [d[v] for d in draws] for v in models})
        results.append(res)
        log.info("robustness seed %d: baseline %s, increase %s", seed, base,
                 {v: res.increase(v) for v in models})
    return results


def majority(flags):
    flags = list(flags)
    return sum(bool(f) for f in flags) * 2 > len(flags)

