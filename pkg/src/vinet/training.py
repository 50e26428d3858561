"""BPTT training with the frame-to-frame and full-pose losses.

Modes: ``"se3"`` trains only on frame-to-frame twists, ``"SE3"`` only on the
accumulated pose and ``"joint"`` applies both updates each window with the
decaying se(3)/SE(3) learning-rate ratio.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import lie, nn
from .lie import Pose, Twist
from .model import VINet

log = logging.getLogger(__name__)

MODES = ("se3", "joint", "SE3")


class TrainingDiverged(RuntimeError):
    def __init__(self, message, last_good_params=None, curve=None):
        super().__init__(message)
        self.last_good_params = last_good_params
        self.curve = curve or []


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 10.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise ValueError("loss weights must be >= 0 and not both zero")


@dataclass
class TrainConfig:
    window: int = 10
    batch: int = 4
    epochs: int = 200
    mode: str = "joint"
    lr: float = 1e-3
    # geometric decay of the base rate towards lr_final at the last epoch (None: constant)
    lr_final: float | None = None
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    clip_norm: float | None = 5.0
    alpha: float = 10.0
    beta: float = 1.0
    squared: bool = False
    # (fraction of epochs, lambda2/lambda1) milestones for joint mode
    ratio_schedule: tuple = ((0.6, 100.0), (0.8, 10.0), (1.0, 0.1))
    # parameter-name prefixes at/above the se(3) boundary; the se(3) update skips them
    se3_frozen: tuple = ()
    seed: int = 0
    checkpoint_every: int = 0
    checkpoint_path: str | None = None
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.lr <= 0 or (self.lr_final is not None and self.lr_final <= 0):
            raise ValueError("learning rates must be positive")
        self.ratio_schedule = tuple((float(f), float(r)) for f, r in self.ratio_schedule)
        self.se3_frozen = tuple(self.se3_frozen)
        ratios = [r for _, r in self.ratio_schedule]
        if not ratios or min(ratios) <= 0 or any(b > a for a, b in zip(ratios, ratios[1:])):
            raise ValueError("ratio schedule must be positive and non-increasing")

    @property
    def weights(self):
        return LossWeights(self.alpha, self.beta)

    def to_dict(self):
        return asdict(self)

    def ratio(self, epoch):
        """lambda2/lambda1 at a 0-based epoch."""
        frac = epoch / max(1, self.epochs)
        for limit, r in self.ratio_schedule:
            if frac < limit:
                return r
        return self.ratio_schedule[-1][1]

    def base_lr(self, epoch):
        if self.lr_final is None or self.epochs <= 1:
            return self.lr
        return self.lr * (self.lr_final / self.lr) ** (epoch / (self.epochs - 1))

    def rates(self, epoch):
        """(lambda1, lambda2): SE(3)-loss and se(3)-loss learning rates."""
        lr = self.base_lr(epoch)
        if self.mode == "se3":
            return 0.0, lr
        if self.mode == "SE3":
            return lr, 0.0
        r = self.ratio(epoch)
        return lr / max(r, 1.0), lr * min(r, 1.0)


@dataclass
class TrainingCurvePoint:
    epoch: int
    mode: str
    train_loss: float
    val_loss: float


# ---------------------------------------------------------------------------
# Losses.


def _norm_and_grad(e, squared):
    if squared:
        return float(e @ e), 2.0 * e
    n = float(np.linalg.norm(e))
    if n == 0.0:
        return 0.0, np.zeros_like(e)
    return n, e / n


def loss_se3(pred, target, w: LossWeights = LossWeights(), squared=False):
    """Sum over steps of alpha |omega - omega*| + beta |v - v*|; grads per step as 6-vectors."""
    if len(pred) != len(target):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(target)} targets")
    total = 0.0
    grads = []
    for p, t in zip(pred, target):
        lw, gw = _norm_and_grad(p.omega - t.omega, squared)
        lv, gv = _norm_and_grad(p.v - t.v, squared)
        total += w.alpha * lw + w.beta * lv
        grads.append(np.concatenate([w.alpha * gw, w.beta * gv]))
    return total, grads


def loss_SE3(pred, target, w: LossWeights = LossWeights(), squared=False):
    """Sum over steps of alpha |q - q*| + beta |t - t*|; grads in the pose tangent."""
    if len(pred) != len(target):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(target)} targets")
    total = 0.0
    grads = []
    for p, t in zip(pred, target):
        lq, gq = _norm_and_grad(p.q - t.q, squared)
        lt, gt = _norm_and_grad(p.t - t.t, squared)
        total += w.alpha * lq + w.beta * lt
        grads.append(np.concatenate([lie.quat_grad_to_tangent(p.q, w.alpha * gq), w.beta * gt]))
    return total, grads


# ---------------------------------------------------------------------------
# Windows and updates.


def sliding_window_schedule(n_steps, window):
    """Consecutive non-overlapping (start, stop) index ranges over ``n_steps`` steps."""
    if window < 1:
        raise ValueError("window must be >= 1")
    return [(s, min(s + window, n_steps)) for s in range(0, n_steps, window)]


@dataclass
class WindowResult:
    loss_se3: float
    loss_SE3: float
    grads_se3: dict | None
    grads_SE3: dict | None
    carry: object
    outputs: list = field(default_factory=list)


def bptt_window(model: VINet, seq, start, stop, carry, weights: LossWeights, squared=False,
                need_se3=True, need_SE3=True, twist_targets=None):
    """Forward steps start..stop-1 of ``seq`` (1-based steps), backward in reverse.

    Gradients are summed over the window; the carried-in state is a constant.
    """
    twist_targets = seq.twist_targets() if twist_targets is None else twist_targets
    outputs, new_carry, tape = model.forward_window(seq, start, stop, carry, record=True)
    l_se3, g_se3 = loss_se3([o.xi for o in outputs], twist_targets[start - 1 : stop - 1], weights, squared)
    l_SE3, g_SE3 = loss_SE3([o.pose for o in outputs], seq.gt_poses[start:stop], weights, squared)
    grads_se3 = model.backward_window(tape, grad_xi=g_se3) if need_se3 else None
    grads_SE3 = model.backward_window(tape, grad_pose=g_SE3) if need_SE3 else None
    return WindowResult(l_se3, l_SE3, grads_se3, grads_SE3, new_carry, outputs)


class SGD:
    def step(self, params, grads, lr):
        nn.sgd_step(params, grads, lr)


def joint_update(params, grads_SE3, grads_se3, lam1, lam2, opt1, opt2, frozen=()):
    """Both gradients come from the same pre-update parameters.

    w[1:n] -= lam1 * dL_SE3/dw, then w[1:j] -= lam2 * dL_se3/dw for every
    parameter not under a ``frozen`` prefix.
    """
    if lam1 > 0 and grads_SE3 is not None:
        opt1.step(params, grads_SE3, lam1)
    if lam2 > 0 and grads_se3 is not None:
        below = {k: g for k, g in grads_se3.items() if not k.startswith(tuple(frozen))} if frozen else grads_se3
        opt2.step(params, below, lam2)


def _sum_grads(acc, grads):
    if grads is None:
        return acc
    if acc is None:
        return {k: g.copy() for k, g in grads.items()}
    for k, g in grads.items():
        acc[k] += g
    return acc


class Trainer:
    """Owns the optimizer states for one training run."""

    def __init__(self, model: VINet, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.opt_SE3 = nn.RMSProp(cfg.lr, cfg.rms_decay, cfg.rms_eps)
        self.opt_se3 = nn.RMSProp(cfg.lr, cfg.rms_decay, cfg.rms_eps)
        self.step_count = 0
        self.epoch = 0

    def optimizer_state(self):
        state = {}
        for tag, opt in (("SE3", self.opt_SE3), ("se3", self.opt_se3)):
            for k, v in opt.mean_square.items():
                state[f"{tag}.{k}"] = v
        return state

    def load_optimizer_state(self, state):
        for key, v in state.items():
            tag, name = key.split(".", 1)
            opt = self.opt_SE3 if tag == "SE3" else self.opt_se3
            opt.mean_square[name] = np.array(v, dtype=float)

    def joint_step(self, batch, epoch):
        """One Algorithm-1 update over a batch of (seq, start, stop, carry, targets).

        Returns (new carries, summed se(3) loss, summed SE(3) loss).
        """
        cfg = self.cfg
        lam1, lam2 = cfg.rates(epoch)
        g1 = g2 = None
        l1 = l2 = 0.0
        carries = []
        for seq, start, stop, carry, targets in batch:
            res = bptt_window(self.model, seq, start, stop, carry, cfg.weights, cfg.squared,
                              need_se3=lam2 > 0, need_SE3=lam1 > 0, twist_targets=targets)
            g1 = _sum_grads(g1, res.grads_SE3)
            g2 = _sum_grads(g2, res.grads_se3)
            l1 += res.loss_SE3
            l2 += res.loss_se3
            carries.append(res.carry)
        for g in (g1, g2):
            if g is not None:
                nn.clip_grad_norm(g, cfg.clip_norm)
        joint_update(self.model.params, g1, g2, lam1, lam2, self.opt_SE3, self.opt_se3, cfg.se3_frozen)
        self.step_count += 1
        return carries, l2, l1

    def run_epoch(self, sequences, targets, epoch):
        cfg = self.cfg
        for g0 in range(0, len(sequences), cfg.batch):
            group = list(range(g0, min(g0 + cfg.batch, len(sequences))))
            plans = {i: sliding_window_schedule(sequences[i].n_steps, cfg.window) for i in group}
            carries = {i: self.model.initial_carry() for i in group}
            for w in range(max(len(p) for p in plans.values())):
                active = [i for i in group if w < len(plans[i])]
                batch = []
                for i in active:
                    s, e = plans[i][w]
                    batch.append((sequences[i], s + 1, e + 1, carries[i], targets[i]))
                new, _, _ = self.joint_step(batch, epoch)
                for i, c in zip(active, new):
                    carries[i] = c


def evaluate_loss(model: VINet, sequences, weights: LossWeights, squared=False):
    """Mean per-step full-pose loss over whole-sequence inference."""
    if not sequences:
        return float("nan")
    vals = []
    for seq in sequences:
        outputs, _ = model.sequence_forward(seq)
        l, _ = loss_SE3([o.pose for o in outputs], seq.gt_poses[1:], weights, squared)
        vals.append(l / len(outputs))
    return float(np.mean(vals))


def train(model: VINet, train_seqs, cfg: TrainConfig, val_seqs=(), callback=None):
    """Train in place; returns (model, curve). Epoch 0 is the untrained model."""
    if not train_seqs:
        raise ValueError("empty training set")
    from .formats import Checkpoint, save_checkpoint

    trainer = Trainer(model, cfg)
    targets = [s.twist_targets() for s in train_seqs]
    w = cfg.weights

    def point(epoch):
        return TrainingCurvePoint(
            epoch, cfg.mode, evaluate_loss(model, train_seqs, w, cfg.squared), evaluate_loss(model, val_seqs, w, cfg.squared)
        )

    curve = [point(0)]
    initial = curve[0].train_loss
    for epoch in range(cfg.epochs):
        good = {k: v.copy() for k, v in model.params.items()}
        try:
            trainer.run_epoch(train_seqs, targets, epoch)
            p = point(epoch + 1)
        except (nn.NonFiniteError, lie.NonFiniteValue, FloatingPointError) as exc:
            model.load_params(good)
            raise TrainingDiverged(f"epoch {epoch + 1}: {exc}", good, curve) from exc
        if not math.isfinite(p.train_loss) or p.train_loss > cfg.divergence_factor * initial:
            model.load_params(good)
            if cfg.checkpoint_path:
                save_checkpoint(cfg.checkpoint_path, Checkpoint(model.config, model.params,
                                                                trainer.optimizer_state(), epoch, cfg.seed))
            raise TrainingDiverged(f"epoch {epoch + 1}: loss {p.train_loss!r}", good, curve)
        curve.append(p)
        trainer.epoch = epoch + 1
        log.info("epoch %d mode %s train %.6g val %.6g", p.epoch, p.mode, p.train_loss, p.val_loss)
        if callback is not None:
            callback(p)
        if cfg.checkpoint_every and cfg.checkpoint_path and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(cfg.checkpoint_path, Checkpoint(model.config, model.params,
                                                            trainer.optimizer_state(), epoch + 1, cfg.seed))
    return model, curve
