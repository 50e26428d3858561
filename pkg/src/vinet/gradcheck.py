"""Central finite-difference checks for every differentiable piece of the model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lie, nn
from .lie import Pose, Twist
from .model import ModelConfig, VINet
from .simulator import TrajectorySpec, generate_trajectory
from .training import LossWeights, loss_SE3, loss_se3

STEP = 1e-6
# the end-to-end losses are O(1) while some gradients are ~1e-5, so a larger
# step keeps round-off (ulp / 2h) well under the tolerance
END_TO_END_STEP = 3e-5
LAYER_TOL = 1e-5
END_TO_END_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    rel_error: float
    tol: float

    @property
    def ok(self):
        return self.rel_error < self.tol


def rel_error(analytic, numeric, floor=1e-12):
    """Norm-relative error; ``floor`` bounds the denominator for vanishing gradients."""
    analytic = np.ravel(analytic)
    numeric = np.ravel(numeric)
    denom = max(np.linalg.norm(numeric), np.linalg.norm(analytic), floor)
    return float(np.linalg.norm(analytic - numeric) / denom)


def numeric_grad(f, x, h=STEP, index=None):
    """Central differences of scalar ``f`` w.r.t. array ``x`` (perturbed in place)."""
    flat = x.reshape(-1)
    idx = range(flat.size) if index is None else index
    out = []
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out.append((fp - fm) / (2.0 * h))
    return np.array(out)


def tangent_grad(f, pose, h=STEP):
    """d f(oplus(pose, d)) / d d at d = 0."""
    out = np.zeros(6)
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        out[i] = (f(lie.oplus(pose, e)) - f(lie.oplus(pose, -e))) / (2.0 * h)
    return out


# ---------------------------------------------------------------------------
# Layers.


def check_lstm(rng, input_size=3, hidden=4):
    p = {k: rng.normal(0.0, 0.5, size=s) for k, s in nn.lstm_shapes(input_size, hidden).items()}
    x = rng.normal(size=input_size)
    h0 = rng.normal(size=hidden)
    c0 = rng.normal(size=hidden)
    gh = rng.normal(size=hidden)
    gc = rng.normal(size=hidden)

    def loss():
        s, _ = nn.lstm_cell_forward(x, nn.LstmState(h0, c0), p)
        return float(gh @ s.h + gc @ s.c)

    _, cache = nn.lstm_cell_forward(x, nn.LstmState(h0, c0), p)
    gx, gprev, gp = nn.lstm_cell_backward(cache, gh, gc)
    errs = [rel_error(gx, numeric_grad(loss, x)), rel_error(gprev.h, numeric_grad(loss, h0)),
            rel_error(gprev.c, numeric_grad(loss, c0))]
    errs += [rel_error(gp[k], numeric_grad(loss, p[k])) for k in p]
    return CheckResult("lstm_cell", max(errs), LAYER_TOL)


def check_conv(rng, activation="leaky_relu"):
    x = rng.normal(size=(2, 9, 8))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    g = rng.normal(size=(3, 4, 3))

    def loss():
        y, _ = nn.conv2d_forward(x, w, b, stride=2, activation=activation)
        return float(np.sum(g * y))

    _, cache = nn.conv2d_forward(x, w, b, stride=2, activation=activation)
    gx, gw, gb = nn.conv2d_backward(cache, g)
    errs = [rel_error(gx, numeric_grad(loss, x)), rel_error(gw, numeric_grad(loss, w)),
            rel_error(gb, numeric_grad(loss, b))]
    return CheckResult(f"conv2d[{activation}]", max(errs), LAYER_TOL)


def check_dense(rng):
    x = rng.normal(size=5)
    w = rng.normal(size=(4, 5))
    b = rng.normal(size=4)
    g = rng.normal(size=4)

    def loss():
        return float(g @ nn.dense_forward(x, w, b)[0])

    _, cache = nn.dense_forward(x, w, b)
    gx, gw, gb = nn.dense_backward(cache, g)
    errs = [rel_error(gx, numeric_grad(loss, x)), rel_error(gw, numeric_grad(loss, w)),
            rel_error(gb, numeric_grad(loss, b))]
    return CheckResult("dense", max(errs), LAYER_TOL)


def check_concat(rng):
    parts = [rng.normal(size=n) for n in (3, 1, 4)]
    g = rng.normal(size=8)

    def loss():
        return float(g @ nn.concat_forward(parts)[0])

    _, sizes = nn.concat_forward(parts)
    grads = nn.concat_backward(sizes, g)
    return CheckResult("concat", max(rel_error(a, numeric_grad(loss, p)) for a, p in zip(grads, parts)), LAYER_TOL)


def check_twist_head(rng):
    cfg = ModelConfig(image_size=(8, 8), conv_channels=(2,), imu_hidden=2, core_hidden=3, core_layers=1)
    model = VINet(cfg, seed=int(rng.integers(1 << 31)))
    for v in model.params.values():
        v[...] = rng.normal(0.0, 0.5, size=v.shape)
    vis = rng.normal(size=cfg.visual_size)
    imu = rng.normal(size=cfg.imu_hidden)
    g = rng.normal(size=6)
    states = model.initial_carry().core

    def loss():
        out, _, _ = model.core_step(vis, imu, Pose.identity(), states)
        return float(g @ out.xi.as_vector())

    out, _, cache = model.core_step(vis, imu, Pose.identity(), states)
    _, _, head_cache, raw = cache
    graw = g.copy()
    graw[:3] *= cfg.omega_bound * (1.0 - np.tanh(raw[:3]) ** 2)
    _, gw, gb = nn.dense_backward(head_cache, graw)
    errs = [rel_error(gw, numeric_grad(loss, model.params["head.W"])),
            rel_error(gb, numeric_grad(loss, model.params["head.b"]))]
    return CheckResult("twist_head", max(errs), LAYER_TOL)


def _random_twist(rng, angle):
    w = rng.normal(size=3)
    return Twist(w / np.linalg.norm(w) * angle, rng.normal(size=3))


def check_exp_se3(rng, angle=None):
    angle = rng.uniform(0.0, 3.0) if angle is None else angle
    xi = _random_twist(rng, angle)
    g = rng.normal(size=6)
    base = lie.exp_se3(xi)
    x = xi.as_vector()

    def loss():
        return float(g @ lie.ominus(lie.exp_se3(Twist.from_vector(x)), base))

    return CheckResult(f"exp_se3[|w|={angle:.1e}]", rel_error(lie.exp_se3_backward(xi, g), numeric_grad(loss, x)), LAYER_TOL)


def check_compose(rng):
    a = lie.oplus(Pose(), rng.normal(size=6))
    b = lie.oplus(Pose(), rng.normal(size=6))
    g = rng.normal(size=6)
    c = lie.compose(a, b)
    ga, gb = lie.compose_backward(a, b, g)
    na = tangent_grad(lambda p: float(g @ lie.ominus(lie.compose(p, b), c)), a)
    nb = tangent_grad(lambda p: float(g @ lie.ominus(lie.compose(a, p), c)), b)
    return CheckResult("compose", max(rel_error(ga, na), rel_error(gb, nb)), LAYER_TOL)


def check_losses(rng):
    wts = LossWeights(2.0, 0.5)
    pred_x = [rng.normal(0.0, 0.3, size=6) for _ in range(3)]
    tgt = [Twist.from_vector(rng.normal(0.0, 0.3, size=6)) for _ in range(3)]
    _, g = loss_se3([Twist.from_vector(x) for x in pred_x], tgt, wts)
    errs = []
    for k, x in enumerate(pred_x):
        errs.append(rel_error(g[k], numeric_grad(lambda: loss_se3([Twist.from_vector(v) for v in pred_x], tgt, wts)[0], x)))
    poses = [lie.oplus(Pose(), rng.normal(size=6)) for _ in range(3)]
    tposes = [lie.oplus(Pose(), rng.normal(size=6)) for _ in range(3)]
    _, gp = loss_SE3(poses, tposes, wts)
    for k in range(3):
        def f(p, k=k):
            return loss_SE3(poses[:k] + [p] + poses[k + 1 :], tposes, wts)[0]

        errs.append(rel_error(gp[k], tangent_grad(f, poses[k])))
    return CheckResult("losses", max(errs), LAYER_TOL)


# ---------------------------------------------------------------------------
# End to end.


TINY_MODEL = ModelConfig(image_size=(8, 8), conv_channels=(2, 3), imu_hidden=3, core_hidden=4, core_layers=2)


def tiny_sequence(seed=0, n_frames=3):
    spec = TrajectorySpec(duration=n_frames / 10.0, image_size=(8, 8), n_landmarks=300, seed=seed, world_extent=6.0)
    return generate_trajectory(spec)


def check_end_to_end(rng, loss_kind="SE3", last_only=True, seq=None):
    """Gradient of a loss over a short sequence vs finite differences on sampled weights."""
    seq = tiny_sequence(int(rng.integers(1000))) if seq is None else seq
    # the model's own initialization; large random weights saturate the IMU cell
    # and push some gradients down to the finite-difference noise floor
    model = VINet(TINY_MODEL, seed=int(rng.integers(1 << 31)))
    wts = LossWeights(1.0, 1.0)
    targets = seq.twist_targets()
    n = seq.n_steps

    base, _, _ = model.forward_window(seq, 1, n + 1)
    feedback = [Pose.identity()] + [o.pose for o in base[:-1]]

    def window_loss():
        outputs, _, tape = model.forward_window(seq, 1, n + 1, record=True, feedback=feedback)
        if loss_kind == "SE3":
            sel = slice(n - 1, n) if last_only else slice(0, n)
            val, g = loss_SE3([o.pose for o in outputs][sel], seq.gt_poses[1:][sel], wts)
            gfull = [np.zeros(6)] * n
            gfull[sel] = g
            return val, tape, dict(grad_pose=gfull)
        val, g = loss_se3([o.xi for o in outputs], targets, wts)
        return val, tape, dict(grad_xi=g)

    value, tape, kw = window_loss()
    grads = model.backward_window(tape, **kw)
    # what central differences can resolve at all: a few ulps of the loss over h,
    # per entry. Tensors whose gradient is that small (a saturated IMU cell) then
    # pass only if the absolute error stays within this resolution.
    resolution = 10.0 * np.finfo(float).eps * max(abs(value), 1.0) / END_TO_END_STEP
    errs = {}
    for name, p in model.params.items():
        # whole tensors: sampled entries can all sit near zero and drown in FD noise
        num = numeric_grad(lambda: window_loss()[0], p, END_TO_END_STEP)
        errs[name] = rel_error(grads[name], num, resolution * np.sqrt(p.size) / END_TO_END_TOL)
    worst = max(errs, key=errs.get)
    return CheckResult(f"end_to_end[{loss_kind}] worst={worst}", errs[worst], END_TO_END_TOL)


def run_all(seed=0, repeats=3):
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(repeats):
        results += [
            check_lstm(rng),
            check_conv(rng),
            check_conv(rng, "identity"),
            check_dense(rng),
            check_concat(rng),
            check_twist_head(rng),
            check_exp_se3(rng),
            check_exp_se3(rng, 1e-7),
            check_compose(rng),
            check_losses(rng),
        ]
    results.append(check_end_to_end(rng, "SE3", last_only=True))
    results.append(check_end_to_end(rng, "SE3", last_only=False))
    results.append(check_end_to_end(rng, "se3"))
    return results
