"""VINet graph: CNN on frame pairs, IMU-LSTM at IMU rate, core LSTM at camera
rate with pose feedback, twist head and SE(3) accumulation.

Forward passes can record a tape; ``backward_window`` runs BPTT over it.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import lie, nn
from .lie import Pose, Twist
from .nn import LstmState


@dataclass
class ModelConfig:
    image_size: tuple = (64, 64)  # (H, W)
    conv_channels: tuple = (8, 16, 32, 64)
    conv_kernel: int = 3
    conv_stride: int = 2
    imu_hidden: int = 32
    imu_layers: int = 1
    core_hidden: int = 128
    core_layers: int = 2
    rate_ratio: int = 10
    acc_scale: float = 0.1
    gyro_scale: float = 1.0
    pose_scale: float = 0.1
    omega_bound: float = math.pi / math.sqrt(3.0)  # per axis, keeps |omega| < pi
    head_gain: float = 0.1
    forget_bias: float = 1.0

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        self.conv_channels = tuple(int(v) for v in self.conv_channels)
        sizes = [*self.image_size, self.conv_kernel, self.conv_stride, self.imu_hidden, self.imu_layers]
        sizes += [self.core_hidden, self.core_layers, self.rate_ratio]
        if min(sizes) < 1 or not self.conv_channels or min(self.conv_channels) < 1:
            raise ValueError("all model sizes must be >= 1")
        if not 0 < self.omega_bound * math.sqrt(3.0) <= math.pi + 1e-12:
            raise ValueError("omega_bound must keep |omega| < pi")
        h, w = self.feature_map_shape()[1:]
        if h < 1 or w < 1:
            raise ValueError(f"image {self.image_size} too small for {len(self.conv_channels)} conv layers")

    def feature_map_shape(self):
        h, w = self.image_size
        for _ in self.conv_channels:
            h = nn.conv_output_size(h, self.conv_kernel, self.conv_stride)
            w = nn.conv_output_size(w, self.conv_kernel, self.conv_stride)
        return self.conv_channels[-1], h, w

    @property
    def visual_size(self):
        return int(np.prod(self.feature_map_shape()))

    @property
    def core_input_size(self):
        return self.visual_size + self.imu_hidden + 7

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class StepOutput:
    xi: Twist
    pose: Pose


@dataclass
class Carry:
    """State handed from one window (or chunk) to the next."""

    imu: list
    core: list
    pose: Pose = field(default_factory=Pose.identity)


def init_params(config: ModelConfig, seed=0):
    rng = np.random.default_rng(seed)
    params = {}
    in_maps = 2
    for l, out_maps in enumerate(config.conv_channels):
        for k, v in nn.init_conv(rng, out_maps, in_maps, config.conv_kernel, config.conv_kernel).items():
            params[f"cnn.{l}.{k}"] = v
        in_maps = out_maps
    size = 6
    for l in range(config.imu_layers):
        for k, v in nn.init_lstm(rng, size, config.imu_hidden, config.forget_bias).items():
            params[f"imu.{l}.{k}"] = v
        size = config.imu_hidden
    size = config.core_input_size
    for l in range(config.core_layers):
        for k, v in nn.init_lstm(rng, size, config.core_hidden, config.forget_bias).items():
            params[f"core.{l}.{k}"] = v
        size = config.core_hidden
    for k, v in nn.init_dense(rng, 6, config.core_hidden, config.head_gain).items():
        params[f"head.{k}"] = v
    return params


def _sub(params, prefix):
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


class VINet:
    def __init__(self, config: ModelConfig | None = None, seed=0, params=None):
        self.config = config or ModelConfig()
        self.params = init_params(self.config, seed) if params is None else params
        self.imu_steps = 0  # instrumentation: IMU-LSTM cell evaluations
        self._split()

    def _split(self):
        c = self.config
        self.cnn = [_sub(self.params, f"cnn.{l}.") for l in range(len(c.conv_channels))]
        self.imu_lstm = [_sub(self.params, f"imu.{l}.") for l in range(c.imu_layers)]
        self.core_lstm = [_sub(self.params, f"core.{l}.") for l in range(c.core_layers)]
        self.head = _sub(self.params, "head.")

    def load_params(self, params):
        for k, v in params.items():
            self.params[k][...] = v

    def copy(self):
        return VINet(self.config, params={k: v.copy() for k, v in self.params.items()})

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def initial_carry(self):
        c = self.config
        return Carry(
            [LstmState.zeros(c.imu_hidden) for _ in range(c.imu_layers)],
            [LstmState.zeros(c.core_hidden) for _ in range(c.core_layers)],
            Pose.identity(),
        )

    # -- visual branch ------------------------------------------------------

    def visual_forward(self, img_prev, img_curr):
        x = np.stack([np.asarray(img_prev, dtype=float), np.asarray(img_curr, dtype=float)])
        if x.shape[1:] != self.config.image_size:
            raise ValueError(f"image extents {x.shape[1:]} != configured {self.config.image_size}")
        caches = []
        for p in self.cnn:
            x, cache = nn.conv2d_forward(x, p["w"], p["b"], self.config.conv_stride)
            caches.append(cache)
        feat, shape = nn.flatten(x)
        return feat, (caches, shape)

    def visual_backward(self, cache, grad_feat, grads):
        caches, shape = cache
        g = nn.unflatten(grad_feat, shape)
        for l in reversed(range(len(caches))):
            g, gw, gb = nn.conv2d_backward(caches[l], g)
            grads[f"cnn.{l}.w"] += gw
            grads[f"cnn.{l}.b"] += gb
        return g

    # -- IMU branch ----------------------------------------------------------

    def imu_window_forward(self, samples, times, states):
        """Run one IMU-LSTM step per sample; returns (feature, states, caches)."""
        samples = np.asarray(samples, dtype=float).reshape(-1, 6)
        times = np.asarray(times, dtype=float)
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("IMU timestamps must be strictly increasing within a window")
        scale = np.array([self.config.acc_scale] * 3 + [self.config.gyro_scale] * 3)
        states = list(states)
        caches = []
        for s in samples:
            x = s * scale
            layer_caches = []
            for l, p in enumerate(self.imu_lstm):
                states[l], cache = nn.lstm_cell_forward(x, states[l], p)
                layer_caches.append(cache)
                x = states[l].h
            caches.append(layer_caches)
            self.imu_steps += 1
        return states[-1].h.copy(), states, caches

    # -- core step -----------------------------------------------------------

    def pose_feedback(self, pose: Pose):
        return np.concatenate([pose.q, self.config.pose_scale * pose.t])

    def core_step(self, vis_feat, imu_feat, prev_pose: Pose, states, fed_back: Pose | None = None):
        fed_back = prev_pose if fed_back is None else fed_back
        x, sizes = nn.concat_forward([vis_feat, imu_feat, self.pose_feedback(fed_back)])
        if x.shape != (self.config.core_input_size,):
            raise ValueError(f"core input size {x.shape} != {self.config.core_input_size}")
        states = list(states)
        caches = []
        for l, p in enumerate(self.core_lstm):
            states[l], cache = nn.lstm_cell_forward(x, states[l], p)
            caches.append(cache)
            x = states[l].h
        raw, head_cache = nn.dense_forward(x, self.head["W"], self.head["b"])
        omega = self.config.omega_bound * np.tanh(raw[:3])
        xi = Twist(omega, raw[3:])
        pose = lie.compose(prev_pose, lie.exp_se3(xi))
        return StepOutput(xi, pose), states, (sizes, caches, head_cache, raw)

    # -- sequences -----------------------------------------------------------

    def forward_window(self, seq, start, stop, carry: Carry | None = None, record=False, feedback=None):
        """Steps ``start..stop-1`` (step k uses frames k-1, k). Returns (outputs, carry, tape).

        ``feedback`` optionally pins the pose fed back into each step (one per
        step), which makes the detached feedback edge explicit for gradient checks.
        """
        carry = carry or self.initial_carry()
        imu_states, core_states, pose = list(carry.imu), list(carry.core), carry.pose
        outputs, tape = [], []
        for n, k in enumerate(range(start, stop)):
            vis, vis_cache = self.visual_forward(seq.images[k - 1], seq.images[k])
            lo, hi = seq.imu_window(k)
            imu_feat, imu_states, imu_caches = self.imu_window_forward(
                seq.imu[lo:hi], seq.imu_times[lo:hi], imu_states
            )
            fed = pose if feedback is None else feedback[n]
            out, core_states, core_cache = self.core_step(vis, imu_feat, pose, core_states, fed)
            if record:
                tape.append((vis_cache, imu_caches, core_cache, out.xi, pose))
            pose = out.pose
            outputs.append(out)
        return outputs, Carry(imu_states, core_states, pose), tape

    def sequence_forward(self, seq, carry: Carry | None = None):
        """All steps of ``seq``; returns (outputs, carry) for chunked continuation."""
        if seq.n_frames < 2:
            raise ValueError("sequence needs at least two frames")
        outputs, carry, _ = self.forward_window(seq, 1, seq.n_frames, carry)
        return outputs, carry

    def predict_poses(self, seq):
        outputs, _ = self.sequence_forward(seq)
        return [Pose.identity()] + [o.pose for o in outputs]

    def backward_window(self, tape, grad_xi=None, grad_pose=None):
        """BPTT over a recorded window.

        ``grad_xi[k]``: dL/d(omega, v) of step k; ``grad_pose[k]``: dL in the
        tangent of the accumulated pose after step k. Carried-in states and the
        fed-back pose are constants. Returns a gradient dict.
        """
        n = len(tape)
        c = self.config
        grads = self.zero_grads()
        g_xi = [np.zeros(6) if grad_xi is None else np.asarray(grad_xi[k], dtype=float).copy() for k in range(n)]
        if grad_pose is not None:
            g_acc = np.zeros(6)
            for k in reversed(range(n)):
                _, _, _, xi, prev_pose = tape[k]
                g_acc = g_acc + grad_pose[k]
                ga, gb = lie.compose_backward(prev_pose, lie.exp_se3(xi), g_acc)
                g_xi[k] += lie.exp_se3_backward(xi, gb)
                g_acc = ga

        core_dh = [np.zeros(c.core_hidden) for _ in range(c.core_layers)]
        core_dc = [np.zeros(c.core_hidden) for _ in range(c.core_layers)]
        imu_dh = [np.zeros(c.imu_hidden) for _ in range(c.imu_layers)]
        imu_dc = [np.zeros(c.imu_hidden) for _ in range(c.imu_layers)]
        for k in reversed(range(n)):
            vis_cache, imu_caches, core_cache, xi, _ = tape[k]
            sizes, caches, head_cache, raw = core_cache
            g_raw = g_xi[k].copy()
            g_raw[:3] *= c.omega_bound * (1.0 - np.tanh(raw[:3]) ** 2)
            gx, gw, gb = nn.dense_backward(head_cache, g_raw)
            grads["head.W"] += gw
            grads["head.b"] += gb
            for l in reversed(range(c.core_layers)):
                gx, dprev, gp = nn.lstm_cell_backward(caches[l], gx + core_dh[l], core_dc[l])
                core_dh[l], core_dc[l] = dprev.h, dprev.c
                for name, g in gp.items():
                    grads[f"core.{l}.{name}"] += g
            g_vis, g_imu, _ = nn.concat_backward(sizes, gx)  # pose feedback is detached
            self.visual_backward(vis_cache, g_vis, grads)
            imu_dh[-1] = imu_dh[-1] + g_imu
            for sample_caches in reversed(imu_caches):
                g_below = None
                for l in reversed(range(c.imu_layers)):
                    dh = imu_dh[l] if g_below is None else imu_dh[l] + g_below
                    g_below, dprev, gp = nn.lstm_cell_backward(sample_caches[l], dh, imu_dc[l])
                    imu_dh[l], imu_dc[l] = dprev.h, dprev.c
                    for name, g in gp.items():
                        grads[f"imu.{l}.{name}"] += g
        return grads
