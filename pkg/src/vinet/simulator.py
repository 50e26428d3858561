"""Synthetic camera + IMU sequences and the calibration/sync perturbations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from . import lie
from .lie import Pose
from .vmf import sample_vmf

# camera looks along body +x; image x right, y down
BASE_R_SC = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
WINDOW_EPS = 1e-9
MIN_DEPTH = 0.5


class DegenerateTrajectory(ValueError):
    pass


class TooFewSequences(ValueError):
    pass


@dataclass
class TrajectorySpec:
    duration: float = 20.0
    cam_rate: float = 10.0
    imu_rate: float = 100.0
    n_control: int = 6
    control_step: float = 4.0  # m, std of position change between control poses
    yaw_step: float = 0.6  # rad
    tilt_std: float = 0.05  # rad, roll/pitch
    world_extent: float = 25.0
    n_landmarks: int = 200
    gyro_noise: float = 0.005  # rad/s/sqrt(Hz)
    accel_noise: float = 0.02  # m/s^2/sqrt(Hz)
    pixel_noise: float = 0.0  # px, jitter of projected landmarks
    gravity: tuple = (0.0, 0.0, -9.81)
    image_size: tuple = (64, 64)  # (H, W)
    splat_sigma: float = 1.0  # px
    seed: int = 0
    # optional explicit (n_control, 6) rows of (x, y, z, roll, pitch, yaw)
    control_poses: np.ndarray | None = None

    def __post_init__(self):
        if self.cam_rate <= 0 or self.imu_rate <= 0 or self.duration <= 0:
            raise ValueError("rates and duration must be positive")
        ratio = self.imu_rate / self.cam_rate
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("imu_rate must be an integer multiple of cam_rate")

    @property
    def rate_ratio(self):
        return int(round(self.imu_rate / self.cam_rate))


@dataclass
class SyncedSequence:
    frame_times: np.ndarray  # (F,)
    images: np.ndarray  # (F, H, W), values in [-0.5, 0.5]
    imu_times: np.ndarray  # (M,)
    imu: np.ndarray  # (M, 6): ax, ay, az, wx, wy, wz
    gt_poses: list  # F world-from-body Poses, gt_poses[0] = identity
    R_SC: np.ndarray  # camera-from-IMU rotation
    time_offset: float = 0.0
    landmarks: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    focal: float = 32.0
    splat_sigma: float = 1.0
    pixel_noise: float = 0.0
    render_seed: int = 0
    name: str = "seq"

    @property
    def n_frames(self):
        return len(self.frame_times)

    @property
    def n_steps(self):
        return len(self.frame_times) - 1

    def imu_window(self, step):
        """Index range of IMU samples in (t_{step-1}, t_step], for step >= 1."""
        lo = np.searchsorted(self.imu_times, self.frame_times[step - 1] + WINDOW_EPS, side="left")
        hi = np.searchsorted(self.imu_times, self.frame_times[step] + WINDOW_EPS, side="left")
        return int(lo), int(hi)

    def window_sizes(self):
        return [self.imu_window(k)[1] - self.imu_window(k)[0] for k in range(1, self.n_frames)]

    def twist_targets(self):
        return [lie.log_se3(lie.relative(a, b)) for a, b in zip(self.gt_poses[:-1], self.gt_poses[1:])]

    def path_length(self):
        t = np.array([p.t for p in self.gt_poses])
        return float(np.sum(np.linalg.norm(np.diff(t, axis=0), axis=1)))


# ---------------------------------------------------------------------------
# Kinematics.


def euler_to_matrix(roll, pitch, yaw):
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def euler_rates_to_body(angles, rates):
    """Body angular velocity for R = Rz(yaw) Ry(pitch) Rx(roll)."""
    roll, pitch, _ = angles
    droll, dpitch, dyaw = rates
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    return np.array(
        [
            droll - dyaw * sp,
            dpitch * cr + dyaw * sr * cp,
            -dpitch * sr + dyaw * cr * cp,
        ]
    )


def _control_poses(spec: TrajectorySpec, rng):
    if spec.control_poses is not None:
        ctrl = np.array(spec.control_poses, dtype=float)
        if ctrl.ndim != 2 or ctrl.shape[1] != 6:
            raise DegenerateTrajectory("control_poses must be (n, 6)")
        return ctrl - ctrl[0]
    n = spec.n_control
    ctrl = np.zeros((n, 6))
    ctrl[1:, :2] = np.cumsum(rng.normal(0.0, spec.control_step, size=(n - 1, 2)), axis=0)
    ctrl[1:, 2] = rng.normal(0.0, 0.1 * spec.control_step, size=n - 1)
    ctrl[1:, 3:5] = rng.normal(0.0, spec.tilt_std, size=(n - 1, 2))
    ctrl[1:, 5] = np.cumsum(rng.normal(0.0, spec.yaw_step, size=n - 1))
    return ctrl


class TrajectorySpline:
    """C2 cubic spline through control poses (position + ZYX Euler angles)."""

    def __init__(self, knots, ctrl):
        if len(knots) < 2 or np.any(np.diff(knots) <= 0):
            raise DegenerateTrajectory("spline needs at least two distinct knot times")
        self.pos = CubicSpline(knots, ctrl[:, :3], bc_type="natural")
        self.ang = CubicSpline(knots, ctrl[:, 3:], bc_type="natural")

    def pose(self, t):
        return Pose.from_rotation(euler_to_matrix(*self.ang(t)), self.pos(t))

    def rotation(self, t):
        return euler_to_matrix(*self.ang(t))

    def imu(self, t, gravity):
        """Noiseless (specific force, angular rate) in the body frame."""
        r = self.rotation(t)
        acc = self.pos(t, 2)
        f = r.T @ (acc - np.asarray(gravity))
        w = euler_rates_to_body(self.ang(t), self.ang(t, 1))
        return f, w


# ---------------------------------------------------------------------------
# Rendering.


def camera_points(pose: Pose, r_sc, landmarks):
    """Landmarks in the camera frame for a world-from-body pose."""
    return (landmarks - pose.t) @ pose.rotation @ r_sc.T


def render(pose: Pose, r_sc, landmarks, image_size, focal, sigma=1.0, jitter=None):
    h, w = image_size
    pc = camera_points(pose, r_sc, landmarks)
    vis = pc[:, 2] > MIN_DEPTH
    pc = pc[vis]
    u = focal * pc[:, 0] / pc[:, 2] + 0.5 * (w - 1)
    v = focal * pc[:, 1] / pc[:, 2] + 0.5 * (h - 1)
    if jitter is not None:
        u = u + jitter[vis, 0]
        v = v + jitter[vis, 1]
    keep = (u > -3 * sigma) & (u < w - 1 + 3 * sigma) & (v > -3 * sigma) & (v < h - 1 + 3 * sigma)
    u, v, depth = u[keep], v[keep], pc[keep, 2]
    weight = np.minimum(1.0, 4.0 / depth)
    gx = np.exp(-0.5 * ((np.arange(w)[None, :] - u[:, None]) / sigma) ** 2)
    gy = np.exp(-0.5 * ((np.arange(h)[None, :] - v[:, None]) / sigma) ** 2)
    img = (gy * weight[:, None]).T @ gx
    return np.clip(img, 0.0, 1.0) - 0.5


def render_sequence(seq: SyncedSequence, r_sc=None):
    r_sc = seq.R_SC if r_sc is None else r_sc
    h, w = seq.images.shape[1:]
    rng = np.random.default_rng(seq.render_seed)
    out = np.empty((seq.n_frames, h, w))
    for k, pose in enumerate(seq.gt_poses):
        jitter = None
        if seq.pixel_noise > 0:
            jitter = rng.normal(0.0, seq.pixel_noise, size=(len(seq.landmarks), 2))
        out[k] = render(pose, r_sc, seq.landmarks, (h, w), seq.focal, seq.splat_sigma, jitter)
    return out


# ---------------------------------------------------------------------------
# Operations.


def generate_trajectory(spec: TrajectorySpec, name=None) -> SyncedSequence:
    rng = np.random.default_rng(spec.seed)
    ctrl = _control_poses(spec, rng)
    knots = np.linspace(0.0, spec.duration, len(ctrl))
    spline = TrajectorySpline(knots, ctrl)

    n_frames = int(round(spec.duration * spec.cam_rate))
    n_imu = n_frames * spec.rate_ratio
    frame_times = np.arange(n_frames) / spec.cam_rate
    imu_times = np.arange(n_imu) / spec.imu_rate

    gt = [Pose.identity()] + [spline.pose(t) for t in frame_times[1:]]

    imu = np.empty((n_imu, 6))
    for j, t in enumerate(imu_times):
        f, w = spline.imu(t, spec.gravity)
        imu[j, :3] = f
        imu[j, 3:] = w
    scale = math.sqrt(spec.imu_rate)
    imu[:, :3] += rng.normal(0.0, spec.accel_noise * scale, size=(n_imu, 3))
    imu[:, 3:] += rng.normal(0.0, spec.gyro_noise * scale, size=(n_imu, 3))

    lo = np.array([-spec.world_extent, -spec.world_extent, -3.0])
    hi = np.array([spec.world_extent, spec.world_extent, 5.0])
    landmarks = rng.uniform(lo, hi, size=(spec.n_landmarks, 3))

    h, w = spec.image_size
    seq = SyncedSequence(
        frame_times=frame_times,
        images=np.zeros((n_frames, h, w)),
        imu_times=imu_times,
        imu=imu,
        gt_poses=gt,
        R_SC=BASE_R_SC.copy(),
        landmarks=landmarks,
        focal=0.5 * w,
        splat_sigma=spec.splat_sigma,
        pixel_noise=spec.pixel_noise,
        render_seed=spec.seed + 7919,
        name=name or f"seq{spec.seed}",
    )
    seq.images = render_sequence(seq)
    return seq


@dataclass(frozen=True)
class CalibPerturbation:
    magnitude_deg: float
    kappa: float = 50.0
    seed: int = 0
    mean_axis: tuple | None = None

    def __post_init__(self):
        if self.magnitude_deg < 0 or self.kappa <= 0:
            raise ValueError("need magnitude >= 0 and kappa > 0")


def rotation_axis(r):
    omega = lie.log_so3(r)
    n = np.linalg.norm(omega)
    return omega / n if n > 0 else np.array([0.0, 0.0, 1.0])


def sample_calibration_error(r_sc, p: CalibPerturbation):
    mu = rotation_axis(r_sc) if p.mean_axis is None else np.asarray(p.mean_axis, dtype=float)
    axis = sample_vmf(mu, p.kappa, 1, np.random.default_rng(p.seed))[0]
    return lie.exp_so3(axis * math.radians(p.magnitude_deg))


def perturb_extrinsics(seq: SyncedSequence, p: CalibPerturbation) -> SyncedSequence:
    if p.magnitude_deg == 0:
        return replace(seq)
    r_new = sample_calibration_error(seq.R_SC, p) @ seq.R_SC
    return replace(seq, R_SC=r_new, images=render_sequence(seq, r_new), name=f"{seq.name}_cal{p.magnitude_deg:g}")


def shift_imu_clock(seq: SyncedSequence, offset: float) -> SyncedSequence:
    if offset == 0:
        return replace(seq)
    return replace(seq, imu_times=seq.imu_times + offset, time_offset=seq.time_offset + offset)


@dataclass
class Dataset:
    train: list
    val: list
    test: list


def make_dataset(sequences, augment_deg=None, kappa=50.0, seed=0, n_val=None, n_test=None) -> Dataset:
    """Split sequences into train/val/test; optionally add miscalibrated training copies.

    ``augment_deg`` lists calibration magnitudes; each training sequence yields
    one copy per magnitude (0 keeps the original).
    """
    sequences = list(sequences)
    n = len(sequences)
    if n < 3:
        raise TooFewSequences(f"need at least 3 sequences, got {n}")
    n_test = max(1, n // 5) if n_test is None else n_test
    n_val = max(1, n // 5) if n_val is None else n_val
    n_train = n - n_val - n_test
    if n_train < 1:
        raise TooFewSequences("split leaves no training sequences")
    train = sequences[:n_train]
    val = sequences[n_train : n_train + n_val]
    test = sequences[n_train + n_val :]
    if augment_deg:
        train = augment(train, augment_deg, kappa, seed)
    return Dataset(train, val, test)


def augment(train, augment_deg, kappa=50.0, seed=0):
    """One miscalibrated copy of each sequence per magnitude (0 keeps the original)."""
    out = []
    for k, seq in enumerate(train):
        for j, mag in enumerate(augment_deg):
            p = CalibPerturbation(mag, kappa, seed=seed * 100003 + k * 101 + j)
            out.append(perturb_extrinsics(seq, p))
    return out
