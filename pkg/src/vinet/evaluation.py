"""Trajectory metrics and the robustness / training-mode experiment drivers."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import lie
from .model import VINet
from .simulator import CalibPerturbation, perturb_extrinsics, shift_imu_clock
from .training import MODES, TrainConfig, TrainingDiverged, train

DESK_SEGMENTS = (5.0, 10.0, 15.0, 20.0, 25.0)
KITTI_SEGMENTS = (100.0, 200.0, 300.0, 400.0, 500.0)
FAILS = "FAILS"


@dataclass
class SegmentError:
    length: float
    translational_pct: float
    rotational_deg_per_m: float
    count: int


@dataclass
class RobustnessRow:
    miscalibration_deg: float
    errors: dict = field(default_factory=dict)  # variant -> ATE in m, None when the run failed


def _align(pred, gt, align):
    if align == "none":
        return [p.t for p in pred]
    if align == "first":
        anchor = lie.compose(gt[0], lie.inverse(pred[0]))
        return [lie.compose(anchor, p).t for p in pred]
    if align == "se3":
        # closed-form rigid (no scale) alignment of positions
        a = np.array([p.t for p in pred])
        b = np.array([g.t for g in gt])
        ma, mb = a.mean(0), b.mean(0)
        u, _, vt = np.linalg.svd((b - mb).T @ (a - ma))
        d = np.sign(np.linalg.det(u @ vt))
        r = u @ np.diag([1.0, 1.0, d]) @ vt
        return list((a - ma) @ r.T + mb)
    raise ValueError(f"unknown alignment {align!r}")


def ate(pred, gt, align="first"):
    """RMS translational error (m) after aligning the trajectories."""
    if len(pred) != len(gt):
        raise ValueError(f"length mismatch: {len(pred)} vs {len(gt)}")
    if len(pred) < 2:
        raise ValueError("need at least two poses")
    if align == "first":
        # anchoring pred[0] onto gt[0] and comparing is a rotation (by gt[0]) of
        # comparing both trajectories in their own first frames; the latter keeps
        # identical inputs at exactly zero
        sq = [float(np.sum((lie.relative(pred[0], p).t - lie.relative(gt[0], g).t) ** 2)) for p, g in zip(pred, gt)]
        return math.sqrt(sum(sq) / len(sq))
    aligned = _align(pred, gt, align)
    sq = [float(np.sum((p - g.t) ** 2)) for p, g in zip(aligned, gt)]
    return math.sqrt(sum(sq) / len(sq))


def path_distances(poses):
    t = np.array([p.t for p in poses])
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(t, axis=0), axis=1))])


def _motion_error(dp, dg):
    """Translation norm and angle of dg^-1 * dp.

    conj(a) * b is written grouped so identical motions give exactly zero: both
    a_w b_v - b_w a_v and a_v x b_v cancel term by term in floating point.
    """
    a, b = dg.q, dp.q
    q = np.concatenate([[a[0] * b[0] + a[1:] @ b[1:]], (a[0] * b[1:] - b[0] * a[1:]) - np.cross(a[1:], b[1:])])
    t = lie.quat_to_matrix(dg.q).T @ (dp.t - dg.t)
    return float(np.linalg.norm(t)), lie.quat_angle(q)


def kitti_segment_errors(pred, gt, lengths=DESK_SEGMENTS, step=1):
    """Average relative-pose error over all segments of each path length.

    The segment from frame i ends at the first frame whose ground-truth path
    distance from i reaches the length. Translation in % of length, rotation in
    deg/m.
    """
    if len(pred) != len(gt):
        raise ValueError(f"length mismatch: {len(pred)} vs {len(gt)}")
    dist = path_distances(gt)
    out = []
    for length in lengths:
        t_errs, r_errs = [], []
        for i in range(0, len(gt), step):
            j = int(np.searchsorted(dist, dist[i] + length, side="left"))
            if j >= len(gt):
                break
            t_err, r_err = _motion_error(lie.relative(pred[i], pred[j]), lie.relative(gt[i], gt[j]))
            t_errs.append(t_err / length)
            r_errs.append(r_err / length)
        if not t_errs:
            warnings.warn(f"path too short for {length} m segments; skipped", stacklevel=2)
            continue
        out.append(
            SegmentError(length, 100.0 * float(np.mean(t_errs)), math.degrees(float(np.mean(r_errs))), len(t_errs))
        )
    return out


# ---------------------------------------------------------------------------
# Experiments.


def evaluate(model: VINet, seq, lengths=DESK_SEGMENTS, align="first"):
    pred = model.predict_poses(seq)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        segs = kitti_segment_errors(pred, seq.gt_poses, lengths)
    return {"ate": ate(pred, seq.gt_poses, align), "segments": segs, "poses": pred}


def _safe_ate(model, seq):
    try:
        value = ate(model.predict_poses(seq), seq.gt_poses)
    except (ValueError, FloatingPointError):
        return None
    return value if math.isfinite(value) else None


def robustness_sweep(models, seq, magnitudes=(0.0, 5.0, 10.0, 15.0), kappa=50.0, seed=0):
    """ATE of each model variant under increasing extrinsic miscalibration.

    ``models`` maps variant name to model. The same perturbation is applied to
    every variant at a given magnitude; failures are recorded as None.
    """
    rows = []
    for k, mag in enumerate(magnitudes):
        test = seq if mag == 0 else perturb_extrinsics(seq, CalibPerturbation(mag, kappa, seed * 1009 + k))
        rows.append(RobustnessRow(mag, {name: _safe_ate(m, test) for name, m in models.items()}))
    return rows


def sync_sweep(models, seq, offsets=(0.0, 0.05, 0.1, 0.2)):
    """ATE per variant with the IMU clock shifted by each offset (s)."""
    rows = []
    for off in offsets:
        test = shift_imu_clock(seq, off)
        rows.append(RobustnessRow(off, {name: _safe_ate(m, test) for name, m in models.items()}))
    return rows


def write_robustness_csv(path, rows, key="miscalibration_deg"):
    variants = list(rows[0].errors) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([key, *variants])
        for r in rows:
            w.writerow([repr(float(r.miscalibration_deg))] + [FAILS if r.errors[v] is None else repr(r.errors[v]) for v in variants])


def mode_comparison(train_seqs, val_seqs, model_config, cfg: TrainConfig, modes=MODES, seed=0):
    """Train one model per mode from the same initialization; returns {mode: curve}."""
    curves = {}
    for mode in modes:
        model = VINet(model_config, seed=seed)
        try:
            _, curve = train(model, train_seqs, replace(cfg, mode=mode, seed=seed), val_seqs)
        except TrainingDiverged as exc:
            curve = exc.curve
        curves[mode] = curve
    return curves


def write_curves_csv(path, curves):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mode", "train_loss", "val_loss"])
        for curve in curves.values():
            for p in curve:
                w.writerow([p.epoch, p.mode, repr(p.train_loss), repr(p.val_loss)])


def write_segments_csv(path, segments):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["length_m", "translational_pct", "rotational_deg_per_m", "count"])
        for s in segments:
            w.writerow([repr(s.length), repr(s.translational_pct), repr(s.rotational_deg_per_m), s.count])
