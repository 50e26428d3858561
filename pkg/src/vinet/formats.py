"""On-disk formats: checkpoints, trajectories and sequence directories.

Checkpoint layout (all integers little-endian)::

    b"VINETCKP" | u32 version | u64 header length | JSON header
    | float64 LE tensor payload | sha256 of everything before it
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lie import Pose
from .model import ModelConfig
from .simulator import SyncedSequence

MAGIC = b"VINETCKP"
VERSION = 1
SEQUENCE_VERSION = 1
IMU_HEADER = "t,ax,ay,az,wx,wy,wz"


class FormatError(ValueError):
    pass


class CorruptCheckpoint(FormatError):
    pass


class VersionMismatch(FormatError):
    pass


class TrajectoryParseError(FormatError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    optimizer_state: dict = field(default_factory=dict)
    epoch: int = 0
    seed: int = 0
    step: int = 0
    extra: dict = field(default_factory=dict)


def _fmt(x):
    return repr(float(x))


# ---------------------------------------------------------------------------
# Checkpoints.


def save_checkpoint(path, ckpt: Checkpoint):
    tensors = []
    chunks = []
    offset = 0
    for group, mapping in (("param", ckpt.params), ("opt", ckpt.optimizer_state)):
        for name in sorted(mapping):
            arr = np.ascontiguousarray(mapping[name], dtype="<f8")
            tensors.append({"group": group, "name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(arr.tobytes())
            offset += arr.size
    header = {
        "config": ckpt.config.to_dict(),
        "epoch": int(ckpt.epoch),
        "seed": int(ckpt.seed),
        "step": int(ckpt.step),
        "extra": ckpt.extra,
        "tensors": tensors,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<IQ", VERSION, len(hbytes)) + hbytes + b"".join(chunks)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    fixed = len(MAGIC) + 12
    if len(data) < fixed + 32 or data[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint (bad magic or too short)")
    version, hlen = struct.unpack("<IQ", data[len(MAGIC) : fixed])
    if version != VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, expected {VERSION}")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpoint(f"{path}: checksum mismatch (truncated or corrupted)")
    try:
        header = json.loads(body[fixed : fixed + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header") from exc
    payload = np.frombuffer(body[fixed + hlen :], dtype="<f8")
    groups = {"param": {}, "opt": {}}
    for t in header["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64))
        if t["offset"] + n > payload.size:
            raise CorruptCheckpoint(f"{path}: tensor {t['name']} exceeds payload")
        groups[t["group"]][t["name"]] = payload[t["offset"] : t["offset"] + n].reshape(t["shape"]).astype(float)
    cfg = header["config"]
    return Checkpoint(
        config=ModelConfig.from_dict(cfg),
        params=groups["param"],
        optimizer_state=groups["opt"],
        epoch=header["epoch"],
        seed=header["seed"],
        step=header["step"],
        extra=header.get("extra", {}),
    )


# ---------------------------------------------------------------------------
# Trajectories: "t tx ty tz qx qy qz qw", quaternion scalar-last.


def write_trajectory(path, entries):
    lines = []
    for t, pose in entries:
        w, x, y, z = pose.q
        vals = [t, *pose.t, x, y, z, w]
        lines.append(" ".join(_fmt(v) for v in vals))
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_trajectory(path):
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise TrajectoryParseError(path, lineno, f"expected 8 fields, got {len(parts)}")
        try:
            t, tx, ty, tz, qx, qy, qz, qw = (float(p) for p in parts)
            pose = Pose([qw, qx, qy, qz], [tx, ty, tz])
        except ValueError as exc:
            raise TrajectoryParseError(path, lineno, str(exc)) from exc
        out.append((t, pose))
    return out


# ---------------------------------------------------------------------------
# Sequence directories.


def write_sequence(directory, seq: SyncedSequence):
    d = Path(directory)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    rows = [IMU_HEADER]
    for t, s in zip(seq.imu_times, seq.imu):
        rows.append(",".join(_fmt(v) for v in (t, *s)))
    (d / "imu.csv").write_text("\n".join(rows) + "\n")
    write_trajectory(d / "gt.txt", list(zip(seq.frame_times, seq.gt_poses)))
    manifest = ["index,t,file,height,width"]
    h, w = seq.images.shape[1:]
    for k, (t, img) in enumerate(zip(seq.frame_times, seq.images)):
        name = f"{k:06d}.f64"
        (d / "frames" / name).write_bytes(np.ascontiguousarray(img, dtype="<f8").tobytes())
        manifest.append(f"{k},{_fmt(t)},{name},{h},{w}")
    (d / "frames" / "manifest.csv").write_text("\n".join(manifest) + "\n")
    lm = ["x,y,z"] + [",".join(_fmt(v) for v in p) for p in seq.landmarks]
    (d / "landmarks.csv").write_text("\n".join(lm) + "\n")
    meta = {
        "format_version": str(SEQUENCE_VERSION),
        "name": seq.name,
        "time_offset": _fmt(seq.time_offset),
        "R_SC": " ".join(_fmt(v) for v in np.asarray(seq.R_SC).ravel()),
        "focal": _fmt(seq.focal),
        "splat_sigma": _fmt(seq.splat_sigma),
        "pixel_noise": _fmt(seq.pixel_noise),
        "render_seed": str(int(seq.render_seed)),
    }
    if len(seq.frame_times) > 1:
        meta["cam_rate"] = _fmt(1.0 / (seq.frame_times[1] - seq.frame_times[0]))
    if len(seq.imu_times) > 1:
        meta["imu_rate"] = _fmt(1.0 / (seq.imu_times[1] - seq.imu_times[0]))
    (d / "meta").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))


def _require(path: Path):
    if not path.exists():
        raise FormatError(f"missing required file {path}")
    return path


def _read_csv(path: Path, header, ncols):
    lines = _require(path).read_text().splitlines()
    if not lines or lines[0].strip() != header:
        raise FormatError(f"{path}:1: expected header {header!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != ncols:
            raise FormatError(f"{path}:{lineno}: expected {ncols} columns, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return np.array(rows, dtype=float).reshape(-1, ncols)


def read_meta(path):
    meta = {}
    for lineno, line in enumerate(_require(Path(path)).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        meta[k.strip()] = v.strip()
    return meta


def read_sequence(directory) -> SyncedSequence:
    d = Path(directory)
    if not d.is_dir():
        raise FormatError(f"sequence directory {d} does not exist")
    meta = read_meta(d / "meta")
    if meta.get("format_version") != str(SEQUENCE_VERSION):
        raise FormatError(f"{d / 'meta'}: unsupported format_version {meta.get('format_version')!r}")
    imu = _read_csv(d / "imu.csv", IMU_HEADER, 7)
    gt = read_trajectory(_require(d / "gt.txt"))
    mpath = _require(d / "frames" / "manifest.csv")
    mlines = mpath.read_text().splitlines()
    if not mlines or mlines[0].strip() != "index,t,file,height,width":
        raise FormatError(f"{mpath}:1: bad manifest header")
    times, images = [], []
    for lineno, line in enumerate(mlines[1:], start=2):
        if not line.strip():
            continue
        try:
            _, t, name, h, w = line.split(",")
            h, w = int(h), int(w)
            times.append(float(t))
        except ValueError as exc:
            raise FormatError(f"{mpath}:{lineno}: {exc}") from exc
        raw = _require(d / "frames" / name).read_bytes()
        if len(raw) != 8 * h * w:
            raise FormatError(f"{d / 'frames' / name}: expected {8 * h * w} bytes, got {len(raw)}")
        images.append(np.frombuffer(raw, dtype="<f8").reshape(h, w).astype(float))
    if len(gt) != len(times):
        raise FormatError(f"{d}: {len(gt)} ground-truth poses for {len(times)} frames")
    lm = _read_csv(d / "landmarks.csv", "x,y,z", 3) if (d / "landmarks.csv").exists() else np.zeros((0, 3))
    r_sc = np.array([float(v) for v in meta["R_SC"].split()]).reshape(3, 3)
    return SyncedSequence(
        frame_times=np.array(times),
        images=np.array(images),
        imu_times=imu[:, 0].copy(),
        imu=imu[:, 1:].copy(),
        gt_poses=[p for _, p in gt],
        R_SC=r_sc,
        time_offset=float(meta.get("time_offset", 0.0)),
        landmarks=lm,
        focal=float(meta.get("focal", 32.0)),
        splat_sigma=float(meta.get("splat_sigma", 1.0)),
        pixel_noise=float(meta.get("pixel_noise", 0.0)),
        render_seed=int(meta.get("render_seed", 0)),
        name=meta.get("name", d.name),
    )
