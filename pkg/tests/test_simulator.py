import math

import numpy as np
import pytest
from scipy.stats import vonmises_fisher

from vinet import lie
from vinet.simulator import (
    BASE_R_SC,
    CalibPerturbation,
    TooFewSequences,
    TrajectorySpec,
    TrajectorySpline,
    _control_poses,
    generate_trajectory,
    make_dataset,
    perturb_extrinsics,
    shift_imu_clock,
)
from vinet.vmf import mean_resultant_length, sample_vmf

GRAVITY = np.array([0.0, 0.0, -9.81])


def quiet(**kw):
    base = dict(duration=3.0, gyro_noise=0.0, accel_noise=0.0, image_size=(16, 16))
    base.update(kw)
    return TrajectorySpec(**base)


@pytest.fixture(scope="module")
def seq():
    return generate_trajectory(TrajectorySpec(duration=4.0, image_size=(24, 24), seed=11))


def spline_of(spec):
    rng = np.random.default_rng(spec.seed)
    ctrl = _control_poses(spec, rng)
    return TrajectorySpline(np.linspace(0.0, spec.duration, len(ctrl)), ctrl)


def test_stationary():
    s = generate_trajectory(quiet(control_poses=np.zeros((4, 6))))
    assert np.all(s.imu[:, 3:] == 0.0)
    assert np.allclose(s.imu[:, :3], [0.0, 0.0, 9.81], atol=1e-12)
    assert all(np.array_equal(img, s.images[0]) for img in s.images)


def test_constant_velocity_line():
    ctrl = np.zeros((4, 6))
    ctrl[:, 0] = [0.0, 1.0, 2.0, 3.0]
    s = generate_trajectory(quiet(control_poses=ctrl))
    assert np.allclose(s.imu[:, 3:], 0.0, atol=1e-12)
    assert np.allclose(s.imu[:, :3], [0.0, 0.0, 9.81], atol=1e-9)
    assert np.allclose([p.t[0] for p in s.gt_poses], s.frame_times, atol=1e-12)


def test_imu_matches_numeric_differentiation():
    spec = quiet(seed=4)
    s = generate_trajectory(spec)
    spline = spline_of(spec)
    h = 1e-4
    for j in range(5, len(s.imu_times) - 5, 37):
        t = s.imu_times[j]
        r0, r1 = spline.rotation(t - h), spline.rotation(t + h)
        w = lie.log_so3(r0.T @ r1) / (2 * h)
        p = [spline.pose(t + d).t for d in (-h, 0.0, h)]
        acc = (p[0] - 2 * p[1] + p[2]) / h**2
        f = spline.rotation(t).T @ (acc - GRAVITY)
        assert np.allclose(s.imu[j, 3:], w, atol=1e-6)
        assert np.allclose(s.imu[j, :3], f, atol=1e-4)


def test_double_integration_tracks_ground_truth():
    spec = quiet(seed=5, duration=4.0, imu_rate=1000.0)
    s = generate_trajectory(spec)
    spline = spline_of(spec)
    dt = 1.0 / spec.imu_rate
    r = np.eye(3)
    p = np.zeros(3)
    v = np.array(spline.pos(0.0, 1))
    errs = []
    for j in range(len(s.imu_times) - 1):
        # trapezoidal steps, second order in dt
        r_next = r @ lie.exp_so3(0.5 * (s.imu[j, 3:] + s.imu[j + 1, 3:]) * dt)
        a = 0.5 * (r @ s.imu[j, :3] + r_next @ s.imu[j + 1, :3]) + GRAVITY
        p = p + v * dt + 0.5 * a * dt * dt
        v = v + a * dt
        r = r_next
        if (j + 1) % spec.rate_ratio == 0:
            k = (j + 1) // spec.rate_ratio
            errs.append((np.linalg.norm(p - s.gt_poses[k].t), lie.geodesic_angle(r, s.gt_poses[k].rotation)))
    assert max(e[0] for e in errs) < 1e-3
    assert max(e[1] for e in errs) < 1e-5


def test_sequence_layout(seq):
    assert seq.n_frames == 40 and len(seq.imu_times) == 400
    assert np.array_equal(seq.gt_poses[0].as_vector(), lie.Pose().as_vector())
    assert seq.window_sizes() == [10] * 39
    assert np.array_equal(seq.R_SC, BASE_R_SC)
    assert seq.images.min() >= -0.5 and seq.images.max() <= 0.5
    assert np.ptp(seq.images) > 0.1


def test_generation_is_deterministic():
    a = generate_trajectory(quiet(seed=9, pixel_noise=0.3))
    b = generate_trajectory(quiet(seed=9, pixel_noise=0.3))
    assert np.array_equal(a.images, b.images) and np.array_equal(a.imu, b.imu)
    c = generate_trajectory(quiet(seed=10))
    assert not np.array_equal(a.imu, c.imu)


def test_spec_validation():
    with pytest.raises(ValueError):
        TrajectorySpec(imu_rate=95.0)
    with pytest.raises(ValueError):
        TrajectorySpec(cam_rate=0.0)


# -- vMF ----------------------------------------------------------------------------


def test_vmf_resultant_length():
    mu = np.array([0.0, 0.6, 0.8])
    x = sample_vmf(mu, 50.0, 10_000, np.random.default_rng(0))
    assert np.allclose(np.linalg.norm(x, axis=1), 1.0)
    w = x @ mu
    sigma = w.std() / math.sqrt(len(w))
    assert abs(w.mean() - mean_resultant_length(50.0)) < 3 * sigma
    mean_dir = x.mean(0) / np.linalg.norm(x.mean(0))
    assert math.degrees(math.acos(min(1.0, mean_dir @ mu))) < 5.0


@pytest.mark.parametrize("kappa", [1.0, 10.0, 200.0])
def test_vmf_agrees_with_scipy(kappa):
    mu = np.array([1.0, -2.0, 0.5]) / np.linalg.norm([1.0, -2.0, 0.5])
    ours = sample_vmf(mu, kappa, 4000, np.random.default_rng(1)) @ mu
    ref = vonmises_fisher(mu, kappa).rvs(4000, random_state=np.random.default_rng(2)) @ mu
    band = 4 * math.hypot(ours.std(), ref.std()) / math.sqrt(4000)
    assert abs(ours.mean() - ref.mean()) < band
    assert abs(ours.mean() - mean_resultant_length(kappa)) < band


# -- perturbations ----------------------------------------------------------------------


def test_perturbation_magnitude(seq):
    for seed in range(5):
        out = perturb_extrinsics(seq, CalibPerturbation(10.0, 50.0, seed))
        assert abs(math.degrees(lie.geodesic_angle(out.R_SC, seq.R_SC)) - 10.0) < 1e-9
        assert np.array_equal(out.imu, seq.imu)
        assert not np.array_equal(out.images, seq.images)
        assert out.gt_poses is seq.gt_poses


def test_zero_perturbation_is_identity(seq):
    out = perturb_extrinsics(seq, CalibPerturbation(0.0))
    assert np.array_equal(out.images, seq.images) and np.array_equal(out.R_SC, seq.R_SC)


def test_perturbation_validates():
    with pytest.raises(ValueError):
        CalibPerturbation(-1.0)
    with pytest.raises(ValueError):
        CalibPerturbation(5.0, kappa=0.0)


def test_clock_shift(seq):
    assert np.array_equal(shift_imu_clock(seq, 0.0).imu_times, seq.imu_times)
    shifted = shift_imu_clock(seq, 0.1)
    for k in range(2, seq.n_frames):
        assert shifted.imu_window(k) == seq.imu_window(k - 1)
    gone = shift_imu_clock(seq, 10.0)
    assert gone.window_sizes() == [0] * seq.n_steps
    assert gone.time_offset == 10.0


# -- datasets ----------------------------------------------------------------------------


def test_make_dataset_counts(seq):
    seqs = [seq] * 5
    d = make_dataset(seqs)
    assert (len(d.train), len(d.val), len(d.test)) == (3, 1, 1)
    d = make_dataset(seqs, augment_deg=(0.0, 5.0, 10.0), seed=3)
    assert len(d.train) == 9 and len(d.val) == 1 and len(d.test) == 1
    assert all(a.gt_poses is seq.gt_poses for a in d.train)
    assert np.array_equal(d.train[0].images, seq.images)
    assert not np.array_equal(d.train[1].images, seq.images)
    with pytest.raises(TooFewSequences):
        make_dataset(seqs[:2])
