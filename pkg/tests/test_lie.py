import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vinet import lie
from vinet.gradcheck import check_compose, check_exp_se3, rel_error, tangent_grad
from vinet.lie import Pose, Twist

finite = st.floats(-10.0, 10.0, allow_nan=False)
vec3 = arrays(float, 3, elements=finite)


@st.composite
def rotvecs(draw, max_angle=3.0):
    axis = draw(arrays(float, 3, elements=st.floats(-1.0, 1.0)))
    n = np.linalg.norm(axis)
    if n < 1e-3:
        axis, n = np.array([0.0, 0.0, 1.0]), 1.0
    return axis / n * draw(st.floats(0.0, max_angle))


@st.composite
def poses(draw):
    return lie.exp_se3(Twist(draw(rotvecs()), draw(vec3)))


def hamilton(a, b):
    # written out independently of lie.quat_mul
    a0, a1, a2, a3 = a
    b0, b1, b2, b3 = b
    return np.array([
        a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
        a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
        a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
        a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
    ])


def pose_close(a, b, tol):
    return np.allclose(a.matrix(), b.matrix(), atol=tol, rtol=0)


# -- hat / vee ----------------------------------------------------------------


def test_hat_examples():
    assert np.array_equal(lie.hat([0, 0, 0]), np.zeros((3, 3)))
    assert np.array_equal(lie.hat([1, 2, 3]), [[0, -3, 2], [3, 0, -1], [-2, 1, 0]])


@given(vec3)
def test_hat_vee(w):
    m = lie.hat(w)
    assert np.array_equal(m, -m.T)
    assert np.array_equal(lie.vee(m), w)
    assert np.allclose(m @ w, 0.0, atol=1e-12)


# -- SO(3) --------------------------------------------------------------------


def test_exp_so3_zero_is_identity():
    assert np.array_equal(lie.exp_so3(np.zeros(3)), np.eye(3))


def test_exp_so3_quarter_turn_about_x():
    r = lie.exp_so3([math.pi / 2, 0, 0])
    q = np.array([math.cos(math.pi / 4), math.sin(math.pi / 4), 0.0, 0.0])
    qc = q * [1, -1, -1, -1]
    rotated = hamilton(hamilton(q, [0.0, 0.0, 1.0, 0.0]), qc)[1:]
    assert np.allclose(rotated, [0, 0, 1], atol=1e-15)
    assert np.allclose(r @ [0, 1, 0], rotated, atol=1e-15)


def test_log_so3_examples():
    assert np.array_equal(lie.log_so3(np.eye(3)), np.zeros(3))
    w = np.array([0.1, 0.2, 0.3])
    assert np.allclose(lie.log_so3(lie.exp_so3(w)), w, atol=1e-9, rtol=0)


def test_log_near_pi_rejected():
    r = lie.exp_so3([math.pi - 1e-7, 0.0, 0.0])
    with pytest.raises(lie.AngleNearPi):
        lie.log_so3(r)
    with pytest.raises(lie.AngleNearPi):
        lie.log_se3(Pose.from_rotation(r))


@given(rotvecs(max_angle=math.pi - 0.01))
def test_so3_round_trip(w):
    r = lie.exp_so3(w)
    assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(r) - 1.0) < 1e-12
    assert np.allclose(lie.log_so3(r), w, atol=1e-8, rtol=0)


@given(rotvecs(max_angle=math.pi - 0.01))
def test_quaternion_and_matrix_agree(w):
    q = lie.quat_exp(w)
    assert np.allclose(lie.quat_to_matrix(q), lie.exp_so3(w), atol=1e-12)
    assert np.allclose(lie.matrix_to_quat(lie.quat_to_matrix(q)), q, atol=1e-12)


@pytest.mark.parametrize("angle", [1e-9, 1e-6, 1e-5, 9.999e-3, 1e-2, 1.0001e-2, 0.1])
def test_series_branch_agrees_with_closed_form(angle):
    # the series branch and Rodrigues must agree on both sides of the switch
    w = np.array([0.6, -0.8, 0.0]) * angle
    k = lie.hat(w)
    closed = np.eye(3) + math.sin(angle) / angle * k + (1 - math.cos(angle)) / angle**2 * k @ k
    assert np.allclose(lie.exp_so3(w), closed, atol=1e-15)
    # left Jacobian against an independent midpoint quadrature of int_0^1 exp(s hat w) ds
    s = (np.arange(20000) + 0.5) / 20000
    quad = sum(lie.exp_so3(w * si) for si in s) / len(s)
    assert np.allclose(lie.left_jacobian(w), quad, atol=1e-9)


# -- SE(3) --------------------------------------------------------------------


def test_exp_se3_pure_translation():
    p = lie.exp_se3(Twist(np.zeros(3), [1.0, 2.0, 3.0]))
    assert np.array_equal(p.q, [1, 0, 0, 0])
    assert np.array_equal(p.t, [1, 2, 3])


def test_exp_se3_matches_screw_integration():
    # Riemann sum of dp/ds = R(s) v with R(s) a rotation by s*pi/2 about z, 1e6 steps
    n = 1_000_000
    s = np.arange(n) / n
    ang = s * math.pi / 2
    t = np.array([np.cos(ang).sum(), np.sin(ang).sum(), 0.0]) / n
    p = lie.exp_se3(Twist([0.0, 0.0, math.pi / 2], [1.0, 0.0, 0.0]))
    assert np.allclose(p.t, t, atol=2e-6, rtol=0)
    assert np.allclose(p.t, [2 / math.pi, 2 / math.pi, 0.0], atol=1e-15)


def test_log_se3_examples():
    xi = lie.log_se3(Pose.identity())
    assert np.array_equal(xi.as_vector(), np.zeros(6))
    xi = lie.log_se3(Pose(t=[0.5, -1.0, 2.0]))
    assert np.array_equal(xi.omega, np.zeros(3))
    assert np.allclose(xi.v, [0.5, -1.0, 2.0], atol=1e-15)


@given(rotvecs(), vec3)
def test_se3_round_trip(w, v):
    xi = lie.log_se3(lie.exp_se3(Twist(w, v)))
    assert np.allclose(xi.omega, w, atol=1e-8, rtol=0)
    assert np.allclose(xi.v, v, atol=1e-8, rtol=0)


@given(poses(), poses(), poses())
def test_group_axioms(a, b, c):
    assert pose_close(lie.compose(a, Pose.identity()), a, 1e-12)
    assert pose_close(lie.compose(a, lie.inverse(a)), Pose.identity(), 1e-9)
    assert pose_close(lie.compose(lie.compose(a, b), c), lie.compose(a, lie.compose(b, c)), 1e-9)
    assert np.allclose(lie.compose(a, b).matrix(), a.matrix() @ b.matrix(), atol=1e-9)


@given(poses(), poses())
def test_quaternions_stay_canonical(a, b):
    for p in (a, b, lie.compose(a, b), lie.inverse(a), lie.relative(a, b)):
        assert abs(np.linalg.norm(p.q) - 1.0) < 1e-12
        assert p.q[0] >= 0.0


def test_inverse_examples():
    assert pose_close(lie.inverse(Pose.identity()), Pose.identity(), 0.0)
    inv = lie.inverse(Pose(t=[1.0, 2.0, 3.0]))
    assert np.array_equal(inv.t, [-1, -2, -3])


def test_quaternion_sign_is_canonicalized():
    q = lie.quat_exp([0.3, -0.2, 0.1])
    assert pose_close(Pose(-q), Pose(q), 0.0)
    assert Pose(-q).q[0] > 0


def test_pose_round_trip_is_bitwise():
    p = lie.exp_se3(Twist([0.1, 0.2, -0.3], [1.0, 2.0, 3.0]))
    assert np.array_equal(Pose(p.q, p.t).q, p.q)


def test_value_types_validate():
    with pytest.raises(ValueError):
        Twist([math.pi, 0, 0], [0, 0, 0])
    with pytest.raises(lie.NonFiniteValue):
        Twist([np.nan, 0, 0], [0, 0, 0])
    with pytest.raises(ValueError):
        Pose([2.0, 0, 0, 0])
    with pytest.raises(lie.NonFiniteValue):
        Pose(t=[np.inf, 0, 0])


# -- backward passes ------------------------------------------------------------


def test_exp_backward_at_zero_is_identity():
    for i in range(6):
        e = np.eye(6)[i]
        assert np.allclose(lie.exp_se3_backward(Twist.zero(), e), e, atol=1e-15)


def test_compose_backward_pass_through():
    rng = np.random.default_rng(0)
    a = lie.oplus(Pose(), rng.normal(size=6))
    g = rng.normal(size=6)
    ga, _ = lie.compose_backward(a, Pose.identity(), g)
    assert np.allclose(ga, g, atol=1e-14)
    _, gb = lie.compose_backward(Pose.identity(), a, g)
    assert np.allclose(gb, g, atol=1e-14)


def test_backward_passes_match_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(100):
        assert check_exp_se3(rng).ok
        assert check_compose(rng).ok
    for angle in (0.0, 1e-7, 1e-5, 1e-2, 2.9):
        r = check_exp_se3(rng, angle)
        assert r.ok, r


def test_quat_grad_to_tangent():
    rng = np.random.default_rng(2)
    p = lie.oplus(Pose(), rng.normal(size=6))
    g = rng.normal(size=4)
    num = tangent_grad(lambda x: float(g @ x.q), p)
    ana = np.concatenate([lie.quat_grad_to_tangent(p.q, g), np.zeros(3)])
    assert rel_error(ana, num) < 1e-6
