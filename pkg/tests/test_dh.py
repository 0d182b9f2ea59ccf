import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spincal.dh import (CalibrationVector, DhParameterSet, MountKind, RigidTransform,
                        extrinsic_parts, free_parameters, jacobian_batch, point_jacobian_wrt_calib,
                        rot_x, rot_z, skew, to_dh, transform_points, transform_to_motor, wrap_angle)

from conftest import NON_OMNI, OMNI, random_vector

finite = st.floats(-10.0, 10.0, allow_nan=False)


def homogeneous_oracle(dh, p):
    """Independent 4x4 composition of the two DH joints."""

    def H(R, t):
        M = np.eye(4)
        M[:3, :3] = R
        M[:3, 3] = t
        return M

    def Rz(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])

    def Rx(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])

    T = (H(Rz(dh.theta1), np.zeros(3)) @ H(np.eye(3), [dh.a1, 0, dh.d1]) @ H(Rx(dh.phi1), np.zeros(3))
         @ H(Rz(dh.theta2), np.zeros(3)) @ H(np.eye(3), [dh.a2, 0, dh.d2]) @ H(Rx(dh.phi2), np.zeros(3)))
    return (T @ np.append(p, 1.0))[:3]


class TestElementaryRotations:
    def test_rot_x_identity_and_quarter_turn(self):
        assert np.array_equal(rot_x(0.0), np.eye(3))
        assert np.allclose(rot_x(math.pi / 2) @ [0, 1, 0], [0, 0, 1], atol=1e-15)
        assert np.allclose(rot_x(0.3) @ rot_x(-0.3), np.eye(3), atol=1e-12)

    @pytest.mark.parametrize("theta", [0.1, 1.0, 3.0])
    def test_rot_z_inverse(self, theta):
        assert np.allclose(rot_z(theta) @ rot_z(-theta), np.eye(3), atol=1e-12)

    def test_rot_z_quarter_turn(self):
        assert np.array_equal(rot_z(0.0), np.eye(3))
        assert np.allclose(rot_z(math.pi / 2) @ [1, 0, 0], [0, 1, 0], atol=1e-15)

    def test_skew_is_cross_product(self, rng):
        a, b = rng.normal(size=(2, 3))
        assert np.allclose(skew(a) @ b, np.cross(a, b), atol=1e-15)


class TestWrapAngle:
    @pytest.mark.parametrize("value, expected", [(math.pi, math.pi), (-math.pi, math.pi),
                                                 (3 * math.pi, math.pi), (0.0, 0.0),
                                                 (2 * math.pi + 0.5, 0.5)])
    def test_known_values(self, value, expected):
        assert wrap_angle(value) == pytest.approx(expected, abs=1e-12)

    @given(st.floats(-1e4, 1e4, allow_nan=False))
    def test_range(self, x):
        w = wrap_angle(x)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.cos(w), math.cos(x), abs_tol=1e-9)


class TestParameterSlots:
    def test_omni_slots(self):
        dh = to_dh(CalibrationVector(0.2, 0.05, 0.1, 1.0, OMNI), 0.0, 0.0)
        assert dh == DhParameterSet(0, 0, 0.1, 1.0, 0.2, 0.05, 0, 0)

    def test_non_omni_slots(self):
        dh = to_dh(CalibrationVector(0.2, 0.05, 0.1, 1.0, NON_OMNI), 0.0, 0.0)
        assert dh == DhParameterSet(0, 0, 0, math.pi / 2, 0.2, 0.05, 0.1, 1.0)

    @pytest.mark.parametrize("kind", [OMNI, NON_OMNI])
    def test_round_trip(self, kind, rng):
        for _ in range(20):
            x = random_vector(rng, kind)
            assert free_parameters(to_dh(x, 0.4, 0.02), kind) == x

    def test_angles_are_wrapped(self):
        x = CalibrationVector(4.0, 0, 0, -4.0, OMNI)
        assert x.theta_bar == pytest.approx(4.0 - 2 * math.pi)
        assert x.phi_bar == pytest.approx(-4.0 + 2 * math.pi)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            CalibrationVector(math.nan, 0, 0, 0, OMNI)
        with pytest.raises(ValueError):
            DhParameterSet(0, math.inf, 0, 0, 0, 0, 0, 0)

    @pytest.mark.parametrize("alias, kind", [("mid360", OMNI), ("Avia", NON_OMNI),
                                             ("spinning_omni", OMNI), ("non-omni", NON_OMNI)])
    def test_mount_aliases(self, alias, kind):
        assert MountKind.parse(alias) is kind

    def test_unknown_mount(self):
        with pytest.raises(ValueError):
            MountKind.parse("tripod")


class TestTransform:
    def test_identity(self):
        dh = DhParameterSet(0, 0, 0, 0, 0, 0, 0, 0)
        assert np.array_equal(transform_to_motor(dh, [1, 2, 3]), [1, 2, 3])

    def test_pure_spin(self):
        dh = DhParameterSet(math.pi / 2, 0, 0, 0, 0, 0, 0, 0)
        assert np.allclose(transform_to_motor(dh, [1, 0, 0]), [0, 1, 0], atol=1e-15)

    def test_homogeneous_oracle(self, rng):
        worst = 0.0
        for _ in range(1000):
            dh = DhParameterSet(*rng.uniform(-math.pi, math.pi, 8) * np.array([1, 0.1, 0.1, 1, 1, 0.1, 0.1, 1]))
            p = rng.uniform(-20, 20, 3)
            worst = max(worst, np.max(np.abs(transform_to_motor(dh, p) - homogeneous_oracle(dh, p))))
        assert worst < 1e-12

    @pytest.mark.parametrize("kind", [OMNI, NON_OMNI])
    def test_batch_matches_single(self, kind, rng):
        x = random_vector(rng, kind)
        theta = rng.uniform(-math.pi, math.pi, 50)
        pts = rng.normal(size=(50, 3)) * 5
        batch = transform_points(x, theta, pts, d1=0.07)
        single = np.array([transform_to_motor(to_dh(x, t, 0.07), p) for t, p in zip(theta, pts)])
        assert np.max(np.abs(batch - single)) < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.lists(finite, min_size=14, max_size=14))
    def test_isometry(self, v):
        dh = DhParameterSet(*v[:8])
        p, q = np.array(v[8:11]), np.array(v[11:14])
        tp, tq = transform_to_motor(dh, p), transform_to_motor(dh, q)
        assert abs(np.linalg.norm(tp - tq) - np.linalg.norm(p - q)) < 1e-12 * max(1.0, np.linalg.norm(p - q)) * 10

    def test_extrinsic_parts_orthonormal(self, rng):
        for kind in (OMNI, NON_OMNI):
            R, _ = extrinsic_parts(random_vector(rng, kind))
            assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
            assert np.linalg.det(R) == pytest.approx(1.0)


class TestRigidTransform:
    def test_compose_and_inverse(self, rng):
        R1 = rot_z(0.3) @ rot_x(-1.1)
        T = RigidTransform(R1, rng.normal(size=3))
        p = rng.normal(size=(5, 3))
        assert np.allclose(T.inverse().apply(T.apply(p)), p, atol=1e-12)
        assert np.allclose(T.compose(T.inverse()).rotation, np.eye(3), atol=1e-12)
        assert np.allclose(T.apply_vectors(p) + T.translation, T.apply(p))

    def test_rejects_reflection(self):
        with pytest.raises(ValueError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def finite_difference_jacobian(x, theta1, p, h=1e-6):
    J = np.empty((3, 4))
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        plus = transform_points(x.step(e), np.array([theta1]), p[None])[0]
        minus = transform_points(x.step(-e), np.array([theta1]), p[None])[0]
        J[:, k] = (plus - minus) / (2 * h)
    return J


class TestJacobian:
    @pytest.mark.parametrize("kind", [OMNI, NON_OMNI])
    def test_matches_finite_differences(self, kind, rng):
        worst = 0.0
        for _ in range(100):
            x = random_vector(rng, kind)
            theta1 = rng.uniform(-math.pi, math.pi)
            p = rng.uniform(-10, 10, 3)
            J = point_jacobian_wrt_calib(x, theta1, 0.0, p)
            J_fd = finite_difference_jacobian(x, theta1, p)
            worst = max(worst, np.max(np.abs(J - J_fd)) / max(np.max(np.abs(J_fd)), 1e-12))
        assert worst < 1e-5

    @pytest.mark.parametrize("kind", [OMNI, NON_OMNI])
    def test_translation_columns_are_unit(self, kind, rng):
        x = random_vector(rng, kind)
        jac = jacobian_batch(x, rng.uniform(-3, 3, 20), rng.normal(size=(20, 3)))
        assert np.allclose(np.linalg.norm(jac[:, :, 1], axis=1), 1.0, atol=1e-12)
        assert np.allclose(np.linalg.norm(jac[:, :, 2], axis=1), 1.0, atol=1e-12)

    def test_d1_does_not_enter(self, rng):
        x = random_vector(rng, OMNI)
        p = rng.normal(size=3)
        assert np.array_equal(point_jacobian_wrt_calib(x, 0.3, 0.0, p),
                              point_jacobian_wrt_calib(x, 0.3, 1.5, p))
