"""Two-joint Denavit-Hartenberg model of the LiDAR-to-motor transform.

A motor-frame point is

    p_M = Rz(theta1) (Rx(phi1) Rz(theta2) (Rx(phi2) p_L + t1) + t2)

with ``t1 = (a2, 0, d2)`` and ``t2 = (a1, 0, d1)``. ``theta1`` comes from the
encoder and ``d1`` from the mechanical drawing; four of the remaining six
slots are calibrated and two are fixed by the mount kind.
"""

from dataclasses import dataclass, field
from enum import Enum
import math

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(angle):
    """Reduce an angle (scalar or array) to the half-open interval (-pi, pi]."""
    wrapped = math.pi - np.mod(math.pi - np.asarray(angle, dtype=float), TWO_PI)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def rot_x(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[1.0, 0.0, 0.0],
                     [0.0, c, -s],
                     [0.0, s, c]])


def rot_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0],
                     [s, c, 0.0],
                     [0.0, 0.0, 1.0]])


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


class MountKind(str, Enum):
    """Which pair of DH slots is fixed.

    ``SPINNING_OMNI`` fixes ``a2 = 0, phi2 = 0`` and calibrates
    ``(theta2, d2, a1, phi1)``; ``SPINNING_NON_OMNI`` fixes ``a1 = 0,
    phi1 = pi/2`` and calibrates ``(theta2, d2, a2, phi2)``.
    """

    SPINNING_OMNI = "omni"
    SPINNING_NON_OMNI = "non-omni"

    @classmethod
    def parse(cls, value) -> "MountKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"omni": cls.SPINNING_OMNI, "spinning-omni": cls.SPINNING_OMNI,
                   "mid360": cls.SPINNING_OMNI,
                   "non-omni": cls.SPINNING_NON_OMNI, "nonomni": cls.SPINNING_NON_OMNI,
                   "spinning-non-omni": cls.SPINNING_NON_OMNI, "avia": cls.SPINNING_NON_OMNI}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown mount kind {value!r}") from None


_ANGLE_FIELDS = ("theta1", "phi1", "theta2", "phi2")


@dataclass(frozen=True)
class DhParameterSet:
    theta1: float
    d1: float
    a1: float
    phi1: float
    theta2: float
    d2: float
    a2: float
    phi2: float

    def __post_init__(self):
        for name in ("theta1", "d1", "a1", "phi1", "theta2", "d2", "a2", "phi2"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"DH parameter {name} is not finite: {value}")
            if name in _ANGLE_FIELDS:
                value = wrap_angle(value)
            object.__setattr__(self, name, value)

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.d1, self.a1, self.phi1,
                         self.theta2, self.d2, self.a2, self.phi2])


@dataclass(frozen=True)
class CalibrationVector:
    """The four free DH values ``[theta_bar, d_bar, a_bar, phi_bar]``."""

    theta_bar: float
    d_bar: float
    a_bar: float
    phi_bar: float
    kind: MountKind = field(default=MountKind.SPINNING_OMNI)

    def __post_init__(self):
        object.__setattr__(self, "kind", MountKind.parse(self.kind))
        for name in ("theta_bar", "d_bar", "a_bar", "phi_bar"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} is not finite: {value}")
            if name in ("theta_bar", "phi_bar"):
                value = wrap_angle(value)
            object.__setattr__(self, name, value)

    def as_array(self) -> np.ndarray:
        return np.array([self.theta_bar, self.d_bar, self.a_bar, self.phi_bar])

    @classmethod
    def from_array(cls, values, kind) -> "CalibrationVector":
        t, d, a, p = (float(v) for v in values)
        return cls(t, d, a, p, MountKind.parse(kind))

    def step(self, delta) -> "CalibrationVector":
        """Additive update; angles are re-wrapped by the constructor."""
        return CalibrationVector.from_array(self.as_array() + np.asarray(delta), self.kind)


def to_dh(x: CalibrationVector, theta1: float = 0.0, d1: float = 0.0) -> DhParameterSet:
    if x.kind is MountKind.SPINNING_OMNI:
        return DhParameterSet(theta1, d1, x.a_bar, x.phi_bar, x.theta_bar, x.d_bar, 0.0, 0.0)
    return DhParameterSet(theta1, d1, 0.0, math.pi / 2, x.theta_bar, x.d_bar, x.a_bar, x.phi_bar)


def free_parameters(dh: DhParameterSet, kind) -> CalibrationVector:
    """Inverse of :func:`to_dh` on the free slots."""
    kind = MountKind.parse(kind)
    if kind is MountKind.SPINNING_OMNI:
        return CalibrationVector(dh.theta2, dh.d2, dh.a1, dh.phi1, kind)
    return CalibrationVector(dh.theta2, dh.d2, dh.a2, dh.phi2, kind)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or np.linalg.det(R) < 0:
            raise ValueError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def apply_vectors(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self * other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)


def transform_to_motor(dh: DhParameterSet, p_L) -> np.ndarray:
    """Map LiDAR-frame point(s) ``(3,)`` or ``(N, 3)`` into the motor frame."""
    p = np.asarray(p_L, dtype=float)
    t1 = np.array([dh.a2, 0.0, dh.d2])
    t2 = np.array([dh.a1, 0.0, dh.d1])
    inner = p @ rot_x(dh.phi2).T + t1
    mid = inner @ (rot_x(dh.phi1) @ rot_z(dh.theta2)).T + t2
    return mid @ rot_z(dh.theta1).T


def extrinsic_parts(x: CalibrationVector, d1: float = 0.0):
    """``(R_bar, t_bar)`` so that ``p_M = Rz(theta1) (R_bar p_L + t_bar)``."""
    dh = to_dh(x, 0.0, d1)
    A = rot_x(dh.phi1) @ rot_z(dh.theta2)
    R_bar = A @ rot_x(dh.phi2)
    t_bar = A @ np.array([dh.a2, 0.0, dh.d2]) + np.array([dh.a1, 0.0, dh.d1])
    return R_bar, t_bar


def _spin(theta1, vecs):
    """Rotate each row of ``vecs`` about z by its own angle."""
    c = np.cos(theta1)
    s = np.sin(theta1)
    out = np.empty_like(vecs)
    out[..., 0] = c * vecs[..., 0] - s * vecs[..., 1]
    out[..., 1] = s * vecs[..., 0] + c * vecs[..., 1]
    out[..., 2] = vecs[..., 2]
    return out


def transform_points(x: CalibrationVector, theta1, points, d1: float = 0.0) -> np.ndarray:
    """Vectorised motor-frame transform with a per-point encoder angle."""
    R_bar, t_bar = extrinsic_parts(x, d1)
    pts = np.asarray(points, dtype=float)
    return _spin(np.asarray(theta1, dtype=float), pts @ R_bar.T + t_bar)


def jacobian_batch(x: CalibrationVector, theta1, points) -> np.ndarray:
    """``(N, 3, 4)`` derivatives of motor-frame points w.r.t. the free values.

    Column order is ``(theta_bar, d_bar, a_bar, phi_bar)``. Rotation columns
    are the local right-multiplied perturbations, which coincide with the
    plain partial derivatives of the DH chain.
    """
    dh = to_dh(x)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    th = np.broadcast_to(np.asarray(theta1, dtype=float), pts.shape[:1])
    Rx1 = rot_x(dh.phi1)
    Rz2 = rot_z(dh.theta2)
    Rx2 = rot_x(dh.phi2)
    A = Rx1 @ Rz2
    v = pts @ Rx2.T + np.array([dh.a2, 0.0, dh.d2])  # Rx(phi2) p + t1
    jac = np.empty((pts.shape[0], 3, 4))
    # theta2: A (e3 x v)
    e3xv = np.stack([-v[:, 1], v[:, 0], np.zeros(len(v))], axis=1)
    jac[:, :, 0] = _spin(th, e3xv @ A.T)
    # d2: A e3
    jac[:, :, 1] = _spin(th, np.broadcast_to(A[:, 2], (len(v), 3)))
    if x.kind is MountKind.SPINNING_OMNI:
        # a1: e1
        jac[:, :, 2] = _spin(th, np.broadcast_to(np.array([1.0, 0.0, 0.0]), (len(v), 3)))
        # phi1: Rx(phi1) (e1 x w), w = Rz(theta2) v
        w = v @ Rz2.T
        e1xw = np.stack([np.zeros(len(w)), -w[:, 2], w[:, 1]], axis=1)
        jac[:, :, 3] = _spin(th, e1xw @ Rx1.T)
    else:
        # a2: A e1
        jac[:, :, 2] = _spin(th, np.broadcast_to(A[:, 0], (len(v), 3)))
        # phi2: A Rx(phi2) (e1 x p)
        e1xp = np.stack([np.zeros(len(pts)), -pts[:, 2], pts[:, 1]], axis=1)
        jac[:, :, 3] = _spin(th, e1xp @ (A @ Rx2).T)
    return jac


def second_derivative_contraction(x: CalibrationVector, theta1, points, weights) -> np.ndarray:
    """``sum_i w_i . d2 p_i / dx_j dx_k`` as a (4, 4) matrix.

    ``weights`` are motor-frame 3-vectors, one per point. This is the part of
    the cost Hessian that :func:`jacobian_batch` alone cannot supply.
    """
    dh = to_dh(x)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    th = np.broadcast_to(np.asarray(theta1, dtype=float), pts.shape[:1])
    # pull the weights back through the spin so everything below is pre-spin
    w = _spin(-th, np.asarray(weights, dtype=float).reshape(-1, 3))
    K1 = skew([1.0, 0.0, 0.0])
    K3 = skew([0.0, 0.0, 1.0])
    Rx1 = rot_x(dh.phi1)
    Rz2 = rot_z(dh.theta2)
    Rx2 = rot_x(dh.phi2)
    A = Rx1 @ Rz2
    v = pts @ Rx2.T + np.array([dh.a2, 0.0, dh.d2])
    wsum = w.sum(axis=0)

    def dot(M, vecs=None):
        # sum_i w_i . M vecs_i, or wsum . M when the vector is constant
        if vecs is None:
            return float(wsum @ M)
        return float(np.einsum("nk,nk->", w, vecs @ M.T))

    H = np.zeros((4, 4))
    H[0, 0] = dot(A @ K3 @ K3, v)
    if x.kind is MountKind.SPINNING_OMNI:
        H[0, 3] = dot(Rx1 @ K1 @ Rz2 @ K3, v)
        H[3, 3] = dot(Rx1 @ K1 @ K1 @ Rz2, v)
        H[1, 3] = dot(Rx1 @ K1 @ np.array([0.0, 0.0, 1.0]))
    else:
        H[0, 3] = dot(A @ K3 @ Rx2 @ K1, pts)
        H[3, 3] = dot(A @ Rx2 @ K1 @ K1, pts)
        H[0, 2] = dot(A @ K3 @ np.array([1.0, 0.0, 0.0]))
    return H + np.triu(H, 1).T


def point_jacobian_wrt_calib(x: CalibrationVector, theta1: float, d1: float, p_L) -> np.ndarray:
    """3x4 derivative of one motor-frame point; ``d1`` does not enter it."""
    del d1
    return jacobian_batch(x, np.array([theta1]), np.asarray(p_L, dtype=float)[None, :])[0]
