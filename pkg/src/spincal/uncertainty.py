"""Per-point measurement noise and its first-order propagation L -> M -> W."""

from dataclasses import dataclass
from enum import Enum
import math

import numpy as np

from .dh import CalibrationVector, RigidTransform, extrinsic_parts, rot_z, skew, wrap_angle


@dataclass(frozen=True)
class NoiseModel:
    sigma_depth: float = 0.0
    sigma_bearing: float = 0.0
    sigma_encoder: float = 0.0

    def __post_init__(self):
        for name in ("sigma_depth", "sigma_bearing", "sigma_encoder"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def scaled(self, factor: float) -> "NoiseModel":
        return NoiseModel(self.sigma_depth * factor, self.sigma_bearing * factor,
                          self.sigma_encoder * factor)


def default_encoder_sigma(motor_speed: float, encoder_rate: float) -> float:
    """Angle std for a motor turning uniformly inside one encoder period.

    A modelling choice: the angle offset is treated as uniform over one
    sampling interval, giving ``omega * T / sqrt(12)``.
    """
    if encoder_rate <= 0:
        raise ValueError("encoder_rate must be positive")
    return abs(motor_speed) / encoder_rate / math.sqrt(12.0)


class Frame(str, Enum):
    L = "L"
    M = "M"
    W = "W"


@dataclass(frozen=True)
class PointCovariance:
    frame: Frame
    matrix: np.ndarray

    def __post_init__(self):
        S = np.array(self.matrix, dtype=float).reshape(3, 3)
        S = 0.5 * (S + S.T)
        object.__setattr__(self, "matrix", S)
        object.__setattr__(self, "frame", Frame(self.frame))

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))


@dataclass(frozen=True)
class PoseWithCovariance:
    transform: RigidTransform
    rot_cov: np.ndarray
    trans_cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rot_cov", np.array(self.rot_cov, dtype=float).reshape(3, 3))
        object.__setattr__(self, "trans_cov", np.array(self.trans_cov, dtype=float).reshape(3, 3))


def tangent_basis(omega) -> np.ndarray:
    """Orthonormal 3x2 basis of the plane orthogonal to ``omega``.

    Built from the Householder reflection that sends ``omega`` onto its
    largest-magnitude axis. Deterministic but not continuous in ``omega``.
    """
    w = np.asarray(omega, dtype=float).reshape(3)
    norm = np.linalg.norm(w)
    if norm == 0.0:
        raise ValueError("tangent basis of a zero vector")
    w = w / norm
    k = int(np.argmax(np.abs(w)))
    v = w.copy()
    v[k] += math.copysign(1.0, w[k])
    H = np.eye(3) - 2.0 * np.outer(v, v) / (v @ v)
    cols = [i for i in range(3) if i != k]
    return H[:, cols]


def tangent_basis_batch(omegas) -> np.ndarray:
    """Row-wise :func:`tangent_basis` for unit vectors ``(N, 3)`` -> ``(N, 3, 2)``."""
    w = np.asarray(omegas, dtype=float)
    n = len(w)
    k = np.argmax(np.abs(w), axis=1)
    v = w.copy()
    rows = np.arange(n)
    v[rows, k] += np.where(w[rows, k] < 0.0, -1.0, 1.0)
    H = np.eye(3)[None] - 2.0 * v[:, :, None] * v[:, None, :] / np.einsum("ni,ni->n", v, v)[:, None, None]
    cols = np.array([[1, 2], [0, 2], [0, 1]])[k]
    return np.take_along_axis(H, cols[:, None, :], axis=2)


def perturb_bearings(omegas, rotvec_tangent) -> np.ndarray:
    """Rotate unit bearings by tangent-plane rotation vectors ``(N, 2)``."""
    w = np.asarray(omegas, dtype=float)
    N = tangent_basis_batch(w)
    k = np.einsum("nij,nj->ni", N, rotvec_tangent)
    ang = np.linalg.norm(k, axis=1)
    safe = np.where(ang > 0.0, ang, 1.0)
    kxw = np.cross(k / safe[:, None], w)
    return np.cos(ang)[:, None] * w + np.sin(ang)[:, None] * kxw


def lidar_point_covariance(depth: float, omega, noise: NoiseModel) -> PointCovariance:
    """Covariance of ``d * omega`` under depth noise and tangent bearing noise."""
    if depth <= 0:
        raise ValueError("depth must be positive")
    w = np.asarray(omega, dtype=float).reshape(3)
    A = np.empty((3, 3))
    A[:, 0] = w
    A[:, 1:] = -depth * skew(w) @ tangent_basis(w)
    D = np.diag([noise.sigma_depth**2, noise.sigma_bearing**2, noise.sigma_bearing**2])
    return PointCovariance(Frame.L, A @ D @ A.T)


def interpolate_encoder(theta_a: float, theta_b: float, t_a: float, t_b: float, t_j: float) -> float:
    """Linear interpolation of the motor angle along the shortest arc."""
    if not t_b > t_a:
        raise ValueError(f"encoder timestamps not increasing: {t_a} >= {t_b}")
    if not t_a <= t_j <= t_b:
        raise ValueError(f"timestamp {t_j} outside [{t_a}, {t_b}]")
    lam = (t_j - t_a) / (t_b - t_a)
    if lam == 0.0:
        return float(theta_a)
    step = wrap_angle(theta_b - theta_a)
    return wrap_angle(theta_a + lam * step)


class EncoderCoverageError(ValueError):
    def __init__(self, timestamp: float):
        super().__init__(f"encoder stream does not cover point timestamp {timestamp!r}")
        self.timestamp = timestamp


def interpolate_encoder_stream(enc_t, enc_theta, t) -> np.ndarray:
    """Vectorised :func:`interpolate_encoder` over a whole encoder stream."""
    enc_t = np.asarray(enc_t, dtype=float)
    enc_theta = np.asarray(enc_theta, dtype=float)
    t = np.asarray(t, dtype=float)
    if len(enc_t) < 2 or np.any(np.diff(enc_t) <= 0):
        raise ValueError("encoder timestamps must be strictly increasing with >= 2 samples")
    outside = (t < enc_t[0]) | (t > enc_t[-1]) | ~np.isfinite(t)
    if np.any(outside):
        raise EncoderCoverageError(float(t[np.flatnonzero(outside)[0]]))
    hi = np.clip(np.searchsorted(enc_t, t, side="right"), 1, len(enc_t) - 1)
    lo = hi - 1
    lam = (t - enc_t[lo]) / (enc_t[hi] - enc_t[lo])
    step = wrap_angle(enc_theta[hi] - enc_theta[lo])
    return wrap_angle(enc_theta[lo] + lam * step)


def motor_jacobians(p_L, x: CalibrationVector, theta_j: float, d1: float = 0.0):
    """Point in M and its derivatives w.r.t. the encoder angle and ``p_L``."""
    R_bar, t_bar = extrinsic_parts(x, d1)
    Rz = rot_z(theta_j)
    inner = R_bar @ np.asarray(p_L, dtype=float) + t_bar
    J_theta = (-Rz @ skew(inner))[:, 2]
    J_p = Rz @ R_bar
    return Rz @ inner, J_theta, J_p


def propagate_to_motor(p_L, cov_L: PointCovariance, x: CalibrationVector, theta_j: float,
                       sigma_encoder: float, d1: float = 0.0):
    if cov_L.frame is not Frame.L:
        raise ValueError("input covariance must be in the LiDAR frame")
    p_M, J_theta, J_p = motor_jacobians(p_L, x, theta_j, d1)
    S = sigma_encoder**2 * np.outer(J_theta, J_theta) + J_p @ cov_L.matrix @ J_p.T
    return p_M, PointCovariance(Frame.M, S)


def propagate_to_world(p_M, cov_M: PointCovariance, body_extrinsic: RigidTransform,
                       pose: PoseWithCovariance):
    if cov_M.frame is not Frame.M:
        raise ValueError("input covariance must be in the motor frame")
    R_WB = pose.transform.rotation
    p_B = body_extrinsic.apply(p_M)
    J_R = -R_WB @ skew(p_B)
    J_p = R_WB @ body_extrinsic.rotation
    S = (J_R @ pose.rot_cov @ J_R.T + J_p @ cov_M.matrix @ J_p.T + pose.trans_cov)
    return pose.transform.apply(p_B), PointCovariance(Frame.W, S)
