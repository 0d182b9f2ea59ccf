"""Synthetic spinning-LiDAR scans of virtual-plane scenes.

The base is static: only the motor turns, at a constant speed, so the true
encoder angle at time ``t`` is ``theta0 + motor_speed * t``.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
import math

import numpy as np

from .. import kernels
from ..dh import CalibrationVector, MountKind, RigidTransform, _spin, extrinsic_parts, wrap_angle
from ..planes import LaserPoint
from ..uncertainty import NoiseModel, perturb_bearings
from .scenes import SceneSpec

DEFAULT_MOTOR_SPEED = 7.85  # rad/s


class SensorKind(str, Enum):
    MID360_LIKE = "mid360"
    AVIA_LIKE = "avia"


# Range/bearing noise for the simulated sensors. Not taken from a datasheet;
# small enough that 0.25 m voxels of a noisy plane still pass the planarity test.
DEFAULT_NOISE = NoiseModel(sigma_depth=0.005, sigma_bearing=0.0005, sigma_encoder=1e-4)


@dataclass(frozen=True)
class SensorModel:
    kind: SensorKind
    range_max: float
    points_per_second: float
    fov_h: float  # degrees
    fov_v: float  # degrees
    encoder_rate: float = 200.0
    scan_rate: float = 10.0
    noise: NoiseModel = field(default_factory=NoiseModel)

    def __post_init__(self):
        object.__setattr__(self, "kind", SensorKind(self.kind))
        for name in ("range_max", "points_per_second", "encoder_rate", "scan_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("fov_h", "fov_v"):
            if not 0 < getattr(self, name) <= 360:
                raise ValueError(f"{name} must lie in (0, 360]")

    @classmethod
    def mid360(cls, noise: NoiseModel | None = None, points_per_second: float = 200_000.0) -> "SensorModel":
        return cls(SensorKind.MID360_LIKE, 40.0, points_per_second, 360.0, 59.0,
                   noise=DEFAULT_NOISE if noise is None else noise)

    @classmethod
    def avia(cls, noise: NoiseModel | None = None, points_per_second: float = 240_000.0) -> "SensorModel":
        return cls(SensorKind.AVIA_LIKE, 100.0, points_per_second, 70.4, 77.2,
                   noise=DEFAULT_NOISE if noise is None else noise)

    @classmethod
    def for_mount(cls, mount, **kwargs) -> "SensorModel":
        if MountKind.parse(mount) is MountKind.SPINNING_OMNI:
            return cls.mid360(**kwargs)
        return cls.avia(**kwargs)

    def with_noise(self, noise: NoiseModel) -> "SensorModel":
        return replace(self, noise=noise)

    def noise_free(self) -> "SensorModel":
        return replace(self, noise=NoiseModel())

    def with_density(self, points_per_second: float) -> "SensorModel":
        return replace(self, points_per_second=float(points_per_second))


class EmptyScanError(RuntimeError):
    pass


@dataclass
class ScanFrame:
    """LiDAR-frame returns plus the encoder stream recorded alongside them."""

    points: np.ndarray  # (N, 3) LiDAR frame
    timestamps: np.ndarray  # (N,)
    encoder_t: np.ndarray  # (K,)
    encoder_theta: np.ndarray  # (K,)
    frame_span: float
    true_theta: np.ndarray | None = None  # (N,) simulator ground truth
    plane_index: np.ndarray | None = None  # (N,) simulator ground truth

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        self.encoder_t = np.asarray(self.encoder_t, dtype=float).reshape(-1)
        self.encoder_theta = np.asarray(self.encoder_theta, dtype=float).reshape(-1)
        if len(self.points) != len(self.timestamps):
            raise ValueError("points and timestamps differ in length")
        if len(self.encoder_t) != len(self.encoder_theta):
            raise ValueError("encoder timestamps and angles differ in length")

    def __len__(self):
        return len(self.points)

    def laser_points(self):
        for p, t in zip(self.points, self.timestamps):
            yield LaserPoint(p, float(t))

    def encoder_angles(self) -> np.ndarray:
        from ..uncertainty import interpolate_encoder_stream

        return interpolate_encoder_stream(self.encoder_t, self.encoder_theta, self.timestamps)

    def subset(self, mask) -> "ScanFrame":
        pick = lambda a: None if a is None else a[mask]
        return ScanFrame(self.points[mask], self.timestamps[mask], self.encoder_t,
                         self.encoder_theta, self.frame_span, pick(self.true_theta),
                         pick(self.plane_index))


def ray_cast(origin, direction, scene: SceneSpec, range_max: float = math.inf):
    """Nearest hit of one ray: ``(point, range)`` or ``None``."""
    o = np.asarray(origin, dtype=float).reshape(1, 3)
    d = np.asarray(direction, dtype=float).reshape(1, 3)
    ranges, index = kernels.ray_cast(o, d, *scene.arrays(), range_max)
    if index[0] < 0:
        return None
    r = float(ranges[0])
    return o[0] + r * d[0], r


def beam_directions(sensor: SensorModel, timestamps, rng) -> np.ndarray:
    """Unit beam directions in the LiDAR frame.

    Mid360-like: z is the mirror axis; beams spread uniformly over azimuth and
    the vertical band. Avia-like: x looks forward and beams follow a
    two-prism rosette filling the rectangular FOV.
    """
    n = len(timestamps)
    if sensor.kind is SensorKind.MID360_LIKE:
        az = rng.uniform(-math.pi, math.pi, n) * (sensor.fov_h / 360.0)
        half_v = math.radians(sensor.fov_v) / 2.0
        el = rng.uniform(-half_v, half_v, n)
        ce = np.cos(el)
        return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=1)
    w1 = 2.0 * math.pi * 1327.0
    w2 = 2.0 * math.pi * -2113.0
    t = np.asarray(timestamps, dtype=float)
    re = 0.5 * (np.cos(w1 * t) + np.cos(w2 * t))
    im = 0.5 * (np.sin(w1 * t) + np.sin(w2 * t))
    az = re * math.radians(sensor.fov_h) / 2.0
    el = im * math.radians(sensor.fov_v) / 2.0
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=1)


def revolutions_duration(motor_speed: float, revolutions: float = 2.0) -> float:
    return revolutions * 2.0 * math.pi / abs(motor_speed)


def generate_scan(scene: SceneSpec, gt: CalibrationVector, mount=None,
                  motor_speed: float = DEFAULT_MOTOR_SPEED, sensor: SensorModel | None = None,
                  duration: float | None = None, seed: int = 0, d1: float = 0.0,
                  base_pose: RigidTransform | None = None, theta0: float = 0.0) -> ScanFrame:
    """Simulate one static-base scan of ``scene`` under ground truth ``gt``.

    ``duration`` defaults to two motor revolutions. ``base_pose`` places the
    motor frame in the scene's world frame (identity when omitted).
    """
    mount = gt.kind if mount is None else MountKind.parse(mount)
    if mount is not gt.kind:
        gt = CalibrationVector.from_array(gt.as_array(), mount)
    if sensor is None:
        sensor = SensorModel.for_mount(mount)
    if duration is None:
        duration = revolutions_duration(motor_speed)
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(sensor.points_per_second * duration))
    t = np.arange(n) / sensor.points_per_second
    dirs_L = beam_directions(sensor, t, rng)
    theta = wrap_angle(theta0 + motor_speed * t)
    R_bar, t_bar = extrinsic_parts(gt, d1)
    origins = _spin(theta, np.broadcast_to(t_bar, (n, 3)).copy())
    dirs = _spin(theta, dirs_L @ R_bar.T)
    if base_pose is not None:
        origins = base_pose.apply(origins)
        dirs = base_pose.apply_vectors(dirs)
    ranges, index = kernels.ray_cast(origins, dirs, *scene.arrays(), sensor.range_max)

    noise = sensor.noise
    depth_noise = rng.normal(0.0, 1.0, n) * noise.sigma_depth
    bearing_noise = rng.normal(0.0, 1.0, (n, 2)) * noise.sigma_bearing
    hit = index >= 0
    if not np.any(hit):
        raise EmptyScanError(f"scan of {scene.name!r} produced no returns")
    r = ranges[hit] + depth_noise[hit]
    bearings = dirs_L[hit]
    if noise.sigma_bearing > 0:
        bearings = perturb_bearings(bearings, bearing_noise[hit])
    points = r[:, None] * bearings

    k = int(math.floor(duration * sensor.encoder_rate)) + 2
    enc_t = np.arange(k) / sensor.encoder_rate
    enc_theta = theta0 + motor_speed * enc_t
    if noise.sigma_encoder > 0:
        enc_theta = enc_theta + rng.normal(0.0, noise.sigma_encoder, k)
    return ScanFrame(points, t[hit], enc_t, wrap_angle(enc_theta), float(duration),
                     true_theta=theta[hit], plane_index=index[hit])


# ---------------------------------------------------------------------------
# ground truth and initial guesses
# ---------------------------------------------------------------------------

DEGENERATE_BAND = math.radians(5.0)


def sample_ground_truth(mount, seed=None, rng=None) -> CalibrationVector:
    """Draw a mounting from the uniform ground-truth distributions.

    Omni draws with ``phi_bar`` within 5 degrees of 0 or pi are redrawn.
    """
    mount = MountKind.parse(mount)
    rng = np.random.default_rng(seed) if rng is None else rng
    while True:
        d = rng.uniform(-0.1, 0.1)
        a = rng.uniform(-0.1, 0.1)
        if mount is MountKind.SPINNING_OMNI:
            theta = rng.uniform(-math.pi, math.pi)
            phi = rng.uniform(0.0, math.pi)
            if min(phi, math.pi - phi) < DEGENERATE_BAND:
                continue
        else:
            theta = rng.uniform(-math.pi / 8, math.pi / 8)
            phi = rng.uniform(-math.pi, math.pi)
        return CalibrationVector(theta, d, a, phi, mount)


TABLE_ROT_SIGMA = math.radians(5.0)
TABLE_TRANS_SIGMA = 0.05


def perturb_initial(gt: CalibrationVector, rot_sigma: float = TABLE_ROT_SIGMA,
                    trans_sigma: float = TABLE_TRANS_SIGMA, seed=None, rng=None) -> CalibrationVector:
    """Zero-mean Gaussian perturbation of each free parameter."""
    if rot_sigma < 0 or trans_sigma < 0:
        raise ValueError("perturbation sigmas must be nonnegative")
    rng = np.random.default_rng(seed) if rng is None else rng
    z = rng.normal(size=4)
    scale = np.array([rot_sigma, trans_sigma, trans_sigma, rot_sigma])
    return gt.step(z * scale)
