"""Plane-thickness calibration of the LiDAR-motor extrinsics.

The cost is the sum over voxel-extracted planes of the smallest eigenvalue
of each plane's point covariance. Levenberg-Marquardt runs in rounds: each
round re-voxelizes the cloud at the current estimate with the root voxel
size the schedule gives for that round, then takes damped steps on that
frozen feature set until the cost stops moving.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import kernels
from .dh import (CalibrationVector, MountKind, jacobian_batch, second_derivative_contraction,
                 transform_points)
from .planes import PlaneFeature, VoxelizationConfig, voxelize
from .uncertainty import interpolate_encoder_stream

DEFAULT_SCHEDULE = ((2, 1.0), (2, 0.5), (None, 0.25))
EIGENGAP_FLOOR = 1e-9
# eig_min(H) / eig_max(H) below this flags a degenerate direction; healthy
# scans sit around 1e-2..1e-1, a plane-starved or singular mount below 1e-6
DEGENERACY_RATIO = 1e-4
# a tenth of the nominal sensor rate keeps a 10 degree sweep to a few minutes
OBSERVABILITY_POINTS_PER_SECOND = 20_000.0
HESSIAN_MODES = ("gauss-newton", "exact")


class NoFeaturesError(RuntimeError):
    """Voxelization produced no plane features."""


class DegenerateFeaturesError(RuntimeError):
    """Every feature failed the eigengap test."""


class FeatureSet:
    """LiDAR-frame points grouped by a frozen plane partition.

    ``points_L[starts[g]:starts[g+1]]`` are the members of feature ``g``.
    """

    def __init__(self, points_L, theta1, starts, d1: float = 0.0, eigengap_floor: float = EIGENGAP_FLOOR):
        self.points_L = np.ascontiguousarray(points_L, dtype=float)
        self.theta1 = np.ascontiguousarray(theta1, dtype=float)
        self.starts = np.ascontiguousarray(starts, dtype=np.int64)
        self.d1 = float(d1)
        self.eigengap_floor = float(eigengap_floor)

    @classmethod
    def from_partition(cls, points_L, theta1, partition, **kwargs) -> "FeatureSet":
        return cls(np.asarray(points_L)[partition.order], np.asarray(theta1)[partition.order],
                   partition.starts, **kwargs)

    @classmethod
    def from_features(cls, points_L, theta1, features, **kwargs) -> "FeatureSet":
        idx = [np.asarray(f.point_indices) for f in features]
        order = np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64)
        starts = np.concatenate(([0], np.cumsum([len(i) for i in idx]))).astype(np.int64)
        return cls(np.asarray(points_L)[order], np.asarray(theta1)[order], starts, **kwargs)

    def __len__(self):
        return len(self.starts) - 1

    def motor_points(self, x: CalibrationVector) -> np.ndarray:
        return transform_points(x, self.theta1, self.points_L, self.d1)

    def cost(self, x: CalibrationVector) -> float:
        lam, *_ = kernels.plane_terms(self.motor_points(x), self.starts)
        return float(np.sum(lam[:, 0]))

    def derivatives(self, x: CalibrationVector, mode: str = "gauss-newton"):
        """``(cost, gradient, hessian, skipped_count)`` at ``x``."""
        if mode not in HESSIAN_MODES:
            raise ValueError(f"unknown Hessian mode {mode!r}")
        jac = jacobian_batch(x, self.theta1, self.points_L)
        pts = self.motor_points(x)
        lam, normals, grad, hess, skipped = kernels.plane_terms(
            pts, self.starts, jac, self.eigengap_floor, mode == "exact")
        if mode == "exact" and len(self):
            # curvature of the chain itself, weighted by the signed residuals
            counts = np.diff(self.starts)
            seg = np.repeat(np.arange(len(self)), counts)
            cent = np.add.reduceat(pts, self.starts[:-1], axis=0) / counts[:, None]
            s = np.einsum("nk,nk->n", pts - cent[seg], normals[seg])
            scale = np.where(skipped, 0.0, 2.0 / counts)[seg] * s
            hess = hess + second_derivative_contraction(x, self.theta1, self.points_L,
                                                        normals[seg] * scale[:, None])
        return float(np.sum(lam[:, 0])), grad, hess, int(np.count_nonzero(skipped))


def _voxel_config(base: VoxelizationConfig | None, root_size: float) -> VoxelizationConfig:
    base = VoxelizationConfig() if base is None else base
    return VoxelizationConfig(root_size, base.max_layers, base.planarity_ratio, base.min_points)


def extract_features(x, points_L, theta1, root_size, d1=0.0, config=None, eigengap_floor=EIGENGAP_FLOOR):
    """Voxelize the cloud as seen under ``x`` and freeze the partition."""
    pts_M = transform_points(x, theta1, points_L, d1)
    part = voxelize(pts_M, _voxel_config(config, root_size))
    if len(part) == 0:
        raise NoFeaturesError(f"no plane features at root size {root_size} m")
    fs = FeatureSet.from_partition(points_L, theta1, part, d1=d1, eigengap_floor=eigengap_floor)
    return fs, part, pts_M


def total_cost(x: CalibrationVector, scan, root_size: float, d1: float = 0.0,
               config: VoxelizationConfig | None = None):
    """Sum of plane thicknesses and the features they came from."""
    theta1 = scan.encoder_angles()
    fs, part, pts_M = extract_features(x, scan.points, theta1, root_size, d1, config)
    return float(np.sum(part.eigenvalues[:, 0])), part.features(pts_M)


def cost_gradient_hessian(x: CalibrationVector, features, points_L=None, theta1=None,
                          mode: str = "gauss-newton", eigengap_floor: float = EIGENGAP_FLOOR, d1: float = 0.0):
    """Gradient and Hessian of the summed thickness on a frozen feature set.

    ``features`` is a :class:`FeatureSet`, or a list of :class:`PlaneFeature`
    together with the raw LiDAR-frame ``points_L`` and encoder ``theta1``.
    """
    if not isinstance(features, FeatureSet):
        if points_L is None or theta1 is None:
            raise ValueError("raw points and encoder angles are needed with a feature list")
        features = FeatureSet.from_features(points_L, theta1, features, d1=d1,
                                            eigengap_floor=eigengap_floor)
    _, grad, hess, skipped = features.derivatives(x, mode)
    if len(features) == 0 or skipped == len(features):
        raise DegenerateFeaturesError(f"all {len(features)} features have a degenerate eigengap")
    return grad, hess


@dataclass
class TraceRecord:
    iteration: int
    step: int
    root_size: float
    cost: float
    trial_cost: float
    mu: float
    step_norm: float
    accepted: bool
    feature_count: int
    skipped_count: int

    FIELDS = ("iteration", "step", "root_size", "cost", "trial_cost", "mu", "step_norm",
              "accepted", "feature_count", "skipped_count")

    def as_row(self):
        return [getattr(self, f) for f in self.FIELDS]


@dataclass
class CalibrationProblem:
    scan: object  # ScanFrame
    mount: MountKind
    initial: CalibrationVector
    d1: float = 0.0
    schedule: tuple = DEFAULT_SCHEDULE
    convergence_tol: float = 1e-6
    max_iterations: int = 50
    voxel: VoxelizationConfig = field(default_factory=VoxelizationConfig)
    hessian_mode: str = "gauss-newton"
    report_hessian_mode: str = "exact"
    eigengap_floor: float = EIGENGAP_FLOOR
    max_inner_steps: int = 25
    theta1: np.ndarray | None = None
    # steps along Hessian directions weaker than this (relative) are dropped; 0 keeps them
    null_ratio: float = DEGENERACY_RATIO

    def __post_init__(self):
        self.mount = MountKind.parse(self.mount)
        if self.initial.kind is not self.mount:
            self.initial = CalibrationVector.from_array(self.initial.as_array(), self.mount)
        sizes = [float(s) for _, s in self.schedule]
        if not sizes or any(b >= a for a, b in zip(sizes, sizes[1:])) or min(sizes) <= 0:
            raise ValueError("schedule root sizes must be positive and strictly decreasing")
        if any(n is not None and n < 1 for n, _ in self.schedule[:-1]):
            raise ValueError("schedule stage lengths must be >= 1")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.hessian_mode not in HESSIAN_MODES or self.report_hessian_mode not in HESSIAN_MODES:
            raise ValueError("unknown Hessian mode")
        if self.theta1 is None:
            self.theta1 = self.scan.encoder_angles()

    def root_size(self, iteration: int) -> float:
        """Root voxel size for 1-based round ``iteration``."""
        done = 0
        for count, size in self.schedule:
            if count is None:
                return float(size)
            done += count
            if iteration <= done:
                return float(size)
        return float(self.schedule[-1][1])


@dataclass
class CalibrationResult:
    estimate: CalibrationVector
    final_cost: float
    iterations: int
    hessian: np.ndarray
    hessian_min_eigenvalue: float
    per_parameter_diag: np.ndarray
    converged: bool
    status: str = "ok"
    feature_count: int = 0
    skipped_count: int = 0
    degeneracy_warning: bool = False
    trace: list = field(default_factory=list)

    @property
    def hessian_eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.hessian)


def null_projector(H, ratio: float) -> np.ndarray:
    """Projector removing eigen-directions of ``H`` weaker than ``ratio * max``."""
    w, V = np.linalg.eigh(H)
    weak = w < ratio * max(float(w[-1]), 0.0)
    if ratio <= 0 or not np.any(weak):
        return np.eye(len(H))
    Vn = V[:, weak]
    return np.eye(len(H)) - Vn @ Vn.T


def _lm_step(H, g, mu, P=None):
    d = np.diag(H).copy()
    floor = 1e-12 * max(float(np.max(np.abs(d))), 1e-300)
    d = np.maximum(d, floor)
    A = H + mu * np.diag(d)
    rhs = -g if P is None else -(P @ g)
    try:
        delta = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        delta = np.linalg.lstsq(A, rhs, rcond=None)[0]
    # a flat direction has no gradient signal, only noise; do not wander along it
    return delta if P is None else P @ delta


def calibrate(problem: CalibrationProblem) -> CalibrationResult:
    x = problem.initial
    pts_L = problem.scan.points
    theta1 = problem.theta1
    mu = 1e-4
    trace = []
    converged = False
    status = "max-iterations"
    iterations = 0
    last_root = None  # finest root size that produced features
    for it in range(1, problem.max_iterations + 1):
        iterations = it
        root = problem.root_size(it)
        try:
            fs, _, _ = extract_features(x, pts_L, theta1, root, problem.d1, problem.voxel,
                                        problem.eigengap_floor)
        except NoFeaturesError:
            status = "no-features"
            break
        last_root = root
        cost, g, H, skipped = fs.derivatives(x, problem.hessian_mode)
        if skipped == len(fs):
            status = "degenerate"
            break
        round_start = cost
        for step in range(problem.max_inner_steps):
            accepted = False
            P = null_projector(H, problem.null_ratio)
            while mu < 1e10:
                delta = _lm_step(H, g, mu, P)
                x_new = x.step(delta)
                c_new = fs.cost(x_new)
                ok = bool(np.isfinite(c_new) and c_new < cost)
                trace.append(TraceRecord(it, step, root, cost, c_new, mu,
                                         float(np.linalg.norm(delta)), ok, len(fs), skipped))
                if ok:
                    accepted = True
                    mu = max(mu / 3.0, 1e-12)
                    break
                mu *= 3.0
            if not accepted:
                break
            previous = cost
            x = x_new
            cost, g, H, skipped = fs.derivatives(x, problem.hessian_mode)
            if previous - cost < problem.convergence_tol:
                break
        if mu >= 1e10:
            mu = 1e-4
        if abs(round_start - cost) < problem.convergence_tol:
            converged = True
            status = "converged"
            break

    root = problem.root_size(1) if last_root is None else last_root
    try:
        fs, _, _ = extract_features(x, pts_L, theta1, root, problem.d1, problem.voxel,
                                    problem.eigengap_floor)
    except NoFeaturesError:
        return CalibrationResult(x, math.nan, iterations, np.full((4, 4), np.nan), math.nan,
                                 np.full(4, np.nan), False, "no-features", trace=trace)
    cost, _, H, skipped = fs.derivatives(x, problem.report_hessian_mode)
    if skipped == len(fs):
        status = "degenerate"
        converged = False
    eig = np.linalg.eigvalsh(H)
    warn = bool(eig[0] < DEGENERACY_RATIO * max(eig[-1], 0.0))
    return CalibrationResult(
        estimate=x, final_cost=cost, iterations=iterations, hessian=H,
        hessian_min_eigenvalue=float(eig[0]), per_parameter_diag=np.diag(H).copy(),
        converged=converged, status=status, feature_count=len(fs), skipped_count=skipped,
        degeneracy_warning=warn, trace=trace)


def hessian_at(x: CalibrationVector, scan, root_size: float = 0.5, d1: float = 0.0,
               config: VoxelizationConfig | None = None, mode: str = "exact", theta1=None):
    """Hessian of the summed thickness at ``x`` (features extracted at ``x``)."""
    theta1 = scan.encoder_angles() if theta1 is None else theta1
    fs, _, _ = extract_features(x, scan.points, theta1, root_size, d1, config)
    _, _, H, _ = fs.derivatives(x, mode)
    return H


@dataclass
class ObservabilityGrid:
    mount: MountKind
    theta_deg: np.ndarray
    phi_deg: np.ndarray
    min_eigenvalue: np.ndarray  # (len(theta), len(phi))

    def rows(self):
        for i, t in enumerate(self.theta_deg):
            for j, p in enumerate(self.phi_deg):
                yield float(t), float(p), float(self.min_eigenvalue[i, j])

    def theta_profile(self) -> np.ndarray:
        """Median over ``phi`` of the minimum eigenvalue, per ``theta``."""
        return np.median(self.min_eigenvalue, axis=1)

    def phi_profile(self) -> np.ndarray:
        return np.median(self.min_eigenvalue, axis=0)

    def valley(self, axis: str = "theta"):
        """``(angle_deg, valley_ratio)`` of the deepest profile minimum."""
        prof = self.theta_profile() if axis == "theta" else self.phi_profile()
        grid = self.theta_deg if axis == "theta" else self.phi_deg
        k = int(np.argmin(prof))
        # eigenvalues at an exact degeneracy are roundoff; clip them
        low = max(float(prof[k]), 1e-12 * float(np.max(np.abs(prof))), 1e-300)
        return float(grid[k]), float(np.median(prof) / low)


def observability_sweep(scene, mount, angle_grid_deg=None, sensor=None, d_bar: float = 0.05,
                        a_bar: float = 0.05, root_size: float = 0.5, seed: int = 0,
                        motor_speed: float | None = None, duration: float | None = None,
                        progress=None) -> ObservabilityGrid:
    """Minimum Hessian eigenvalue at ground truth over a (theta_bar, phi_bar) grid.

    Every grid cell reuses the same beam pattern seed, so cells differ only in
    the mounting. The default sensor is noise-free at
    ``OBSERVABILITY_POINTS_PER_SECOND``.
    """
    from .sim.scan import DEFAULT_MOTOR_SPEED, SensorModel, generate_scan

    mount = MountKind.parse(mount)
    if angle_grid_deg is None:
        angle_grid_deg = np.arange(-180.0, 180.0 + 1e-9, 10.0)
    grid = np.asarray(angle_grid_deg, dtype=float)
    if sensor is None:
        sensor = SensorModel.for_mount(mount).noise_free().with_density(OBSERVABILITY_POINTS_PER_SECOND)
    speed = DEFAULT_MOTOR_SPEED if motor_speed is None else motor_speed
    values = np.zeros((len(grid), len(grid)))
    for i, t in enumerate(grid):
        for j, p in enumerate(grid):
            gt = CalibrationVector(math.radians(t), d_bar, a_bar, math.radians(p), mount)
            scan = generate_scan(scene, gt, mount, speed, sensor, duration, seed)
            try:
                H = hessian_at(gt, scan, root_size, theta1=scan.true_theta)
                values[i, j] = float(np.linalg.eigvalsh(H)[0])
            except NoFeaturesError:
                values[i, j] = 0.0
            if progress is not None:
                progress(i * len(grid) + j + 1, len(grid) ** 2)
    return ObservabilityGrid(mount, grid, grid.copy(), values)
