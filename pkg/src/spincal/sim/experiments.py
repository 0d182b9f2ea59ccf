"""Monte-Carlo and identifiability harnesses built on the simulator."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np

from .._backend import thread_cap
from ..dh import CalibrationVector, MountKind, wrap_angle
from ..optimizer import CalibrationProblem, calibrate
from .scan import (DEFAULT_MOTOR_SPEED, TABLE_ROT_SIGMA, TABLE_TRANS_SIGMA, SensorModel,
                   generate_scan, perturb_initial, sample_ground_truth)
from .scenes import builtin_scene

# densities used by the desk-scale experiments; the nominal sensors are ~10x denser
MC_POINTS_PER_SECOND = 20_000.0
IDENTIFIABILITY_POINTS_PER_SECOND = 100_000.0


def calibration_errors(estimate: CalibrationVector, truth: CalibrationVector):
    """``(translation_mm, angle_deg)`` over the (d, a) and (theta, phi) pairs."""
    e = estimate.as_array() - truth.as_array()
    e[0] = wrap_angle(e[0])
    e[3] = wrap_angle(e[3])
    return 1000.0 * math.hypot(e[1], e[2]), math.degrees(math.hypot(e[0], e[3]))


def per_parameter_errors(estimate: CalibrationVector, truth: CalibrationVector) -> np.ndarray:
    """Absolute errors in (deg, mm, mm, deg) order."""
    e = estimate.as_array() - truth.as_array()
    return np.abs([math.degrees(wrap_angle(e[0])), 1000.0 * e[1], 1000.0 * e[2],
                   math.degrees(wrap_angle(e[3]))])


TRIAL_FIELDS = (
    "trial", "seed", "gt_theta", "gt_d", "gt_a", "gt_phi",
    "init_theta", "init_d", "init_a", "init_phi",
    "est_theta", "est_d", "est_a", "est_phi",
    "trans_err_mm", "angle_err_deg", "iterations", "converged", "hessian_min_eig", "status",
)


@dataclass
class TrialRow:
    trial: int
    seed: int
    gt: CalibrationVector
    initial: CalibrationVector
    estimate: CalibrationVector | None
    trans_err_mm: float
    angle_err_deg: float
    iterations: int
    converged: bool
    hessian_min_eig: float
    status: str

    def as_row(self):
        est = self.estimate.as_array() if self.estimate is not None else np.full(4, np.nan)
        return [self.trial, self.seed, *self.gt.as_array(), *self.initial.as_array(), *est,
                self.trans_err_mm, self.angle_err_deg, self.iterations, self.converged,
                self.hessian_min_eig, self.status]


@dataclass
class MonteCarloTable:
    mount: MountKind
    rows: list = field(default_factory=list)

    @property
    def trans_err_mm(self) -> np.ndarray:
        return np.array([r.trans_err_mm for r in self.rows])

    @property
    def angle_err_deg(self) -> np.ndarray:
        return np.array([r.angle_err_deg for r in self.rows])

    @property
    def converged(self) -> np.ndarray:
        return np.array([r.converged for r in self.rows], dtype=bool)

    def convergence_rate(self) -> float:
        return float(np.mean(self.converged)) if self.rows else 0.0

    def summary(self, percentiles=(50, 90, 95, 100)):
        """Percentile rows ``(label, trans_err_mm, angle_err_deg)``; NaNs ignored."""
        t, a = self.trans_err_mm, self.angle_err_deg
        out = []
        for q in percentiles:
            if len(t) == 0 or np.all(np.isnan(t)):
                out.append((f"p{q}", math.nan, math.nan))
            else:
                out.append((f"p{q}", float(np.nanpercentile(t, q)), float(np.nanpercentile(a, q))))
        return out


@dataclass(frozen=True)
class TrialSpec:
    trial: int
    seed: int
    scene: object
    mount: MountKind
    sensor: SensorModel
    rot_sigma: float
    trans_sigma: float
    motor_speed: float
    duration: float | None
    base_pose: object = None


def trial_seed(base_seed: int, trial: int) -> int:
    """Independent per-trial seed derived from the batch seed."""
    ss = np.random.SeedSequence([int(base_seed), int(trial)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def run_trial(spec: TrialSpec) -> TrialRow:
    # three independent streams: ground truth, scan, initial guess
    gt_ss, scan_ss, init_ss = np.random.SeedSequence(spec.seed).spawn(3)
    gt = sample_ground_truth(spec.mount, rng=np.random.default_rng(gt_ss))
    x0 = perturb_initial(gt, spec.rot_sigma, spec.trans_sigma, rng=np.random.default_rng(init_ss))
    scan_seed = int(scan_ss.generate_state(1)[0])
    try:
        scan = generate_scan(spec.scene, gt, spec.mount, spec.motor_speed, spec.sensor,
                             spec.duration, scan_seed, base_pose=spec.base_pose)
        res = calibrate(CalibrationProblem(scan, spec.mount, x0))
    except Exception as exc:  # one bad trial must not sink the batch
        return TrialRow(spec.trial, spec.seed, gt, x0, None, math.nan, math.nan, 0, False,
                        math.nan, f"error: {type(exc).__name__}: {exc}")
    t_err, a_err = calibration_errors(res.estimate, gt)
    return TrialRow(spec.trial, spec.seed, gt, x0, res.estimate, t_err, a_err, res.iterations,
                    res.converged, res.hessian_min_eigenvalue, res.status)


def monte_carlo(scene, mount, trials: int = 50, sensor: SensorModel | None = None,
                rot_sigma: float = TABLE_ROT_SIGMA, trans_sigma: float = TABLE_TRANS_SIGMA,
                seed: int = 0, motor_speed: float = DEFAULT_MOTOR_SPEED,
                duration: float | None = None, workers: int | None = None,
                progress=None, base_pose=None) -> MonteCarloTable:
    """Independent calibrations from perturbed starts.

    ``workers`` defaults to ``SPINCAL_THREADS`` (one per CPU). Rows come back
    in trial order whatever the worker count, so results do not depend on it.
    ``base_pose`` places the motor frame in the scene (identity if omitted).
    """
    mount = MountKind.parse(mount)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if sensor is None:
        sensor = SensorModel.for_mount(mount).with_density(MC_POINTS_PER_SECOND)
    if isinstance(scene, str):
        scene = builtin_scene(scene)
    specs = [TrialSpec(i, trial_seed(seed, i), scene, mount, sensor, rot_sigma, trans_sigma,
                       motor_speed, duration, base_pose) for i in range(trials)]
    workers = thread_cap() if workers is None else max(1, int(workers))
    table = MonteCarloTable(mount)
    if workers == 1:
        for k, spec in enumerate(specs, 1):
            table.rows.append(run_trial(spec))
            if progress is not None:
                progress(k, trials)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for k, row in enumerate(pool.map(run_trial, specs), 1):
                table.rows.append(row)
                if progress is not None:
                    progress(k, trials)
    return table


# mounts used for the plane-distribution study
IDENTIFIABILITY_MOUNTS = {
    MountKind.SPINNING_OMNI: CalibrationVector(math.radians(-90.0), 0.5, 0.1, math.radians(90.0),
                                               MountKind.SPINNING_OMNI),
    MountKind.SPINNING_NON_OMNI: CalibrationVector(0.0, 0.1, 0.5, math.radians(90.0),
                                                   MountKind.SPINNING_NON_OMNI),
}
IDENTIFIABILITY_OFFSET = (math.radians(10.0), 0.1, 0.1, math.radians(10.0))


@dataclass
class IdentifiabilityRow:
    scene: str
    mount: MountKind
    errors: np.ndarray  # deg, mm, mm, deg
    identifiability: np.ndarray  # Gauss-Newton Hessian diagonal at the estimate
    hessian_min_eig: float
    status: str
    point_count: int

    FIELDS = ("scene", "mount", "err_theta_deg", "err_d_mm", "err_a_mm", "err_phi_deg",
              "id_theta", "id_d", "id_a", "id_phi", "hessian_min_eig", "status", "points")

    def as_row(self):
        return [self.scene, self.mount.value, *self.errors, *self.identifiability,
                self.hessian_min_eig, self.status, self.point_count]


def identifiability_run(mount, scenes=None, sensor: SensorModel | None = None, seed: int = 0,
                        motor_speed: float = DEFAULT_MOTOR_SPEED, duration: float | None = None,
                        progress=None) -> list:
    """Calibrate the fixed study mount on each plane-distribution scene.

    The start is the truth offset by +10 degrees and +0.1 m on every free
    parameter; identifiability is read off the diagonal of the Gauss-Newton
    Hessian at the estimate, which is nonnegative by construction.
    """
    mount = MountKind.parse(mount)
    gt = IDENTIFIABILITY_MOUNTS[mount]
    if scenes is None:
        scenes = [f"scene_{i}" for i in range(1, 7)]
    if sensor is None:
        sensor = SensorModel.for_mount(mount).with_density(IDENTIFIABILITY_POINTS_PER_SECOND)
    x0 = gt.step(np.array(IDENTIFIABILITY_OFFSET))
    out = []
    for k, name in enumerate(scenes, 1):
        scene = builtin_scene(name) if isinstance(name, str) else name
        scan = generate_scan(scene, gt, mount, motor_speed, sensor, duration, seed)
        res = calibrate(CalibrationProblem(scan, mount, x0, report_hessian_mode="gauss-newton"))
        out.append(IdentifiabilityRow(scene.name, mount, per_parameter_errors(res.estimate, gt),
                                      res.per_parameter_diag, res.hessian_min_eigenvalue,
                                      res.status, len(scan)))
        if progress is not None:
            progress(k, len(scenes))
    return out
