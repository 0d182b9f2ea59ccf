"""``spincal`` command-line tool.

Exit codes: 0 success, 2 input error, 3 empty output, 4 no convergence,
5 degenerate feature set. Angles are radians unless the flag ends in ``-deg``.
"""

import argparse
import math
from pathlib import Path
import sys

import numpy as np

from . import io
from .dh import CalibrationVector, MountKind
from .env import ENV_RECORD_FIELDS, EnvConfig, classify, env_record, max_acceleration_bound
from .optimizer import (DEFAULT_SCHEDULE, CalibrationProblem, DegenerateFeaturesError,
                        NoFeaturesError, OBSERVABILITY_POINTS_PER_SECOND, TraceRecord, calibrate,
                        observability_sweep)
from .planes import VoxelizationConfig
from .sim.scan import (DEFAULT_MOTOR_SPEED, TABLE_ROT_SIGMA, TABLE_TRANS_SIGMA, EmptyScanError,
                       ScanFrame, SensorModel, generate_scan, sample_ground_truth)
from .sim.scenes import SceneFormatError, resolve_scene
from .uncertainty import EncoderCoverageError, NoiseModel

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_EMPTY = 3
EXIT_NO_CONVERGENCE = 4
EXIT_DEGENERATE = 5


class InputError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"spincal: error: {msg}", file=sys.stderr)


def _note(msg: str, quiet: bool = False) -> None:
    if not quiet:
        print(msg, file=sys.stderr)


def _out_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {p} ({exc.strerror})") from None
    return p


# -- shared flag groups -----------------------------------------------------

def _angle(args, name):
    """Value of ``--name`` (radians) or ``--name-deg``; None when neither given."""
    rad = getattr(args, name)
    deg = getattr(args, f"{name}_deg")
    if rad is not None and deg is not None:
        raise InputError(f"give --{name.replace('_', '-')} or --{name.replace('_', '-')}-deg, not both")
    if deg is not None:
        return math.radians(deg)
    return rad


def _add_vector_flags(p, prefix: str, what: str):
    dash = f"{prefix}-" if prefix else ""
    under = f"{prefix}_" if prefix else ""
    p.add_argument(f"--{dash}theta", dest=f"{under}theta", type=float, help=f"{what} theta_bar [rad]")
    p.add_argument(f"--{dash}theta-deg", dest=f"{under}theta_deg", type=float, help=f"{what} theta_bar [deg]")
    p.add_argument(f"--{dash}d", dest=f"{under}d", type=float, help=f"{what} d_bar [m]")
    p.add_argument(f"--{dash}a", dest=f"{under}a", type=float, help=f"{what} a_bar [m]")
    p.add_argument(f"--{dash}phi", dest=f"{under}phi", type=float, help=f"{what} phi_bar [rad]")
    p.add_argument(f"--{dash}phi-deg", dest=f"{under}phi_deg", type=float, help=f"{what} phi_bar [deg]")


def _vector(args, prefix: str, mount: MountKind):
    under = f"{prefix}_" if prefix else ""
    theta = _angle(args, f"{under}theta")
    phi = _angle(args, f"{under}phi")
    d = getattr(args, f"{under}d")
    a = getattr(args, f"{under}a")
    vals = (theta, d, a, phi)
    if all(v is None for v in vals):
        return None
    if any(v is None for v in vals):
        raise InputError(f"{prefix or 'ground truth'} needs all of theta, d, a, phi")
    try:
        return CalibrationVector(theta, d, a, phi, mount)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _add_sensor_flags(p):
    p.add_argument("--sensor", choices=("mid360", "avia"), help="sensor model (default follows the mount)")
    p.add_argument("--density", type=float, help="points per second (default: nominal sensor rate)")
    p.add_argument("--noise-free", action="store_true", help="disable range, bearing and encoder noise")
    p.add_argument("--sigma-depth", type=float, help="range noise std [m]")
    p.add_argument("--sigma-bearing", type=float, help="bearing noise std [rad]")
    p.add_argument("--sigma-encoder", type=float, help="encoder angle noise std [rad]")
    p.add_argument("--motor-speed", type=float, default=DEFAULT_MOTOR_SPEED, help="[rad/s]")
    p.add_argument("--duration", type=float, help="scan length [s] (default: two revolutions)")


def _sensor(args, mount: MountKind, default_density=None) -> SensorModel:
    if args.sensor is None:
        sensor = SensorModel.for_mount(mount)
    elif args.sensor == "mid360":
        sensor = SensorModel.mid360()
    else:
        sensor = SensorModel.avia()
    density = args.density if args.density is not None else default_density
    try:
        if density is not None:
            sensor = sensor.with_density(density)
        noise = NoiseModel() if args.noise_free else sensor.noise
        noise = NoiseModel(
            noise.sigma_depth if args.sigma_depth is None else args.sigma_depth,
            noise.sigma_bearing if args.sigma_bearing is None else args.sigma_bearing,
            noise.sigma_encoder if args.sigma_encoder is None else args.sigma_encoder)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    return sensor.with_noise(noise)


def _sensor_config(sensor: SensorModel) -> dict:
    n = sensor.noise
    return {"kind": sensor.kind.value, "range_max": sensor.range_max,
            "points_per_second": sensor.points_per_second, "fov_h": sensor.fov_h,
            "fov_v": sensor.fov_v, "encoder_rate": sensor.encoder_rate,
            "sigma_depth": n.sigma_depth, "sigma_bearing": n.sigma_bearing,
            "sigma_encoder": n.sigma_encoder}


def _scene(arg):
    try:
        return resolve_scene(arg)
    except SceneFormatError as exc:
        raise InputError(str(exc)) from None


def _mount(arg) -> MountKind:
    try:
        return MountKind.parse(arg)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def parse_schedule(text: str) -> tuple:
    """``"2:1.0,2:0.5,*:0.25"`` -> ``((2, 1.0), (2, 0.5), (None, 0.25))``."""
    out = []
    for part in text.split(","):
        try:
            n, size = part.split(":")
            out.append((None if n.strip() == "*" else int(n), float(size)))
        except ValueError:
            raise InputError(f"bad schedule entry {part!r}; expected COUNT:SIZE or *:SIZE") from None
    if any(n is None for n, _ in out[:-1]):
        raise InputError("only the last schedule entry may use '*'")
    return tuple(out)


def format_schedule(schedule) -> str:
    return ",".join(f"{'*' if n is None else n}:{s!r}" for n, s in schedule)


# -- commands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    mount = _mount(args.mount)
    scene = _scene(args.scene)
    gt = _vector(args, "", mount)
    if gt is None:
        gt = sample_ground_truth(mount, seed=args.seed)
    sensor = _sensor(args, mount)
    out = _out_dir(args.out)
    try:
        scan = generate_scan(scene, gt, mount, args.motor_speed, sensor, args.duration, args.seed,
                             d1=args.d1)
    except EmptyScanError as exc:
        _err(str(exc))
        return EXIT_EMPTY
    except ValueError as exc:
        raise InputError(str(exc)) from None
    pts_path, enc_path = out / "points.csv", out / "encoder.csv"
    io.write_points(pts_path, scan.points, scan.timestamps)
    io.write_encoder(enc_path, scan.encoder_t, scan.encoder_theta)
    config = {"scene": str(args.scene), "mount": mount.value, "seed": args.seed,
              "ground_truth": gt.as_array(), "motor_speed": args.motor_speed,
              "duration": scan.frame_span, "d1": args.d1, "sensor": _sensor_config(sensor)}
    io.write_manifest(out / "manifest.json", "simulate", config, [pts_path, enc_path])
    _note(f"wrote {len(scan)} points to {pts_path}", args.quiet)
    return EXIT_OK


RESULT_FIELDS = ("theta", "d", "a", "phi", "final_cost", "iterations", "converged", "status",
                 "hessian_min_eig", "degeneracy_warning", "diag_theta", "diag_d", "diag_a",
                 "diag_phi", "feature_count", "skipped_count",
                 *(f"h{i}{j}" for i in range(4) for j in range(4)))


def result_row(res) -> list:
    return [*res.estimate.as_array(), res.final_cost, res.iterations, res.converged, res.status,
            res.hessian_min_eigenvalue, res.degeneracy_warning, *res.per_parameter_diag,
            res.feature_count, res.skipped_count, *np.asarray(res.hessian).ravel()]


def cmd_calibrate(args) -> int:
    mount = _mount(args.mount)
    x0 = _vector(args, "init", mount)
    if x0 is None:
        raise InputError("an initial guess is required (--init-theta/--init-d/--init-a/--init-phi)")
    try:
        pts, t = io.read_points(args.points)
        enc_t, enc_theta = io.read_encoder(args.encoder)
    except io.InputFormatError as exc:
        raise InputError(str(exc)) from None
    if len(pts) == 0:
        raise InputError(f"{args.points}: no points")
    scan = ScanFrame(pts, t, enc_t, enc_theta, float(t.max() - t.min()))
    try:
        theta1 = scan.encoder_angles()
    except (EncoderCoverageError, ValueError) as exc:
        raise InputError(f"{args.encoder}: {exc}") from None
    schedule = parse_schedule(args.schedule)
    try:
        voxel = VoxelizationConfig(planarity_ratio=args.planarity_ratio, max_layers=args.max_layers)
        problem = CalibrationProblem(scan, mount, x0, d1=args.d1, schedule=schedule,
                                     convergence_tol=args.tol, max_iterations=args.max_iterations,
                                     voxel=voxel, theta1=theta1)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    try:
        res = calibrate(problem)
    except (NoFeaturesError, DegenerateFeaturesError) as exc:
        _err(str(exc))
        return EXIT_DEGENERATE
    out = _out_dir(args.out)
    res_path, trace_path = out / "result.csv", out / "trace.csv"
    io.write_rows(res_path, RESULT_FIELDS, [result_row(res)])
    io.write_rows(trace_path, TraceRecord.FIELDS, (r.as_row() for r in res.trace))
    config = {"points": str(args.points), "encoder": str(args.encoder), "mount": mount.value,
              "initial": x0.as_array(), "schedule": format_schedule(schedule), "tol": args.tol,
              "max_iterations": args.max_iterations, "planarity_ratio": args.planarity_ratio,
              "max_layers": args.max_layers, "d1": args.d1}
    io.write_manifest(out / "manifest.json", "calibrate", config, [res_path, trace_path])
    est = res.estimate
    print(f"theta={est.theta_bar!r} d={est.d_bar!r} a={est.a_bar!r} phi={est.phi_bar!r} "
          f"cost={res.final_cost:.6e} iterations={res.iterations} status={res.status}")
    if res.degeneracy_warning:
        _note(f"warning: Hessian nearly singular (min eigenvalue {res.hessian_min_eigenvalue:.3e}); "
              "some parameters are not constrained by this scan", args.quiet)
    if res.status in ("no-features", "degenerate"):
        return EXIT_DEGENERATE
    return EXIT_OK if res.converged else EXIT_NO_CONVERGENCE


def _progress(quiet):
    if quiet:
        return None

    def report(k, n):
        print(f"\r{k}/{n}", end="" if k < n else "\n", file=sys.stderr, flush=True)

    return report


def cmd_montecarlo(args) -> int:
    from .sim.experiments import MC_POINTS_PER_SECOND, TRIAL_FIELDS, monte_carlo

    mount = _mount(args.mount)
    scene = _scene(args.scene)
    sensor = _sensor(args, mount, default_density=MC_POINTS_PER_SECOND)
    if args.trials < 1:
        raise InputError("--trials must be >= 1")
    out = _out_dir(args.out)
    table = monte_carlo(scene, mount, args.trials, sensor, math.radians(args.rot_sigma_deg),
                        args.trans_sigma, args.seed, args.motor_speed, args.duration,
                        workers=args.workers, progress=_progress(args.quiet))
    trials_path, summary_path = out / "trials.csv", out / "summary.csv"
    io.write_rows(trials_path, TRIAL_FIELDS, (r.as_row() for r in table.rows))
    summary = [("convergence_rate", table.convergence_rate(), math.nan), *table.summary()]
    io.write_rows(summary_path, ("statistic", "trans_err_mm", "angle_err_deg"), summary)
    config = {"scene": str(args.scene), "mount": mount.value, "trials": args.trials,
              "seed": args.seed, "rot_sigma_deg": args.rot_sigma_deg,
              "trans_sigma": args.trans_sigma, "motor_speed": args.motor_speed,
              "duration": args.duration, "sensor": _sensor_config(sensor)}
    io.write_manifest(out / "manifest.json", "montecarlo", config, [trials_path, summary_path])
    worst = table.summary((100,))[0]
    print(f"converged {table.convergence_rate() * 100:.1f}%  max trans {worst[1]:.4f} mm  "
          f"max angle {worst[2]:.5f} deg")
    return EXIT_OK


def cmd_observability(args) -> int:
    mount = _mount(args.mount)
    scene = _scene(args.scene)
    args.noise_free = True
    sensor = _sensor(args, mount, default_density=OBSERVABILITY_POINTS_PER_SECOND)
    if not 0 < args.step_deg <= 180:
        raise InputError("--step-deg must lie in (0, 180]")
    grid = np.arange(-180.0, 180.0 + 1e-9, args.step_deg)
    out = _out_dir(args.out)
    res = observability_sweep(scene, mount, grid, sensor, args.d, args.a, args.root_size,
                              args.seed, args.motor_speed, args.duration, _progress(args.quiet))
    path = out / "observability.csv"
    io.write_rows(path, ("theta_deg", "phi_deg", "lambda_min"), res.rows())
    config = {"scene": str(args.scene), "mount": mount.value, "step_deg": args.step_deg,
              "d": args.d, "a": args.a, "root_size": args.root_size, "seed": args.seed,
              "motor_speed": args.motor_speed, "duration": args.duration,
              "sensor": _sensor_config(sensor)}
    io.write_manifest(out / "manifest.json", "observability", config, [path])
    for axis in ("theta", "phi"):
        angle, ratio = res.valley(axis)
        print(f"{axis} valley at {angle:g} deg (median/valley = {ratio:.3g})")
    return EXIT_OK


def cmd_identifiability(args) -> int:
    from .sim.experiments import IDENTIFIABILITY_POINTS_PER_SECOND, IdentifiabilityRow, identifiability_run

    mount = _mount(args.mount)
    sensor = _sensor(args, mount, default_density=IDENTIFIABILITY_POINTS_PER_SECOND)
    scenes = [_scene(s) for s in args.scenes] if args.scenes else None
    out = _out_dir(args.out)
    rows = identifiability_run(mount, scenes, sensor, args.seed, args.motor_speed, args.duration,
                               progress=_progress(args.quiet))
    path = out / "identifiability.csv"
    io.write_rows(path, IdentifiabilityRow.FIELDS, (r.as_row() for r in rows))
    config = {"mount": mount.value, "scenes": args.scenes or "scene_1..scene_6", "seed": args.seed,
              "motor_speed": args.motor_speed, "duration": args.duration,
              "sensor": _sensor_config(sensor)}
    io.write_manifest(out / "manifest.json", "identifiability", config, [path])
    for r in rows:
        e = r.errors
        print(f"{r.scene:10s} err {e[0]:.4f} deg {e[1]:.3f} mm {e[2]:.3f} mm {e[3]:.4f} deg  "
              f"id {' '.join(f'{v:.4g}' for v in r.identifiability)}")
    return EXIT_OK


def _read_cloud(path):
    try:
        pts, _ = io.read_points(path)
    except io.InputFormatError as exc:
        raise InputError(str(exc)) from None
    return pts


def cmd_env_classify(args) -> int:
    try:
        config = EnvConfig(eval_voxel=args.eval_voxel, s1=args.s1, s2=args.s2,
                           history_frames=args.history_frames)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    frame = _read_cloud(args.frame)
    if len(frame) == 0:
        raise InputError(f"{args.frame}: no points")
    history = [_read_cloud(h) for h in args.history]
    env, down = classify(frame, history, config)
    out = _out_dir(args.out)
    rec_path, down_path = out / "env.csv", out / "downsampled.csv"
    io.write_rows(rec_path, ENV_RECORD_FIELDS, [env_record(args.frame_id, frame, env)])
    io.write_points(down_path, down, np.zeros(len(down)))
    cfg = {"frame": str(args.frame), "history": [str(h) for h in args.history],
           "eval_voxel": args.eval_voxel, "s1": args.s1, "s2": args.s2,
           "history_frames": args.history_frames, "downsample_rates": config.downsample_rates,
           "map_root_sizes": config.map_root_sizes}
    io.write_manifest(out / "manifest.json", "env-classify", cfg, [rec_path, down_path])
    print(f"{env.label.value} s={env.scale:.3f} V_s={env.selected_rate} map={env.selected_map_index}")
    if len(down) == 0:
        return EXIT_EMPTY
    return EXIT_OK


def cmd_accel_bound(args) -> int:
    try:
        print(max_acceleration_bound(args.epsilon, args.t_scan))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spincal", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--quiet", "-q", action="store_true")
        if out:
            p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("simulate", help="generate a synthetic scan")
    p.add_argument("--scene", default="planes40", help="built-in scene name or scene file")
    p.add_argument("--mount", default="omni")
    _add_vector_flags(p, "", "ground-truth")
    p.add_argument("--d1", type=float, default=0.0)
    _add_sensor_flags(p)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="calibrate from point and encoder CSVs")
    p.add_argument("--points", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--mount", default="omni")
    _add_vector_flags(p, "init", "initial")
    p.add_argument("--schedule", default=format_schedule(DEFAULT_SCHEDULE),
                   help="root voxel sizes per round, e.g. 2:1.0,2:0.5,*:0.25")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iterations", type=int, default=50)
    p.add_argument("--planarity-ratio", type=float, default=0.01)
    p.add_argument("--max-layers", type=int, default=2)
    p.add_argument("--d1", type=float, default=0.0)
    common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("montecarlo", help="repeated calibrations from perturbed starts")
    p.add_argument("--scene", default="planes40")
    p.add_argument("--mount", default="omni")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--rot-sigma-deg", type=float, default=math.degrees(TABLE_ROT_SIGMA))
    p.add_argument("--trans-sigma", type=float, default=TABLE_TRANS_SIGMA, help="[m]")
    p.add_argument("--workers", type=int, help="worker processes (default: SPINCAL_THREADS)")
    _add_sensor_flags(p)
    common(p)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("observability", help="Hessian minimum eigenvalue over mounting angles")
    p.add_argument("--scene", default="planes40")
    p.add_argument("--mount", default="omni")
    p.add_argument("--step-deg", type=float, default=10.0)
    p.add_argument("--d", type=float, default=0.05, help="d_bar [m] held fixed over the grid")
    p.add_argument("--a", type=float, default=0.05, help="a_bar [m] held fixed over the grid")
    p.add_argument("--root-size", type=float, default=0.5)
    _add_sensor_flags(p)
    common(p)
    p.set_defaults(func=cmd_observability)

    p = sub.add_parser("identifiability", help="calibrate a fixed mount on each plane-layout scene")
    p.add_argument("--mount", default="omni")
    p.add_argument("--scenes", nargs="*", help="scenes to run (default scene_1..scene_6)")
    _add_sensor_flags(p)
    common(p)
    p.set_defaults(func=cmd_identifiability)

    p = sub.add_parser("env-classify", help="classify a frame as Narrow, Normal or Wide")
    p.add_argument("--frame", required=True, help="points CSV of the current frame")
    p.add_argument("--history", nargs="*", default=[], help="points CSVs of earlier frames")
    p.add_argument("--frame-id", default="0")
    p.add_argument("--eval-voxel", type=float, default=5.0)
    p.add_argument("--s1", type=float, default=8.0)
    p.add_argument("--s2", type=float, default=20.0)
    p.add_argument("--history-frames", type=int, default=8)
    common(p)
    p.set_defaults(func=cmd_env_classify)

    p = sub.add_parser("accel-bound", help="acceleration bound 2*epsilon/T^2")
    p.add_argument("--epsilon", type=float, required=True, help="displacement tolerance [m]")
    p.add_argument("--t-scan", type=float, required=True, help="scan period [s]")
    p.set_defaults(func=cmd_accel_bound)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        _err(str(exc))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
