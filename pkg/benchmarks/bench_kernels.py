"""Time the numba and numpy backends of the hot kernels on one workload.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N] [--density PTS_PER_S]``.
The first numba call is excluded from timing (compilation / cache load).
"""

import argparse
import math
import time

import numpy as np

from spincal import kernels
from spincal.dh import CalibrationVector, MountKind, jacobian_batch, transform_points
from spincal.planes import VoxelizationConfig, voxelize
from spincal.sim.scan import SensorModel, beam_directions, generate_scan
from spincal.sim.scenes import builtin_scene


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workload(density):
    scene = builtin_scene("planes40")
    gt = CalibrationVector(math.radians(30), 0.05, -0.03, math.radians(70), MountKind.SPINNING_OMNI)
    sensor = SensorModel.mid360().with_density(density)
    scan = generate_scan(scene, gt, sensor=sensor, seed=0)
    pts_M = transform_points(gt, scan.true_theta, scan.points)
    part = voxelize(pts_M, VoxelizationConfig(0.5))
    ordered = pts_M[part.order]
    jac = jacobian_batch(gt, scan.true_theta[part.order], scan.points[part.order])
    rng = np.random.default_rng(1)
    dirs = beam_directions(sensor, np.arange(len(scan)) / density, rng)
    origins = np.zeros_like(dirs)
    return scene, ordered, part.starts, jac, origins, dirs


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--density", type=float, default=100_000.0)
    args = ap.parse_args(argv)

    scene, pts, starts, jac, origins, dirs = workload(args.density)
    arrays = scene.arrays()
    cases = {
        "segment_moments": lambda b: kernels.segment_moments(pts, starts, backend=b),
        "plane_terms(gn)": lambda b: kernels.plane_terms(pts, starts, jac, backend=b),
        "plane_terms(exact)": lambda b: kernels.plane_terms(pts, starts, jac, exact=True, backend=b),
        "ray_cast": lambda b: kernels.ray_cast(origins, dirs, *arrays, 40.0, backend=b),
    }
    print(f"{len(pts)} points in {len(starts) - 1} features, {len(dirs)} rays x {len(scene)} planes")
    print(f"{'kernel':20s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s}")
    for name, fn in cases.items():
        fn("numba")  # compile or load cache
        t_np = best_of(lambda: fn("numpy"), args.repeat)
        t_nb = best_of(lambda: fn("numba"), args.repeat)
        print(f"{name:20s} {t_np * 1e3:11.2f} {t_nb * 1e3:11.2f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
