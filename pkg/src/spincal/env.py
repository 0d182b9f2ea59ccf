"""Scene-scale analysis that picks a downsample rate and map resolution.

The current frame is merged with a short history, thinned on a coarse grid
and summarised by its spatial scale ``s``, the mean distance of the thinned
points to their centroid. Small ``s`` means a narrow scene (fine map, light
downsampling); large ``s`` means a wide one.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .planes import group_by_key


@dataclass(frozen=True)
class EnvConfig:
    downsample_rates: tuple = (0.15, 0.2, 0.25)
    map_root_sizes: tuple = (0.25, 0.5, 1.0)
    eval_voxel: float = 5.0
    # narrow/wide thresholds in meters; not published values, tune per platform
    s1: float = 8.0
    s2: float = 20.0
    history_frames: int = 8

    def __post_init__(self):
        v = tuple(float(x) for x in self.downsample_rates)
        m = tuple(float(x) for x in self.map_root_sizes)
        if len(v) != 3 or not 0 < v[0] < v[1] < v[2]:
            raise ValueError("downsample_rates must be three increasing positive values")
        if len(m) != 3 or min(m) <= 0:
            raise ValueError("map_root_sizes must be three positive values")
        if not 0 < self.s1 < self.s2:
            raise ValueError("need 0 < s1 < s2")
        if not self.eval_voxel > 0:
            raise ValueError("eval_voxel must be positive")
        if self.history_frames < 0:
            raise ValueError("history_frames must be nonnegative")
        object.__setattr__(self, "downsample_rates", v)
        object.__setattr__(self, "map_root_sizes", m)


class SceneClass(str, Enum):
    NARROW = "Narrow"
    NORMAL = "Normal"
    WIDE = "Wide"


@dataclass(frozen=True)
class EnvClass:
    label: SceneClass
    selected_rate: float
    selected_map_index: int  # 1..3
    scale: float
    panoramic_count: int = 0

    @classmethod
    def from_label(cls, label: SceneClass, config: EnvConfig, scale: float,
                   panoramic_count: int = 0) -> "EnvClass":
        i = {SceneClass.NARROW: 0, SceneClass.NORMAL: 1, SceneClass.WIDE: 2}[SceneClass(label)]
        return cls(SceneClass(label), config.downsample_rates[i], i + 1, float(scale),
                   int(panoramic_count))

    @property
    def map_root_size_index(self) -> int:
        return self.selected_map_index - 1


def grid_downsample(points, size: float) -> np.ndarray:
    """One centroid per occupied voxel of edge ``size``, in voxel-key order."""
    if not size > 0:
        raise ValueError("voxel size must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return pts.copy()
    keys = np.floor(pts / size).astype(np.int64)
    order, starts, _ = group_by_key(keys)
    sums = np.add.reduceat(pts[order], starts[:-1], axis=0)
    return sums / np.diff(starts)[:, None]


def spatial_scale(map_points) -> float:
    """Mean Euclidean distance of the points to their centroid."""
    pts = np.asarray(map_points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("spatial scale of an empty point set")
    q = pts.mean(axis=0)
    return float(np.mean(np.linalg.norm(pts - q, axis=1)))


def label_for_scale(s: float, config: EnvConfig) -> SceneClass:
    # strict inequalities on both sides: the thresholds themselves are Normal
    if s > config.s2:
        return SceneClass.WIDE
    if s < config.s1:
        return SceneClass.NARROW
    return SceneClass.NORMAL


def classify(frame_points, history_points=(), config: EnvConfig | None = None):
    """Classify the scene around the current frame.

    Parameters
    ----------
    frame_points : (N, 3) array
        Current frame in the world frame.
    history_points : sequence of (M_k, 3) arrays, or one array
        Recent frames; only the newest ``config.history_frames`` are used.

    Returns
    -------
    (EnvClass, ndarray)
        The class and the frame downsampled at the selected rate.
    """
    config = EnvConfig() if config is None else config
    frame = np.asarray(frame_points, dtype=float).reshape(-1, 3)
    if len(frame) == 0:
        raise ValueError("cannot classify an empty frame")
    if isinstance(history_points, np.ndarray):
        history = [history_points.reshape(-1, 3)]
    else:
        history = [np.asarray(h, dtype=float).reshape(-1, 3) for h in history_points]
    if config.history_frames and len(history) > config.history_frames:
        history = history[-config.history_frames:]
    elif config.history_frames == 0:
        history = []
    panorama = np.vstack([frame, *history]) if history else frame
    thinned = grid_downsample(panorama, config.eval_voxel)
    s = spatial_scale(thinned)
    env = EnvClass.from_label(label_for_scale(s, config), config, s, len(panorama))
    return env, grid_downsample(frame, env.selected_rate)


ENV_RECORD_FIELDS = ("frame_id", "point_count", "panoramic_count", "s", "class", "V_s", "map_index")


def env_record(frame_id, frame_points, env: EnvClass) -> list:
    n = len(np.asarray(frame_points).reshape(-1, 3))
    return [frame_id, n, env.panoramic_count, env.scale, env.label.value, env.selected_rate,
            env.selected_map_index]


def max_acceleration_bound(epsilon_p: float, t_scan: float) -> float:
    """Largest acceleration whose in-scan displacement stays below ``epsilon_p``."""
    if not epsilon_p > 0 or not t_scan > 0:
        raise ValueError("epsilon_p and t_scan must be positive")
    # divide twice: (2 * 0.1) / 0.1 / 0.1 is exactly 20.0, unlike 0.2 / 0.1**2
    return 2.0 * epsilon_p / t_scan / t_scan
