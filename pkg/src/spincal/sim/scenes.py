"""Virtual-plane scenes and their text file format.

Scene files are line oriented::

    # comment
    name = scene_1
    plane = cx cy cz  nx ny nz  hu hv  [ux uy uz]

``hu``/``hv`` are half extents along the in-plane axes. Without the optional
``u`` axis they are the ones returned by :func:`plane_axes`.
"""

from dataclasses import dataclass, field
from importlib import resources
import math
from pathlib import Path

import numpy as np

from ..dh import RigidTransform


class SceneFormatError(ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


def plane_axes(normal) -> tuple:
    """Deterministic in-plane axes ``(u, v)`` with ``u x v = normal``."""
    n = np.asarray(normal, dtype=float)
    ref = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(ref, n)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


@dataclass(frozen=True)
class VirtualPlane:
    center: np.ndarray
    normal: np.ndarray
    half_extents: np.ndarray = field(default_factory=lambda: np.array([5.0, 5.0]))
    axis_u: np.ndarray | None = None  # in-plane direction of hu; derived from the normal if None

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        n = np.asarray(self.normal, dtype=float).reshape(3)
        h = np.asarray(self.half_extents, dtype=float).reshape(2)
        if not np.all(np.isfinite(c)) or not np.all(np.isfinite(n)):
            raise ValueError("plane center and normal must be finite")
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError(f"plane normal is not unit length: {n}")
        if np.any(h <= 0):
            raise ValueError("half extents must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "half_extents", h)
        if self.axis_u is not None:
            u = np.asarray(self.axis_u, dtype=float).reshape(3)
            u = u - (u @ n) * n
            norm = np.linalg.norm(u)
            if not norm > 1e-9:
                raise ValueError("axis_u must not be parallel to the normal")
            object.__setattr__(self, "axis_u", u / norm)

    def axes(self):
        if self.axis_u is None:
            return plane_axes(self.normal)
        return self.axis_u, np.cross(self.normal, self.axis_u)

    def distance(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.center) @ self.normal


@dataclass(frozen=True)
class SceneSpec:
    name: str
    planes: tuple

    def __post_init__(self):
        planes = tuple(self.planes)
        if not planes:
            raise ValueError("a scene needs at least one plane")
        object.__setattr__(self, "planes", planes)

    def __len__(self):
        return len(self.planes)

    def arrays(self):
        """``(centers, normals, axes_u, axes_v, half_extents)`` stacked per plane."""
        centers = np.array([p.center for p in self.planes])
        normals = np.array([p.normal for p in self.planes])
        axes = [p.axes() for p in self.planes]
        return (centers, normals, np.array([a[0] for a in axes]),
                np.array([a[1] for a in axes]), np.array([p.half_extents for p in self.planes]))

    def transformed(self, T: RigidTransform) -> "SceneSpec":
        """Rigidly moved copy; patch outlines move with their planes."""
        planes = []
        for p in self.planes:
            n = T.rotation @ p.normal
            planes.append(VirtualPlane(T.apply(p.center), n / np.linalg.norm(n), p.half_extents,
                                       T.rotation @ p.axes()[0]))
        return SceneSpec(self.name, tuple(planes))


def _fmt(v: float) -> str:
    return repr(float(v))


def dumps_scene(scene: SceneSpec) -> str:
    lines = ["# spincal scene: plane = cx cy cz  nx ny nz  hu hv  [ux uy uz]",
             f"name = {scene.name}"]
    for p in scene.planes:
        nums = [*p.center, *p.normal, *p.half_extents]
        if p.axis_u is not None:
            nums += list(p.axis_u)
        lines.append("plane = " + " ".join(_fmt(v) for v in nums))
    return "\n".join(lines) + "\n"


def loads_scene(text: str, path=None) -> SceneSpec:
    name = None
    planes = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SceneFormatError(f"expected 'key = value', got {raw.strip()!r}", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "name":
            if not value:
                raise SceneFormatError("empty scene name", path, lineno)
            name = value
        elif key == "plane":
            parts = value.split()
            if len(parts) not in (8, 11):
                raise SceneFormatError(f"plane needs 8 or 11 numbers, got {len(parts)}", path, lineno)
            try:
                nums = [float(s) for s in parts]
            except ValueError:
                raise SceneFormatError(f"non-numeric plane entry in {value!r}", path, lineno) from None
            normal = np.array(nums[3:6])
            norm = np.linalg.norm(normal)
            if not math.isfinite(norm) or norm == 0.0:
                raise SceneFormatError("plane normal must be nonzero", path, lineno)
            try:
                # leave unit normals untouched so files round-trip bit for bit
                if abs(norm - 1.0) > 1e-12:
                    normal = normal / norm
                planes.append(VirtualPlane(nums[0:3], normal, nums[6:8],
                                           nums[8:11] if len(nums) == 11 else None))
            except ValueError as exc:
                raise SceneFormatError(str(exc), path, lineno) from None
        else:
            raise SceneFormatError(f"unknown key {key!r}", path, lineno)
    if not planes:
        raise SceneFormatError("scene has no planes", path, None)
    return SceneSpec(name or (Path(path).stem if path else "scene"), tuple(planes))


def load_scene(path) -> SceneSpec:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise SceneFormatError(f"cannot read scene file ({exc.strerror})", p, None) from None
    return loads_scene(text, p)


def save_scene(scene: SceneSpec, path) -> None:
    Path(path).write_text(dumps_scene(scene))


# ---------------------------------------------------------------------------
# built-in scenes
# ---------------------------------------------------------------------------

BOX_DISTANCE = 2.0
PATCH_HALF = 5.0  # 10 m x 10 m planes


def _box_plane(axis: int, sign: float) -> VirtualPlane:
    c = np.zeros(3)
    c[axis] = sign * BOX_DISTANCE
    n = np.zeros(3)
    n[axis] = -sign
    return VirtualPlane(c, n, (PATCH_HALF, PATCH_HALF))


def identifiability_scene(index: int) -> SceneSpec:
    """``scene_1`` .. ``scene_6`` axis-aligned plane distributions.

    scene_1: all six box faces at 2 m; scene_2: x and z faces; scene_3: y and
    z faces; scene_4: the two x faces; scene_5: the two y faces; scene_6: the
    floor alone.
    """
    x = [_box_plane(0, +1), _box_plane(0, -1)]
    y = [_box_plane(1, +1), _box_plane(1, -1)]
    z = [_box_plane(2, -1), _box_plane(2, +1)]
    layout = {1: x + y + z, 2: x + z, 3: y + z, 4: x, 5: y, 6: z[:1]}
    if index not in layout:
        raise ValueError(f"no identifiability scene {index}")
    return SceneSpec(f"scene_{index}", tuple(layout[index]))


def forty_plane_scene(seed: int = 40) -> SceneSpec:
    """Enclosing room (6 walls) plus 34 randomly oriented interior patches."""
    rng = np.random.default_rng(seed)
    walls = [
        VirtualPlane((12.0, 0.0, 1.0), (-1.0, 0.0, 0.0), (12.5, 4.5)),
        VirtualPlane((-12.0, 0.0, 1.0), (1.0, 0.0, 0.0), (12.5, 4.5)),
        VirtualPlane((0.0, 12.0, 1.0), (0.0, -1.0, 0.0), (12.5, 4.5)),
        VirtualPlane((0.0, -12.0, 1.0), (0.0, 1.0, 0.0), (12.5, 4.5)),
        VirtualPlane((0.0, 0.0, -3.0), (0.0, 0.0, 1.0), (12.5, 12.5)),
        VirtualPlane((0.0, 0.0, 5.0), (0.0, 0.0, -1.0), (12.5, 12.5)),
    ]
    planes = list(walls)
    while len(planes) < 40:
        c = np.array([rng.uniform(-9.5, 9.5), rng.uniform(-9.5, 9.5), rng.uniform(-2.0, 4.0)])
        if np.linalg.norm(c) < 3.5:
            continue
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        h = rng.uniform(1.0, 2.5, size=2)
        # keep the patch from passing through the sensor neighbourhood
        if abs(c @ n) < 1.5:
            continue
        planes.append(VirtualPlane(np.round(c, 6), n, np.round(h, 6)))
    return SceneSpec("planes40", tuple(planes))


BUILTIN_NAMES = ("scene_1", "scene_2", "scene_3", "scene_4", "scene_5", "scene_6", "planes40")


def builtin_scene(name: str) -> SceneSpec:
    """Load a built-in scene from the packaged scene files."""
    if name not in BUILTIN_NAMES:
        raise KeyError(f"unknown built-in scene {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    res = resources.files("spincal.data.scenes").joinpath(f"{name}.scene")
    return loads_scene(res.read_text(), f"<builtin>/{name}.scene")


def generate_builtin_files(directory) -> None:
    """(Re)write the packaged scene files from their generators."""
    d = Path(directory)
    for i in range(1, 7):
        save_scene(identifiability_scene(i), d / f"scene_{i}.scene")
    save_scene(forty_plane_scene(), d / "planes40.scene")


def resolve_scene(name_or_path) -> SceneSpec:
    """Built-in name or path to a scene file."""
    if str(name_or_path) in BUILTIN_NAMES:
        return builtin_scene(str(name_or_path))
    return load_scene(name_or_path)
