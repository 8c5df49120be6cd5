"""Synthetic body load scenes for the posture and activity tasks.

A scene is a set of elliptical load patches defined in a body frame (x from
head toward feet, millimetres at a 1.75 m reference height). The scene places
the body on the mat with a random translation and rotation and spreads the
subject's weight over the active patches at any instant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

GRAVITY = 9.81
REFERENCE_HEIGHT = 1.75
REFERENCE_WEIGHT = 71.0

POSTURES = ("supine", "prone", "left_lateral", "right_lateral")
ACTIVITIES = ("running", "hip_lift", "leg_raise", "seated_forward_press", "revolved_crescent_lunge")
TASKS = {"posture": POSTURES, "activity": ACTIVITIES}
TASK_IDS = {"posture": 0, "activity": 1}
ROTATION_RANGE = {"posture": 15.0, "activity": 180.0}

# subject ranges: (min, max)
HEIGHT_RANGE = (1.67, 1.83)
WEIGHT_RANGE = (64.0, 78.0)
AGE_RANGE = (21.0, 28.0)


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class MatGeometry:
    n: int = 27
    m: int = 27
    pitch_x: float = 67.3  # mm, along the row index
    pitch_y: float = 52.3  # mm, along the column index
    length: float = 2.030  # m
    width: float = 1.525  # m

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("geometry needs at least one row and column")
        if self.n * self.pitch_x > self.length * 1000 + 1e-9:
            raise ValueError("rows exceed the mat length")
        if self.m * self.pitch_y > self.width * 1000 + 1e-9:
            raise ValueError("columns exceed the mat width")

    @property
    def size_mm(self) -> tuple[float, float]:
        """Extent of the sensing area (x, y) in mm."""
        return self.n * self.pitch_x, self.m * self.pitch_y

    @property
    def shape(self) -> tuple[int, int]:
        return self.n, self.m


@dataclass(frozen=True)
class SubjectProfile:
    height: float
    weight: float
    age: float

    @property
    def force(self) -> float:
        return self.weight * GRAVITY


@dataclass(frozen=True)
class Modulation:
    """Periodic activity level of a patch.

    ``const`` is always 1. ``square`` is 1 for the first ``duty`` fraction of
    each period and ``low`` otherwise. ``sine`` is ``1 + depth*sin``.
    """

    kind: str = "const"
    period: float = 1.0
    duty: float = 0.5
    phase: float = 0.0  # fraction of a period
    low: float = 0.0
    depth: float = 0.0

    def __call__(self, t: float) -> float:
        if self.kind == "const":
            return 1.0
        frac = (t / self.period + self.phase) % 1.0
        if self.kind == "square":
            return 1.0 if frac < self.duty else self.low
        if self.kind == "sine":
            return 1.0 + self.depth * math.sin(2 * math.pi * frac)
        raise SceneError(f"unknown modulation {self.kind!r}")


@dataclass(frozen=True)
class LoadPatch:
    name: str
    center: tuple[float, float]
    semi_axes: tuple[float, float]
    weight_fraction: float
    modulation: Modulation = field(default_factory=Modulation)
    sway: tuple[float, float] = (0.0, 0.0)  # sinusoidal displacement amplitude, body frame
    sway_period: float = 1.0

    @property
    def is_static(self) -> bool:
        return self.modulation.kind == "const" and self.sway == (0.0, 0.0)

    def offset(self, t: float) -> tuple[float, float]:
        if self.sway == (0.0, 0.0):
            return self.center
        k = math.sin(2 * math.pi * t / self.sway_period)
        return self.center[0] + self.sway[0] * k, self.center[1] + self.sway[1] * k


def _pair(name, x, y, a, b, w, **kw):
    """Left/right patches sharing ``w`` equally."""
    return [LoadPatch(f"{name}_l", (x, y), (a, b), w / 2, **kw),
            LoadPatch(f"{name}_r", (x, -y), (a, b), w / 2, **kw)]


def _lateral(side: float):
    return [
        LoadPatch("head", (-770, 0), (80, 60), 0.07),
        LoadPatch("shoulder", (-510, -20 * side), (90, 70), 0.25),
        LoadPatch("hip", (0, -20 * side), (120, 85), 0.40),
        LoadPatch("knees", (330, 110 * side), (70, 60), 0.15),
        LoadPatch("feet", (760, 60 * side), (80, 45), 0.13),
    ]


_HIP_LIFT_DOWN = Modulation("square", period=3.0, duty=0.4)
_RUN_LEFT = Modulation("square", period=0.8, duty=0.5, low=0.05 / 0.95)
_RUN_RIGHT = replace(_RUN_LEFT, phase=0.5)

TEMPLATES: dict[str, list[LoadPatch]] = {
    "supine": [
        LoadPatch("head", (-760, 0), (85, 70), 0.07),
        LoadPatch("shoulders", (-500, 0), (80, 200), 0.28),
        LoadPatch("torso_hips", (-60, 0), (170, 160), 0.45),
        *_pair("thighs", 280, 85, 150, 60, 0.12),
        *_pair("heels", 790, 95, 45, 38, 0.08),
    ],
    "prone": [
        LoadPatch("head", (-770, 60), (75, 80), 0.07),
        LoadPatch("chest", (-420, 0), (150, 190), 0.28),
        LoadPatch("torso", (-150, 0), (230, 150), 0.45),
        *_pair("thighs", 280, 80, 150, 60, 0.06),
        *_pair("knees", 460, 80, 50, 45, 0.06),
        *_pair("toes", 800, 90, 60, 35, 0.08),
    ],
    "left_lateral": _lateral(1.0),
    "right_lateral": _lateral(-1.0),
    "running": [
        LoadPatch("foot_l", (0, 110), (115, 50), 0.5, _RUN_LEFT),
        LoadPatch("foot_r", (0, -110), (115, 50), 0.5, _RUN_RIGHT),
    ],
    "hip_lift": [
        LoadPatch("head", (-640, 0), (80, 65), 0.15, _HIP_LIFT_DOWN),
        LoadPatch("shoulders", (-420, 0), (85, 185), 0.45),
        LoadPatch("buttocks", (0, 0), (130, 150), 0.25, _HIP_LIFT_DOWN),
        *_pair("feet", 370, 105, 105, 50, 0.40),
    ],
    "leg_raise": [
        LoadPatch("buttocks", (0, 0), (140, 160), 0.70),
        *_pair("hands", -80, 250, 60, 40, 0.20),
        *_pair("heels", 800, 90, 45, 38, 0.10, modulation=Modulation("square", period=2.5, duty=0.5)),
    ],
    "seated_forward_press": [
        LoadPatch("buttocks", (0, 0), (130, 170), 0.55),
        *_pair("legs", 380, 90, 260, 65, 0.45, modulation=Modulation("sine", period=2.0, depth=0.5)),
    ],
    "revolved_crescent_lunge": [
        LoadPatch("front_foot", (450, 0), (120, 50), 0.60, Modulation("sine", period=4.0, depth=0.15)),
        LoadPatch("rear_foot", (-450, 70), (60, 40), 0.40, sway=(0.0, 40.0), sway_period=4.0),
    ],
}


@dataclass(frozen=True)
class SceneScript:
    task: str
    class_id: int
    subject: SubjectProfile
    placement: tuple[float, float, float]  # dx mm, dy mm, rotation deg
    phase: float  # s, offset into the periodic modulations
    patches: tuple[LoadPatch, ...]
    geometry: MatGeometry = MatGeometry()

    @property
    def is_static(self) -> bool:
        return all(p.is_static for p in self.patches)

    @property
    def class_name(self) -> str:
        return TASKS[self.task][self.class_id]


@dataclass(frozen=True)
class PressureField:
    force: np.ndarray  # (n, m) newtons
    total_force: float


def sample_subject(rng) -> SubjectProfile:
    rng = np.random.default_rng(rng)
    return SubjectProfile(
        height=float(rng.uniform(*HEIGHT_RANGE)),
        weight=float(rng.uniform(*WEIGHT_RANGE)),
        age=float(rng.uniform(*AGE_RANGE)),
    )


def class_names(task: str) -> tuple[str, ...]:
    try:
        return TASKS[task]
    except KeyError:
        raise SceneError(f"unknown task {task!r}") from None


def _scaled(patches, subject: SubjectProfile):
    s = subject.height / REFERENCE_HEIGHT
    # contact area grows slowly with body mass
    a = s * (subject.weight / REFERENCE_WEIGHT) ** 0.25
    return tuple(
        replace(p, center=(p.center[0] * s, p.center[1] * s),
                semi_axes=(p.semi_axes[0] * a, p.semi_axes[1] * a),
                sway=(p.sway[0] * s, p.sway[1] * s))
        for p in patches
    )


def _extent(patches, theta: float):
    """Per-patch rotated centres and bounding half-widths (body origin at 0)."""
    c, s = math.cos(theta), math.sin(theta)
    out = []
    for p in patches:
        x, y = p.center
        a, b = p.semi_axes
        sway = math.hypot(*p.sway)
        cx, cy = c * x - s * y, s * x + c * y
        hx = math.sqrt((a * c) ** 2 + (b * s) ** 2) + sway
        hy = math.sqrt((a * s) ** 2 + (b * c) ** 2) + sway
        out.append((cx, cy, hx, hy))
    return np.array(out)


def make_scene(task: str, class_id: int, subject: SubjectProfile, rng,
               geometry: MatGeometry | None = None, templates=None) -> SceneScript:
    """Instantiate a class template for ``subject`` at a random on-mat placement."""
    names = class_names(task)
    if not 0 <= class_id < len(names):
        raise SceneError(f"class {class_id} out of range for task {task!r}")
    geometry = geometry or MatGeometry()
    templates = templates or TEMPLATES
    rng = np.random.default_rng(rng)
    patches = _scaled(templates[names[class_id]], subject)
    lx, ly = geometry.size_mm
    rot_max = ROTATION_RANGE[task]
    for _ in range(200):
        rot = float(rng.uniform(-rot_max, rot_max))
        ext = _extent(patches, math.radians(rot))
        lo_x = np.max(ext[:, 2] - ext[:, 0]) - lx / 2
        hi_x = lx / 2 - np.max(ext[:, 0] + ext[:, 2])
        lo_y = np.max(ext[:, 3] - ext[:, 1]) - ly / 2
        hi_y = ly / 2 - np.max(ext[:, 1] + ext[:, 3])
        if lo_x <= hi_x and lo_y <= hi_y:
            break
    else:
        raise SceneError(f"template {names[class_id]!r} does not fit on the mat")
    dx = float(rng.uniform(lo_x, hi_x))
    dy = float(rng.uniform(lo_y, hi_y))
    periods = [p.modulation.period for p in patches if p.modulation.kind != "const"]
    periods += [p.sway_period for p in patches if p.sway != (0.0, 0.0)]
    phase = float(rng.uniform(0.0, max(periods))) if periods else 0.0
    return SceneScript(task, class_id, subject, (dx, dy, rot), phase, patches, geometry)


def active_weights(patches, t: float) -> np.ndarray:
    """Normalised force shares of the patches at time ``t``."""
    raw = np.array([p.weight_fraction * p.modulation(t) for p in patches])
    raw = np.maximum(raw, 0.0)
    total = raw.sum()
    if total <= 0:
        raise SceneError("no active load patch")
    return raw / total


def _to_mat(scene: SceneScript, xy):
    dx, dy, rot = scene.placement
    th = math.radians(rot)
    c, s = math.cos(th), math.sin(th)
    lx, ly = scene.geometry.size_mm
    x, y = xy
    return c * x - s * y + lx / 2 + dx, s * x + c * y + ly / 2 + dy


@dataclass(frozen=True)
class PlacedPatch:
    """A patch in mat coordinates (mm) with its absolute force share."""

    center: tuple[float, float]
    semi_axes: tuple[float, float]
    angle: float  # rad
    force: float


def placed_patches(scene: SceneScript, t: float) -> list[PlacedPatch]:
    w = active_weights(scene.patches, t + scene.phase)
    th = math.radians(scene.placement[2])
    total = scene.subject.force
    return [PlacedPatch(_to_mat(scene, p.offset(t + scene.phase)), p.semi_axes, th, total * wi)
            for p, wi in zip(scene.patches, w) if wi > 0]


SUBSAMPLES = 6


def _coverage(patch: PlacedPatch, geometry: MatGeometry, sub: int = SUBSAMPLES) -> np.ndarray:
    """Area covered by an ellipse in every pixel, estimated on a ``sub x sub`` grid."""
    n, m = geometry.shape
    px, py = geometry.pitch_x, geometry.pitch_y
    cx, cy = patch.center
    a, b = patch.semi_axes
    c, s = math.cos(patch.angle), math.sin(patch.angle)
    hx = math.sqrt((a * c) ** 2 + (b * s) ** 2)
    hy = math.sqrt((a * s) ** 2 + (b * c) ** 2)
    i0, i1 = max(int(math.floor((cx - hx) / px)), 0), min(int(math.floor((cx + hx) / px)) + 1, n)
    k0, k1 = max(int(math.floor((cy - hy) / py)), 0), min(int(math.floor((cy + hy) / py)) + 1, m)
    cov = np.zeros((n, m))
    if i0 >= i1 or k0 >= k1:
        return cov
    frac = (np.arange(sub) + 0.5) / sub
    xs = ((np.arange(i0, i1)[:, None] + frac[None, :]) * px).ravel()
    ys = ((np.arange(k0, k1)[:, None] + frac[None, :]) * py).ravel()
    ux = xs[:, None] - cx
    uy = ys[None, :] - cy
    u = c * ux + s * uy
    v = -s * ux + c * uy
    inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    counts = inside.reshape(i1 - i0, sub, k1 - k0, sub).sum(axis=(1, 3))
    cov[i0:i1, k0:k1] = counts * (px * py / sub**2)
    return cov


def rasterize(patches, total_force: float | None, geometry: MatGeometry) -> PressureField:
    """Spread each placed patch's force over the pixels it covers.

    Force is shared in proportion to covered area and renormalised per patch,
    so the grid total equals the summed patch forces. ``total_force`` (if
    given) rescales the shares to that total.
    """
    grid = np.zeros(geometry.shape)
    forces = np.array([p.force for p in patches], dtype=np.float64)
    if total_force is not None and forces.sum() > 0:
        forces = forces * (total_force / forces.sum())
    for p, f in zip(patches, forces):
        if f == 0:
            continue
        cov = _coverage(p, geometry)
        area = cov.sum()
        if area == 0:
            i = int(p.center[0] // geometry.pitch_x)
            k = int(p.center[1] // geometry.pitch_y)
            if not (0 <= i < geometry.n and 0 <= k < geometry.m):
                raise SceneError("load patch lies entirely off the sensing area")
            grid[i, k] += f
        else:
            grid += cov * (f / area)
    total = float(forces.sum())
    return PressureField(grid, total)


def on_mat_fraction(scene: SceneScript, t: float = 0.0, sub: int = 12) -> float:
    """Share of the scene's force whose patch area lies on the sensing area."""
    lx, ly = scene.geometry.size_mm
    big = MatGeometry(n=1, m=1, pitch_x=lx, pitch_y=ly, length=lx / 1000, width=ly / 1000)
    total = 0.0
    for p in placed_patches(scene, t):
        a, b = p.semi_axes
        inside = _coverage(p, big, sub=sub * max(scene.geometry.n, scene.geometry.m)).sum()
        total += p.force * min(inside / (math.pi * a * b), 1.0)
    return total / scene.subject.force


def pressure_at(scene: SceneScript, t: float) -> PressureField:
    """Force grid produced by the scene at scene time ``t`` (seconds)."""
    if t < 0:
        raise ValueError("scene time must be non-negative")
    return rasterize(placed_patches(scene, t), scene.subject.force, scene.geometry)


def pose_descriptor(force: np.ndarray, geometry: MatGeometry, bins=(10, 6)) -> np.ndarray:
    """Translation/rotation-normalised force histogram of a field.

    The field is centred on its centre of pressure and turned so its major
    principal axis runs along +x (sign fixed by the skew along that axis).
    Handedness is preserved, so mirror-image poses stay distinct.
    """
    n, m = force.shape
    x = (np.arange(n) + 0.5) * geometry.pitch_x
    y = (np.arange(m) + 0.5) * geometry.pitch_y
    X, Y = np.meshgrid(x, y, indexing="ij")
    w = force.ravel() / force.sum()
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    mu = w @ pts
    d = pts - mu
    cov = (d * w[:, None]).T @ d
    _, vecs = np.linalg.eigh(cov)
    major = vecs[:, 1]
    if w @ (d @ major) ** 3 < 0:
        major = -major
    minor = np.array([-major[1], major[0]])
    u, v = d @ major, d @ minor
    hist, _, _ = np.histogram2d(u, v, bins=bins, range=[[-1000, 1000], [-600, 600]], weights=w)
    return hist.ravel()
