"""Deterministic toy aerial scenes with pixel labels and vehicle instances."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .classifier import POTSDAM_4
from .segmodel import POTSDAM_CLASSES

SCENE_CLASSES = POTSDAM_CLASSES + ("clutter",)
IMPERVIOUS, BUILDING, TREE, LOW_VEG, CAR, CLUTTER = range(6)

# base RGB per background class
BACKGROUND_COLORS = {
    IMPERVIOUS: (150, 150, 150),
    BUILDING: (120, 95, 140),
    TREE: (40, 105, 45),
    LOW_VEG: (125, 185, 95),
    CLUTTER: (105, 80, 55),
}


@dataclass(frozen=True)
class VehicleStyle:
    color: tuple[int, int, int]
    length: tuple[float, float]
    width: tuple[float, float]
    weight: float


VEHICLE_STYLES = {
    "car": VehicleStyle((195, 35, 35), (13.0, 16.0), (7.0, 8.5), 0.50),
    "van": VehicleStyle((235, 235, 230), (16.0, 19.0), (9.0, 10.5), 0.20),
    "truck": VehicleStyle((35, 60, 195), (22.0, 27.0), (10.0, 12.0), 0.12),
    "pick_up": VehicleStyle((235, 145, 25), (16.0, 19.0), (8.0, 9.0), 0.18),
}


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    size: tuple[int, int] = (192, 192)
    vehicle_classes: tuple[str, ...] = POTSDAM_4
    vehicle_count: tuple[int, int] = (8, 14)
    min_separation: int = 6
    buildings: tuple[int, int] = (2, 4)
    lawns: tuple[int, int] = (2, 4)
    trees: tuple[int, int] = (4, 9)
    clutter: tuple[int, int] = (0, 2)
    noise_sigma: float = 8.0
    max_retries: int = 400

    def __post_init__(self):
        longest = max(VEHICLE_STYLES[c].length[1] for c in self.vehicle_classes)
        if longest + 2 > min(self.size):
            raise ValueError(f"vehicles up to {longest} px do not fit in a {self.size} scene")
        if self.min_separation < 0:
            raise ValueError("min_separation must be >= 0")
        if self.vehicle_count[0] > self.vehicle_count[1] or self.vehicle_count[0] < 0:
            raise ValueError("vehicle_count must be a (lo, hi) range")


@dataclass
class SceneVehicle:
    id: int
    vehicle_class: str
    rows: np.ndarray
    cols: np.ndarray
    corners: np.ndarray  # 4 x (x, y)

    @property
    def area(self) -> int:
        return int(self.rows.size)

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        return (int(self.cols.min()), int(self.rows.min()), int(self.cols.max()), int(self.rows.max()))

    @property
    def centroid(self) -> tuple[float, float]:
        return float(self.cols.mean()), float(self.rows.mean())


@dataclass
class Scene:
    scene_id: str
    image: np.ndarray  # (H, W, 3) uint8
    labels: np.ndarray  # (H, W) uint8 indices into SCENE_CLASSES
    vehicles: list[SceneVehicle] = field(default_factory=list)


class PlacementError(RuntimeError):
    """Vehicles could not be placed under the separation constraint."""


def _rect_pixels(shape, cx, cy, length, width, angle):
    h, w = shape
    reach = int(np.ceil(0.5 * np.hypot(length, width))) + 1
    y0, y1 = max(int(cy) - reach, 0), min(int(cy) + reach, h - 1)
    x0, x1 = max(int(cx) - reach, 0), min(int(cx) + reach, w - 1)
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    c, s = np.cos(angle), np.sin(angle)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    inside = (np.abs(u) <= length / 2) & (np.abs(v) <= width / 2)
    corners = np.array([
        (cx + du * c - dv * s, cy + du * s + dv * c)
        for du, dv in ((-length / 2, -width / 2), (length / 2, -width / 2),
                       (length / 2, width / 2), (-length / 2, width / 2))
    ])
    return yy[inside], xx[inside], corners


def generate_scene(spec: SceneSpec, scene_id: str = "scene") -> Scene:
    """Render one scene; identical specs give bit-identical scenes."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.size
    labels = np.full((h, w), IMPERVIOUS, dtype=np.uint8)

    def rects(cls, count, lo, hi):
        hi = min(hi, h, w)
        lo = min(lo, hi)
        for _ in range(rng.integers(count[0], count[1] + 1)):
            rh, rw = rng.integers(lo, hi + 1, size=2)
            y, x = rng.integers(0, h - rh + 1), rng.integers(0, w - rw + 1)
            labels[y : y + rh, x : x + rw] = cls

    rects(BUILDING, spec.buildings, 24, 56)
    rects(LOW_VEG, spec.lawns, 20, 48)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(spec.trees[0], spec.trees[1] + 1)):
        cy, cx, r = rng.uniform(0, h), rng.uniform(0, w), rng.uniform(6, 14)
        labels[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = TREE
    rects(CLUTTER, spec.clutter, 4, 8)

    # vehicles: prefer footprints on open pavement, never closer than min_separation
    occupied = np.zeros((h, w), dtype=bool)
    sep = ndimage.generate_binary_structure(2, 2)
    k = int(rng.integers(spec.vehicle_count[0], spec.vehicle_count[1] + 1))
    names = list(spec.vehicle_classes)
    weights = np.array([VEHICLE_STYLES[n].weight for n in names])
    weights /= weights.sum()
    placed = []
    for vid in range(k):
        cls = names[int(rng.choice(len(names), p=weights))]
        style = VEHICLE_STYLES[cls]
        length = rng.uniform(*style.length)
        width = rng.uniform(*style.width)
        angle = rng.uniform(0, np.pi)
        for attempt in range(spec.max_retries):
            margin = 0.5 * np.hypot(length, width) + 1
            cx, cy = rng.uniform(margin, w - margin), rng.uniform(margin, h - margin)
            rows, cols, corners = _rect_pixels((h, w), cx, cy, length, width, angle)
            if occupied[rows, cols].any():
                continue
            if attempt < spec.max_retries // 2 and (labels[rows, cols] != IMPERVIOUS).any():
                continue
            break
        else:
            raise PlacementError(
                f"could not place vehicle {vid + 1} of {k} after {spec.max_retries} tries")
        footprint = np.zeros((h, w), dtype=bool)
        footprint[rows, cols] = True
        if spec.min_separation:
            footprint = ndimage.binary_dilation(footprint, sep, iterations=spec.min_separation)
        occupied |= footprint
        placed.append((cls, rows, cols, corners))

    # background texture: class color + smooth field + per-pixel noise
    image = np.zeros((h, w, 3), dtype=np.float64)
    for cls, color in BACKGROUND_COLORS.items():
        image[labels == cls] = color
    smooth = ndimage.gaussian_filter(rng.normal(0, 1, (h, w, 3)), sigma=(4, 4, 0))
    smooth *= 12.0 / max(smooth.std(), 1e-9)
    image += smooth

    vehicles = []
    for vid, (cls, rows, cols, corners) in enumerate(placed):
        color = np.array(VEHICLE_STYLES[cls].color, dtype=np.float64) + rng.uniform(-15, 15, size=3)
        image[rows, cols] = color
        labels[rows, cols] = CAR
        order = np.lexsort((cols, rows))
        vehicles.append(SceneVehicle(vid, cls, rows[order], cols[order], corners))
    image += rng.normal(0, spec.noise_sigma, size=image.shape)
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    return Scene(scene_id, image, labels, vehicles)


@dataclass
class DatasetSplit:
    train: list[Scene]
    val: list[Scene]
    test: list[Scene]


def split_sizes(n: int) -> tuple[int, int, int]:
    """70/10/20 proportions."""
    n_train = int(round(0.7 * n))
    n_val = int(round(0.1 * n))
    return n_train, n_val, n - n_train - n_val


def generate_dataset(spec: SceneSpec, n_scenes: int) -> DatasetSplit:
    if n_scenes < 10:
        raise ValueError("need at least 10 scenes for a 70/10/20 split")
    seeds = np.random.SeedSequence(spec.seed).generate_state(n_scenes)
    scenes = [generate_scene(replace(spec, seed=int(s)), f"scene_{i:03d}") for i, s in enumerate(seeds)]
    order = np.random.default_rng(spec.seed).permutation(n_scenes)
    n_train, n_val, _ = split_sizes(n_scenes)
    pick = [scenes[i] for i in order]
    return DatasetSplit(pick[:n_train], pick[n_train : n_train + n_val], pick[n_train + n_val :])
