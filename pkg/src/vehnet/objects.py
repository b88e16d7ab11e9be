"""Candidate vehicle extraction from a semantic map.

class mask -> morphological opening -> connected components -> area filter ->
context patches. Masks are boolean ``(H, W)`` arrays; coordinates in
bounding boxes and centroids are ``(x, y)`` = (column, row), boxes inclusive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .segmodel import SemanticMap


@dataclass(frozen=True)
class StructuringElement:
    """Odd-sized binary kernel with its origin at the center cell."""

    kernel: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=bool)
        if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
            raise ValueError(f"structuring element must be odd-sized 2-D, got {k.shape}")
        if not k[k.shape[0] // 2, k.shape[1] // 2]:
            raise ValueError("structuring element origin must be set")
        object.__setattr__(self, "kernel", k)

    @classmethod
    def square(cls, size: int = 3) -> "StructuringElement":
        return cls(np.ones((size, size), dtype=bool))

    @classmethod
    def disk(cls, radius: int) -> "StructuringElement":
        r = np.arange(-radius, radius + 1)
        return cls(r[:, None] ** 2 + r[None, :] ** 2 <= radius**2)

    def offsets(self) -> list[tuple[int, int]]:
        cy, cx = self.kernel.shape[0] // 2, self.kernel.shape[1] // 2
        return [(int(dy) - cy, int(dx) - cx) for dy, dx in np.argwhere(self.kernel)]


@dataclass
class ObjectInstance:
    id: int
    rows: np.ndarray
    cols: np.ndarray
    label: str | None = None
    confidence: float | None = None

    @property
    def area(self) -> int:
        return int(self.rows.size)

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        return (int(self.cols.min()), int(self.rows.min()), int(self.cols.max()), int(self.rows.max()))

    @property
    def centroid(self) -> tuple[float, float]:
        return float(self.cols.mean()), float(self.rows.mean())

    @property
    def pixels(self) -> set[tuple[int, int]]:
        """Pixel set as (row, col) pairs."""
        return set(zip(self.rows.tolist(), self.cols.tolist()))


@dataclass
class Patch:
    image: np.ndarray
    rect: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive, in source coordinates


@dataclass
class ExtractParams:
    class_name: str = "car"
    se: StructuringElement = field(default_factory=StructuringElement.square)
    connectivity: int = 8
    min_area: int = 32
    context: int = 16


def class_mask(semantic_map: SemanticMap, class_name: str = "car") -> np.ndarray:
    return semantic_map.labels() == semantic_map.index(class_name)


def _shift(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """``out[y, x] = mask[y + dy, x + dx]``, background outside the image."""
    h, w = mask.shape
    out = np.zeros_like(mask)
    ys, yd = slice(max(dy, 0), h + min(dy, 0)), slice(max(-dy, 0), h + min(-dy, 0))
    xs, xd = slice(max(dx, 0), w + min(dx, 0)), slice(max(-dx, 0), w + min(-dx, 0))
    out[yd, xd] = mask[ys, xs]
    return out


def erosion(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    out = np.ones_like(mask, dtype=bool)
    for dy, dx in se.offsets():
        out &= _shift(mask, dy, dx)
    return out


def dilation(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    out = np.zeros_like(mask, dtype=bool)
    for dy, dx in se.offsets():
        out |= _shift(mask, -dy, -dx)
    return out


def opening(mask: np.ndarray, se: StructuringElement | None = None) -> np.ndarray:
    se = se or StructuringElement.square(3)
    mask = np.asarray(mask, dtype=bool)
    return dilation(erosion(mask, se), se)


def connected_components(mask: np.ndarray, connectivity: int = 8) -> list[ObjectInstance]:
    """Maximal connected foreground sets, ids in raster order of first pixel."""
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=structure)
    if n == 0:
        return []
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n + 1)
    bounds = np.cumsum(counts)
    w = mask.shape[1]
    groups = []
    for lab in range(1, n + 1):
        idx = order[bounds[lab - 1] : bounds[lab]]  # sorted flat offsets
        groups.append(idx)
    groups.sort(key=lambda idx: idx[0])
    return [ObjectInstance(i, idx // w, idx % w) for i, idx in enumerate(groups)]


def filter_small(instances, min_area: int = 32) -> list[ObjectInstance]:
    """Drop instances with area < min_area."""
    if min_area < 1:
        raise ValueError("min_area must be >= 1")
    return [inst for inst in instances if inst.area >= min_area]


def patch_rect(bbox, image_shape, context: int = 16) -> tuple[int, int, int, int]:
    x0, y0, x1, y1 = bbox
    h, w = image_shape[:2]
    if x1 < x0 or y1 < y0:
        raise ValueError(f"degenerate bounding box {bbox}")
    if x0 < 0 or y0 < 0 or x1 >= w or y1 >= h:
        raise ValueError(f"bounding box {bbox} outside image of size {w}x{h}")
    return max(x0 - context, 0), max(y0 - context, 0), min(x1 + context, w - 1), min(y1 + context, h - 1)


def extract_patch(image: np.ndarray, instance_or_bbox, context: int = 16) -> Patch:
    """Crop the bounding box grown by ``context`` px, clamped to the image."""
    bbox = instance_or_bbox.bbox if isinstance(instance_or_bbox, ObjectInstance) else instance_or_bbox
    x0, y0, x1, y1 = patch_rect(bbox, image.shape, context)
    return Patch(image[y0 : y1 + 1, x0 : x1 + 1].copy(), (x0, y0, x1, y1))


def extract_objects(semantic_map: SemanticMap, image: np.ndarray,
                    params: ExtractParams | None = None):
    """Full extraction chain; returns ``[(ObjectInstance, Patch), ...]``."""
    params = params or ExtractParams()
    if tuple(semantic_map.shape) != tuple(image.shape[:2]):
        raise ValueError(f"map {semantic_map.shape} and image {image.shape[:2]} differ in size")
    mask = opening(class_mask(semantic_map, params.class_name), params.se)
    instances = filter_small(connected_components(mask, params.connectivity), params.min_area)
    for i, inst in enumerate(instances):
        inst.id = i
    return [(inst, extract_patch(image, inst, params.context)) for inst in instances]
