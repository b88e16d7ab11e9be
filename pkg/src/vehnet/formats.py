"""On-disk formats: weight files, PNG images/label maps/probability maps,
instance CSVs and corner-style vehicle annotations.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .resample import resize_bilinear, to_uint8

WEIGHT_MAGIC = b"VEHNET01"

POTSDAM_COLORS = {
    "impervious_surface": (255, 255, 255),
    "building": (0, 0, 255),
    "low_vegetation": (0, 255, 255),
    "tree": (0, 255, 0),
    "car": (255, 255, 0),
    "clutter": (255, 0, 0),
}


class FormatError(ValueError):
    """Malformed or unreadable input file."""


# ---------------------------------------------------------------------------
# Weight files
# ---------------------------------------------------------------------------


def encode_weights(tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(WEIGHT_MAGIC)
    for name, value in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(value, dtype="<f4")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


def decode_weights(data: bytes) -> dict[str, np.ndarray]:
    if data[:8] != WEIGHT_MAGIC:
        raise FormatError(f"bad magic {data[:8]!r} at byte 0, expected {WEIGHT_MAGIC!r}")
    pos, end = 8, len(data)
    out: dict[str, np.ndarray] = {}

    def take(n, what):
        nonlocal pos
        if pos + n > end:
            raise FormatError(f"truncated weight file: {what} needs {n} bytes at byte {pos}, "
                              f"only {end - pos} left")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    while pos < end:
        start = pos
        (nlen,) = struct.unpack("<I", take(4, "name length"))
        name = take(nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        count = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(take(4 * count, f"values of {name!r}"), dtype="<f4")
        if name in out:
            raise FormatError(f"duplicate tensor {name!r} at byte {start}")
        out[name] = values.reshape(dims).astype(np.float32)
    return out


def save_weights(path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_weights(tensors))


def load_weights(path) -> dict[str, np.ndarray]:
    return decode_weights(Path(path).read_bytes())


def text_to_tensor(text: str) -> np.ndarray:
    """Store a short string as float32 byte codes (exact for 0..255)."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def tensor_to_text(arr: np.ndarray) -> str:
    return bytes(np.asarray(arr).astype(np.uint8).tolist()).decode("utf-8")


# ---------------------------------------------------------------------------
# Images and label maps
# ---------------------------------------------------------------------------


def read_image(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.array(im)
    except FileNotFoundError:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        size = path.stat().st_size if path.exists() else 0
        raise FormatError(f"{path}: unreadable or truncated image (file ends at byte {size}): {exc}") from exc
    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[..., :3]
    return arr


def write_image(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.dtype == np.uint16:
        Image.fromarray(image).save(path, format="PNG")
    else:
        Image.fromarray(to_uint8(image) if image.dtype != np.uint8 else image).save(path, format="PNG")


@dataclass(frozen=True)
class LabelColorMap:
    colors: dict[str, tuple[int, int, int]]

    def __post_init__(self):
        if len(set(self.colors.values())) != len(self.colors):
            raise ValueError("label colors must be distinct")

    def encode(self, labels: np.ndarray, class_list) -> np.ndarray:
        lut = np.array([self.colors[name] for name in class_list], dtype=np.uint8)
        return lut[labels]

    def decode(self, rgb: np.ndarray, class_list) -> np.ndarray:
        rgb = np.asarray(rgb)
        if rgb.ndim != 3 or rgb.shape[2] < 3:
            raise FormatError(f"color label map must be RGB, got shape {rgb.shape}")
        key = (rgb[..., 0].astype(np.int64) << 16) | (rgb[..., 1].astype(np.int64) << 8) | rgb[..., 2]
        out = np.full(key.shape, -1, dtype=np.int64)
        for i, name in enumerate(class_list):
            r, g, b = self.colors[name]
            out[key == ((r << 16) | (g << 8) | b)] = i
        if (out < 0).any():
            y, x = np.argwhere(out < 0)[0]
            raise FormatError(f"unknown label color {tuple(int(v) for v in rgb[y, x, :3])} "
                              f"at pixel (x={x}, y={y})")
        return out.astype(np.uint8)


POTSDAM_COLOR_MAP = LabelColorMap(POTSDAM_COLORS)


def write_label_png(path, labels: np.ndarray, class_list, color_map=POTSDAM_COLOR_MAP) -> None:
    write_image(path, color_map.encode(labels, class_list))


def read_label_png(path, class_list, color_map=POTSDAM_COLOR_MAP) -> np.ndarray:
    arr = read_image(path)
    if arr.ndim == 2:  # index-encoded
        if arr.max(initial=0) >= len(class_list):
            raise FormatError(f"{path}: label index {int(arr.max())} outside {len(class_list)} classes")
        return arr.astype(np.uint8)
    try:
        return color_map.decode(arr, class_list)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_index_png(path, labels: np.ndarray) -> None:
    write_image(path, np.asarray(labels, dtype=np.uint8))


# ---------------------------------------------------------------------------
# Probability maps: one 16-bit PNG per class plus a manifest of class order
# ---------------------------------------------------------------------------

MANIFEST = "manifest.txt"


def write_probmap(directory, prob: np.ndarray, class_list) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, name in enumerate(class_list):
        fname = f"prob_{name}.png"
        q = np.clip(np.rint(prob[i] * 65535.0), 0, 65535).astype(np.uint16)
        write_image(d / fname, q)
        lines.append(f"{name} {fname}")
    (d / MANIFEST).write_text("\n".join(lines) + "\n")


def read_probmap(directory):
    """Returns ``(class_list, prob)`` with prob shaped (K, H, W) in [0, 1]."""
    d = Path(directory)
    manifest = d / MANIFEST
    if not manifest.exists():
        raise FormatError(f"{d}: missing {MANIFEST}")
    names, planes = [], []
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"{manifest}:{lineno}: expected '<class> <file>'")
        names.append(parts[0])
        planes.append(read_image(d / parts[1]).astype(np.float64) / 65535.0)
    return tuple(names), np.stack(planes)


# ---------------------------------------------------------------------------
# Resolution change
# ---------------------------------------------------------------------------


def downsample(image: np.ndarray, src_gsd: float, dst_gsd: float) -> np.ndarray:
    """Bilinear resample from ``src_gsd`` to a coarser ``dst_gsd`` (metres or cm per pixel)."""
    if not dst_gsd > src_gsd:
        raise ValueError(f"target GSD {dst_gsd} must be coarser than source GSD {src_gsd}")
    factor = src_gsd / dst_gsd
    h, w = image.shape[:2]
    out = resize_bilinear(image, max(1, int(round(h * factor))), max(1, int(round(w * factor))))
    return to_uint8(out) if np.asarray(image).dtype == np.uint8 else out


# ---------------------------------------------------------------------------
# Instance CSV
# ---------------------------------------------------------------------------


@dataclass
class InstanceRecord:
    tile_id: str
    instance_id: int
    vehicle_class: str
    confidence: float | None
    area_px: int
    centroid_x: float
    centroid_y: float
    bbox_x0: int
    bbox_y0: int
    bbox_x1: int
    bbox_y1: int

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        return (self.bbox_x0, self.bbox_y0, self.bbox_x1, self.bbox_y1)


CSV_HEADER = ("tile_id", "instance_id", "class", "confidence", "area_px", "centroid_x",
              "centroid_y", "bbox_x0", "bbox_y0", "bbox_x1", "bbox_y1")


def record_from_instance(tile_id: str, inst, vehicle_class: str = "", confidence=None) -> InstanceRecord:
    cx, cy = inst.centroid
    x0, y0, x1, y1 = inst.bbox
    return InstanceRecord(tile_id, int(inst.id), vehicle_class, confidence, int(inst.area),
                          round(cx, 3), round(cy, 3), x0, y0, x1, y1)


def _fmt_row(r: InstanceRecord) -> list[str]:
    return [r.tile_id, str(r.instance_id), r.vehicle_class,
            "" if r.confidence is None else f"{r.confidence:.6f}", str(r.area_px),
            f"{r.centroid_x:.3f}", f"{r.centroid_y:.3f}",
            str(r.bbox_x0), str(r.bbox_y0), str(r.bbox_x1), str(r.bbox_y1)]


def format_instances(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow(_fmt_row(r))
    return buf.getvalue()


def write_instances(path, records) -> None:
    Path(path).write_text(format_instances(records))


def parse_instances(text: str, source: str = "<csv>") -> list[InstanceRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise FormatError(f"{source}:1: expected header {','.join(CSV_HEADER)}")
    out = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise FormatError(f"{source}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        try:
            out.append(InstanceRecord(
                row[0], int(row[1]), row[2], float(row[3]) if row[3] else None, int(row[4]),
                float(row[5]), float(row[6]), int(row[7]), int(row[8]), int(row[9]), int(row[10])))
        except ValueError as exc:
            raise FormatError(f"{source}:{lineno}: {exc}") from None
    return out


def read_instances(path) -> list[InstanceRecord]:
    return parse_instances(Path(path).read_text(), str(path))


# ---------------------------------------------------------------------------
# Corner annotations: "<label> x1 y1 x2 y2 x3 y3 x4 y4" per line
# ---------------------------------------------------------------------------


@dataclass
class BoxAnnotation:
    label: str
    bbox: tuple[float, float, float, float]
    line: int


@dataclass
class AnnotationParse:
    boxes: list[BoxAnnotation]
    errors: list[tuple[int, str]]


def _num(s: str):
    v = float(s)
    return int(v) if v.is_integer() else v


def parse_corner_annotations(text: str) -> AnnotationParse:
    """Axis-aligned boxes from 4-corner records; bad lines are collected, not fatal."""
    boxes, errors = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 9:
            errors.append((lineno, f"expected a label and 4 corner pairs, got {len(parts) - 1} values"))
            continue
        try:
            coords = [_num(p) for p in parts[1:]]
        except ValueError as exc:
            errors.append((lineno, str(exc)))
            continue
        xs, ys = coords[0::2], coords[1::2]
        boxes.append(BoxAnnotation(parts[0], (min(xs), min(ys), max(xs), max(ys)), lineno))
    return AnnotationParse(boxes, errors)


def format_corner_annotations(items) -> str:
    """``items``: iterable of (label, corners) with corners as 4 (x, y) pairs."""
    lines = []
    for label, corners in items:
        lines.append(" ".join([label] + [f"{v:.2f}" for xy in corners for v in xy]))
    return "\n".join(lines) + ("\n" if lines else "")

