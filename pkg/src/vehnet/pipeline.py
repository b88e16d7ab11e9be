"""Dataset directory layout and the glue between stages.

A dataset directory holds ``train/``, ``val/`` and ``test/`` folders; each scene
``<id>`` in a folder is stored as

* ``<id>.png``            RGB image
* ``<id>_label.png``      color-encoded label map over ``SCENE_CLASSES``
* ``<id>_vehicles.txt``   corner annotations, one vehicle per line
* ``<id>_gt.csv``         ground-truth instance records
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .classifier import PatchSample, augment, resize_patch
from .formats import (InstanceRecord, format_corner_annotations, parse_corner_annotations,
                      read_image, read_label_png, write_image, write_instances, write_label_png)
from .objects import extract_patch
from .segmodel import IGNORE_LABEL
from .synthdata import CLUTTER, SCENE_CLASSES, DatasetSplit, Scene
from .tiling import extract_training_windows

SPLITS = ("train", "val", "test")


def scene_records(scene: Scene) -> list[InstanceRecord]:
    out = []
    for v in scene.vehicles:
        cx, cy = v.centroid
        x0, y0, x1, y1 = v.bbox
        out.append(InstanceRecord(scene.scene_id, v.id, v.vehicle_class, None, v.area,
                                  round(cx, 3), round(cy, 3), x0, y0, x1, y1))
    return out


def write_scene(directory, scene: Scene) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    sid = scene.scene_id
    write_image(d / f"{sid}.png", scene.image)
    write_label_png(d / f"{sid}_label.png", scene.labels, SCENE_CLASSES)
    (d / f"{sid}_vehicles.txt").write_text(
        format_corner_annotations((v.vehicle_class, v.corners) for v in scene.vehicles))
    write_instances(d / f"{sid}_gt.csv", scene_records(scene))


def write_dataset(directory, split: DatasetSplit) -> None:
    root = Path(directory)
    for name in SPLITS:
        for scene in getattr(split, name):
            write_scene(root / name, scene)


def scene_ids(directory) -> list[str]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"scene directory {d} not found")
    return sorted(p.name[: -len("_label.png")] for p in d.glob("*_label.png"))


def load_scene(directory, scene_id: str) -> tuple[np.ndarray, np.ndarray]:
    d = Path(directory)
    return read_image(d / f"{scene_id}.png"), read_label_png(d / f"{scene_id}_label.png", SCENE_CLASSES)


def segmentation_windows(directory, window: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack every training window of every scene; clutter becomes the ignore label."""
    images, labels = [], []
    for sid in scene_ids(directory):
        image, label = load_scene(directory, sid)
        for img, lab in extract_training_windows(image, label, window, stride):
            images.append(img)
            labels.append(lab)
    if not images:
        raise ValueError(f"no scenes in {directory}")
    lab = np.stack(labels).astype(np.int64)
    lab[lab == CLUTTER] = IGNORE_LABEL
    return np.stack(images), lab


def annotation_boxes(path, image_shape) -> list[tuple[str, tuple[int, int, int, int]]]:
    """Integer pixel boxes from a corner annotation file, clamped to the image."""
    parsed = parse_corner_annotations(Path(path).read_text())
    if parsed.errors:
        line, msg = parsed.errors[0]
        raise ValueError(f"{path}:{line}: {msg}")
    h, w = image_shape[:2]
    out = []
    for box in parsed.boxes:
        x0, y0, x1, y1 = box.bbox
        out.append((box.label, (max(int(np.floor(x0)), 0), max(int(np.floor(y0)), 0),
                                min(int(np.ceil(x1)), w - 1), min(int(np.ceil(y1)), h - 1))))
    return out


def vehicle_patch(image: np.ndarray, bbox, context: int, side: int) -> np.ndarray:
    return np.rint(resize_patch(extract_patch(image, bbox, context).image, side)).astype(np.uint8)


def classifier_samples(directory, class_names, context: int = 16, side: int = 32,
                       dihedral: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Square vehicle patches (optionally x8 dihedral) with taxonomy indices."""
    index = {n: i for i, n in enumerate(class_names)}
    samples = []
    for sid in scene_ids(directory):
        image = read_image(Path(directory) / f"{sid}.png")
        for label, bbox in annotation_boxes(Path(directory) / f"{sid}_vehicles.txt", image.shape):
            if label not in index:
                continue
            sample = PatchSample(vehicle_patch(image, bbox, context, side), index[label], (sid, -1))
            samples.extend(augment(sample) if dihedral else [sample])
    if not samples:
        raise ValueError(f"no vehicle annotations in {directory}")
    return np.stack([s.image for s in samples]), np.array([s.label for s in samples])
