"""Sliding-window grids over large tiles and overlap-averaged stitching."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .segmodel import SemanticMap


def axis_positions(dim: int, window: int, stride: int) -> list[int]:
    """Window starts along one axis; a final window is clamped to the border."""
    if window > dim:
        raise ValueError(f"window {window} larger than tile dimension {dim}")
    if stride < 1 or window < 1:
        raise ValueError("window and stride must be positive")
    if stride > window and dim > window:
        raise ValueError(f"stride {stride} > window {window} would leave uncovered pixels")
    pos = list(range(0, dim - window + 1, stride))
    if pos[-1] != dim - window:
        pos.append(dim - window)
    return pos


@dataclass(frozen=True)
class TileGrid:
    tile_size: tuple[int, int]
    window: int
    stride: int
    positions: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.positions)

    def coverage(self) -> np.ndarray:
        cov = np.zeros(self.tile_size, dtype=np.int32)
        w = self.window
        for y, x in self.positions:
            cov[y : y + w, x : x + w] += 1
        return cov


def make_grid(tile_size, window: int = 128, stride: int = 64) -> TileGrid:
    """Row-major window grid covering the whole tile."""
    h, w = tile_size
    ys = axis_positions(h, window, stride)
    xs = axis_positions(w, window, stride)
    return TileGrid((h, w), window, stride, tuple((y, x) for y in ys for x in xs))


@dataclass
class StitchAccumulator:
    """Collects window maps in any order and reduces them in grid order."""

    grid: TileGrid
    class_list: tuple[str, ...]
    _staged: dict[int, np.ndarray] = field(default_factory=dict)

    def add(self, position_index: int, prob: np.ndarray) -> None:
        w = self.grid.window
        if prob.shape != (len(self.class_list), w, w):
            raise ValueError(f"window map shape {prob.shape} != {(len(self.class_list), w, w)}")
        if not 0 <= position_index < len(self.grid):
            raise IndexError(position_index)
        self._staged[position_index] = prob

    def finalize(self) -> SemanticMap:
        missing = [i for i in range(len(self.grid)) if i not in self._staged]
        if missing:
            raise ValueError(f"missing window maps for grid positions {missing[:10]}")
        h, w = self.grid.tile_size
        win = self.grid.window
        prob_sum = np.zeros((len(self.class_list), h, w), dtype=np.float64)
        coverage = np.zeros((h, w), dtype=np.float64)
        for i, (y, x) in enumerate(self.grid.positions):
            prob_sum[:, y : y + win, x : x + win] += self._staged[i]
            coverage[y : y + win, x : x + win] += 1
        return SemanticMap(self.class_list, prob_sum / coverage)


def stitch(grid: TileGrid, window_maps, class_list=None) -> SemanticMap:
    """Average per-window probability maps over their overlaps.

    ``window_maps`` holds one ``SemanticMap`` (or a (K, w, w) array) per grid
    position, in grid order.
    """
    window_maps = list(window_maps)
    if len(window_maps) != len(grid):
        raise ValueError(f"expected {len(grid)} window maps, got {len(window_maps)}")
    if class_list is None:
        first = window_maps[0]
        class_list = first.class_list if isinstance(first, SemanticMap) else tuple(
            str(i) for i in range(first.shape[0]))
    acc = StitchAccumulator(grid, tuple(class_list))
    for i, m in enumerate(window_maps):
        acc.add(i, m.prob if isinstance(m, SemanticMap) else m)
    return acc.finalize()


def extract_training_windows(tile: np.ndarray, label_map: np.ndarray, window: int = 128,
                             stride: int = 32):
    """Image/label crops at every grid position."""
    if tile.shape[:2] != label_map.shape:
        raise ValueError(f"tile {tile.shape} and label map {label_map.shape} are not aligned")
    grid = make_grid(tile.shape[:2], window, stride)
    return [
        (tile[y : y + window, x : x + window].copy(), label_map[y : y + window, x : x + window].copy())
        for y, x in grid.positions
    ]


def predict_tile(model, tile: np.ndarray, window: int = 128, stride: int = 64,
                 batch_size: int = 16) -> SemanticMap:
    """Run a segmentation model window by window and stitch the result."""
    from .segmodel import predict_batch

    grid = make_grid(tile.shape[:2], window, stride)
    acc = StitchAccumulator(grid, model.class_list)
    for start in range(0, len(grid), batch_size):
        chunk = grid.positions[start : start + batch_size]
        batch = np.stack([tile[y : y + window, x : x + window] for y, x in chunk])
        probs = predict_batch(model, batch)
        for offset, p in enumerate(probs):
            acc.add(start + offset, p)
    return acc.finalize()
