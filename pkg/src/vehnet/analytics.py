"""Vehicle counts, counting error and density heat maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def count_instances(instances) -> int:
    return len(instances)


@dataclass(frozen=True)
class TileCount:
    tile_id: str
    gt: int
    pred: int

    @property
    def abs_error(self) -> int:
        return abs(self.pred - self.gt)

    @property
    def rel_error(self) -> float | None:
        """``|pred - gt| / gt``; undefined (None) for an empty ground truth."""
        return self.abs_error / self.gt if self.gt > 0 else None


@dataclass(frozen=True)
class CountReport:
    tiles: tuple[TileCount, ...]

    @property
    def mean_rel_error(self) -> float | None:
        errs = [t.rel_error for t in self.tiles if t.rel_error is not None]
        return float(np.mean(errs)) if errs else None

    def to_text(self) -> str:
        lines = ["tile_id,gt,pred,rel_error"]
        for t in self.tiles:
            err = f"{t.rel_error:.6f}" if t.rel_error is not None else f"abs:{t.abs_error}"
            lines.append(f"{t.tile_id},{t.gt},{t.pred},{err}")
        mean = self.mean_rel_error
        lines.append(f"mean_rel_error={'n/a' if mean is None else f'{mean:.6f}'}")
        lines.append(f"total_gt={sum(t.gt for t in self.tiles)}")
        lines.append(f"total_pred={sum(t.pred for t in self.tiles)}")
        return "\n".join(lines) + "\n"


def counting_report(pairs, tile_ids=None) -> CountReport:
    """Build a report from ``(gt, pred)`` pairs, one per tile."""
    pairs = list(pairs)
    if tile_ids is None:
        tile_ids = [str(i) for i in range(len(pairs))]
    if len(tile_ids) != len(pairs):
        raise ValueError("tile_ids and pairs differ in length")
    return CountReport(tuple(TileCount(str(t), int(g), int(p)) for t, (g, p) in zip(tile_ids, pairs)))


def density_heatmap(centroids, tile_size, sigma: float = 48.0, normalize: bool = True,
                    downscale: int = 1) -> np.ndarray:
    """Sum of isotropic Gaussians at the centroids, truncated at 3 sigma.

    ``centroids`` are ``(x, y)`` in tile pixels. Grid cells sit at integer
    coordinates (divided by ``downscale``). With ``normalize`` the map is
    scaled so its maximum is 1; an empty centroid list gives all zeros.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if downscale < 1:
        raise ValueError("downscale must be >= 1")
    h, w = tile_size
    gh, gw = -(-h // downscale), -(-w // downscale)
    heat = np.zeros((gh, gw), dtype=np.float64)
    s = sigma / downscale
    reach = 3.0 * s
    for cx, cy in centroids:
        if not (0 <= cx < w and 0 <= cy < h):
            raise ValueError(f"centroid ({cx}, {cy}) outside tile {w}x{h}")
        cx, cy = cx / downscale, cy / downscale
        x0, x1 = max(int(np.ceil(cx - reach)), 0), min(int(np.floor(cx + reach)), gw - 1)
        y0, y1 = max(int(np.ceil(cy - reach)), 0), min(int(np.floor(cy + reach)), gh - 1)
        xs = np.arange(x0, x1 + 1) - cx
        ys = np.arange(y0, y1 + 1) - cy
        d2 = ys[:, None] ** 2 + xs[None, :] ** 2
        k = np.exp(-d2 / (2 * s * s))
        k[d2 > reach * reach] = 0.0
        heat[y0 : y1 + 1, x0 : x1 + 1] += k
    if normalize and heat.max() > 0:
        heat /= heat.max()
    return heat


# black -> blue -> magenta -> orange -> yellow -> white
_RAMP = np.array([
    [0, 0, 0], [20, 20, 160], [170, 30, 160], [240, 120, 30], [255, 230, 40], [255, 255, 255],
], dtype=np.float64)


def heatmap_to_gray(heat: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.clip(heat, 0, 1) * 255), 0, 255).astype(np.uint8)


def heatmap_to_rgb(heat: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] through the built-in color ramp."""
    t = np.clip(heat, 0, 1) * (len(_RAMP) - 1)
    lo = np.floor(t).astype(int)
    hi = np.minimum(lo + 1, len(_RAMP) - 1)
    f = (t - lo)[..., None]
    rgb = _RAMP[lo] * (1 - f) + _RAMP[hi] * f
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
