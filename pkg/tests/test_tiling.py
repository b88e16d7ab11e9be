import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vehnet.segmodel import SemanticMap
from vehnet.tiling import (StitchAccumulator, axis_positions, extract_training_windows,
                           make_grid, stitch)


def enumerate_positions(dim, window, stride):
    """Independent enumeration: every k*stride that fits, plus the flush-right start."""
    starts = []
    k = 0
    while k * stride + window <= dim:
        starts.append(k * stride)
        k += 1
    if starts[-1] + window < dim:
        starts.append(dim - window)
    return starts


def test_256_grid():
    grid = make_grid((256, 256), 128, 64)
    assert len(grid) == 9
    assert sorted({y for y, _ in grid.positions}) == [0, 64, 128]


def test_single_window_tile():
    for stride in (1, 32, 64, 500):
        grid = make_grid((128, 128), 128, stride)
        assert grid.positions == ((0, 0),)


def test_potsdam_downsampled_axis():
    pos = axis_positions(2400, 128, 64)
    assert len(pos) == 37
    assert pos[:3] == [0, 64, 128]
    assert pos[-2:] == [2240, 2272]
    assert pos == enumerate_positions(2400, 128, 64)


def test_window_larger_than_tile():
    with pytest.raises(ValueError):
        make_grid((100, 200), 128, 64)


def test_stride_beyond_window_rejected():
    with pytest.raises(ValueError, match="uncovered"):
        make_grid((300, 300), 128, 129)


def test_interior_coverage_is_four():
    grid = make_grid((256, 256), 128, 64)
    cov = grid.coverage()
    assert cov[128, 128] == 4
    assert cov.min() >= 1


@settings(max_examples=60, deadline=None)
@given(st.integers(8, 300), st.integers(8, 300), st.data())
def test_coverage_and_bounds(h, w, data):
    window = data.draw(st.integers(1, min(h, w)))
    stride = data.draw(st.integers(1, window))
    grid = make_grid((h, w), window, stride)
    assert grid.coverage().min() >= 1
    for y, x in grid.positions:
        assert 0 <= y <= h - window and 0 <= x <= w - window
    assert [y for y, _ in grid.positions][:: len(axis_positions(w, window, stride))] == \
        enumerate_positions(h, window, stride)


def test_constant_maps_stitch_to_constant():
    grid = make_grid((200, 150), 64, 48)
    const = np.array([0.2, 0.5, 0.3])[:, None, None] * np.ones((3, 64, 64))
    out = stitch(grid, [SemanticMap(("a", "b", "c"), const)] * len(grid))
    np.testing.assert_allclose(out.prob, const[:, :1, :1] * np.ones((3, 200, 150)), atol=1e-12)


def test_overlap_mean():
    grid = make_grid((4, 6), 4, 2)  # windows at x = 0 and 2
    a = np.zeros((2, 4, 4))
    a[0] = 1.0
    a[1] = 0.0
    b = np.zeros((2, 4, 4))
    b[1] = 1.0
    out = stitch(grid, [a, b])
    np.testing.assert_allclose(out.prob[0, :, 2:4], 0.5)
    np.testing.assert_allclose(out.prob[0, :, :2], 1.0)
    np.testing.assert_allclose(out.prob[0, :, 4:], 0.0)


def test_missing_window():
    grid = make_grid((256, 256), 128, 64)
    acc = StitchAccumulator(grid, ("a",))
    acc.add(0, np.ones((1, 128, 128)))
    with pytest.raises(ValueError, match="missing"):
        acc.finalize()


def test_order_invariance():
    rng = np.random.default_rng(0)
    grid = make_grid((96, 96), 32, 20)
    maps = []
    for _ in range(len(grid)):
        p = rng.random((3, 32, 32))
        maps.append(p / p.sum(axis=0))
    forward = StitchAccumulator(grid, ("a", "b", "c"))
    backward = StitchAccumulator(grid, ("a", "b", "c"))
    for i, m in enumerate(maps):
        forward.add(i, m)
    for i in reversed(range(len(maps))):
        backward.add(i, maps[i])
    f, b = forward.finalize().prob, backward.finalize().prob
    assert np.array_equal(f, b)
    np.testing.assert_allclose(f.sum(axis=0), 1.0, atol=1e-12)


def test_training_window_count():
    # (2400 - 128) / 32 = 71 exactly, so 72 starts per axis and no clamped extra
    assert len(axis_positions(2400, 128, 32)) == 72
    assert len(make_grid((2400, 2400), 128, 32)) == 72 * 72


def test_training_windows_are_verbatim():
    rng = np.random.default_rng(1)
    tile = rng.integers(0, 255, (160, 192, 3), dtype=np.uint8)
    labels = rng.integers(0, 5, (160, 192))
    pairs = extract_training_windows(tile, labels, 64, 32)
    grid = make_grid((160, 192), 64, 32)
    assert len(pairs) == len(grid)
    for (img, lab), (y, x) in zip(pairs, grid.positions):
        assert np.array_equal(img, tile[y : y + 64, x : x + 64])
        assert np.array_equal(lab, labels[y : y + 64, x : x + 64])


def test_tile_equal_to_window():
    tile = np.arange(128 * 128 * 3, dtype=np.uint32).reshape(128, 128, 3)
    labels = np.zeros((128, 128), int)
    pairs = extract_training_windows(tile, labels)
    assert len(pairs) == 1
    assert np.array_equal(pairs[0][0], tile)
