import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vehnet.formats import load_weights, save_weights
from vehnet.nncore import LrSchedule, ShapeError
from vehnet.segmodel import (IGNORE_LABEL, EncoderDecoderSpec, build_model, load_encoder_weights,
                             predict_batch, predict_window, to_input, train_segmentation)
from vehnet.synthdata import CLUTTER, SceneSpec, generate_scene
from vehnet.tiling import extract_training_windows

FIVE = ("a", "b", "c", "d", "e")


def small(blocks=(4, 8), convs=2, classes=FIVE):
    return EncoderDecoderSpec(block_channels=blocks, convs_per_block=convs, class_list=classes)


def count_by_hand(cin, chans, convs, k, n_classes):
    """Count conv (weights+bias) and batch-norm (gamma+beta) parameters layer by layer."""
    total = 0
    c = cin
    for ch in chans:  # encoder
        for _ in range(convs):
            total += k * k * c * ch + ch + 2 * ch
            c = ch
    rev = list(chans)[::-1]
    for j, ch in enumerate(rev):  # decoder
        last = rev[j + 1] if j + 1 < len(rev) else chans[0]
        c = ch
        for i in range(convs):
            out = last if i == convs - 1 else ch
            total += k * k * c * out + out + 2 * out
            c = out
    return total + chans[0] * n_classes + n_classes


def test_shape_contract():
    m = build_model(small((16, 32)))
    x = np.random.default_rng(0).random((2, 3, 64, 64))
    assert m.forward(x).shape == (2, 5, 64, 64)


def test_innermost_resolution():
    m = build_model(small((4, 8, 8), classes=("x", "y")))
    m.forward(np.zeros((1, 3, 128, 128)))
    assert m.pools[-1].indices.shape[2:] == (16, 16)


@pytest.mark.parametrize("chans,convs", [((16, 32, 64), 2), ((8, 16), 3), ((5,), 1)])
def test_parameter_count(chans, convs):
    m = build_model(small(chans, convs))
    assert m.store.num_parameters() == count_by_hand(3, chans, convs, 3, 5)


def test_indivisible_input():
    m = build_model(small((4, 8, 8)))
    with pytest.raises(ShapeError):
        m.forward(np.zeros((1, 3, 60, 64)))


@settings(max_examples=12, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=3), st.integers(1, 3),
       st.integers(1, 3), st.integers(1, 3), st.integers(2, 4))
def test_output_shape_any_spec(chans, convs, hm, wm, k):
    spec = small(tuple(chans), convs, FIVE[:k])
    d = spec.divisor
    x = np.random.default_rng(0).random((1, 3, hm * d, wm * d))
    assert build_model(spec).forward(x).shape == (1, k, hm * d, wm * d)


def test_unpool_uses_mirrored_pool():
    m = build_model(small((4, 6, 8)))
    m.forward(np.random.default_rng(1).random((2, 3, 32, 32)))
    k = len(m.pools)
    for j, unpool in enumerate(m.unpools):
        assert unpool.source is m.pools[k - 1 - j]
        assert unpool._indices is m.pools[k - 1 - j].indices
        assert all(unpool._indices is not m.pools[b].indices for b in range(k) if b != k - 1 - j)


class TestLoadEncoder:
    def test_all_encoder_names(self):
        donor, m = build_model(small(), seed=1), build_model(small(), seed=2)
        before = {n: t.copy() for n, t in m.store.tensors().items() if not n.startswith("encoder.")}
        enc = {n: t for n, t in donor.store.tensors().items() if n.startswith("encoder.")}
        rep = load_encoder_weights(m, enc)
        assert sorted(rep.matched) == sorted(m.encoder_names()) and rep.missing == []
        for n in enc:
            assert np.array_equal(m.store.tensors()[n], enc[n])
        for n, t in before.items():
            assert np.array_equal(m.store.tensors()[n], t)

    def test_empty(self):
        m = build_model(small())
        before = {n: t.copy() for n, t in m.store.tensors().items()}
        rep = load_encoder_weights(m, {})
        assert rep.matched == []
        assert all(np.array_equal(m.store.tensors()[n], t) for n, t in before.items())

    def test_decoder_names_not_applied(self):
        m = build_model(small())
        w = m.store.tensors()["decoder.0.conv0.weight"]
        rep = load_encoder_weights(m, {"decoder.0.conv0.weight": np.zeros_like(w)})
        assert rep.unexpected == ["decoder.0.conv0.weight"]
        assert w.any()

    def test_file_round_trip(self, tmp_path):
        donor = build_model(small(), seed=3)
        enc = {n: t for n, t in donor.store.tensors().items() if n.startswith("encoder.")}
        save_weights(tmp_path / "enc.bin", enc)
        loaded = load_weights(tmp_path / "enc.bin")
        assert all(np.array_equal(loaded[n], enc[n]) and loaded[n].dtype == enc[n].dtype for n in enc)
        m = build_model(small(), seed=4)
        load_encoder_weights(m, tmp_path / "enc.bin")
        assert all(np.array_equal(m.store.tensors()[n], enc[n]) for n in enc)

    def test_shape_mismatch(self):
        m = build_model(small())
        with pytest.raises(ShapeError):
            load_encoder_weights(m, {"encoder.0.conv0.weight": np.zeros((1, 1, 1, 1), np.float32)})


def _random_windows(n=4, side=16, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.integers(0, 256, (n, side, side, 3), dtype=np.uint8),
            rng.integers(0, 5, (n, side, side)))


def test_zero_learning_rate_is_noop():
    m = build_model(small())
    w, l = _random_windows()
    losses = train_segmentation(m, w, l, epochs=2, batch_size=4, schedule=LrSchedule(0.0))
    assert losses[0] == losses[1]
    assert np.all(np.isfinite(losses))


def test_empty_dataset():
    with pytest.raises(ValueError):
        train_segmentation(build_model(small()), np.zeros((0, 16, 16, 3), np.uint8),
                           np.zeros((0, 16, 16), int), 1, 1, LrSchedule(0.1))


def test_seeded_training_reproducible():
    w, l = _random_windows()
    a, b = build_model(small(), seed=5), build_model(small(), seed=5)
    ca = train_segmentation(a, w, l, 3, 2, LrSchedule(0.05), seed=9)
    cb = train_segmentation(b, w, l, 3, 2, LrSchedule(0.05), seed=9)
    assert ca == cb
    assert all(np.array_equal(a.store.tensors()[n], t) for n, t in b.store.tensors().items())


def test_batch_invariance():
    m = build_model(small())
    w, l = _random_windows(6)
    train_segmentation(m, w, l, 1, 3, LrSchedule(0.05))  # move running stats off init
    batch = predict_batch(m, w)
    for i in range(len(w)):
        np.testing.assert_allclose(predict_window(m, w[i]).prob, batch[i], atol=1e-6)


def test_predict_window_contract():
    m = build_model(small())
    w, _ = _random_windows(1)
    sm = predict_window(m, w[0])
    assert sm.shape == (16, 16) and sm.class_list == FIVE
    np.testing.assert_allclose(sm.prob.sum(axis=0), 1.0, atol=1e-5)
    assert sm.prob.min() >= 0 and sm.prob.max() <= 1
    assert np.array_equal(sm.prob, predict_window(m, w[0]).prob)


def test_predict_window_wrong_size():
    m = build_model(small((4, 8, 8)))
    with pytest.raises(ShapeError):
        predict_window(m, np.zeros((20, 16, 3), np.uint8))


def test_to_input_scaling():
    img = np.full((2, 4, 4, 3), 255, np.uint8)
    x = to_input(img)
    assert x.shape == (2, 3, 4, 4) and np.all(x == 1.0)


@pytest.fixture(scope="module")
def overfit_run():
    scene = generate_scene(SceneSpec(seed=11, size=(160, 192)))
    pairs = extract_training_windows(scene.image, scene.labels, 64, 32)[:20]
    windows = np.stack([a for a, _ in pairs])
    labels = np.stack([b for _, b in pairs]).astype(np.int64)
    labels[labels == CLUTTER] = IGNORE_LABEL
    model = build_model(EncoderDecoderSpec(block_channels=(16, 32)), seed=0)
    curve = train_segmentation(model, windows, labels, 200, 5, LrSchedule(0.1), seed=0)
    return model, windows, labels, curve


@pytest.mark.slow
def test_overfit_loss_curve(overfit_run):
    _, _, _, curve = overfit_run
    assert len(curve) == 200 and np.all(np.isfinite(curve))
    assert curve[-1] < curve[0] / 10


@pytest.mark.slow
def test_overfit_training_accuracy(overfit_run):
    model, windows, labels, _ = overfit_run
    pred = np.stack([predict_window(model, w).labels() for w in windows])
    ok = labels != IGNORE_LABEL
    assert (pred[ok] == labels[ok]).mean() >= 0.98
