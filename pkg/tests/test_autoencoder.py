import numpy as np
import pytest

from ssmctb import autodiff as ad
from ssmctb.autoencoder import AutoencoderConfig, build, error_maps, forward, score
from ssmctb.block import SsmctbConfig
from ssmctb.masked_conv import MaskedConvConfig
from ssmctb.params import stores_equal
from ssmctb.train import TrainConfig, train
from ssmctb.transformer import TransformerConfig

TINY = SsmctbConfig(MaskedConvConfig(2, 1, 1, 1), TransformerConfig(4, 2, 1))


def tiny(shape=(8, 8, 1), position=3, widths=((4, 8), (8, 4, 4))):
    return AutoencoderConfig(shape, widths[0], widths[1], position, TINY)


@pytest.mark.parametrize("position", [None, 1, 2, 3, 4])
@pytest.mark.parametrize("shape", [(8, 8, 2), (8, 4, 8, 1)])
def test_output_shape_matches_input(position, shape):
    cfg = tiny(shape, position)
    p = build(cfg, 0)
    x = np.random.default_rng(0).normal(size=(2,) + shape)
    out, lb = forward(p, x, cfg)
    assert out.shape == x.shape
    assert (lb is None) == (position is None)


def test_build_is_deterministic_per_seed():
    cfg = tiny()
    assert stores_equal(build(cfg, 5), build(cfg, 5))
    assert not stores_equal(build(cfg, 5), build(cfg, 6))


def test_parameter_paths_follow_placement():
    none = build(tiny(position=None), 0)
    assert not any("masked_conv" in k or "transformer" in k for k in none)
    three = build(tiny(position=3), 0)
    assert "decoder.block3.masked_conv.filter0.sub0" in three
    assert "decoder.block3.transformer.pos" in three
    assert "decoder.block3.weight" not in three
    assert not any(k.startswith("decoder.block2.masked") for k in three)
    # block 2 changes width 8 -> 4, so the block is followed by a 1x1 adapter
    two = build(tiny(position=2), 0)
    assert two["decoder.block2.adapter.weight"].shape == (1, 8, 4)
    assert two["decoder.block2.masked_conv.filter7.sub3"].shape == (1, 1, 8)


def test_wrong_input_shape_rejected():
    cfg = tiny()
    with pytest.raises(ValueError):
        forward(build(cfg, 0), np.zeros((1, 12, 12, 1)), cfg)
    with pytest.raises(ValueError):
        AutoencoderConfig((10, 10, 1))


def test_autoencoder_gradients_match_finite_differences():
    cfg = tiny()
    p = dict(build(cfg, 1))
    x = np.random.default_rng(1).normal(size=(1, 8, 8, 1))

    def f(q):
        out, lb = forward(q, x, cfg)
        return ad.add(ad.mse(out, x), ad.mul(lb, 0.1))

    rep = ad.grad_check(f, p, max_elements=4)
    assert rep.passed(1e-4), (rep.worst_path, rep.max_rel_error)


def test_error_maps_zero_for_perfect_reconstruction():
    x = np.random.default_rng(0).normal(size=(3, 8, 8, 2))
    frame, maps = error_maps(x, x.copy())
    assert np.all(frame == 0) and np.all(maps == 0)
    frame, maps = error_maps(x, x + 1.0)
    np.testing.assert_allclose(maps, 1.0)
    np.testing.assert_allclose(frame, 1.0)


def test_scores_nonnegative():
    cfg = tiny()
    x = np.random.default_rng(2).normal(size=(3, 8, 8, 1))
    frame, maps = score(build(cfg, 0), x, cfg)
    assert frame.shape == (3,) and maps.shape == (3, 8, 8)
    assert np.all(frame >= 0) and np.all(maps >= 0)


def test_zero_learning_rate_leaves_parameters_unchanged():
    cfg = tiny()
    x = np.random.default_rng(3).normal(size=(6, 8, 8, 1))
    p0 = build(cfg, 4)
    p1, hist = train(x, cfg, TrainConfig(epochs=2, batch_size=3, learning_rate=0.0, seed=4))
    assert stores_equal(p0, p1)
    assert len(hist) == 2


def test_training_is_deterministic_and_descends():
    cfg = tiny()
    rng = np.random.default_rng(5)
    yy, xx = np.mgrid[0:8, 0:8]
    x = np.stack([np.sin(xx / 2.0 + a)[..., None] * 0.5 for a in rng.uniform(0, 6, size=32)])
    tc = TrainConfig(epochs=6, batch_size=4, learning_rate=3e-3, lam=0.1, seed=1)
    p1, h1 = train(x, cfg, tc)
    p2, h2 = train(x, cfg, tc)
    assert h1 == h2 and stores_equal(p1, p2)
    assert h1[-1]["host_loss"] < h1[0]["host_loss"]
    for rec in h1:
        assert rec["total_loss"] == pytest.approx(rec["host_loss"] + 0.1 * rec["block_loss"], rel=1e-12)


def test_invalid_train_config_rejected():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(lam=-0.1)
