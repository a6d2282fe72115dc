"""Model topology: shapes, determinism, feature maps, analytic-vs-actual params."""

import numpy as np
import pytest

from gpunet.costs import model_cost
from gpunet.errors import ShapeError, SpecError
from gpunet.models import MODEL_NAMES, ModelConfig, UNet, build_model, config_for

TOY = (4, 8, 16, 32, 64)
TOY2 = (8, 16, 32, 64, 128)


def _input(rng, shape):
    return rng.uniform(0.0, 1.0, shape).astype(np.float32)


def test_config_for_names_and_defaults():
    assert set(MODEL_NAMES) == {"unet", "ghost-unet", "gpu-net"}
    cfg = config_for("unet")
    assert cfg.kind == "ordinary" and cfg.widths == (64, 128, 256, 512, 1024)
    assert config_for("ghost-unet").kind == "ghost"
    assert config_for("gpu-net").kind == "gp"
    with pytest.raises(SpecError):
        config_for("resnet")


def test_config_validation():
    with pytest.raises(SpecError):
        ModelConfig(widths=(4, 8, 16, 32))  # needs 5 levels
    with pytest.raises(SpecError):
        ModelConfig(widths=(8, 4, 16, 32, 64))  # not increasing
    with pytest.raises(SpecError):
        ModelConfig(in_channels=2)
    with pytest.raises(SpecError):
        ModelConfig(kind="dense")


def test_rgb_192x256_in_1_out(rng):
    model = build_model(ModelConfig(kind="gp", widths=TOY, in_channels=3))
    y = model.forward(_input(rng, (1, 3, 192, 256)))
    assert y.shape == (1, 1, 192, 256)


def test_gray_96x96_same_size(rng):
    model = build_model(ModelConfig(kind="gp", widths=TOY, in_channels=1))
    y = model.forward(_input(rng, (1, 1, 96, 96)))
    assert y.shape == (1, 1, 96, 96)


def test_output_is_probability(rng):
    for kind in ("ordinary", "ghost", "gp"):
        model = build_model(ModelConfig(kind=kind, widths=TOY, in_channels=1))
        # train-mode BN keeps logits moderate: output strictly inside (0, 1)
        y = model.forward(_input(rng, (2, 1, 32, 32)), train=True)
        assert (y > 0).all() and (y < 1).all()
        # eval mode on an untrained net can saturate in float32, but must
        # stay a valid probability
        y_eval = model.forward(_input(rng, (2, 1, 32, 32)))
        assert (y_eval >= 0).all() and (y_eval <= 1).all() and np.isfinite(y_eval).all()


def test_non_divisible_by_16_raises(rng):
    model = build_model(ModelConfig(kind="gp", widths=TOY, in_channels=3))
    with pytest.raises(ShapeError):
        model.forward(_input(rng, (1, 3, 100, 100)))


def test_wrong_channel_count_raises(rng):
    model = build_model(ModelConfig(kind="gp", widths=TOY, in_channels=3))
    with pytest.raises(ShapeError):
        model.forward(_input(rng, (1, 1, 32, 32)))


@pytest.mark.parametrize("kind", ["ordinary", "ghost", "gp"])
@pytest.mark.parametrize("widths", [TOY, TOY2], ids=["toy", "toy2"])
def test_analytic_params_equal_instantiated(kind, widths):
    cfg = ModelConfig(kind=kind, widths=widths, in_channels=1)
    model = UNet(cfg)
    analytic = model_cost(model, 32, 32).total_params
    actual = sum(p.value.size for _, p in model.params())
    assert analytic == actual


def test_build_model_seed_determinism(rng):
    a = build_model(ModelConfig(kind="gp", widths=TOY, in_channels=1), seed=7)
    b = build_model(ModelConfig(kind="gp", widths=TOY, in_channels=1), seed=7)
    c = build_model(ModelConfig(kind="gp", widths=TOY, in_channels=1), seed=8)
    pa, pb, pc = (dict(m.params()) for m in (a, b, c))
    assert all(np.array_equal(pa[k].value, pb[k].value) for k in pa)
    assert any(not np.array_equal(pa[k].value, pc[k].value) for k in pa)
    x = _input(rng, (1, 1, 32, 32))
    assert np.array_equal(a.forward(x), b.forward(x))


def test_backward_populates_every_grad(rng):
    model = build_model(ModelConfig(kind="gp", widths=TOY, in_channels=1))
    x = _input(rng, (1, 1, 32, 32))
    model.zero_grad()
    y = model.forward(x, train=True)
    dx = model.backward(np.ones_like(y))
    assert dx.shape == x.shape
    for name, p in model.params():
        assert p.grad is not None and np.isfinite(p.grad).all(), name


def test_feature_maps_first_level_width8(rng):
    model = build_model(ModelConfig(kind="ordinary", widths=TOY2, in_channels=1))
    x = _input(rng, (1, 1, 32, 32))
    maps = model.feature_maps(x, level="first")
    assert len(maps) == 8  # first-level width
    for fm in maps:
        assert fm.shape == (1, 1, 32, 32)
    again = model.feature_maps(x, level="first")
    for a, b in zip(maps, again):
        assert np.array_equal(a, b)  # re-execution is bitwise deterministic


def test_feature_maps_last_level_and_bad_level(rng):
    model = build_model(ModelConfig(kind="gp", widths=TOY, in_channels=1))
    x = _input(rng, (1, 1, 32, 32))
    maps = model.feature_maps(x, level="last")
    assert len(maps) == TOY[0]
    with pytest.raises(SpecError):
        model.feature_maps(x, level="middle")


def test_forward_eval_is_deterministic_but_train_updates_bn(rng):
    model = build_model(ModelConfig(kind="gp", widths=TOY, in_channels=1))
    x = _input(rng, (2, 1, 32, 32))
    y1 = model.forward(x, train=False)
    y2 = model.forward(x, train=False)
    assert np.array_equal(y1, y2)  # eval passes never mutate state
    model.forward(x, train=True)  # train pass updates BN running stats
    y3 = model.forward(x, train=False)
    assert not np.array_equal(y1, y3)


def test_skip_connections_feed_decoder(rng):
    # zeroing the deepest path must not sever the signal: the dec1 output
    # still depends on enc1 through the skip concat
    model = build_model(ModelConfig(kind="ordinary", widths=TOY, in_channels=1))
    x = _input(rng, (1, 1, 32, 32))
    rec: dict = {}
    model.forward(x, train=False, record=rec)
    assert rec["enc1"].shape == (1, TOY[0], 32, 32)
    assert rec["dec1"].shape == (1, TOY[0], 32, 32)
    assert rec["bottleneck"].shape == (1, TOY[4], 2, 2)
