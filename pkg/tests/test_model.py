from fractions import Fraction

import numpy as np
import numpy.testing as npt
import pytest

from minivgg.errors import ConfigError
from minivgg.model import ArchConfig, InitSpec, build, param_count, transfer_init, transfer_plan

MINI = dict(width_scale=Fraction(1, 8), input_size=32, num_classes=8)


def test_full_scale_fc6_shape():
    shapes = ArchConfig("A", 1, 224, 205).param_shapes()
    assert shapes["fc6_w"] == (25088, 4096)
    assert 512 * 7 * 7 == 25088


@pytest.mark.parametrize("variant,depth,convs", [("A", 11, 8), ("B", 13, 10), ("D", 16, 13)])
def test_weight_layer_counts(variant, depth, convs):
    cfg = ArchConfig(variant, 1, 224, 205)
    weights = [k for k in cfg.param_shapes() if k.endswith("_w")]
    assert len(weights) == depth == cfg.depth
    assert len([k for k in weights if k.startswith("conv")]) == convs


def test_mini_config_widths():
    cfg = ArchConfig("A", **MINI)
    assert cfg.conv_widths() == [8, 16, 32, 32, 64, 64, 64, 64]
    assert sorted(set(cfg.conv_widths())) == [8, 16, 32, 64]
    shapes = cfg.param_shapes()
    assert shapes["fc6_w"] == (64, 512)
    assert shapes["fc8_w"] == (512, 8)


def test_arch_names_alias_variants():
    assert ArchConfig("vgg13", **MINI).variant == "B"
    assert ArchConfig("vgg16", **MINI).arch_name == "vgg16"


@pytest.mark.parametrize("kwargs", [dict(input_size=31), dict(width_scale=Fraction(1, 16)),
                                    dict(width_scale=0), dict(width_scale=2)])
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigError):
        ArchConfig("A", **{**MINI, **kwargs})


def test_unknown_variant():
    with pytest.raises(ConfigError):
        ArchConfig("E", **MINI)


def test_widths_round_to_multiples_of_four():
    cfg = ArchConfig("D", Fraction(3, 10), 64, 5)
    # 64*0.3 = 19.2 -> 20, 128*0.3 = 38.4 -> 40, 256*0.3 = 76.8 -> 76, 512*0.3 = 153.6 -> 152
    assert sorted(set(cfg.conv_widths())) == [20, 40, 76, 152]
    assert cfg.scaled_fc_width == 1228  # 4096*0.3 = 1228.8 -> 1228


def test_param_count_arithmetic():
    cfg = ArchConfig("A", 1, 224, 205)
    s = cfg.param_shapes()
    assert s["fc6_w"][0] * s["fc6_w"][1] + s["fc6_b"][0] == 102_764_544
    assert s["fc8_w"][0] * s["fc8_w"][1] + s["fc8_b"][0] == 839_885


@pytest.mark.parametrize("variant,total", [("A", 132_863_336), ("B", 133_047_848), ("D", 138_357_544)])
def test_param_count_matches_reference_imagenet_vgg(variant, total):
    # published totals for the 1000-class ImageNet models
    assert param_count(ArchConfig(variant, 1, 224, 1000)) == total


def test_param_count_ignores_seed():
    cfg = ArchConfig("A", **MINI)
    assert param_count(cfg) == sum(v.size for v in build(cfg, InitSpec(seed=1)).params.values())
    assert param_count(cfg) == sum(v.size for v in build(cfg, InitSpec(seed=2)).params.values())


def test_build_is_deterministic_and_seed_sensitive():
    cfg = ArchConfig("B", **MINI)
    a, b, c = build(cfg, InitSpec(seed=5)), build(cfg, InitSpec(seed=5)), build(cfg, InitSpec(seed=6))
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
        assert a.params[k].shape == c.params[k].shape
    assert not np.array_equal(a.params["conv1_w"], c.params["conv1_w"])


def test_buffers_match_parameters():
    net = build(ArchConfig("D", **MINI))
    for k, p in net.params.items():
        assert net.grads[k].shape == net.momentum[k].shape == p.shape
        assert p.dtype == np.float32


def test_gaussian_init_statistics():
    cfg = ArchConfig("A", Fraction(1, 2), 32, 10)
    w = build(cfg, InitSpec(seed=3)).params["fc7_w"].ravel().astype(np.float64)
    assert w.size >= 100_000
    assert abs(w.mean()) < 3 * 0.01 / np.sqrt(w.size)
    assert abs(w.std() / 0.01 - 1) < 0.05
    assert not build(cfg, InitSpec(seed=3)).params["fc7_b"].any()


def test_fan_in_init_scale():
    net = build(ArchConfig("A", Fraction(1, 2), 32, 10), InitSpec(mode="fan_in"))
    w = net.params["conv8_w"]
    assert abs(w.std() / np.sqrt(2 / (256 * 9)) - 1) < 0.05


def test_zero_image_gives_finite_logits():
    for v in "ABD":
        net = build(ArchConfig(v, **MINI), InitSpec(std_dev=0.05))
        logits, _ = net.forward(np.zeros((2, 3, 32, 32), np.float32))
        assert logits.shape == (2, 8) and np.isfinite(logits).all()


def _shape_table(cfg):
    return [cfg.param_shapes()[f"conv{i}_w"] for i in range(1, len(cfg.conv_widths()) + 1)]


def _expected_plan(deep_cfg, shallow_cfg):
    """Independent enumeration of the staged-init matching rule."""
    shallow = _shape_table(shallow_cfg)
    taken, plan = [False] * len(shallow), {}
    for i, shape in enumerate(_shape_table(deep_cfg)[:4]):
        for j, s in enumerate(shallow):
            if not taken[j] and s == shape:
                taken[j] = True
                plan[f"conv{i + 1}"] = f"conv{j + 1}"
                break
    return plan


@pytest.mark.parametrize("deep_variant", ["B", "D"])
@pytest.mark.parametrize("scale", [Fraction(1, 8), Fraction(1, 4), Fraction(1)])
def test_transfer_plan(deep_variant, scale):
    deep_cfg = ArchConfig(deep_variant, scale, 32, 8)
    shallow_cfg = ArchConfig("A", scale, 32, 8)
    expected = _expected_plan(deep_cfg, shallow_cfg)
    assert expected == {"conv1": "conv1", "conv3": "conv2"}
    if scale == 1:
        return  # shapes only; full-width builds are too big for a unit test
    shallow = build(shallow_cfg, InitSpec(seed=1))
    deep = build(deep_cfg, InitSpec(seed=2))
    assert transfer_plan(deep, shallow) == expected


@pytest.mark.parametrize("deep_variant", ["B", "D"])
def test_transfer_init_copies_exactly_the_matched_set(deep_variant):
    shallow = build(ArchConfig("A", **MINI), InitSpec(seed=1))
    deep = build(ArchConfig(deep_variant, **MINI), InitSpec(seed=2))
    fresh = build(ArchConfig(deep_variant, **MINI), InitSpec(seed=2))
    out = transfer_init(deep, shallow)
    copied = {"conv1_w": "conv1_w", "conv1_b": "conv1_b", "conv3_w": "conv2_w", "conv3_b": "conv2_b",
              "fc6_w": "fc6_w", "fc6_b": "fc6_b", "fc7_w": "fc7_w", "fc7_b": "fc7_b"}
    for k, v in out.params.items():
        assert v.shape == fresh.params[k].shape
        if k in copied:
            assert v.tobytes() == shallow.params[copied[k]].tobytes()
        else:
            assert v.tobytes() == fresh.params[k].tobytes(), k
    # inputs untouched
    for k in deep.params:
        assert deep.params[k].tobytes() == fresh.params[k].tobytes()
    assert not np.array_equal(out.params["conv1_w"], fresh.params["conv1_w"])


def test_transfer_init_self_copy():
    a = build(ArchConfig("B", **MINI), InitSpec(seed=1))
    b = build(ArchConfig("B", **MINI), InitSpec(seed=2))
    out = transfer_init(b, a)
    for i in range(1, 5):
        npt.assert_array_equal(out.params[f"conv{i}_w"], a.params[f"conv{i}_w"])
    npt.assert_array_equal(out.params["fc7_w"], a.params["fc7_w"])
    npt.assert_array_equal(out.params["fc8_w"], b.params["fc8_w"])
