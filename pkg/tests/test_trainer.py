import math
from fractions import Fraction

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, strategies as st

from minivgg import augment
from minivgg.augment import AugmentConfig
from minivgg.errors import ConfigError, TrainingDivergedError
from minivgg.model import ArchConfig, InitSpec, build
from minivgg.trainer import (MetricsRow, TrainConfig, batch_indices, iterations_to_loss, lr_at, make_batch,
                             metrics_csv, sgd_update, shard_and_aggregate, train)

FULL = TrainConfig()
TINY_AUG = AugmentConfig(base_size=36, crop_size=32, scale_set=(36, 32, 28))


def tiny_net(seed=0, classes=4):
    return build(ArchConfig("A", Fraction(1, 8), 32, classes), InitSpec(seed=seed, std_dev=0.05))


@pytest.fixture(scope="module")
def tiny_data():
    return augment.generate_synthetic(4, 6, 36, seed=3)


# -- schedule ----------------------------------------------------------------------

@pytest.mark.parametrize("t,lr", [(0, 0.01), (9_999, 0.01), (10_000, 0.001), (25_000, 0.0001),
                                  (30_000, 0.00001), (39_999, 0.00001)])
def test_lr_schedule(t, lr):
    assert lr_at(t, FULL) == pytest.approx(lr, rel=1e-12)


def test_full_size_defaults():
    assert (FULL.batch_size, FULL.momentum, FULL.weight_decay, FULL.lr_initial) == (256, 0.9, 0.0005, 0.01)
    assert (FULL.lr_step, FULL.max_iter, FULL.dropout_ratio) == (10_000, 40_000, 0.5)
    desk = TrainConfig.desk()
    assert (desk.batch_size, desk.lr_step, desk.max_iter) == (64, 1_000, 3_000)


def test_constant_schedule_when_step_exceeds_run():
    cfg = TrainConfig(lr_step=100, max_iter=100)
    assert {lr_at(t, cfg) for t in range(100)} == {0.01}


@given(st.integers(0, 100_000), st.integers(0, 100_000))
def test_lr_non_increasing_with_breakpoints_at_step_multiples(a, b):
    lo, hi = sorted((a, b))
    assert lr_at(hi, FULL) <= lr_at(lo, FULL)
    if lo // FULL.lr_step == hi // FULL.lr_step:
        assert lr_at(hi, FULL) == lr_at(lo, FULL)


def test_lr_rejects_negative_iteration():
    with pytest.raises(ConfigError):
        lr_at(-1, FULL)


# -- update rule -----------------------------------------------------------------------

def test_sgd_update_arithmetic():
    w, v = np.array([1.0], np.float32), np.zeros(1, np.float32)
    sgd_update(w, np.array([0.1], np.float32), v, 0.01, FULL)
    # v = -0.01 * (0.1 + 0.0005 * 1)
    assert v[0] == pytest.approx(-0.001005, rel=1e-6)
    assert w[0] == pytest.approx(0.998995, rel=2e-7)


def test_sgd_update_fixed_point():
    cfg = TrainConfig(weight_decay=0.0)
    w, v = np.array([0.3, -2.0], np.float32), np.zeros(2, np.float32)
    sgd_update(w, np.zeros(2, np.float32), v, 0.01, cfg)
    npt.assert_array_equal(w, np.array([0.3, -2.0], np.float32))


def test_sgd_momentum_decay():
    cfg = TrainConfig(weight_decay=0.0)
    w, v = np.array([1.0]), np.array([-0.01])
    sgd_update(w, np.zeros(1), v, 0.01, cfg)
    assert w[0] == pytest.approx(1 - 0.009)
    sgd_update(w, np.zeros(1), v, 0.01, cfg)
    assert w[0] == pytest.approx(1 - 0.009 - 0.0081)


def test_sgd_update_shape_mismatch():
    with pytest.raises(ValueError):
        sgd_update(np.zeros(2), np.zeros(3), np.zeros(2), 0.1, FULL)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=10, workers=4)
    with pytest.raises(ConfigError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(lr_initial=0)


# -- sharding ----------------------------------------------------------------------------

def _batch(tiny_data, seed=0, n=8):
    index = batch_indices(seed, 0, len(tiny_data), n)
    return make_batch(tiny_data, index, seed, 0, TINY_AUG)


def _max_rel(a, b):
    return max(float(np.abs(a[k] - b[k]).max() / max(np.abs(b[k]).max(), 1e-12)) for k in b)


def test_single_shard_is_bit_exact(tiny_data):
    net = tiny_net()
    x, y, rngs = _batch(tiny_data)
    loss1, _, g1 = shard_and_aggregate(net, x, y, 1, rngs=rngs)
    x, y, rngs = _batch(tiny_data)
    loss2, _, g2 = net.loss_and_grads(x, y, rng=rngs)
    assert loss1 == loss2
    for k in g1:
        assert g1[k].tobytes() == g2[k].tobytes()


@pytest.mark.parametrize("workers", [2, 4, 8])
def test_sharded_gradients_match_full_batch(tiny_data, workers):
    net = tiny_net()
    x, y, rngs = _batch(tiny_data)
    _, _, full = shard_and_aggregate(net, x, y, 1, rngs=rngs)
    x, y, rngs = _batch(tiny_data)
    _, _, sharded = shard_and_aggregate(net, x, y, workers, rngs=rngs)
    assert _max_rel(sharded, full) < 1e-5


def test_indivisible_shards(tiny_data):
    x, y, rngs = _batch(tiny_data, n=6)
    with pytest.raises(ConfigError):
        shard_and_aggregate(tiny_net(), x, y, 4, rngs=rngs)


# -- training loop ----------------------------------------------------------------------

def test_zero_iterations_is_a_no_op(tiny_data):
    net = tiny_net()
    before = {k: v.tobytes() for k, v in net.params.items()}
    _, rows = train(net, tiny_data, TrainConfig.desk(batch_size=4, max_iter=0), TINY_AUG)
    assert rows == [] and all(net.params[k].tobytes() == v for k, v in before.items())


def test_metrics_rows_and_csv(tiny_data):
    _, rows = train(tiny_net(), tiny_data, TrainConfig.desk(batch_size=4, max_iter=5), TINY_AUG)
    assert [r.iter for r in rows] == list(range(5))
    assert all(math.isfinite(r.loss) and 0 <= r.top1 <= 1 for r in rows)
    text = metrics_csv(rows, timing=False)
    lines = text.split("\n")
    assert lines[0] == "iter,lr,loss,top1,ms" and len(lines) == 7 and lines[-1] == ""
    assert "\r" not in text and lines[1].endswith(",0")


def test_training_is_bit_deterministic(tiny_data):
    cfg = TrainConfig.desk(batch_size=4, max_iter=6, seed=11)
    a, rows_a = train(tiny_net(), tiny_data, cfg, TINY_AUG)
    b, rows_b = train(tiny_net(), tiny_data, cfg, TINY_AUG)
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    assert metrics_csv(rows_a, timing=False) == metrics_csv(rows_b, timing=False)


def test_multi_worker_training_reproduces_single_worker(tiny_data):
    one, rows1 = train(tiny_net(), tiny_data, TrainConfig.desk(batch_size=8, max_iter=4, workers=1), TINY_AUG)
    four, rows4 = train(tiny_net(), tiny_data, TrainConfig.desk(batch_size=8, max_iter=4, workers=4), TINY_AUG)
    assert abs(rows4[-1].loss - rows1[-1].loss) <= 1e-5 * abs(rows1[-1].loss)


def test_divergence_aborts_with_iteration(tiny_data):
    net = tiny_net()
    net.params["fc8_b"][0] = np.nan
    with pytest.raises(TrainingDivergedError, match="iteration 0"):
        train(net, tiny_data, TrainConfig.desk(batch_size=4, max_iter=3), TINY_AUG)


def test_class_count_mismatch(tiny_data):
    with pytest.raises(ConfigError):
        train(tiny_net(classes=5), tiny_data, TrainConfig.desk(batch_size=4, max_iter=1), TINY_AUG)


def test_checkpoint_callback_schedule(tiny_data):
    seen = []
    train(tiny_net(), tiny_data, TrainConfig.desk(batch_size=4, max_iter=5), TINY_AUG,
          on_checkpoint=lambda it, net: seen.append(it), checkpoint_every=2)
    assert seen == [2, 4, 5]


def test_overfits_a_single_sample():
    one = augment.generate_synthetic(4, 1, 36, seed=1).subset([2])
    one.class_names = ["a", "b", "c", "d"]
    cfg = TrainConfig.desk(batch_size=8, max_iter=200, dropout_ratio=0.0, weight_decay=0.0)
    _, rows = train(tiny_net(seed=2), one, cfg, TINY_AUG)
    assert rows[0].loss > math.log(4) / 2
    assert np.mean([r.loss for r in rows[-10:]]) < math.log(4) / 10


def test_iterations_to_loss():
    rows = [MetricsRow(i, 0.01, loss, 0.0, 0.0) for i, loss in enumerate([3, 2, 1, 0.4, 0.3, 0.2])]
    assert iterations_to_loss(rows, 0.5, window=2) == 5
    assert iterations_to_loss(rows, 0.1, window=2) is None
