"""
Training a mini VGG-11 and testing with ten views
=================================================

A full run (3000 iterations, batch 64) takes roughly 15 minutes on one CPU
core. Set ``ITERS`` lower for a quick look.
"""

import os
import time
from fractions import Fraction

from minivgg import augment, evaluate, storage
from minivgg.model import ArchConfig, InitSpec, build
from minivgg.trainer import TrainConfig, train

ITERS = int(os.environ.get("ITERS", 3000))

data = augment.generate_synthetic(8, 300, 64, seed=42)
train_set, test_set = augment.split_per_class(data, 250)
aug = augment.AugmentConfig()

# %%
# Momentum 0.9, weight decay 5e-4, lr 0.01 divided by 10 every 1000
# iterations. At this width the weights start from N(0, 0.05^2).
net = build(ArchConfig("vgg11", Fraction(1, 8), aug.crop_size, 8), InitSpec(seed=42, std_dev=0.05))
cfg = TrainConfig.desk(seed=42, max_iter=ITERS)


def log(row, _):
    if row.iter % 250 == 0:
        print(f"iter {row.iter:5d}  lr {row.lr:.0e}  loss {row.loss:.3f}  batch top-1 {row.top1:.2f}")


start = time.perf_counter()
train(net, train_set, cfg, aug, on_step=log)
print(f"trained in {time.perf_counter() - start:.0f} s")

# %%
for ten_view in (False, True):
    rep = evaluate.evaluate(net, test_set, aug, ten_view=ten_view)
    print("10-view" if ten_view else "center ", f"top-1 {rep.top1:.3f}  top-5 {rep.top5:.3f}")

storage.save_checkpoint(net, "vgg11_desk.ckpt")
