"""
VGG variants and staged initialization
======================================

Variants A, B and D have 11, 13 and 16 weight layers. ``width_scale``
shrinks every layer for desk-sized experiments.
"""

from fractions import Fraction

from minivgg.model import ArchConfig, InitSpec, build, describe, param_count, transfer_init, transfer_plan

# %%
# Full-size layer tables (shapes only, nothing is allocated).
for name in ("vgg11", "vgg13", "vgg16"):
    cfg = ArchConfig(name, 1, 224, 205)
    print(f"{name}: {cfg.depth} weight layers, {param_count(cfg):,} parameters")
print(describe(ArchConfig("vgg11", 1, 224, 205)))

# %%
# The desk-scale network: an eighth of the width, 56x56 crops, 8 classes.
mini = ArchConfig("vgg11", Fraction(1, 8), 56, 8)
print(describe(mini))

# %%
# Staged initialization. The deeper net's first four conv layers take the
# earliest unused shallow conv layer of identical shape; fc6 and fc7 are
# copied as well. For A -> B only conv1 and conv3 find a partner.
shallow = build(mini, InitSpec(seed=0, std_dev=0.05))
deep = build(ArchConfig("vgg13", Fraction(1, 8), 56, 8), InitSpec(seed=1, std_dev=0.05))
print(transfer_plan(deep, shallow))
staged = transfer_init(deep, shallow)
print((staged.params["fc6_w"] == shallow.params["fc6_w"]).all())
