"""
Synthetic scenes, training crops and ten-view testing
=====================================================
"""

from pathlib import Path

import numpy as np

from minivgg import augment
from minivgg.ppm import write_ppm

out = Path("demo_output")
out.mkdir(exist_ok=True)

# %%
# Eight procedurally drawn scene classes. Colors are random per image, so
# the class lives in the layout, not in the channel statistics.
ds = augment.generate_synthetic(8, 4, 64, seed=42)
print(ds.class_names, ds.channel_mean)
sheet = np.concatenate([np.concatenate(list(ds.images[ds.labels == c]), axis=1) for c in range(8)])
write_ppm(out / "classes.ppm", sheet)

# %%
# Training crops: width and height drawn independently from the scale set,
# one of five anchors, resized to the crop size, mirrored half the time.
cfg = augment.AugmentConfig()
rng = np.random.default_rng(0)
for _ in range(5):
    print(augment.draw_crop_params(cfg, rng))

# With the full-size settings there are 16 (w, h) pairs, 5 anchors and 2 flips.
full_size = augment.AugmentConfig.full_size()
print(len(full_size.scale_set) ** 2 * 5 * 2, "augmentation configurations")

# %%
# Test time: four corners, center, and mirrors.
print(augment.view_offsets(full_size))
views = augment.ten_views(ds.images[0], cfg)
strip = np.concatenate([v.transpose(1, 2, 0) for v in views], axis=1).astype(np.uint8)
write_ppm(out / "ten_views.ppm", strip)
