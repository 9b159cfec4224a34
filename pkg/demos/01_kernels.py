"""
Convolution, pooling and gradient checks
========================================

The engine's kernels are plain functions on float32 NCHW arrays. Each
forward call hands back a cache that the matching backward call consumes.
"""

import numpy as np

from minivgg import tensor_core as tc

# %%
# A 3x3 / stride 1 / pad 1 convolution keeps the spatial size. With an
# all-ones kernel on an all-ones image, each output counts how many of the
# nine taps land inside the image.
x = np.ones((1, 1, 3, 3), np.float32)
w = np.ones((1, 1, 3, 3), np.float32)
out, cache = tc.conv2d(x, w, np.zeros(1, np.float32))
print(out[0, 0])

# %%
# 2x2 max pooling halves each axis; ties go to the first element of the
# window, so the backward pass is deterministic.
pooled, pcache = tc.maxpool2x2(np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4))
print(pooled[0, 0])
print(tc.maxpool2x2_backward(np.ones_like(pooled), pcache)[0, 0])

# %%
# Checking a backward pass against central finite differences.
rng = np.random.default_rng(0)
x = rng.standard_normal((2, 3, 5, 5)).astype(np.float32)
w = (rng.standard_normal((4, 3, 3, 3)) * 0.5).astype(np.float32)
b = np.zeros(4, np.float32)
up = rng.standard_normal((2, 4, 5, 5)).astype(np.float32)
_, cache = tc.conv2d(x, w, b)
grad_x, grad_w, grad_b = tc.conv2d_backward(up, cache)

eps = 1e-2
i = (1, 2, 3, 4)
xp, xm = x.copy(), x.copy()
xp[i] += eps
xm[i] -= eps
f = lambda v: float((tc.conv2d(v, w, b)[0].astype(np.float64) * up).sum())
print("analytic", grad_x[i], "numeric", (f(xp) - f(xm)) / (2 * eps))

# %%
# Softmax cross-entropy on uniform logits is ln K.
loss, probs = tc.softmax_cross_entropy(np.zeros((1, 205), np.float32), [3])
print(loss, np.log(205))
