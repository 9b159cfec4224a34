"""Numerical kernels with hand-written forward and backward passes.

Tensors are C-contiguous ``numpy.float32`` arrays in NCHW layout. All kernels
are pure functions: a forward call returns its output together with whatever
the matching backward call needs, and nothing is stored on module state.

Convolution geometry is fixed to 3x3 kernels, stride 1, zero padding 1.
Pooling is fixed to 2x2 windows with stride 2 (trailing odd row/column
dropped).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError, ShapeError

DTYPE = np.float32

KERNEL = 3
PAD = 1


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense ``(m, k) @ (k, n)`` product.

    Delegated to the linked BLAS ``sgemm``. For a fixed BLAS build, thread
    count and operand shapes, every output element is accumulated over ``t``
    in the same order on every call, so results are bit-reproducible.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return np.matmul(a, b)


# -- convolution -----------------------------------------------------------

def im2col(x: np.ndarray) -> np.ndarray:
    """Unfold ``(N, C, H, W)`` into a ``(N*H*W, C*9)`` patch matrix.

    Column index is ``c*9 + ki*3 + kj``, matching ``weight.reshape(O, -1)``.
    """
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (PAD, PAD), (PAD, PAD)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))  # N,C,H,W,3,3
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * KERNEL * KERNEL)


def col2im(cols: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patch gradients back to the image."""
    n, c, h, w = shape
    cols = cols.reshape(n, h, w, c, KERNEL, KERNEL)
    out = np.zeros((n, c, h + 2 * PAD, w + 2 * PAD), dtype=cols.dtype)
    for ki in range(KERNEL):
        for kj in range(KERNEL):
            out[:, :, ki:ki + h, kj:kj + w] += cols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    return out[:, :, PAD:PAD + h, PAD:PAD + w]


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """3x3 / stride 1 / pad 1 cross-correlation.

    Returns ``(out, cache)`` where ``out`` has shape ``(N, O, H, W)``.
    """
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[2:] != (KERNEL, KERNEL):
        raise ShapeError(f"conv2d expects NCHW input and Ox Cx3x3 weight, got {x.shape}, {weight.shape}")
    if weight.shape[1] != x.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    n, _, h, w = x.shape
    o = weight.shape[0]
    cols = im2col(x)
    out = matmul(cols, weight.reshape(o, -1).T)
    out += bias
    out = out.reshape(n, h, w, o).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (x.shape, cols, weight)


def conv2d_backward(grad_out: np.ndarray, cache):
    """Gradients ``(grad_input, grad_weight, grad_bias)`` of ``sum(grad_out * out)``."""
    x_shape, cols, weight = cache
    o = weight.shape[0]
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, o)  # (N*H*W, O)
    grad_w = matmul(g.T, cols).reshape(weight.shape)
    grad_b = g.sum(axis=0)
    grad_cols = matmul(g, weight.reshape(o, -1))
    grad_x = col2im(grad_cols, x_shape)
    return grad_x, grad_w, grad_b


# -- pooling ---------------------------------------------------------------

def maxpool2x2(x: np.ndarray):
    """2x2 / stride 2 max pooling.

    Returns ``(out, argmax)``; ``argmax`` holds the in-window index
    ``0..3`` (row-major) of each maximum. Ties go to the lowest index.
    """
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2x2 needs spatial dims >= 2, got {h}x{w}")
    ho, wo = h // 2, w // 2
    win = x[:, :, :2 * ho, :2 * wo].reshape(n, c, ho, 2, wo, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    argmax = win.argmax(axis=-1)  # numpy returns the first occurrence
    out = np.take_along_axis(win, argmax[..., None], axis=-1)[..., 0]
    return out, (x.shape, argmax)


def maxpool2x2_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    x_shape, argmax = cache
    n, c, h, w = x_shape
    ho, wo = h // 2, w // 2
    win = np.zeros((n, c, ho, wo, 4), dtype=grad_out.dtype)
    np.put_along_axis(win, argmax[..., None], grad_out[..., None], axis=-1)
    win = win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
    grad = np.zeros(x_shape, dtype=grad_out.dtype)
    grad[:, :, :2 * ho, :2 * wo] = win
    return grad


# -- elementwise -------------------------------------------------------------

def relu(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad_out: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # gradient at exactly 0 is 0
    return grad_out * mask


def dropout_mask(shape, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``ratio``, else ``1/(1-ratio)``."""
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"dropout ratio must lie in [0, 1), got {ratio}")
    if ratio == 0.0:
        return np.ones(shape, dtype=DTYPE)
    keep = rng.random(shape) >= ratio
    return keep.astype(DTYPE) * DTYPE(1.0 / (1.0 - ratio))


def dropout(x: np.ndarray, ratio: float, train: bool, rng: np.random.Generator | None = None,
            mask: np.ndarray | None = None):
    """Inverted dropout. Returns ``(out, mask)``; ``mask`` is ``None`` in test mode.

    A precomputed ``mask`` may be supplied instead of ``rng``.
    """
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"dropout ratio must lie in [0, 1), got {ratio}")
    if not train or ratio == 0.0:
        return x, None
    if mask is None:
        if rng is None:
            raise ConfigError("train-mode dropout needs an rng or a mask")
        mask = dropout_mask(x.shape, ratio, rng)
    return x * mask, mask


def dropout_backward(grad_out: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return grad_out if mask is None else grad_out * mask


# -- fully connected -----------------------------------------------------------

def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """``x @ weight + bias`` with ``weight`` stored as ``(in, out)``."""
    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"linear input {x.shape} incompatible with weight {weight.shape}")
    out = matmul(x, weight)
    out += bias
    return out, (x, weight)


def linear_backward(grad_out: np.ndarray, cache):
    x, weight = cache
    return matmul(grad_out, weight.T), matmul(x.T, grad_out), grad_out.sum(axis=0)


# -- loss ------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch. Returns ``(loss, probs)``."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    bad = np.flatnonzero((labels < 0) | (labels >= k))
    if bad.size:
        i = int(bad[0])
        raise DataError(f"sample {i} has label {int(labels[i])} outside [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    loss = float(-log_probs[np.arange(n), labels].astype(np.float64).mean())
    return loss, np.exp(log_probs)


def softmax_cross_entropy_backward(probs: np.ndarray, labels) -> np.ndarray:
    n = probs.shape[0]
    grad = probs.copy()
    grad[np.arange(n), np.asarray(labels)] -= 1.0
    grad /= n
    return grad
