"""Multi-view inference, top-k reporting, fc6 features and linear SVMs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import augment
from . import tensor_core as tc
from .augment import AugmentConfig, Dataset
from .errors import ConfigError, DataError, ShapeError
from .model import Network

NUM_VIEWS = 10


def _check_classes(network: Network, dataset: Dataset):
    if network.num_classes != dataset.num_classes:
        raise ConfigError(f"network predicts {network.num_classes} classes, dataset has {dataset.num_classes}")


def mean_of_views(view_probs: np.ndarray) -> np.ndarray:
    """Average per-view score vectors, adding views in order then dividing once.

    Accumulates in float64, so identical views average back to themselves exactly.
    """
    total = np.array(view_probs[0], dtype=np.float64)
    for p in view_probs[1:]:
        total += p
    return (total / len(view_probs)).astype(np.float32)


def predict_multiview(network: Network, image, cfg: AugmentConfig) -> np.ndarray:
    """Mean softmax score of the ten views of one canonical image."""
    views = np.stack(augment.ten_views(image, cfg, network.channel_mean))
    return mean_of_views(tc.softmax(network.forward(views)[0]))


def predict_dataset(network: Network, dataset: Dataset, cfg: AugmentConfig, ten_view: bool = True,
                    batch_images: int = 32) -> np.ndarray:
    """``(N, K)`` scores: ten-view means, or single center-crop softmax."""
    _check_classes(network, dataset)
    out = []
    for start in range(0, len(dataset), batch_images):
        imgs = dataset.images[start:start + batch_images]
        if ten_view:
            views = np.stack([v for img in imgs for v in augment.ten_views(img, cfg, network.channel_mean)])
            probs = tc.softmax(network.forward(views)[0]).reshape(len(imgs), NUM_VIEWS, -1)
            out += [mean_of_views(p) for p in probs]
        else:
            views = np.stack([augment.center_view(img, cfg, network.channel_mean) for img in imgs])
            out += list(tc.softmax(network.forward(views)[0]))
    return np.stack(out) if out else np.zeros((0, network.num_classes), tc.DTYPE)


def topk_ranking(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` best classes per row; equal scores rank the lower index first."""
    return np.argsort(-scores, axis=1, kind="stable")[:, :k]


def topk_hits(scores: np.ndarray, labels, k: int) -> np.ndarray:
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    n, num_classes = scores.shape
    if not 1 <= k <= num_classes:
        raise ConfigError(f"k must lie in [1, {num_classes}], got {k}")
    bad = np.flatnonzero((labels < 0) | (labels >= num_classes))
    if bad.size:
        raise DataError(f"sample {bad[0]} has label {labels[bad[0]]} outside [0, {num_classes})")
    return (topk_ranking(scores, k) == labels[:, None]).any(axis=1)


def topk_accuracy(scores: np.ndarray, labels, k: int) -> float:
    hits = topk_hits(scores, labels, k)
    return float(hits.mean()) if hits.size else 0.0


@dataclass
class EvalReport:
    top1: float
    top5: float
    per_class_top1: list[float]
    sample_count: int

    def to_csv(self, class_names=None) -> str:
        lines = ["metric,value", f"top1,{self.top1!r}", f"top5,{self.top5!r}",
                 f"samples,{self.sample_count}", "", "class,top1"]
        names = class_names or [str(i) for i in range(len(self.per_class_top1))]
        lines += [f"{name},{acc!r}" for name, acc in zip(names, self.per_class_top1)]
        return "\n".join(lines) + "\n"


def report(scores: np.ndarray, labels, num_classes: int | None = None) -> EvalReport:
    labels = np.asarray(labels)
    num_classes = num_classes or scores.shape[1]
    hits1 = topk_hits(scores, labels, 1)
    per_class = [float(hits1[labels == c].mean()) if np.any(labels == c) else 0.0 for c in range(num_classes)]
    return EvalReport(float(hits1.mean()), topk_accuracy(scores, labels, min(5, scores.shape[1])),
                      per_class, int(len(labels)))


def evaluate(network: Network, dataset: Dataset, cfg: AugmentConfig, ten_view: bool = True) -> EvalReport:
    return report(predict_dataset(network, dataset, cfg, ten_view), dataset.labels, dataset.num_classes)


# -- features --------------------------------------------------------------------

@dataclass
class FeatureMatrix:
    features: np.ndarray  # (n, d) float32, rows unit-norm (or zero)
    labels: np.ndarray
    zero_rows: np.ndarray  # indices of rows that were all zeros

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def l2_normalize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scale rows to unit Euclidean norm. Zero rows stay zero and are reported."""
    x = np.asarray(x, dtype=np.float32)
    norms = np.sqrt((x.astype(np.float64) ** 2).sum(axis=1))
    zero = np.flatnonzero(norms == 0)
    safe = np.where(norms == 0, 1.0, norms)
    return (x / safe[:, None]).astype(np.float32), zero


def extract_fc6(network: Network, dataset: Dataset, cfg: AugmentConfig, ten_view: bool = False,
                post_relu: bool = True, batch_images: int = 64) -> FeatureMatrix:
    """ℓ2-normalized fc6 activations, one row per image in dataset order.

    Uses the center crop by default; ``ten_view=True`` averages the fc6
    activations of the ten views before normalizing.
    """
    stop = "fc6_relu" if post_relu else "fc6"
    rows = []
    for start in range(0, len(dataset), batch_images):
        imgs = dataset.images[start:start + batch_images]
        if ten_view:
            views = np.stack([v for img in imgs for v in augment.ten_views(img, cfg, network.channel_mean)])
            feats = network.forward(views, stop_at=stop)[0].reshape(len(imgs), NUM_VIEWS, -1)
            rows += [mean_of_views(f) for f in feats]
        else:
            views = np.stack([augment.center_view(img, cfg, network.channel_mean) for img in imgs])
            rows += list(network.forward(views, stop_at=stop)[0])
    feats, zero = l2_normalize(np.stack(rows))
    return FeatureMatrix(feats, dataset.labels.copy(), zero)


def pixel_features(dataset: Dataset, cfg: AugmentConfig) -> FeatureMatrix:
    """Baseline: ℓ2-normalized raw center-crop pixels."""
    raw = np.stack([augment.center_view(img, cfg).ravel() for img in dataset.images])
    feats, zero = l2_normalize(raw)
    return FeatureMatrix(feats, dataset.labels.copy(), zero)


# -- linear SVM --------------------------------------------------------------------

@dataclass
class SvmModel:
    weights: np.ndarray  # (K, d)
    biases: np.ndarray  # (K,)
    C: float
    objective: np.ndarray  # final primal objective per class


def svm_objective(weights, biases, x, labels, C: float) -> np.ndarray:
    """Per-class ``0.5*|w|^2 + C * mean(hinge)`` for the one-vs-rest problems."""
    y = np.where(np.arange(len(weights))[None, :] == np.asarray(labels)[:, None], 1.0, -1.0)
    margins = x.astype(np.float64) @ weights.T.astype(np.float64) + biases
    hinge = np.maximum(0.0, 1.0 - y * margins).mean(axis=0)
    return 0.5 * (weights.astype(np.float64) ** 2).sum(axis=1) + C * hinge


def svm_train(features, labels=None, C: float = 1.0, steps: int = 50_000, seed: int = 0,
              num_classes: int | None = None) -> SvmModel:
    """One-vs-rest linear SVMs by stochastic subgradient descent.

    Each class minimizes ``0.5*|w|^2 + (C/n) * sum_i max(0, 1 - y_i (w.x_i + b))``.
    Step ``t = 1..steps`` picks sample ``floor(u_t * n)`` for a seeded
    uniform ``u_t`` and moves by ``1/t`` along that sample's subgradient; the
    bias is not regularized. The model returned is the mean of the iterates
    over the second half of the run. The step budget does not depend on
    ``n``, so repeating every sample in place (``np.repeat(x, 2, axis=0)``)
    reproduces the same iterates. All classes share the sample sequence and
    are otherwise independent.
    """
    if isinstance(features, FeatureMatrix):
        x, labels = features.features, features.labels
    else:
        x = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels)
    n, d = x.shape
    k = num_classes or int(labels.max()) + 1
    if len(np.unique(labels)) < 2:
        raise ConfigError("svm_train needs at least two classes")
    x64 = x.astype(np.float64)
    y_all = np.where(np.arange(k)[None, :] == labels[:, None], 1.0, -1.0)
    w = np.zeros((k, d))
    b = np.zeros(k)
    w_sum, b_sum, count = np.zeros_like(w), np.zeros_like(b), 0
    rng = np.random.Generator(np.random.PCG64(seed))
    picks = np.floor(rng.random(steps) * n).astype(np.intp)
    burn_in = steps // 2
    for t in range(1, steps + 1):
        i = picks[t - 1]
        xi, yi = x64[i], y_all[i]
        active = (yi * (w @ xi + b) < 1.0) * (C * yi)  # (k,)
        eta = 1.0 / t
        w -= eta * (w - active[:, None] * xi[None, :])
        b += eta * active
        if t > burn_in:
            w_sum += w
            b_sum += b
            count += 1
    if count:
        w, b = w_sum / count, b_sum / count
    return SvmModel(w.astype(np.float32), b.astype(np.float32), C, svm_objective(w, b, x, labels, C))


def svm_predict(model: SvmModel, features) -> tuple[np.ndarray, np.ndarray]:
    """Predicted labels and ``(n, K)`` margins; ties go to the lower class index."""
    x = features.features if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != model.weights.shape[1]:
        raise ShapeError(f"features {x.shape} do not match model dimension {model.weights.shape[1]}")
    margins = x @ model.weights.T + model.biases
    return margins.argmax(axis=1), margins
