"""One-class membership gate in front of the vector index.

The default model is a coverage sketch: k-means centroids over the indexed
embeddings and a radius taken from a high quantile of the training points'
distances to their nearest centroid. A query inside the covered region is
predicted to have a close match in the index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import warnings

import numpy as np
from scipy.cluster.vq import kmeans2

DEFAULT_RETRAIN_FRACTION = 0.05


@dataclass(frozen=True)
class PredictorModel:
    centroids: np.ndarray = field(repr=False)
    threshold: float
    trained_on_count: int

    def distances(self, e, chunk: int = 512) -> np.ndarray:
        """Distance from each row of ``e`` to its nearest centroid.

        Computed from explicit differences, row by row, so a point gets the same
        bits alone or in a batch and the inclusive boundary stays consistent.
        """
        e = np.atleast_2d(np.asarray(e, dtype=np.float64))
        out = np.empty(len(e))
        for i in range(0, len(e), chunk):
            diff = e[i:i + chunk, None, :] - self.centroids[None, :, :]
            out[i:i + chunk] = np.sqrt(np.sum(diff * diff, axis=2).min(axis=1))
        return out

    def predict(self, e) -> bool:
        # the boundary itself counts as covered
        return bool(self.distances(e)[0] <= self.threshold)


def train(positives, n_centroids: int = 64, quantile: float = 0.99, seed: int = 0,
          iterations: int = 10, min_radius: float = 0.0) -> PredictorModel:
    """Fit centroids and a coverage radius to the indexed embeddings.

    The radius is the ``quantile`` of the training points' nearest-centroid
    distances, but never below ``min_radius``. With no more distinct points than
    centroids each point is its own centroid and the quantile collapses to 0,
    so the floor is what keeps near duplicates covered.
    """
    data = np.asarray(positives, dtype=np.float64)
    if data.ndim != 2 or len(data) == 0:
        raise ValueError("cannot train the match predictor on an empty set")
    unique = np.unique(data, axis=0)
    k = min(n_centroids, len(unique))
    if k == len(unique):
        centroids = unique
    else:
        with warnings.catch_warnings():
            # an empty cluster just leaves a redundant centroid
            warnings.simplefilter("ignore", UserWarning)
            centroids, _ = kmeans2(data, k, iter=iterations, minit="++", seed=seed)
    model = PredictorModel(centroids, 0.0, len(data))
    dist = model.distances(data)
    radius = max(float(np.quantile(dist, quantile)), min_radius)
    return PredictorModel(centroids, radius, len(data))


def predict(model: PredictorModel, e) -> bool:
    return model.predict(e)


def evaluate(model: PredictorModel, labeled) -> tuple[float, float]:
    """Precision and recall of ``model`` on ``(embedding, is_hit)`` pairs."""
    labeled = list(labeled)
    if not labeled:
        raise ValueError("evaluation needs at least one labeled example")
    tp = fp = fn = 0
    for e, truth in labeled:
        guess = model.predict(e)
        tp += guess and truth
        fp += guess and not truth
        fn += truth and not guess
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return precision, recall


def needs_retrain(change_fraction: float, threshold: float = DEFAULT_RETRAIN_FRACTION) -> bool:
    if not 0.0 <= change_fraction <= 1.0:
        raise ValueError(f"change fraction must lie in [0, 1], got {change_fraction}")
    return change_fraction > threshold
