"""Classification quality and calibration metrics.

Probabilities are the softmax of the output-layer means. Conventions the
source tables cite without defining are pinned here and configurable:
15 equal-width confidence bins for the calibration error, and ranking by
max predicted probability with "prediction correct" as the positive class
for the ROC area. Degenerate ROC inputs (a single outcome class) report 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError

ECE_BINS = 15


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax."""
    x = np.asarray(x)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def error_rate(predicted: np.ndarray, labels: np.ndarray) -> float:
    """Misclassification fraction."""
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    return float(np.mean(predicted != labels))


def nll(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log predicted probability of the true class."""
    probs = np.asarray(probs, dtype=np.float64)
    p_true = probs[np.arange(len(labels)), np.asarray(labels)]
    return float(np.mean(-np.log(np.maximum(p_true, 1e-300))))


def _bin_index(confidence: np.ndarray, bins: int) -> np.ndarray:
    # right-inclusive intervals ((b-1)/M, b/M]; confidence 0 lands in bin 0
    idx = np.ceil(confidence * bins).astype(np.int64) - 1
    return np.clip(idx, 0, bins - 1)


def ece(confidence: np.ndarray, correct: np.ndarray, bins: int = ECE_BINS) -> float:
    """Expected calibration error over equal-width confidence bins.

    ``sum_b (n_b / N) * |accuracy_b - mean_confidence_b|``.
    """
    confidence = np.asarray(confidence, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    n = confidence.size
    idx = _bin_index(confidence, bins)
    counts = np.bincount(idx, minlength=bins)
    conf_sums = np.bincount(idx, weights=confidence, minlength=bins)
    acc_sums = np.bincount(idx, weights=correct, minlength=bins)
    total = 0.0
    for b in range(bins):
        if counts[b] == 0:
            continue
        gap = abs(acc_sums[b] / counts[b] - conf_sums[b] / counts[b])
        total += (counts[b] / n) * gap
    return float(total)


def auroc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Area under the ROC curve via the rank statistic (ties get half credit).

    Returns 1.0 when either outcome class is empty (documented convention for
    the degenerate perfect/abysmal classifier).
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive).astype(bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return 1.0
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum = float(ranks[positive].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


@dataclass
class MetricsReport:
    """Summary of one evaluation pass."""

    error_rate: float
    nll: float
    ece: float
    auroc: float
    mean_output_variance: float = 0.0
    history: list = field(default_factory=list)


def evaluate(net, params, dataset, batch: int = 16) -> MetricsReport:
    """Evaluate a classification network over a dataset in mini-batches.

    Networks with batch normalization use the statistics of each evaluation
    batch, so keep ``batch`` equal to the training batch size.
    """
    n = len(dataset.y)
    if n == 0:
        raise DataError("cannot evaluate on an empty dataset")
    uses_batch_norm = any(getattr(s, "input_norm", None) == "batch"
                          for s in net.stages)
    means = np.empty((n, net.n_out), dtype=np.float64)
    variances = np.empty((n, net.n_out), dtype=np.float64)
    starts = list(range(0, n, batch))
    for s in starts:
        e = min(s + batch, n)
        if uses_batch_norm and e - s < 2 and s > 0:
            s_adj = s - batch  # fold a lone trailing element into the previous batch
            out = net.predict(params, dataset.x[s_adj:e].reshape(e - s_adj, -1))
            means[s_adj:e] = out.mean
            variances[s_adj:e] = out.variance
            continue
        out = net.predict(params, dataset.x[s:e].reshape(e - s, -1))
        means[s:e] = out.mean
        variances[s:e] = out.variance
    probs = softmax(means, axis=-1)
    predicted = np.argmax(means, axis=-1)
    correct = predicted == dataset.y
    confidence = probs.max(axis=-1)
    return MetricsReport(
        error_rate=error_rate(predicted, dataset.y),
        nll=nll(probs, dataset.y),
        ece=ece(confidence, correct),
        auroc=auroc(confidence, correct),
        mean_output_variance=float(np.mean(variances)),
    )
