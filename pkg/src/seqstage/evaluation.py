"""Overlapping-window decision aggregation and the staging metric suite.

Advancing an L-epoch input window one epoch at a time gives every epoch up
to L posterior estimates; these are fused per class by the mean of their
(floored) logs and the stage is the argmax, ties broken toward the lowest
class index. Metrics are computed from a 5x5 confusion matrix whose rows
are the reference stages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import EPS_FLOOR
from .model import NUM_STAGES


def aggregate(ensemble) -> tuple[np.ndarray, int]:
    """Fuse one epoch's posterior rows: per-class mean log, argmax label.

    ``ensemble`` is [K][num_classes] with 1 <= K; each row a distribution.
    Rows are floored at EPS_FLOOR before the log.
    """
    members = np.asarray(ensemble, dtype=np.float64)
    if members.ndim == 1:
        members = members[None, :]
    if members.size == 0:
        raise ValueError("empty ensemble")
    log_scores = np.log(np.maximum(members, EPS_FLOOR)).mean(axis=0)
    return log_scores, int(np.argmax(log_scores))


def decision_ensembles(window_posteriors: np.ndarray, n_epochs: int) -> list[np.ndarray]:
    """Group window posteriors by target epoch.

    ``window_posteriors`` is [n_windows][L][num_classes] for stride-1 windows
    starting at 0..n_windows-1. Epoch t collects row t-w from every window w
    covering it; near the recording ends fewer than L windows apply.
    """
    n_windows, seq_len = window_posteriors.shape[:2]
    if n_windows + seq_len - 1 != n_epochs:
        raise ValueError(f"{n_windows} windows of length {seq_len} do not tile {n_epochs} epochs")
    ensembles = []
    for t in range(n_epochs):
        w_lo = max(0, t - seq_len + 1)
        w_hi = min(t, n_windows - 1)
        ensembles.append(np.stack([window_posteriors[w, t - w] for w in range(w_lo, w_hi + 1)]))
    return ensembles


@dataclass
class SlidingPrediction:
    labels: np.ndarray            # [n_epochs] aggregated stage indices
    log_scores: np.ndarray        # [n_epochs][num_classes] mean-log scores
    window_posteriors: np.ndarray  # [n_windows][L][num_classes]


def sliding_predict(images: np.ndarray, predict, seq_len: int,
                    batch_size: int = 32) -> SlidingPrediction:
    """Aggregated prediction over every stride-1 window of one recording.

    ``images`` is [n_epochs][F][T][C]; ``predict`` maps an image batch
    [b][L][F][T][C] to posteriors [b][L][num_classes]. Windows are evaluated
    in chunks of ``batch_size``.
    """
    images = np.asarray(images, dtype=np.float64)
    n_epochs = images.shape[0]
    if n_epochs < seq_len:
        raise ValueError(f"recording has {n_epochs} epochs but the model needs at least "
                         f"{seq_len}; retrain or predict with a smaller sequence length")
    n_windows = n_epochs - seq_len + 1
    window_posteriors = np.empty((n_windows, seq_len, NUM_STAGES))
    for lo in range(0, n_windows, batch_size):
        hi = min(lo + batch_size, n_windows)
        batch = np.stack([images[w:w + seq_len] for w in range(lo, hi)])
        window_posteriors[lo:hi] = predict(batch)
    log_sum = np.zeros((n_epochs, NUM_STAGES))
    counts = np.zeros(n_epochs)
    floored_logs = np.log(np.maximum(window_posteriors, EPS_FLOOR))
    for w in range(n_windows):
        log_sum[w:w + seq_len] += floored_logs[w]
        counts[w:w + seq_len] += 1.0
    log_scores = log_sum / counts[:, None]
    labels = np.argmax(log_scores, axis=1)
    return SlidingPrediction(labels=labels, log_scores=log_scores,
                             window_posteriors=window_posteriors)


def window_argmax_accuracy(window_posteriors: np.ndarray, reference: np.ndarray,
                           seq_len: int) -> float:
    """Mean over windows and positions of raw per-window argmax correctness."""
    reference = np.asarray(reference)
    n_windows = window_posteriors.shape[0]
    predicted = np.argmax(window_posteriors, axis=2)
    truth = np.stack([reference[w:w + seq_len] for w in range(n_windows)])
    return float((predicted == truth).mean())


def confusion_matrix(reference, predicted, num_classes: int = NUM_STAGES) -> np.ndarray:
    """Counts[ref][pred] over paired label sequences."""
    reference = np.asarray(reference, dtype=np.intp)
    predicted = np.asarray(predicted, dtype=np.intp)
    if reference.shape != predicted.shape:
        raise ValueError(f"length mismatch: {reference.shape} vs {predicted.shape}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (reference, predicted), 1)
    return cm


def compute_metrics(cm: np.ndarray) -> dict:
    """Accuracy, macro F1, Cohen's kappa, macro sensitivity/specificity,
    and the per-class vectors, from a rows-are-reference confusion matrix.

    A class absent from both reference and prediction gets F1/sensitivity/
    selectivity 0 and is listed under ``absent_classes``.
    """
    cm = np.asarray(cm, dtype=np.float64)
    n = cm.shape[0]
    total = cm.sum()
    if total <= 0:
        raise ValueError("empty confusion matrix")
    diag = np.diag(cm)
    row_sums = cm.sum(axis=1)
    col_sums = cm.sum(axis=0)

    sensitivity = np.where(row_sums > 0, diag / np.maximum(row_sums, 1.0), 0.0)
    selectivity = np.where(col_sums > 0, diag / np.maximum(col_sums, 1.0), 0.0)
    f1_denom = selectivity + sensitivity
    f1 = np.where(f1_denom > 0, 2.0 * selectivity * sensitivity / np.maximum(f1_denom, 1e-300), 0.0)
    true_neg = total - row_sums - col_sums + diag
    false_pos = col_sums - diag
    neg_total = true_neg + false_pos
    # A class covering every reference epoch has no negatives; call that 1.
    specificity = np.where(neg_total > 0, true_neg / np.maximum(neg_total, 1.0), 1.0)

    p_observed = diag.sum() / total
    p_expected = float((row_sums * col_sums).sum()) / (total * total)
    if p_expected < 1.0:
        kappa = (p_observed - p_expected) / (1.0 - p_expected)
    else:
        kappa = 1.0 if p_observed == 1.0 else 0.0

    from .model import STAGES

    names = STAGES if n == len(STAGES) else tuple(str(i) for i in range(n))
    absent = [names[i] for i in range(n) if row_sums[i] == 0 and col_sums[i] == 0]
    return {
        "accuracy": float(diag.sum() / total),
        "macro_f1": float(f1.mean()),
        "kappa": float(kappa),
        "sensitivity": float(sensitivity.mean()),
        "specificity": float(specificity.mean()),
        "per_class_sensitivity": {names[i]: float(sensitivity[i]) for i in range(n)},
        "per_class_selectivity": {names[i]: float(selectivity[i]) for i in range(n)},
        "per_class_specificity": {names[i]: float(specificity[i]) for i in range(n)},
        "per_class_f1": {names[i]: float(f1[i]) for i in range(n)},
        "absent_classes": absent,
        "n_epochs": int(total),
    }


def transition_flags(reference) -> np.ndarray:
    """True where an epoch's stage differs from either neighbor's.

    Boundary epochs compare against their single neighbor.
    """
    reference = np.asarray(reference)
    if reference.size < 2:
        raise ValueError("need at least two epochs to define transitions")
    flags = np.zeros(reference.size, dtype=bool)
    flags[:-1] |= reference[:-1] != reference[1:]
    flags[1:] |= reference[1:] != reference[:-1]
    return flags


def transition_split(reference, predicted=None) -> dict:
    """Transitioning/non-transitioning breakdown, with error rates if
    predictions are given."""
    reference = np.asarray(reference)
    flags = transition_flags(reference)
    out = {
        "flags": flags,
        "transitioning": {"count": int(flags.sum()),
                          "fraction": float(flags.mean())},
        "non_transitioning": {"count": int((~flags).sum()),
                              "fraction": float((~flags).mean())},
    }
    if predicted is not None:
        predicted = np.asarray(predicted)
        errors = predicted != reference
        for key, mask in (("transitioning", flags), ("non_transitioning", ~flags)):
            group_errors = errors[mask]
            out[key]["error_rate"] = float(group_errors.mean()) if group_errors.size else None
    return out
