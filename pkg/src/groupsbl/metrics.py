"""Evaluation metrics: normalized error, grouping accuracy, support overlap."""

from __future__ import annotations

from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment


def nmse(estimates: np.ndarray, truths: np.ndarray) -> float:
    """Total squared error over all users normalized by the true energy.

    This is the single-trial ratio; callers average it across trials.
    """
    estimates = np.asarray(estimates)
    truths = np.asarray(truths)
    if estimates.shape != truths.shape:
        raise ValueError("estimate and truth shapes differ")
    denom = float(np.sum(np.abs(truths) ** 2))
    if denom == 0.0:
        raise ValueError("true channels carry no energy, ratio undefined")
    return float(np.sum(np.abs(estimates - truths) ** 2)) / denom


def grouping_accuracy(assigned, truth) -> float:
    """Largest fraction of users labeled consistently with the truth over
    all one-to-one relabelings of the assigned groups.

    Exhaustive search up to 8 labels, Hungarian matching beyond that.
    """
    assigned = np.asarray(assigned, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if assigned.shape != truth.shape or assigned.ndim != 1 or assigned.size < 1:
        raise ValueError("label vectors must be equal-length and nonempty")
    a_vals = np.unique(assigned)
    t_vals = np.unique(truth)
    side = max(a_vals.size, t_vals.size)
    confusion = np.zeros((side, side))
    a_index = {v: i for i, v in enumerate(a_vals)}
    t_index = {v: i for i, v in enumerate(t_vals)}
    for a, t in zip(assigned, truth):
        confusion[t_index[t], a_index[a]] += 1
    if side <= 8:
        best = max(sum(confusion[i, perm[i]] for i in range(side))
                   for perm in permutations(range(side)))
    else:
        rows, cols = linear_sum_assignment(-confusion)
        best = confusion[rows, cols].sum()
    return float(best) / assigned.size


def support_f1(estimated, truth) -> float:
    """F1 overlap between an estimated and a true index set."""
    est = set(int(i) for i in np.atleast_1d(estimated))
    tru = set(int(i) for i in np.atleast_1d(truth))
    if not est and not tru:
        return 1.0
    if not est or not tru:
        return 0.0
    hits = len(est & tru)
    return 2.0 * hits / (len(est) + len(tru))
