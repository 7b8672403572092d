"""Empirical detection rates, ROC areas, and the GOSPA set metric."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimation import solve_assignment


@dataclass
class TrialRecord:
    true_count: int
    estimated_count: int
    true_positions: np.ndarray
    estimated_positions: np.ndarray
    threshold: float


def empirical_rates(records):
    """Per-target detection rates and the false-alarm rate of a trial group.

    p_d,l = mean(1[L_hat >= l]) for l = 1..L, p_fa = mean(1[L_hat > L]).
    """
    records = list(records)
    if not records:
        raise ValueError("empty trial group")
    L = max(r.true_count for r in records)
    counts = np.array([r.estimated_count for r in records])
    p_d = np.array([(counts >= l).mean() for l in range(1, L + 1)])
    trues = np.array([r.true_count for r in records])
    p_fa = float((counts > trues).mean())
    return p_d, p_fa


def empirical_auc(p_fa_points, p_d_points):
    """Trapezoidal area under the monotone upper staircase of ROC points.

    Points are extended by (0,0) and (1,1); finite-sample ROC points need
    not be monotone, so p_d is replaced by its cumulative max along p_fa.
    """
    pfa = np.asarray(p_fa_points, dtype=float)
    pd = np.asarray(p_d_points, dtype=float)
    if pfa.size < 1:
        raise ValueError("need at least one ROC point")
    order = np.argsort(pfa, kind="stable")
    pfa, pd = pfa[order], pd[order]
    pfa = np.concatenate([[0.0], pfa, [1.0]])
    pd = np.concatenate([[0.0], pd, [1.0]])
    pd = np.maximum.accumulate(pd)
    return float(np.trapezoid(pd, pfa))


def gospa(truth, estimate, cutoff=5.0, alpha=2.0, order=2.0):
    """GOSPA distance between point sets with Euclidean base distance.

    Optimal sub-pattern assignment via the rectangular assignment solver;
    unassigned points in either set pay cutoff^p / alpha each.
    """
    truth = np.atleast_2d(np.asarray(truth, dtype=float)) if np.size(truth) else np.zeros((0, 3))
    est = np.atleast_2d(np.asarray(estimate, dtype=float)) if np.size(estimate) else np.zeros((0, 3))
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    n, m = truth.shape[0], est.shape[0]
    if n == 0 and m == 0:
        return 0.0
    p = order
    card_term = (cutoff**p / alpha) * abs(n - m)
    if n == 0 or m == 0:
        return float(card_term ** (1.0 / p))
    dists = np.linalg.norm(truth[:, None, :] - est[None, :, :], axis=2)
    cost = np.minimum(dists, cutoff) ** p
    rows, cols = solve_assignment(cost)
    return float((cost[rows, cols].sum() + card_term) ** (1.0 / p))
