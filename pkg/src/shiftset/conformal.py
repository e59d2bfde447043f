"""Conformal baselines: PAC-tuned split conformal and weighted conformal.

Split conformal ignores covariate shift: the threshold is the k-th smallest
calibration score, with k chosen so that the exact binomial tail certifies
the PAC criterion.  Weighted conformal targets marginal (not training-set
conditional) coverage under estimated shift: a candidate label is kept when
its score clears a weighted lower quantile of the calibration scores, with
the test point contributing its own weight mass below every score.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import binom

from .core import ConfigurationError, DomainError, RiskTargets

SENTINEL_TAU = 0.0


@dataclass(frozen=True)
class CalibrationSet:
    """Scores of source units reserved for calibration."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float).reshape(-1)
        object.__setattr__(self, "scores", scores)
        if scores.size < 1:
            raise ConfigurationError("calibration set must be non-empty")
        if not np.all(np.isfinite(scores)):
            raise ConfigurationError("calibration scores must be finite")

    @property
    def m(self) -> int:
        return int(self.scores.size)

    def sorted(self) -> np.ndarray:
        return np.sort(self.scores)


class IcpThreshold(NamedTuple):
    tau: float
    k: int | None
    is_sentinel: bool


def inductive_cp_threshold(cal: CalibrationSet, targets: RiskTargets) -> IcpThreshold:
    """PAC-tuned split-conformal threshold.

    Picks the largest k >= 1 with Pr(Bin(m, alpha_error) >= k) >= 1 -
    alpha_conf and returns the k-th smallest calibration score; the
    zero sentinel when no k qualifies.  Larger k gives a larger threshold
    (smaller sets), so the rule takes the most aggressive certifiable order
    statistic.
    """
    m = cal.m
    # Pr(Bin(m, a) >= k) for k = 1..m, decreasing in k.
    tail = binom.sf(np.arange(m), m, targets.alpha_error)
    feasible = tail >= 1.0 - targets.alpha_conf
    if not feasible.any():
        return IcpThreshold(SENTINEL_TAU, None, True)
    k = int(np.flatnonzero(feasible)[-1]) + 1
    return IcpThreshold(float(cal.sorted()[k - 1]), k, False)


def weighted_quantile_cutoff(cal_scores: np.ndarray, cal_weights: np.ndarray,
                             test_weight: float, alpha_error: float) -> float:
    """Smallest calibration score at which the normalized cumulative weight
    (counting the test point's mass below every score) reaches alpha_error.

    Returns -inf when the test mass alone reaches the level, in which case
    every candidate is kept.  Ties in scores pool their weight.
    """
    cal_scores = np.asarray(cal_scores, dtype=float).reshape(-1)
    cal_weights = np.asarray(cal_weights, dtype=float).reshape(-1)
    if cal_scores.shape != cal_weights.shape or cal_scores.size == 0:
        raise ConfigurationError("scores and weights must align and be non-empty")
    if np.any(cal_weights < 0) or test_weight < 0:
        raise DomainError("weights must be nonnegative")
    total = float(cal_weights.sum() + test_weight)
    if total <= 0.0:
        raise DomainError("degenerate weights: total weight is zero")

    level = alpha_error * total - test_weight
    if level <= 0.0:
        return float("-inf")
    order = np.argsort(cal_scores, kind="stable")
    cum = np.cumsum(cal_weights[order])
    pos = int(np.searchsorted(cum, level, side="left"))
    pos = min(pos, cal_scores.size - 1)
    return float(cal_scores[order][pos])


def weighted_quantile_cutoffs(cal_scores: np.ndarray, cal_weights: np.ndarray,
                              test_weights: np.ndarray,
                              alpha_error: float) -> np.ndarray:
    """Vectorized :func:`weighted_quantile_cutoff` over many test points."""
    cal_scores = np.asarray(cal_scores, dtype=float).reshape(-1)
    cal_weights = np.asarray(cal_weights, dtype=float).reshape(-1)
    test_weights = np.asarray(test_weights, dtype=float).reshape(-1)
    if np.any(cal_weights < 0) or np.any(test_weights < 0):
        raise DomainError("weights must be nonnegative")
    w_total = float(cal_weights.sum())
    if w_total + test_weights.min() <= 0.0:
        raise DomainError("degenerate weights: total weight is zero")
    order = np.argsort(cal_scores, kind="stable")
    sorted_scores = cal_scores[order]
    cum = np.cumsum(cal_weights[order])
    levels = alpha_error * (w_total + test_weights) - test_weights
    pos = np.searchsorted(cum, levels, side="left")
    pos = np.minimum(pos, cal_scores.size - 1)
    out = sorted_scores[pos]
    return np.where(levels <= 0.0, -np.inf, out)


def weighted_cp_set(cal_scores: np.ndarray, cal_weights: np.ndarray,
                    test_weight: float, candidate_scores: np.ndarray,
                    targets: RiskTargets) -> np.ndarray:
    """Membership decision per candidate label (represented by its score).

    A candidate is kept iff its score is at least the weighted cutoff; with
    equal weights this reproduces unweighted split conformal exactly.
    """
    cutoff = weighted_quantile_cutoff(cal_scores, cal_weights, test_weight,
                                      targets.alpha_error)
    return np.asarray(candidate_scores, dtype=float) >= cutoff
