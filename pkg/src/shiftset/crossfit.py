"""Cross-fitted nuisance estimation.

Two nuisance functions drive every shift-aware estimator here:

* the propensity g(x) = Pr(a = 1 | x), fit on all units outside a fold and
  truncated into [delta, 1 - delta];
* the per-threshold conditional coverage error E_tau(x) = Pr(score < tau | x,
  a = 1), fit on source units outside the fold with miscoverage labels.

The covariate-shift likelihood ratio is never estimated by density
estimation; it is recovered from the propensity through the odds transform
``odds_weight``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigurationError,
    DomainError,
    FoldPlan,
    ObservedSample,
    RngStream,
    ThresholdGrid,
    UnfittableFoldError,
    miscoverage_vector,
)
from .learners import BinaryLearnerSpec, ConstantPredictor, FittedPredictor, fit_binary


def odds_weight(g, gamma):
    """Importance weight ((1 - g) / g) * (gamma / (1 - gamma)).

    This converts a source-membership probability into the target/source
    covariate density ratio.  Accepts scalars or arrays; the caller is
    responsible for keeping g inside (0, 1), normally via truncation.
    """
    g_arr = np.asarray(g, dtype=float)
    if np.any(g_arr <= 0.0) or np.any(g_arr >= 1.0):
        raise DomainError("propensity must lie strictly inside (0, 1)")
    if not (0.0 < gamma < 1.0):
        raise DomainError("gamma must lie strictly inside (0, 1)")
    out = (1.0 - g_arr) / g_arr * (gamma / (1.0 - gamma))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class NuisanceFits:
    """Cross-fitted predictors: one propensity per fold, one conditional
    error predictor per (fold, threshold).

    ``delta = 0`` disables truncation and is reserved for oracle fits.
    """

    taus: tuple[float, ...]
    g_predictors: tuple[FittedPredictor, ...]
    e_predictors: tuple[tuple[FittedPredictor, ...], ...]  # [fold][tau index]
    delta: float
    train_indices: tuple[tuple[int, ...], ...] = ()

    @property
    def V(self) -> int:
        return len(self.g_predictors)

    def tau_index(self, tau: float) -> int:
        for i, t in enumerate(self.taus):
            if t == tau:
                return i
        raise ConfigurationError(f"threshold {tau} is not in the fitted grid")

    def propensity(self, v: int, X: np.ndarray) -> np.ndarray:
        g = self.g_predictors[v].predict(X)
        if self.delta > 0.0:
            g = np.clip(g, self.delta, 1.0 - self.delta)
        else:
            # No truncation requested; guard only against exact 0/1 from
            # saturated learners so the odds transform stays finite.
            g = np.clip(g, 1e-12, 1.0 - 1e-12)
        return g

    def cond_error(self, v: int, tau: float, X: np.ndarray) -> np.ndarray:
        pred = self.e_predictors[v][self.tau_index(tau)]
        return np.clip(pred.predict(X), 0.0, 1.0)

    def is_constant_fit(self, v: int, tau: float) -> bool:
        return isinstance(self.e_predictors[v][self.tau_index(tau)], ConstantPredictor)


def fit_nuisances(sample: ObservedSample, folds: FoldPlan, grid: ThresholdGrid,
                  g_spec: BinaryLearnerSpec, e_spec: BinaryLearnerSpec,
                  delta: float, rng: RngStream) -> NuisanceFits:
    """Fit out-of-fold propensity and conditional-error predictors.

    For each fold v the training set is the fold's complement.  Conditional
    error fits use only the source units there; when their miscoverage labels
    are constant for a threshold, the exact constant predictor is stored so
    that thresholds beyond the observed score range behave deterministically.
    """
    if not (0.0 < delta < 0.5):
        raise ConfigurationError("delta must lie in (0, 0.5)")
    if folds.n != sample.n:
        raise ConfigurationError("fold plan does not match the sample size")

    g_preds: list[FittedPredictor] = []
    e_preds: list[tuple[FittedPredictor, ...]] = []
    fingerprints: list[tuple[int, ...]] = []

    for v in range(folds.V):
        train = folds.complement(v)
        if train.size < 2:
            raise UnfittableFoldError(f"fold {v}: complement has fewer than 2 units")
        a_tr = sample.a[train]
        src = train[a_tr == 1]
        if src.size < 1:
            raise UnfittableFoldError(f"fold {v}: complement has no source units")

        g_rng = rng.child("propensity", v)
        g_preds.append(fit_binary(g_spec, sample.x[train], (a_tr == 1).astype(float), g_rng))

        scores = sample.score[src]
        Xs = sample.x[src]
        fold_e = []
        for ti, tau in enumerate(grid):
            labels = miscoverage_vector(scores, tau)
            e_rng = rng.child("cond-error", v * len(grid) + ti)
            fold_e.append(fit_binary(e_spec, Xs, labels, e_rng))
        e_preds.append(tuple(fold_e))
        fingerprints.append(tuple(int(i) for i in train))

    return NuisanceFits(
        taus=tuple(grid),
        g_predictors=tuple(g_preds),
        e_predictors=tuple(e_preds),
        delta=float(delta),
        train_indices=tuple(fingerprints),
    )


class _FunctionPredictor(FittedPredictor):
    """Wraps an analytic x -> probability function as a predictor."""

    def __init__(self, fn, p):
        self.fn = fn
        self.p = p

    def _predict(self, X):
        return np.asarray(self.fn(X), dtype=float)


def oracle_nuisances(dgp, grid: ThresholdGrid, V: int = 2) -> NuisanceFits:
    """Fold-independent nuisance fits equal to a DGP's true functions.

    Used for property tests that isolate estimator behavior from learner
    error.  No truncation is applied.
    """
    from .simbench import DgpSpec  # deferred: simbench depends on this module

    if not isinstance(dgp, DgpSpec):
        raise ConfigurationError("oracle nuisances require a built-in DGP spec")

    g_pred = _FunctionPredictor(dgp.true_propensity, dgp.p)
    e_by_tau = tuple(
        _FunctionPredictor(lambda X, t=tau: dgp.true_cond_error(X, t), dgp.p)
        for tau in grid
    )
    return NuisanceFits(
        taus=tuple(grid),
        g_predictors=(g_pred,) * V,
        e_predictors=(e_by_tau,) * V,
        delta=0.0,
    )
