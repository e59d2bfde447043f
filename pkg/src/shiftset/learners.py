"""In-repo binary-outcome learners used for both nuisance functions.

Two real learners are provided behind one interface: a ridge-penalized
logistic regression fit by iteratively reweighted least squares, and
gradient-boosted decision stumps.  Both return probabilities in [0, 1].
Constant labels short-circuit to an exactly-constant predictor before any
learner runs, which keeps conditional-error fits exact at thresholds beyond
the observed score range.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .core import ConfigurationError, DataError, RngStream

LEARNER_KINDS = ("logistic-ridge", "boosted-stumps", "constant")

# Boosted-stump probabilities are clamped away from {0, 1} so that downstream
# odds transforms stay finite.
_STUMP_CLAMP = 1e-6


@dataclass(frozen=True)
class BinaryLearnerSpec:
    """Configuration for a binary-outcome learner.

    ``ridge`` penalizes non-intercept coefficients only.  The stump fields
    (``rounds``, ``learning_rate``, ``min_child_weight``) are ignored by the
    logistic learner and vice versa.
    """

    kind: str = "logistic-ridge"
    ridge: float = 1e-6
    max_iter: int = 50
    tol: float = 1e-8
    rounds: int = 100
    learning_rate: float = 0.1
    min_child_weight: float = 5.0
    standardize: bool = False
    constant_value: float = 0.5

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ConfigurationError(f"unknown learner kind {self.kind!r}")
        if self.ridge < 0:
            raise ConfigurationError("ridge strength must be nonnegative")
        if self.max_iter < 1 or self.rounds < 1:
            raise ConfigurationError("iteration caps must be at least 1")
        if not (0.0 <= self.constant_value <= 1.0):
            raise ConfigurationError("constant_value must lie in [0, 1]")


class FittedPredictor:
    """A fitted x -> probability map.  Immutable and safe to share."""

    p: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = self._check(X)
        out = self._predict(X)
        return np.clip(out, 0.0, 1.0)

    def predict_one(self, x: np.ndarray) -> float:
        return float(self.predict(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.p is not None and X.shape[1] != self.p:
            raise DataError(f"expected {self.p} covariates, got {X.shape[1]}")
        return X

    def _predict(self, X: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError


class ConstantPredictor(FittedPredictor):
    """Predicts one fixed probability for every input."""

    def __init__(self, value: float, p: int | None = None):
        if not (0.0 <= value <= 1.0):
            raise ConfigurationError("constant probability must lie in [0, 1]")
        self.value = float(value)
        self.p = p

    def _check(self, X):
        # Dimension is irrelevant for a constant; accept any width.
        return np.atleast_2d(np.asarray(X, dtype=float))

    def _predict(self, X):
        return np.full(X.shape[0], self.value)

    def __repr__(self):
        return f"ConstantPredictor({self.value})"


class LogisticRidgePredictor(FittedPredictor):
    """Logistic model expit(intercept + x @ coef), optionally standardized."""

    def __init__(self, intercept, coef, p, x_mean=None, x_scale=None, fallback=False):
        self.intercept = float(intercept)
        self.coef = np.asarray(coef, dtype=float)
        self.p = int(p)
        self.x_mean = None if x_mean is None else np.asarray(x_mean, dtype=float)
        self.x_scale = None if x_scale is None else np.asarray(x_scale, dtype=float)
        self.fallback = bool(fallback)

    def linear(self, X: np.ndarray) -> np.ndarray:
        X = self._check(X)
        if self.x_mean is not None:
            X = (X - self.x_mean) / self.x_scale
        return self.intercept + X @ self.coef

    def _predict(self, X):
        if self.x_mean is not None:
            X = (X - self.x_mean) / self.x_scale
        return expit(self.intercept + X @ self.coef)


class BoostedStumpsPredictor(FittedPredictor):
    """Additive log-odds model of depth-1 trees, clamped away from {0, 1}."""

    def __init__(self, base_logodds, features, thresholds, left_values, right_values, p):
        self.base_logodds = float(base_logodds)
        self.features = np.asarray(features, dtype=np.int64)
        self.thresholds = np.asarray(thresholds, dtype=float)
        self.left_values = np.asarray(left_values, dtype=float)
        self.right_values = np.asarray(right_values, dtype=float)
        self.p = int(p)

    def _predict(self, X):
        raw = np.full(X.shape[0], self.base_logodds)
        for j, thr, lv, rv in zip(self.features, self.thresholds,
                                  self.left_values, self.right_values):
            raw += np.where(X[:, j] <= thr, lv, rv)
        return np.clip(expit(raw), _STUMP_CLAMP, 1.0 - _STUMP_CLAMP)


def predict(pred: FittedPredictor, x: np.ndarray) -> float:
    """Probability for a single covariate vector."""
    return pred.predict_one(x)


def fit_binary(spec: BinaryLearnerSpec, X: np.ndarray, z: np.ndarray,
               rng: RngStream | None = None) -> FittedPredictor:
    """Fit a binary-outcome probability model.

    Constant labels always produce the matching constant predictor, whatever
    the configured learner.  IRLS that diverges falls back to an
    intercept-only fit with a warning; it never raises.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = np.asarray(z, dtype=float).reshape(-1)
    if X.shape[0] != z.shape[0]:
        raise DataError("X and z must have the same number of rows")
    if X.shape[0] < 1:
        raise DataError("cannot fit on an empty sample")
    if np.any((z != 0.0) & (z != 1.0)):
        raise DataError("labels must be binary")

    if np.all(z == z[0]):
        return ConstantPredictor(float(z[0]), p=X.shape[1])

    if spec.kind == "constant":
        return ConstantPredictor(float(np.mean(z)), p=X.shape[1])
    if spec.kind == "logistic-ridge":
        return _fit_logistic_irls(spec, X, z)
    return _fit_boosted_stumps(spec, X, z)


# ---------------------------------------------------------------------------
# Logistic ridge via IRLS
# ---------------------------------------------------------------------------

def _fit_logistic_irls(spec: BinaryLearnerSpec, X: np.ndarray, z: np.ndarray):
    n, p = X.shape
    x_mean = x_scale = None
    Xw = X
    if spec.standardize:
        x_mean = X.mean(axis=0)
        x_scale = X.std(axis=0)
        x_scale = np.where(x_scale > 0, x_scale, 1.0)
        Xw = (X - x_mean) / x_scale

    design = np.column_stack([np.ones(n), Xw])
    penalty = np.full(p + 1, spec.ridge)
    penalty[0] = 0.0  # intercept unpenalized

    beta = np.zeros(p + 1)
    dev_old = np.inf
    ok = True
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(spec.max_iter):
            eta = design @ beta
            mu = expit(eta)
            w = np.clip(mu * (1.0 - mu), 1e-10, None)
            # Working response for the Newton step on the penalized deviance.
            resp = eta + (z - mu) / w
            lhs = design.T @ (w[:, None] * design) + np.diag(penalty)
            rhs = design.T @ (w * resp)
            try:
                beta_new = np.linalg.solve(lhs, rhs)
            except np.linalg.LinAlgError:
                ok = False
                break
            if not np.all(np.isfinite(beta_new)):
                ok = False
                break
            beta = beta_new
            dev = _penalized_deviance(design, z, beta, penalty)
            if not np.isfinite(dev):
                ok = False
                break
            if abs(dev_old - dev) < spec.tol:
                break
            dev_old = dev

    if not ok:
        warnings.warn("IRLS diverged; falling back to an intercept-only fit",
                      RuntimeWarning, stacklevel=3)
        zbar = float(np.clip(np.mean(z), 1e-10, 1 - 1e-10))
        return LogisticRidgePredictor(logit(zbar), np.zeros(p), p,
                                      x_mean, x_scale, fallback=True)
    return LogisticRidgePredictor(beta[0], beta[1:], p, x_mean, x_scale)


def _penalized_deviance(design, z, beta, penalty):
    eta = design @ beta
    # log(1 + e^eta) computed stably; deviance = -2 * loglik + ridge term.
    loglik = np.sum(z * eta - np.logaddexp(0.0, eta))
    return -2.0 * loglik + float(penalty @ beta**2)


# ---------------------------------------------------------------------------
# Gradient-boosted stumps
# ---------------------------------------------------------------------------

def _fit_boosted_stumps(spec: BinaryLearnerSpec, X: np.ndarray, z: np.ndarray):
    n, p = X.shape
    zbar = float(np.clip(np.mean(z), _STUMP_CLAMP, 1.0 - _STUMP_CLAMP))
    base = float(logit(zbar))
    raw = np.full(n, base)

    order = [np.argsort(X[:, j], kind="stable") for j in range(p)]
    features, thresholds, lvals, rvals = [], [], [], []

    for _ in range(spec.rounds):
        prob = expit(raw)
        grad = z - prob
        hess = np.clip(prob * (1.0 - prob), 1e-12, None)
        total_g, total_h = grad.sum(), hess.sum()

        best = None  # (gain, feature, threshold, gl, hl)
        for j in range(p):
            idx = order[j]
            xs = X[idx, j]
            gl = np.cumsum(grad[idx])[:-1]
            hl = np.cumsum(hess[idx])[:-1]
            valid = xs[:-1] < xs[1:]  # split only between distinct values
            valid &= (hl >= spec.min_child_weight)
            valid &= (total_h - hl >= spec.min_child_weight)
            if not valid.any():
                continue
            gr = total_g - gl
            hr = total_h - hl
            gain = gl**2 / hl + gr**2 / hr
            gain[~valid] = -np.inf
            k = int(np.argmax(gain))
            if best is None or gain[k] > best[0]:
                thr = 0.5 * (xs[k] + xs[k + 1])
                best = (float(gain[k]), j, thr, float(gl[k]), float(hl[k]))

        if best is None:
            break
        _, j, thr, gl, hl = best
        gr, hr = total_g - gl, total_h - hl
        left_val = spec.learning_rate * gl / hl
        right_val = spec.learning_rate * gr / hr
        features.append(j)
        thresholds.append(thr)
        lvals.append(left_val)
        rvals.append(right_val)
        raw += np.where(X[:, j] <= thr, left_val, right_val)

    return BoostedStumpsPredictor(base, features, thresholds, lvals, rvals, p)
