"""Rejection-sampling coverage-error estimation.

The sample is split once into a training half (nuisance fits) and a test
half.  Source units in the test half are thinned by rejection sampling with
acceptance probability w(x) / B, where w is the estimated importance weight
and B a known upper bound on it; the accepted units mimic a draw from the
target population.  The accepted-sample miscoverage proportion is then
corrected for the estimation of w, and a Wald CUB built from a dedicated
variance formula whose two pieces are scaled by the inverse half sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    BoundViolationError,
    ConfigurationError,
    DegenerateFoldError,
    EmptyAcceptanceError,
    ObservedSample,
    RiskTargets,
    RngStream,
    ThresholdGrid,
    miscoverage_vector,
)
from .crossfit import odds_weight
from .learners import BinaryLearnerSpec, FittedPredictor, fit_binary
from .onestep import CoverageTable, normal_upper_quantile

# Exact 0/1 propensity outputs would blow up the odds transform; the RS path
# applies no truncation, so guard at float resolution only.
_G_GUARD = 1e-12


@dataclass(frozen=True)
class RsConfig:
    """Split fraction and bound rule for rejection sampling.

    ``bhat_fixed`` set -> use it as the known bound B (and fail the run if an
    observed test-half weight exceeds it).  Otherwise B is the maximum weight
    over test-half source units times ``bhat_mult``, floored at 1.
    """

    xi: float = 0.5
    bhat_mult: float = 1.3
    bhat_fixed: float | None = None

    def __post_init__(self):
        if not (0.0 < self.xi < 1.0):
            raise ConfigurationError("split fraction must lie in (0, 1)")
        if self.bhat_mult < 1.0:
            raise ConfigurationError("bound multiplier must be at least 1")
        if self.bhat_fixed is not None and self.bhat_fixed < 1.0:
            raise ConfigurationError("fixed bound must be at least 1")


@dataclass(frozen=True)
class RsRun:
    """Frozen state of one rejection-sampling pass."""

    train_idx: np.ndarray
    test_idx: np.ndarray
    taus: tuple[float, ...]
    g_predictor: FittedPredictor
    e_predictors: tuple[FittedPredictor, ...]
    gamma_train: float
    bhat: float
    zeta: np.ndarray          # exogenous uniforms, aligned with test_idx
    what_test: np.ndarray     # estimated weights at test units
    accepted: np.ndarray      # bool mask over test_idx
    pi_hat: float

    @property
    def n_accepted(self) -> int:
        return int(self.accepted.sum())

    def accepted_indices(self) -> np.ndarray:
        return self.test_idx[self.accepted]


def rs_prepare(sample: ObservedSample, config: RsConfig, grid: ThresholdGrid,
               g_spec: BinaryLearnerSpec, e_spec: BinaryLearnerSpec,
               rng: RngStream) -> RsRun:
    """Split, fit nuisances on the training half, and run the thinning."""
    n = sample.n
    perm = rng.child("rs-split").generator().permutation(n)
    n_train = int(round(n * config.xi))
    if n_train < 1 or n_train >= n:
        raise ConfigurationError("split leaves an empty half")
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])

    a_train = sample.a[train_idx]
    a_test = sample.a[test_idx]
    for name, a_half in (("training", a_train), ("test", a_test)):
        if (a_half == 1).sum() == 0 or (a_half == 0).sum() == 0:
            raise DegenerateFoldError(f"{name} half lacks source or target units")

    gamma_train = float(np.mean(a_train == 1))
    g_pred = fit_binary(g_spec, sample.x[train_idx],
                        (a_train == 1).astype(float), rng.child("rs-g"))

    src_train = train_idx[a_train == 1]
    scores_train = sample.score[src_train]
    X_src_train = sample.x[src_train]
    e_preds = tuple(
        fit_binary(e_spec, X_src_train, miscoverage_vector(scores_train, tau),
                   rng.child("rs-e", ti))
        for ti, tau in enumerate(grid)
    )

    g_test = np.clip(g_pred.predict(sample.x[test_idx]), _G_GUARD, 1.0 - _G_GUARD)
    what_test = odds_weight(g_test, gamma_train)

    src_test = a_test == 1
    w_src_max = float(what_test[src_test].max())
    if config.bhat_fixed is not None:
        bhat = float(config.bhat_fixed)
        if bhat < w_src_max:
            raise BoundViolationError(
                f"fixed bound {bhat} below observed weight {w_src_max:.6g}")
    else:
        bhat = max(1.0, config.bhat_mult * w_src_max)

    zeta = rng.child("rs-zeta").generator().uniform(size=test_idx.size)
    accepted = src_test & (zeta <= what_test / bhat)
    pi_hat = float(what_test[src_test].mean())

    return RsRun(
        train_idx=train_idx, test_idx=test_idx, taus=tuple(grid),
        g_predictor=g_pred, e_predictors=e_preds, gamma_train=gamma_train,
        bhat=bhat, zeta=zeta, what_test=what_test, accepted=accepted,
        pi_hat=pi_hat,
    )


def rs_estimate(run: RsRun, sample: ObservedSample, grid: ThresholdGrid,
                targets: RiskTargets) -> CoverageTable:
    """Corrected accepted-proportion estimates with Wald CUBs.

    The variance estimate is evaluated term by term: a training-half piece
    from the source-fraction estimate and a test-half piece combining the
    thinning indicator, the weight recentering, and the correction term.
    """
    if tuple(grid) != run.taus:
        raise ConfigurationError("grid does not match the prepared run")
    if run.n_accepted == 0:
        raise EmptyAcceptanceError("rejection sampling accepted no units")

    n = sample.n
    n_train = run.train_idx.size
    n_test = run.test_idx.size
    gamma = run.gamma_train
    a_test = sample.a[run.test_idx].astype(float)
    X_test = sample.x[run.test_idx]
    w = run.what_test
    indicator = (run.zeta <= w / run.bhat).astype(float)
    scores_acc = sample.score[run.accepted_indices()]

    a_train = sample.a[run.train_idx].astype(float)
    train_piece_base = float(np.mean(
        (a_train - gamma) ** 2 / (gamma**2 * (1.0 - gamma) ** 2)))

    taus = np.array(list(grid), dtype=float)
    psi = np.zeros_like(taus)
    sigma = np.zeros_like(taus)

    for ti, tau in enumerate(grid):
        e_test = np.clip(run.e_predictors[ti].predict(X_test), 0.0, 1.0)
        d_tilde = e_test * (-(a_test / gamma) * (w / run.pi_hat)
                            + (1.0 - a_test) / (1.0 - gamma))
        proportion = float(np.mean(miscoverage_vector(scores_acc, tau)))
        psi_tau = proportion + float(np.mean(d_tilde))

        z_full = np.zeros(n_test)
        z_full[run.accepted] = miscoverage_vector(scores_acc, tau)
        test_terms = (run.bhat * (a_test / gamma) * indicator * (z_full - psi_tau)
                      + (a_test * (w - 1.0) / gamma) * psi_tau
                      + d_tilde)
        var = ((n / n_train) * train_piece_base * psi_tau**2
               + (n / n_test) * float(np.mean(test_terms**2)))
        psi[ti] = psi_tau
        sigma[ti] = np.sqrt(var)

    z_q = normal_upper_quantile(targets.alpha_conf)
    cub = psi + z_q * sigma / np.sqrt(n)
    return CoverageTable(
        method="rs", taus=taus, psi=psi, sigma=sigma, cub=cub, n=n,
        alpha_conf=targets.alpha_conf,
        fold_sizes=np.array([n_train, n_test], dtype=float),
        gamma_by_fold=np.array([gamma, float(np.mean(a_test))]),
        extras={
            "bhat": run.bhat,
            "pi_hat": run.pi_hat,
            "n_accepted": run.n_accepted,
        },
    )
