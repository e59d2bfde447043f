"""Cross-fit one-step corrected coverage-error estimation.

For each candidate threshold tau the pipeline produces a point estimate of
the target-population coverage error, a standard error, and a one-sided Wald
confidence upper bound (CUB); a threshold is then selected as the largest
grid point whose entire prefix has CUB below the requested miscoverage
level.

The fold estimate is

    psi_v = sum_{i in fold, a=0} E(x_i) / #targets
            + (1/|fold|) sum_{i in fold} (a_i / gamma_v) W(x_i) [z_i - E(x_i)]

with W the odds transform of the out-of-fold propensity and gamma_v the
in-fold source fraction.  Fold estimates are combined with |fold| weights.
The variance estimate averages squared influence-type terms centered at the
fold's plug-in value.

The plug-in and weighted plug-in baselines reuse this exact pipeline with
the point estimate swapped out, so all three produce comparable tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .core import (
    ConfigurationError,
    DegenerateFoldError,
    DomainError,
    FoldPlan,
    ObservedSample,
    ObservedUnit,
    RiskTargets,
    ThresholdGrid,
    miscoverage_vector,
)
from .crossfit import NuisanceFits, odds_weight

ZERO_SENTINEL = 0.0


def normal_upper_quantile(alpha: float) -> float:
    """(1 - alpha) quantile of the standard normal."""
    if not (0.0 < alpha < 1.0):
        raise DomainError("alpha must lie in (0, 1)")
    return float(ndtri(1.0 - alpha))


@dataclass(frozen=True)
class CoverageTable:
    """Per-threshold estimates, standard errors, and Wald CUBs.

    ``psi_by_fold`` and ``plugin_by_fold`` have shape (V, T) and carry the
    fold-level diagnostics; ``extras`` holds method-specific metadata such as
    TMLE fallback flags.
    """

    method: str
    taus: np.ndarray
    psi: np.ndarray
    sigma: np.ndarray
    cub: np.ndarray
    n: int
    alpha_conf: float
    fold_sizes: np.ndarray
    gamma_by_fold: np.ndarray
    psi_by_fold: np.ndarray | None = None
    plugin_by_fold: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.alpha_conf < 0.5):
            raise ConfigurationError("alpha_conf must lie in (0, 0.5)")
        if np.any(self.sigma < 0):
            raise ConfigurationError("sigma must be nonnegative")
        if np.any(self.cub < self.psi - 1e-12):
            raise ConfigurationError("CUB below point estimate")

    def __len__(self):
        return self.taus.shape[0]


@dataclass(frozen=True)
class ThresholdDecision:
    """Selected threshold (or the zero sentinel) plus the full audit table."""

    tau_hat: float
    is_sentinel: bool
    method: str
    table: CoverageTable

    def __post_init__(self):
        if not self.is_sentinel:
            sel = self.table.taus <= self.tau_hat
            if not np.all(self.table.cub[sel] < self.table.extras.get(
                    "alpha_error", np.inf)):
                raise ConfigurationError("prefix feasibility violated")


# ---------------------------------------------------------------------------
# Influence-type evaluation
# ---------------------------------------------------------------------------

def gradient_eval(unit: ObservedUnit, tau: float, e_hat, g_hat,
                  gamma_hat: float, psi_plugin: float) -> float:
    """Influence-term value for one unit.

    ``e_hat`` and ``g_hat`` are fitted predictors.  For target units the
    source summand vanishes and the unit's (absent) score is never read.
    """
    if not (0.0 < gamma_hat < 1.0):
        raise DomainError("gamma_hat must lie strictly inside (0, 1)")
    e_val = float(np.clip(e_hat.predict_one(unit.x), 0.0, 1.0))
    if unit.a == 0:
        return (e_val - psi_plugin) / (1.0 - gamma_hat)
    w = odds_weight(g_hat.predict_one(unit.x), gamma_hat)
    z = float(unit.score < tau)
    return (w / gamma_hat) * (z - e_val)


class _FoldContext:
    """Cached per-fold quantities shared across thresholds."""

    def __init__(self, sample: ObservedSample, folds: FoldPlan,
                 fits: NuisanceFits, v: int):
        idx = folds.indices(v)
        a = sample.a[idx]
        n_src = int((a == 1).sum())
        n_tgt = int((a == 0).sum())
        if n_src == 0 or n_tgt == 0:
            raise DegenerateFoldError(
                f"fold {v} has {n_src} source and {n_tgt} target units")
        self.v = v
        self.idx = idx
        self.size = idx.size
        self.src = a == 1
        self.gamma = n_src / idx.size
        self.X = sample.x[idx]
        self.scores = sample.score[idx]
        g = fits.propensity(v, self.X)
        self.w = odds_weight(g, self.gamma)

    def labels(self, tau: float) -> np.ndarray:
        z = np.zeros(self.size)
        z[self.src] = miscoverage_vector(self.scores[self.src], tau)
        return z


def _fold_onestep(ctx: _FoldContext, e_vals: np.ndarray, tau: float):
    """(psi_v, plugin_v, sigma2_v) for one fold and threshold."""
    z = ctx.labels(tau)
    plugin = float(e_vals[~ctx.src].mean())
    src_term = np.where(ctx.src, ctx.w, 0.0) * (z - e_vals) / ctx.gamma
    psi = plugin + float(src_term.mean())
    d = np.where(ctx.src, ctx.w * (z - e_vals) / ctx.gamma,
                 (e_vals - plugin) / (1.0 - ctx.gamma))
    return psi, plugin, float(np.mean(d * d))


def onestep_fold(sample: ObservedSample, folds: FoldPlan, v: int, tau: float,
                 fits: NuisanceFits) -> tuple[float, float, float]:
    """One fold's corrected estimate, plug-in estimate, and gamma."""
    ctx = _FoldContext(sample, folds, fits, v)
    e_vals = fits.cond_error(v, tau, ctx.X)
    psi, plugin, _ = _fold_onestep(ctx, e_vals, tau)
    return psi, plugin, ctx.gamma


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def _assemble(method, grid, n, alpha_conf, fold_sizes, gammas,
              psi_by_fold, plugin_by_fold, sigma2_by_fold,
              project_unit_interval=False, extras=None):
    taus = np.array(list(grid), dtype=float)
    weights = fold_sizes / n
    psi = weights @ psi_by_fold
    sigma = np.sqrt(weights @ sigma2_by_fold)
    if project_unit_interval:
        psi = np.clip(psi, 0.0, 1.0)
    z = normal_upper_quantile(alpha_conf)
    cub = psi + z * sigma / np.sqrt(n)
    return CoverageTable(
        method=method, taus=taus, psi=psi, sigma=sigma, cub=cub, n=n,
        alpha_conf=alpha_conf, fold_sizes=fold_sizes, gamma_by_fold=gammas,
        psi_by_fold=psi_by_fold, plugin_by_fold=plugin_by_fold,
        extras=dict(extras or {}),
    )


def _run_folds(sample, folds, grid, fits, fold_fn):
    """Apply fold_fn(ctx, e_vals, tau) over every (fold, tau) pair."""
    V, T = folds.V, len(grid)
    psi_by_fold = np.zeros((V, T))
    plugin_by_fold = np.zeros((V, T))
    sigma2_by_fold = np.zeros((V, T))
    gammas = np.zeros(V)
    fold_sizes = folds.sizes().astype(float)
    for v in range(V):
        ctx = _FoldContext(sample, folds, fits, v)
        gammas[v] = ctx.gamma
        for ti, tau in enumerate(grid):
            e_vals = fits.cond_error(v, tau, ctx.X)
            psi, plugin, s2 = fold_fn(ctx, e_vals, tau)
            psi_by_fold[v, ti] = psi
            plugin_by_fold[v, ti] = plugin
            sigma2_by_fold[v, ti] = s2
    return fold_sizes, gammas, psi_by_fold, plugin_by_fold, sigma2_by_fold


def onestep_estimate(sample: ObservedSample, folds: FoldPlan,
                     grid: ThresholdGrid, fits: NuisanceFits,
                     targets: RiskTargets,
                     project_unit_interval: bool = False) -> CoverageTable:
    """Cross-fit one-step corrected coverage table over the grid.

    The point estimate may fall outside [0, 1]; pass
    ``project_unit_interval=True`` to clip it (off by default).
    """
    parts = _run_folds(sample, folds, grid, fits, _fold_onestep)
    return _assemble("onestep", grid, sample.n, targets.alpha_conf, *parts,
                     project_unit_interval=project_unit_interval)


def plugin_estimate(sample: ObservedSample, folds: FoldPlan,
                    grid: ThresholdGrid, fits: NuisanceFits,
                    targets: RiskTargets) -> CoverageTable:
    """Plug-in baseline: same pipeline without the one-step correction."""

    def fold_fn(ctx, e_vals, tau):
        psi, plugin, s2 = _fold_onestep(ctx, e_vals, tau)
        return plugin, plugin, s2

    parts = _run_folds(sample, folds, grid, fits, fold_fn)
    return _assemble("plugin", grid, sample.n, targets.alpha_conf, *parts)


def weighted_plugin_estimate(sample: ObservedSample, folds: FoldPlan,
                             grid: ThresholdGrid, fits: NuisanceFits,
                             targets: RiskTargets) -> CoverageTable:
    """Importance-weighted baseline: fold mean of W * z over source units.

    The weights are unnormalized, so fold values may exceed 1.  Standard
    errors reuse the influence-term machinery with the centering constant
    replaced by this estimate.
    """

    def fold_fn(ctx, e_vals, tau):
        z = ctx.labels(tau)
        psi = float((ctx.w[ctx.src] * z[ctx.src]).mean())
        d = np.where(ctx.src, ctx.w * (z - e_vals) / ctx.gamma,
                     (e_vals - psi) / (1.0 - ctx.gamma))
        return psi, psi, float(np.mean(d * d))

    parts = _run_folds(sample, folds, grid, fits, fold_fn)
    return _assemble("wplugin", grid, sample.n, targets.alpha_conf, *parts)


# ---------------------------------------------------------------------------
# Threshold selection
# ---------------------------------------------------------------------------

def select_threshold(table: CoverageTable, targets: RiskTargets) -> ThresholdDecision:
    """Largest grid threshold whose whole prefix has CUB < alpha_error.

    Returns the zero sentinel when even the smallest grid point fails, which
    corresponds to the most conservative threshold set on offer.
    """
    feasible = table.cub < targets.alpha_error
    prefix_ok = np.logical_and.accumulate(feasible)
    extras = dict(table.extras)
    extras["alpha_error"] = targets.alpha_error
    audited = CoverageTable(
        method=table.method, taus=table.taus, psi=table.psi, sigma=table.sigma,
        cub=table.cub, n=table.n, alpha_conf=table.alpha_conf,
        fold_sizes=table.fold_sizes, gamma_by_fold=table.gamma_by_fold,
        psi_by_fold=table.psi_by_fold, plugin_by_fold=table.plugin_by_fold,
        extras=extras,
    )
    if not prefix_ok.any():
        return ThresholdDecision(ZERO_SENTINEL, True, table.method, audited)
    tau_hat = float(table.taus[np.flatnonzero(prefix_ok)[-1]])
    return ThresholdDecision(tau_hat, False, table.method, audited)
