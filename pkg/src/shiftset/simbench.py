"""Built-in data-generating processes, oracle quantities, and the
replication harness that compares all seven methods.

Three DGPs are provided, each with a three-label outcome and a fixed
scoring function that deliberately differs from the true conditional label
probabilities:

* ``highdim-sparse`` - 20 exponential covariates, the first two with rate
  2 in the target and rate 1 in the source (importance weights bounded
  by 4);
* ``lowdim`` - trivariate normal covariates whose target covariance is half
  the source covariance (weights bounded by 2^{3/2});
* ``lowdim-noshift`` - the same outcome model with identical covariate
  distributions.

Oracle coverage errors marginalize the three labels analytically and
Monte-Carlo only over target covariates; the oracle threshold follows the
sampled-label quantile recipe instead, so the two are computed differently
on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .conformal import (
    CalibrationSet,
    inductive_cp_threshold,
    weighted_quantile_cutoffs,
)
from .core import (
    BoundViolationError,
    ConfigurationError,
    DegenerateFoldError,
    EmptyAcceptanceError,
    ObservedSample,
    RiskTargets,
    RngStream,
    ThresholdGrid,
    UnfittableFoldError,
    empirical_gamma,
    make_folds,
)
from .crossfit import fit_nuisances, odds_weight
from .learners import BinaryLearnerSpec
from .onestep import (
    onestep_estimate,
    plugin_estimate,
    select_threshold,
    weighted_plugin_estimate,
)
from .rejsamp import RsConfig, rs_estimate, rs_prepare
from .tmle import tmle_estimate

DGP_KINDS = ("highdim-sparse", "lowdim", "lowdim-noshift")
ALL_METHODS = ("onestep", "tmle", "rs", "plugin", "wplugin", "icp", "wcp")

_FOLD_METHODS = frozenset({"onestep", "tmle", "plugin", "wplugin"})

_LOWDIM_COV = np.array([
    [1.0, 0.2, -0.2],
    [0.2, 1.0, 0.2],
    [-0.2, 0.2, 1.0],
])
_LOWDIM_CHOL = np.linalg.cholesky(_LOWDIM_COV)
_LOWDIM_PREC = np.linalg.inv(_LOWDIM_COV)


@dataclass(frozen=True)
class DgpSpec:
    """One of the built-in simulation data-generating processes."""

    kind: str

    def __post_init__(self):
        if self.kind not in DGP_KINDS:
            raise ConfigurationError(f"unknown DGP kind {self.kind!r}")

    @property
    def p(self) -> int:
        return 20 if self.kind == "highdim-sparse" else 3

    # -- covariates ---------------------------------------------------

    def draw_x(self, n: int, a: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        a = np.asarray(a)
        if self.kind == "highdim-sparse":
            X = gen.exponential(scale=1.0, size=(n, 20))
            # rate 2^{1-a} for the two shifted coordinates: halve the scale
            # for target units.
            shift_scale = np.where(a == 1, 1.0, 0.5)
            X[:, 0] *= shift_scale
            X[:, 1] *= shift_scale
            return X
        Z = gen.standard_normal((n, 3))
        X = Z @ _LOWDIM_CHOL.T
        if self.kind == "lowdim":
            factor = np.where(a == 1, 1.0, np.sqrt(0.5))
            X *= factor[:, None]
        return X

    # -- outcome model and scoring function ---------------------------

    def label_probs(self, X: np.ndarray) -> np.ndarray:
        """True conditional probabilities of the three labels."""
        X = np.atleast_2d(X)
        if self.kind == "highdim-sparse":
            eta1 = 2.0 + 2.0 * X[:, 0] - 1.1 * X[:, 1]
            eta2 = -2.1 - 2.0 * X[:, 0] + 1.2 * X[:, 2]
        else:
            x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
            eta1 = (1.4 * x1 + 1.5 * x2 - 1.5 * x3
                    + 0.3 * (1.0 - x1) ** 2 + 0.015 * x2 * x3)
            eta2 = (-0.1 - 1.3 * x1 - 2.2 * x2 + 0.5 * x3
                    + 0.5 * (1.0 - x2) ** 2 + 0.03 * x1 * x3)
        return _softmax3(eta1, eta2)

    def score_table(self, X: np.ndarray) -> np.ndarray:
        """s(x, y) for the three labels; rows sum to one."""
        X = np.atleast_2d(X)
        if self.kind == "highdim-sparse":
            u1 = 0.02 + 2.1 * X[:, 0] - 0.91 * X[:, 1] + 0.02 * X[:, 3]
            u2 = -0.03 - 1.95 * X[:, 0] + 1.25 * X[:, 2] + 0.1 * X[:, 4]
        else:
            x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
            u1 = 0.02 + 1.2 * x1 + 1.91 * x2 - 1.6 * x3
            u2 = -0.03 - 1.5 * x1 - 2.4 * x2 + 0.3 * x3
        return _softmax3(u1, u2)

    # -- true nuisance functions ---------------------------------------

    def true_likelihood_ratio(self, X: np.ndarray) -> np.ndarray:
        """Target/source covariate density ratio."""
        X = np.atleast_2d(X)
        if self.kind == "highdim-sparse":
            return 4.0 * np.exp(-(X[:, 0] + X[:, 1]))
        if self.kind == "lowdim":
            quad = np.einsum("ij,jk,ik->i", X, _LOWDIM_PREC, X)
            return 2.0**1.5 * np.exp(-0.5 * quad)
        return np.ones(X.shape[0])

    def true_propensity(self, X: np.ndarray) -> np.ndarray:
        # Equal population shares, so g = 1 / (1 + w).
        return 1.0 / (1.0 + self.true_likelihood_ratio(X))

    def true_cond_error(self, X: np.ndarray, tau: float) -> np.ndarray:
        probs = self.label_probs(X)
        scores = self.score_table(X)
        return np.sum(probs * (scores < tau), axis=1)


def _softmax3(eta1: np.ndarray, eta2: np.ndarray) -> np.ndarray:
    raw = np.column_stack([np.zeros_like(eta1), eta1, eta2])
    raw -= raw.max(axis=1, keepdims=True)
    e = np.exp(raw)
    return e / e.sum(axis=1, keepdims=True)


def dgp_draw(spec: DgpSpec, n: int, rng: RngStream) -> ObservedSample:
    """Draw n units; labels (hence scores) exist only for source units."""
    if n < 1:
        raise ConfigurationError("need at least one unit")
    gen = rng.generator()
    a = gen.binomial(1, 0.5, size=n).astype(np.int8)
    X = spec.draw_x(n, a, gen)
    probs = spec.label_probs(X)
    u = gen.uniform(size=n)
    cum = np.cumsum(probs, axis=1)
    y = (u[:, None] > cum).sum(axis=1)
    scores = spec.score_table(X)[np.arange(n), y]
    score = np.where(a == 1, scores, np.nan)
    return ObservedSample(a=a, x=X, score=score)


# ---------------------------------------------------------------------------
# Oracle quantities
# ---------------------------------------------------------------------------

_CHUNK = 200_000


def oracle_psi_curve(spec: DgpSpec, taus, M: int, rng: RngStream) -> np.ndarray:
    """True coverage-error curve on a grid, sharing the covariate draws.

    Labels are marginalized analytically; randomness enters only through M
    target covariate draws, so the curve is nondecreasing in tau by
    construction.
    """
    if M < 1:
        raise ConfigurationError("M must be positive")
    taus = np.asarray(list(taus), dtype=float)
    gen = rng.generator()
    totals = np.zeros(taus.shape[0])
    done = 0
    while done < M:
        m = min(_CHUNK, M - done)
        X = spec.draw_x(m, np.zeros(m, dtype=int), gen)
        probs = spec.label_probs(X)
        scores = spec.score_table(X)
        for i, tau in enumerate(taus):
            totals[i] += float(np.sum(probs * (scores < tau)))
        done += m
    return totals / M


def oracle_psi(spec: DgpSpec, tau: float, M: int, rng: RngStream) -> float:
    """True coverage error of the threshold-tau set in the target population."""
    return float(oracle_psi_curve(spec, [tau], M, rng)[0])


def oracle_tau0(spec: DgpSpec, alpha_error: float, M: int, rng: RngStream) -> float:
    """Optimal threshold: the alpha_error quantile of sampled target scores.

    Labels are drawn, not marginalized, matching the Monte-Carlo recipe used
    to calibrate the simulation studies.
    """
    if M < 1:
        raise ConfigurationError("M must be positive")
    gen = rng.generator()
    out = np.empty(M)
    done = 0
    while done < M:
        m = min(_CHUNK, M - done)
        X = spec.draw_x(m, np.zeros(m, dtype=int), gen)
        probs = spec.label_probs(X)
        u = gen.uniform(size=m)
        y = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
        out[done:done + m] = spec.score_table(X)[np.arange(m), y]
        done += m
    return float(np.quantile(out, alpha_error))


class OracleEvaluator:
    """Shared target-population draws for scoring selected thresholds.

    Built once per study; evaluates the true coverage error of any fixed
    threshold, and of per-covariate cutoffs (for weighted conformal sets).
    """

    def __init__(self, spec: DgpSpec, M: int, rng: RngStream):
        gen = rng.generator()
        self.spec = spec
        self.M = int(M)
        self.X = spec.draw_x(self.M, np.zeros(self.M, dtype=int), gen)
        self.probs = spec.label_probs(self.X)
        self.scores = spec.score_table(self.X)
        flat = self.scores.reshape(-1)
        order = np.argsort(flat, kind="stable")
        self._sorted_scores = flat[order]
        self._cum_weights = np.cumsum(self.probs.reshape(-1)[order]) / self.M

    def psi_at(self, tau: float) -> float:
        idx = int(np.searchsorted(self._sorted_scores, tau, side="left"))
        return float(self._cum_weights[idx - 1]) if idx > 0 else 0.0

    def psi_of_cutoffs(self, cutoffs: np.ndarray) -> float:
        cutoffs = np.asarray(cutoffs, dtype=float).reshape(-1, 1)
        miss = np.sum(self.probs * (self.scores < cutoffs), axis=1)
        return float(miss.mean())


# ---------------------------------------------------------------------------
# Wilson interval
# ---------------------------------------------------------------------------

def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n < 1:
        raise ConfigurationError("n must be positive")
    if not (0 <= k <= n):
        raise ConfigurationError("k must lie in [0, n]")
    if not (0.0 < level < 1.0):
        raise ConfigurationError("level must lie in (0, 1)")
    z = float(ndtri(0.5 + level / 2.0))
    phat = k / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    # the interval is exact at the boundary counts
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return (lo, hi)


# ---------------------------------------------------------------------------
# Replication harness
# ---------------------------------------------------------------------------

_FAILURE_ERRORS = (DegenerateFoldError, EmptyAcceptanceError,
                   BoundViolationError, UnfittableFoldError)


@dataclass(frozen=True)
class ReplicationRow:
    method: str
    n: int
    rep: int
    tau_hat: float
    sentinel: bool
    true_error: float | None
    covered: bool
    failed: bool
    failure: str = ""
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AggregateRow:
    method: str
    n: int
    reps: int
    failures: int
    covered: int
    proportion: float
    wilson_lo: float
    wilson_hi: float
    tau_mean: float
    tau_median: float
    sentinel_count: int


@dataclass(frozen=True)
class ReplicationReport:
    rows: tuple[ReplicationRow, ...]
    aggregates: tuple[AggregateRow, ...]
    config: dict


@dataclass(frozen=True)
class StudyConfig:
    """Everything run_study needs besides the DGP and the RNG."""

    grid: ThresholdGrid
    targets: RiskTargets
    g_spec: BinaryLearnerSpec = BinaryLearnerSpec()
    e_spec: BinaryLearnerSpec = BinaryLearnerSpec()
    V: int = 2
    delta: float = 0.01
    rs_config: RsConfig = field(default_factory=RsConfig)
    oracle_m: int = 100_000


def _ensure_methods(methods) -> tuple[str, ...]:
    methods = tuple(methods)
    for m in methods:
        if m not in ALL_METHODS:
            raise ConfigurationError(f"unknown method {m!r}")
    if not methods:
        raise ConfigurationError("need at least one method")
    return methods


def _run_one_method(method, sample, folds, fits, spec, cfg, oracle, rng_rep):
    """Returns (tau_hat, sentinel, true_error, info)."""
    targets = cfg.targets
    if method in _FOLD_METHODS:
        if method == "onestep":
            table = onestep_estimate(sample, folds, cfg.grid, fits, targets)
        elif method == "tmle":
            table = tmle_estimate(sample, folds, cfg.grid, fits, targets)
        elif method == "plugin":
            table = plugin_estimate(sample, folds, cfg.grid, fits, targets)
        else:
            table = weighted_plugin_estimate(sample, folds, cfg.grid, fits, targets)
        dec = select_threshold(table, targets)
        info = {}
        if method == "tmle":
            info["fallback_count"] = int(table.extras["fallback"].sum())
        return dec.tau_hat, dec.is_sentinel, oracle.psi_at(dec.tau_hat), info

    if method == "rs":
        run = rs_prepare(sample, cfg.rs_config, cfg.grid, cfg.g_spec,
                         cfg.e_spec, rng_rep)
        table = rs_estimate(run, sample, cfg.grid, targets)
        dec = select_threshold(table, targets)
        info = {"n_accepted": run.n_accepted, "bhat": run.bhat}
        return dec.tau_hat, dec.is_sentinel, oracle.psi_at(dec.tau_hat), info

    cal_idx = folds.indices(0)
    cal_src = cal_idx[sample.a[cal_idx] == 1]
    if cal_src.size == 0:
        raise DegenerateFoldError("calibration fold has no source units")
    cal_scores = sample.score[cal_src]

    if method == "icp":
        res = inductive_cp_threshold(CalibrationSet(cal_scores), targets)
        return res.tau, res.is_sentinel, oracle.psi_at(res.tau), {"k": res.k}

    # weighted conformal: importance weights from the fold-0 (out-of-fold)
    # propensity fit, evaluated at calibration and oracle covariates.
    gamma0 = empirical_gamma(sample, cal_idx)
    w_cal = odds_weight(fits.propensity(0, sample.x[cal_src]), gamma0)
    w_eval = odds_weight(fits.propensity(0, oracle.X), gamma0)
    cutoffs = weighted_quantile_cutoffs(cal_scores, w_cal, w_eval,
                                        targets.alpha_error)
    true_error = oracle.psi_of_cutoffs(cutoffs)
    tau_descr = float(np.median(np.maximum(cutoffs, 0.0)))
    return tau_descr, False, true_error, {"cutoff_median": tau_descr}


def run_study(spec: DgpSpec, ns, methods, replications: int,
              cfg: StudyConfig, rng: RngStream) -> ReplicationReport:
    """Run every method on the same simulated datasets and score each
    selected set against the shared oracle.

    Failures (degenerate folds, empty acceptance, bound violations) are
    recorded as uncovered rows, never dropped: they stay in the denominator
    of the reported proportions.
    """
    methods = _ensure_methods(methods)
    ns = [int(n) for n in (ns if np.iterable(ns) else [ns])]
    if replications < 1:
        raise ConfigurationError("need at least one replication")

    oracle = OracleEvaluator(spec, cfg.oracle_m, rng.child("oracle"))
    needs_fits = bool(_FOLD_METHODS.intersection(methods) or "wcp" in methods)

    rows: list[ReplicationRow] = []
    for n in ns:
        for rep in range(replications):
            sample = dgp_draw(spec, n, rng.child(f"dgp-n{n}", rep))
            folds = make_folds(n, cfg.V, rng.child(f"folds-n{n}", rep))
            fits = None
            fit_error: Exception | None = None
            if needs_fits:
                try:
                    fits = fit_nuisances(sample, folds, cfg.grid, cfg.g_spec,
                                         cfg.e_spec, cfg.delta,
                                         rng.child(f"nuisance-n{n}", rep))
                except _FAILURE_ERRORS as exc:
                    fit_error = exc
            for method in methods:
                rng_rep = rng.child(f"method-{method}-n{n}", rep)
                try:
                    if fit_error is not None and (
                            method in _FOLD_METHODS or method == "wcp"):
                        raise fit_error
                    tau_hat, sentinel, err, info = _run_one_method(
                        method, sample, folds, fits, spec, cfg, oracle, rng_rep)
                except _FAILURE_ERRORS as exc:
                    rows.append(ReplicationRow(
                        method=method, n=n, rep=rep, tau_hat=0.0,
                        sentinel=False, true_error=None, covered=False,
                        failed=True, failure=type(exc).__name__))
                    continue
                rows.append(ReplicationRow(
                    method=method, n=n, rep=rep, tau_hat=tau_hat,
                    sentinel=sentinel, true_error=err,
                    covered=bool(err <= cfg.targets.alpha_error),
                    failed=False, info=info))

    aggregates = []
    for n in ns:
        for method in methods:
            sub = [r for r in rows if r.method == method and r.n == n]
            covered = sum(r.covered for r in sub)
            failures = sum(r.failed for r in sub)
            lo, hi = wilson_interval(covered, len(sub), 0.95)
            taus = np.array([r.tau_hat for r in sub if not r.failed])
            aggregates.append(AggregateRow(
                method=method, n=n, reps=len(sub), failures=failures,
                covered=covered, proportion=covered / len(sub),
                wilson_lo=lo, wilson_hi=hi,
                tau_mean=float(taus.mean()) if taus.size else 0.0,
                tau_median=float(np.median(taus)) if taus.size else 0.0,
                sentinel_count=sum(r.sentinel for r in sub),
            ))

    config = {
        "dgp": spec.kind,
        "ns": ns,
        "methods": list(methods),
        "replications": replications,
        "alpha_error": cfg.targets.alpha_error,
        "alpha_conf": cfg.targets.alpha_conf,
        "V": cfg.V,
        "delta": cfg.delta,
        "grid": list(cfg.grid),
        "oracle_m": cfg.oracle_m,
        "seed": rng.seed,
    }
    return ReplicationReport(rows=tuple(rows), aggregates=tuple(aggregates),
                             config=config)
