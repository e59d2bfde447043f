"""Core domain types shared by every estimator.

Data model: each unit is (a, x, score) where ``a`` indicates the population
the unit was drawn from (1 = source, labeled; 0 = target, unlabeled), ``x``
is a covariate vector, and ``score`` is the value of a fixed scoring function
s(x, y) evaluated at the unit's observed label.  Scores exist only for source
units; the scoring model itself is never touched by this library.

Prediction sets are threshold sets C_tau(x) = {y : s(x, y) >= tau}, so a unit
is miscovered exactly when its score falls strictly below the threshold.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class ShiftsetError(Exception):
    """Base class for all library-specific errors."""


class ConfigurationError(ShiftsetError, ValueError):
    """Invalid configuration (bad fold counts, risk levels, grids, ...)."""


class DataError(ShiftsetError, ValueError):
    """Malformed or inadmissible input data."""


class DomainError(ShiftsetError, ValueError):
    """Numeric argument outside its mathematical domain."""


class UnfittableFoldError(ShiftsetError, RuntimeError):
    """A fold complement lacks the units needed to fit a nuisance model."""


class DegenerateFoldError(ShiftsetError, RuntimeError):
    """A fold lacks source or target units, so a fold estimate is undefined."""


class EmptyAcceptanceError(ShiftsetError, RuntimeError):
    """Rejection sampling accepted no units."""


class BoundViolationError(ShiftsetError, RuntimeError):
    """An observed importance weight exceeded the fixed rejection bound."""


# ---------------------------------------------------------------------------
# Deterministic RNG streams
# ---------------------------------------------------------------------------

def _purpose_key(purpose: str) -> int:
    # CRC32 gives a stable 32-bit key for a named substream across runs.
    return zlib.crc32(purpose.encode("utf-8"))


@dataclass(frozen=True)
class RngStream:
    """A named, replayable random stream.

    Identical (seed, path) always yields an identical sequence; distinct
    paths yield independent-quality streams.  Substreams are derived with
    :meth:`child`, so parallel replications can share one root seed without
    any coordination.
    """

    seed: int
    path: tuple[int, ...] = ()

    @classmethod
    def root(cls, seed: int, purpose: str = "", index: int = 0) -> "RngStream":
        stream = cls(int(seed))
        if purpose or index:
            stream = stream.child(purpose, index)
        return stream

    def child(self, purpose: str, index: int = 0) -> "RngStream":
        if index < 0:
            raise ConfigurationError("substream index must be nonnegative")
        return RngStream(self.seed, self.path + (_purpose_key(purpose), int(index)))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(seq))


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObservedUnit:
    """One observation: population flag, covariates, and (source-only) score."""

    a: int
    x: np.ndarray
    score: float | None = None

    def __post_init__(self):
        if self.a not in (0, 1):
            raise DataError(f"population indicator must be 0 or 1, got {self.a}")
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(-1))
        if self.a == 1 and (self.score is None or not np.isfinite(self.score)):
            raise DataError("source units (a=1) must carry a finite score")
        if self.a == 0 and self.score is not None:
            raise DataError("target units (a=0) must not carry a score")


@dataclass(frozen=True)
class ObservedSample:
    """Array-backed sample of n units.

    ``score`` holds NaN exactly where ``a == 0``; no estimator ever reads
    those entries.  Both populations must be represented.
    """

    a: np.ndarray
    x: np.ndarray
    score: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.int8)
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        score = np.asarray(self.score, dtype=float)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "score", score)
        n = a.shape[0]
        if x.shape[0] != n or score.shape[0] != n:
            raise DataError("a, x and score must have one row per unit")
        if not np.isin(a, (0, 1)).all():
            raise DataError("population indicator must be 0/1")
        has_score = np.isfinite(score)
        if not np.array_equal(has_score, a == 1):
            raise DataError("a score must be present exactly for source units")
        if (a == 1).sum() < 1 or (a == 0).sum() < 1:
            raise DataError("sample must contain at least one source and one target unit")

    @classmethod
    def from_units(cls, units: Iterable[ObservedUnit]) -> "ObservedSample":
        units = list(units)
        if not units:
            raise DataError("empty sample")
        p = units[0].x.shape[0]
        for u in units:
            if u.x.shape[0] != p:
                raise DataError("all units must share one covariate dimension")
        a = np.array([u.a for u in units], dtype=np.int8)
        x = np.stack([u.x for u in units])
        score = np.array([np.nan if u.score is None else u.score for u in units])
        return cls(a=a, x=x, score=score)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def n_source(self) -> int:
        return int((self.a == 1).sum())

    @property
    def n_target(self) -> int:
        return int((self.a == 0).sum())

    @property
    def is_source(self) -> np.ndarray:
        return self.a == 1

    def unit(self, i: int) -> ObservedUnit:
        s = float(self.score[i]) if self.a[i] == 1 else None
        return ObservedUnit(a=int(self.a[i]), x=self.x[i].copy(), score=s)


# ---------------------------------------------------------------------------
# Threshold grids, folds, risk targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdGrid:
    """Strictly increasing finite set of candidate thresholds."""

    taus: tuple[float, ...]

    def __post_init__(self):
        taus = tuple(float(t) for t in self.taus)
        object.__setattr__(self, "taus", taus)
        if len(taus) == 0:
            raise ConfigurationError("threshold grid must be non-empty")
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise ConfigurationError("threshold grid must be strictly increasing")

    def __len__(self) -> int:
        return len(self.taus)

    def __iter__(self):
        return iter(self.taus)

    @classmethod
    def from_range(cls, lo: float, hi: float, step: float) -> "ThresholdGrid":
        """Evenly spaced grid lo, lo+step, ..., up to and including hi."""
        if step <= 0 or hi < lo:
            raise ConfigurationError("grid requires step > 0 and hi >= lo")
        k = int(round((hi - lo) / step))
        taus = [round(lo + i * step, 12) for i in range(k + 1)]
        if taus[-1] > hi + 1e-12:
            taus = taus[:-1]
        return cls(tuple(taus))

    @classmethod
    def from_score_quantiles(cls, sample: ObservedSample, k: int) -> "ThresholdGrid":
        """Convenience grid at k evenly spaced quantiles of the observed scores.

        Provided for users without an a-priori grid; no claim is made that a
        data-driven grid is preferable to a fixed one.
        """
        if k < 1:
            raise ConfigurationError("need at least one quantile")
        scores = sample.score[sample.is_source]
        qs = np.linspace(0.0, 1.0, k + 2)[1:-1]
        taus = np.unique(np.quantile(scores, qs))
        return cls(tuple(float(t) for t in taus))


@dataclass(frozen=True)
class FoldPlan:
    """Partition of unit indices into V folds of near-equal size."""

    V: int
    assignment: np.ndarray

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=np.int64)
        object.__setattr__(self, "assignment", assignment)
        if self.V < 2:
            raise ConfigurationError("fold count must be at least 2")
        counts = np.bincount(assignment, minlength=self.V)
        if counts.size > self.V or counts.min() == 0:
            raise ConfigurationError("assignment does not cover every fold")
        if counts.max() - counts.min() > 1:
            raise ConfigurationError("fold sizes must differ by at most one")

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def indices(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == v)

    def complement(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != v)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.V)


@dataclass(frozen=True)
class RiskTargets:
    """Miscoverage level and confidence level for the PAC criterion."""

    alpha_error: float
    alpha_conf: float

    def __post_init__(self):
        if not (0.0 < self.alpha_error < 1.0):
            raise ConfigurationError("alpha_error must lie strictly inside (0, 1)")
        if not (0.0 < self.alpha_conf < 1.0):
            raise ConfigurationError("alpha_conf must lie strictly inside (0, 1)")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def miscoverage_indicator(score: float, tau: float) -> int:
    """1 if the scored label falls outside C_tau, i.e. score < tau.

    The boundary score == tau is covered (kept in the set).
    """
    return int(score < tau)


def miscoverage_vector(scores: np.ndarray, tau: float) -> np.ndarray:
    """Vectorized miscoverage labels Z_tau for an array of scores."""
    return (np.asarray(scores) < tau).astype(float)


def make_folds(n: int, V: int, rng: RngStream) -> FoldPlan:
    """Randomly partition [n] into V folds whose sizes differ by at most 1."""
    if V < 2:
        raise ConfigurationError("fold count must be at least 2")
    if n < V:
        raise ConfigurationError(f"cannot split {n} units into {V} folds")
    perm = rng.generator().permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % V
    return FoldPlan(V=V, assignment=assignment)


def empirical_gamma(sample: ObservedSample, indices: Sequence[int]) -> float:
    """Fraction of source units among the given indices."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ConfigurationError("empirical_gamma requires a non-empty index set")
    return float(np.mean(sample.a[idx] == 1))
