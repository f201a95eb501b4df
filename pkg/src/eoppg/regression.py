"""Polynomial-sieve ridge regression and K-fold partitioning."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Optional

import numpy as np


class RankDeficientError(np.linalg.LinAlgError):
    """Raised when an unpenalised design cannot be solved; raise the ridge penalty."""


@dataclass(frozen=True)
class FeatureMap:
    """All monomials of total degree <= ``degree`` in ``n_inputs`` variables.

    With ``intercept=True`` the constant monomial comes first, so the zero
    input maps to ``(1, 0, ..., 0)``.
    """

    n_inputs: int
    degree: int = 2
    intercept: bool = True

    def __post_init__(self):
        if self.n_inputs < 1 or self.degree < 0:
            raise ValueError("need n_inputs >= 1 and degree >= 0")

    @property
    def exponents(self) -> list[tuple[int, ...]]:
        terms = []
        first = 0 if self.intercept else 1
        for d in range(first, self.degree + 1):
            terms.extend(combinations_with_replacement(range(self.n_inputs), d))
        return terms

    @property
    def n_features(self) -> int:
        return len(self.exponents)

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} inputs, got {x.shape[1]}")
        out = np.ones((x.shape[0], self.n_features))
        for col, term in enumerate(self.exponents):
            for k in term:
                out[:, col] *= x[:, k]
        return out


@dataclass(frozen=True)
class RidgeModel:
    coef: np.ndarray  # (n_features, n_outputs)
    lam: float
    fmap: Optional[FeatureMap] = None

    @property
    def n_outputs(self) -> int:
        return self.coef.shape[1]

    def predict(self, x) -> np.ndarray:
        """``(N, n_outputs)`` predictions; ``x`` is raw inputs when the model
        carries a feature map, otherwise a feature matrix."""
        X = self.fmap.transform(x) if self.fmap is not None else np.asarray(x, dtype=float)
        return X @ self.coef


def fit_ridge(features, targets, lam: float, intercept_col: Optional[int] = 0,
              fmap: Optional[FeatureMap] = None) -> RidgeModel:
    """Solve ``(X'X + lam P) beta = X'Y`` where ``P`` is the identity with the
    intercept column left unpenalised.

    The system is solved as the equivalent augmented least-squares problem
    ``[X; sqrt(lam) P] beta ~ [Y; 0]`` with an SVD-based solver, which avoids
    squaring the condition number of ``X``.
    """
    X = np.asarray(features, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0] or X.shape[0] < 1:
        raise ValueError(f"features/targets row mismatch: {X.shape[0]} vs {Y.shape[0]}")
    if lam < 0:
        raise ValueError("ridge penalty must be >= 0")
    p = X.shape[1]

    if lam > 0:
        penalty = np.sqrt(lam) * np.eye(p)
        if intercept_col is not None:
            penalty = np.delete(penalty, intercept_col, axis=0)
        A = np.vstack([X, penalty])
        B = np.vstack([Y, np.zeros((penalty.shape[0], Y.shape[1]))])
    else:
        A, B = X, Y
    coef, _, rank, _ = np.linalg.lstsq(A, B, rcond=None)
    if rank < p:
        raise RankDeficientError(f"design has rank {rank} < {p} features at lambda={lam}; increase lambda")
    return RidgeModel(coef=coef, lam=float(lam), fmap=fmap)


def fit(fmap: FeatureMap, inputs, targets, lam: float) -> RidgeModel:
    return fit_ridge(fmap.transform(inputs), targets, lam,
                     intercept_col=0 if fmap.intercept else None, fmap=fmap)


def predict(model: RidgeModel, x) -> np.ndarray:
    return model.predict(x)


@dataclass(frozen=True)
class FoldPartition:
    k: int
    assignment: np.ndarray  # trajectory index -> fold index

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def fold(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def complement(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


def partition(n: int, k: int, rng: np.random.Generator) -> FoldPartition:
    if k < 2:
        raise ValueError(f"need K >= 2 folds, got {k}")
    if n < k:
        raise ValueError(f"cannot split {n} trajectories into {k} folds")
    assignment = np.empty(n, dtype=int)
    assignment[rng.permutation(n)] = np.arange(n) % k
    return FoldPartition(k=k, assignment=assignment)
