"""Fréchet distance between Gaussian fits of two embedding corpora.

The trace term uses the symmetric product ``sqrt(A) B sqrt(A)``. Its
eigenvalues match those of ``A B``, but every eigenproblem stays symmetric
and real.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .exceptions import DataError, InvariantError
from .spfeat import FeatureSet

DEFAULT_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    corpus_name: str
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise DataError(f"{self.corpus_name}: embeddings must be a 2-D array, got shape {v.shape}")
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def from_feature_set(cls, fs: FeatureSet) -> "EmbeddingSet":
        return cls(fs.corpus_name, fs.X)


@dataclass(frozen=True, eq=False)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int = 0

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DataError(f"mean of shape {mean.shape} and covariance of shape {cov.shape} disagree")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", (cov + cov.T) / 2)

    @property
    def dim(self) -> int:
        return self.mean.size


def fit_stats(data: Union[EmbeddingSet, FeatureSet, np.ndarray]) -> GaussianStats:
    """Column mean and unbiased (``n - 1``) covariance, symmetrized."""
    if isinstance(data, FeatureSet):
        data = EmbeddingSet.from_feature_set(data)
    X = data.vectors if isinstance(data, EmbeddingSet) else np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"expected an (n, d) array, got shape {X.shape}")
    n = X.shape[0]
    if n < 2:
        raise DataError(f"need at least 2 samples for a covariance, got {n}")
    finite = np.isfinite(X).all(axis=1)
    if not finite.all():
        raise DataError(f"non-finite entry in row {int(np.flatnonzero(~finite)[0])}")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (n - 1)
    return GaussianStats(mean, (cov + cov.T) / 2, n)


def _psd_eigh(m: np.ndarray, eps: float, what: str):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DataError(f"{what}: expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if np.abs(m - m.T).max(initial=0.0) > 1e-9 * scale:
        raise DataError(f"{what}: matrix is not symmetric")
    lam, V = np.linalg.eigh((m + m.T) / 2)
    top = max(float(lam.max(initial=0.0)), 0.0)
    if lam.size and lam.min() < -eps * top - np.finfo(float).eps * scale * m.shape[0]:
        raise DataError(f"{what}: matrix is not positive semi-definite (eigenvalue {lam.min():.3g})")
    return np.clip(lam, 0.0, None), V


def sqrtm_psd(m: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues slightly below zero are clamped; anything below
    ``-eps * max_eigenvalue`` is rejected as a non-PSD input.
    """
    lam, V = _psd_eigh(m, eps, "sqrtm_psd")
    root = (V * np.sqrt(lam)) @ V.T
    return (root + root.T) / 2


def _rank_deficient(cov: np.ndarray) -> bool:
    return np.linalg.matrix_rank(cov, hermitian=True) < cov.shape[0]


def fid(a: GaussianStats, b: GaussianStats, eps: float = DEFAULT_EPS) -> float:
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)``.

    ``eps * I`` is added to both covariances when either is rank-deficient.
    Tiny negative results (above ``-1e-8``) from rounding are reported as 0.
    """
    if a.dim != b.dim:
        raise DataError(f"dimension mismatch: {a.dim} vs {b.dim}")
    ca, cb = a.cov, b.cov
    if _rank_deficient(ca) or _rank_deficient(cb):
        ca = ca + eps * np.eye(a.dim)
        cb = cb + eps * np.eye(b.dim)
    diff = a.mean - b.mean
    root_a = sqrtm_psd(ca, eps)
    inner = root_a @ cb @ root_a
    lam, _ = _psd_eigh((inner + inner.T) / 2, eps, "fid")
    value = float(diff @ diff + np.trace(ca) + np.trace(cb) - 2.0 * np.sqrt(lam).sum())
    if value < 0.0:
        if value > -1e-8:
            return 0.0
        raise InvariantError(f"negative Fréchet distance {value}")
    return value


@dataclass(frozen=True, eq=False)
class FidTable:
    names: List[str]
    values: np.ndarray

    def to_text(self, digits: int = 4) -> str:
        cells = [[f"{v:.{digits}f}" for v in row] for row in self.values]
        first = max([len("set")] + [len(n) for n in self.names])
        widths = [max(len(n), *(len(r[j]) for r in cells)) for j, n in enumerate(self.names)]
        lines = ["  ".join(["set".ljust(first)] + [n.rjust(w) for n, w in zip(self.names, widths)])]
        for name, row in zip(self.names, cells):
            lines.append("  ".join([name.ljust(first)] + [c.rjust(w) for c, w in zip(row, widths)]))
        return "\n".join(lines)

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["set"] + list(self.names))
            for name, row in zip(self.names, self.values):
                w.writerow([name] + ["%.9g" % v for v in row])
        return path


def fid_table(sets: Sequence[Union[EmbeddingSet, FeatureSet]], names: Optional[Sequence[str]] = None,
              eps: float = DEFAULT_EPS) -> FidTable:
    """Symmetric matrix of pairwise Fréchet distances."""
    sets = [EmbeddingSet.from_feature_set(s) if isinstance(s, FeatureSet) else s for s in sets]
    if names is None:
        names = [s.corpus_name for s in sets]
    dims = {s.dim for s in sets}
    if len(dims) > 1:
        raise DataError(f"embedding dimensions differ: {sorted(dims)}")
    stats = [fit_stats(s) for s in sets]
    n = len(stats)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            out[i, j] = out[j, i] = fid(stats[i], stats[j], eps)
    return FidTable(list(names), out)
