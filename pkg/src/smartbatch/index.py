"""Exact brute-force K-nearest-neighbour search over feature vectors.

Results are totally ordered by ``(distance, candidate id)`` so ties on
symmetric data are resolved the same way on every run and worker count.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_ids, check_positive_int
from .exceptions import ConfigError, DataError
from .spfeat import FeatureSet, SpFeat

logger = logging.getLogger(__name__)

METRICS = ("euclidean", "histogram_intersection_distance", "chi_squared")
_ALIASES = {
    "l2": "euclidean",
    "hist_intersection": "histogram_intersection_distance",
    "intersection": "histogram_intersection_distance",
    "chi2": "chi_squared",
}

# working-set budget (float64 elements) for broadcasted distance blocks
_BLOCK_ELEMENTS = 4_000_000


def check_metric(metric: str) -> str:
    name = _ALIASES.get(metric, metric)
    if name not in METRICS:
        raise ConfigError(f"unknown metric {metric!r}; choose from {', '.join(METRICS)}")
    return name


def _pairwise_block(Q: np.ndarray, C: np.ndarray, metric: str) -> np.ndarray:
    """Direct (non-expanded) distances between every row of Q and of C."""
    if metric == "euclidean":
        diff = Q[:, None, :] - C[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    if metric == "chi_squared":
        num = (Q[:, None, :] - C[None, :, :]) ** 2
        den = Q[:, None, :] + C[None, :, :]
        terms = np.divide(num, den, out=np.zeros_like(num), where=den != 0)
        return 0.5 * terms.sum(axis=2)
    inter = np.minimum(Q[:, None, :], C[None, :, :]).sum(axis=2)
    mass = np.maximum(Q.sum(axis=1)[:, None], C.sum(axis=1)[None, :])
    out = np.zeros_like(inter)
    np.divide(inter, mass, out=out, where=mass > 0)
    return np.where(mass > 0, np.maximum(1.0 - out, 0.0), 0.0)


def distance(a, b, metric: str = "euclidean") -> float:
    """Dissimilarity between two feature vectors.

    ``euclidean``: ``sqrt(sum((a-b)**2))``.
    ``chi_squared``: ``0.5 * sum((a-b)**2 / (a+b))`` with 0/0 terms taken as 0.
    ``histogram_intersection_distance``: ``1 - sum(min(a, b)) / S`` where
    ``S`` is the larger of the two vectors' total masses. For relative SP-Feat
    vectors with no empty slice that mass is the slice count.
    """
    metric = check_metric(metric)
    if isinstance(a, SpFeat):
        a = a.values
    if isinstance(b, SpFeat):
        b = b.values
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DataError(f"feature length mismatch: {a.size} vs {b.size}")
    return float(_pairwise_block(a[None, :], b[None, :], metric)[0, 0])


@dataclass(frozen=True)
class NeighborList:
    """Candidates for one query, ascending by (distance, id)."""

    query_id: str
    ranked: Tuple[Tuple[str, float], ...]

    @property
    def ids(self) -> List[str]:
        return [c for c, _ in self.ranked]

    @property
    def distances(self) -> np.ndarray:
        return np.array([d for _, d in self.ranked], dtype=np.float64)

    def __len__(self) -> int:
        return len(self.ranked)


def _select(dist_row: np.ndarray, cand_rank: np.ndarray, window: int,
            pool: Optional[np.ndarray] = None) -> np.ndarray:
    """Indices (into ``pool``) of the top-``window`` by (distance, rank)."""
    n = dist_row.shape[0]
    if window < n:
        kth = np.partition(dist_row, window - 1)[window - 1]
        keep = np.flatnonzero(dist_row <= kth)
    else:
        keep = np.arange(n)
    ranks = cand_rank[keep] if pool is None else cand_rank[pool[keep]]
    order = np.lexsort((ranks, dist_row[keep]))
    return keep[order[:window]]


def _euclidean_topw(Q, C, c_sq, cand_rank, window):
    q_sq = np.einsum("ij,ij->i", Q, Q)
    approx = q_sq[:, None] + c_sq[None, :] - 2.0 * (Q @ C.T)
    # bound on the rounding error of the expanded form; exact distances are
    # recomputed for everything inside it
    slack = 1e-9 * (q_sq[:, None] + c_sq.max(initial=0.0)) + 1e-12
    out_idx, out_d = [], []
    for i in range(Q.shape[0]):
        row = approx[i]
        if window < row.shape[0]:
            kth = np.partition(row, window - 1)[window - 1]
            pool = np.flatnonzero(row <= kth + 2 * slack[i, 0])
        else:
            pool = np.arange(row.shape[0])
        diff = C[pool] - Q[i]
        exact = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        sel = _select(exact, cand_rank, window, pool)
        out_idx.append(pool[sel])
        out_d.append(exact[sel])
    return out_idx, out_d


def _direct_topw(Q, C, cand_rank, window, metric):
    out_idx, out_d = [], []
    step = max(1, _BLOCK_ELEMENTS // max(1, C.shape[0] * C.shape[1]))
    for start in range(0, Q.shape[0], step):
        block = _pairwise_block(Q[start:start + step], C, metric)
        for row in block:
            sel = _select(row, cand_rank, window)
            out_idx.append(sel)
            out_d.append(row[sel])
    return out_idx, out_d


def top_window(Q: np.ndarray, C: np.ndarray, cand_ids: Sequence[str], window: int,
               metric: str = "euclidean", workers: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Exact top-``window`` candidate indices and distances for every query row.

    Returns two ``(n_queries, window)`` arrays. Ties are broken by candidate id.
    """
    metric = check_metric(metric)
    n_c = C.shape[0]
    if n_c == 0:
        raise DataError("empty candidate set")
    window = min(window, n_c)
    cand_rank = np.empty(n_c, dtype=np.int64)
    cand_rank[sorted(range(n_c), key=list(cand_ids).__getitem__)] = np.arange(n_c)
    c_sq = np.einsum("ij,ij->i", C, C)

    def run(block):
        if metric == "euclidean":
            parts = []
            step = max(1, _BLOCK_ELEMENTS // max(1, n_c))
            for s in range(0, block.shape[0], step):
                parts.append(_euclidean_topw(block[s:s + step], C, c_sq, cand_rank, window))
            return [i for p in parts for i in p[0]], [d for p in parts for d in p[1]]
        return _direct_topw(block, C, cand_rank, window, metric)

    n_q = Q.shape[0]
    if n_q == 0:
        return np.empty((0, window), dtype=np.int64), np.empty((0, window))
    if workers > 1 and n_q > 1:
        bounds = np.linspace(0, n_q, min(workers, n_q) + 1).astype(int)
        blocks = [Q[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run, blocks))
    else:
        results = [run(Q)]
    idx = np.vstack([np.asarray(i) for r in results for i in r[0]])
    dist = np.vstack([np.asarray(d) for r in results for d in r[1]])
    return idx, dist


def knn_all(
    queries: FeatureSet,
    candidates: FeatureSet,
    k: int,
    window: Optional[int] = None,
    metric: str = "euclidean",
    workers: int = 1,
) -> List[NeighborList]:
    """Top-``window`` candidates of every query, in query order.

    ``window`` defaults to ``10 * k`` and is clamped (with a warning) to the
    candidate count.

    Raises:
        ConfigError: ``k < 1`` or ``window < k``.
        DataError: empty candidate set or mismatched feature metadata.
    """
    k = check_positive_int(k, "k")
    window = 10 * k if window is None else check_positive_int(window, "window")
    if window < k:
        raise ConfigError(f"k exceeds window ({k} > {window})")
    if len(candidates) == 0:
        raise DataError("empty candidate set")
    queries.meta.check_compatible(candidates.meta)
    if window > len(candidates):
        logger.warning("window %d exceeds candidate count %d; clamping", window, len(candidates))
        window = len(candidates)
    idx, dist = top_window(queries.X, candidates.X, candidates.ids, window, metric, workers)
    cids = candidates.ids
    return [
        NeighborList(q, tuple((cids[j], float(d)) for j, d in zip(row_i, row_d)))
        for q, row_i, row_d in zip(queries.ids, idx, dist)
    ]


def write_neighbors(lists: Sequence[NeighborList], path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for nl in lists:
            fh.write(json.dumps({"query": nl.query_id, "ranked": [[c, d] for c, d in nl.ranked]}) + "\n")
    return path


def read_neighbors(path: Union[str, Path]) -> List[NeighborList]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(NeighborList(str(rec["query"]),
                                        tuple((str(c), float(d)) for c, d in rec["ranked"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed neighbour record ({exc})") from exc
    return out


class ExactNeighbors(BaseEstimator):
    """Brute-force nearest neighbours with deterministic id tie-breaking.

    Mirrors the ``fit`` / ``kneighbors`` surface of
    :class:`sklearn.neighbors.NearestNeighbors`, restricted to the metrics
    that make sense for histogram features.

    Parameters
    ----------
    n_neighbors : int, default=15
    metric : {"euclidean", "histogram_intersection_distance", "chi_squared"}
    n_jobs : int, default=1
        Worker threads over query blocks; results never depend on it.
    """

    def __init__(self, n_neighbors=15, metric="euclidean", n_jobs=1):
        self.n_neighbors = n_neighbors
        self.metric = metric
        self.n_jobs = n_jobs

    def fit(self, X, y=None, ids=None):
        check_positive_int(self.n_neighbors, "n_neighbors")
        check_metric(self.metric)
        self.fit_X_ = check_features(X, "X")
        self.ids_ = check_ids(ids, self.fit_X_.shape[0])
        self.n_features_in_ = self.fit_X_.shape[1]
        self.n_samples_fit_ = self.fit_X_.shape[0]
        return self

    def kneighbors(self, X, n_neighbors=None, return_distance=True):
        check_is_fitted(self, "fit_X_")
        n = self.n_neighbors if n_neighbors is None else n_neighbors
        n = check_positive_int(n, "n_neighbors")
        if n > self.n_samples_fit_:
            raise ConfigError(f"n_neighbors={n} exceeds the {self.n_samples_fit_} fitted samples")
        X = check_features(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise DataError(f"X has {X.shape[1]} features, fitted on {self.n_features_in_}")
        workers = check_positive_int(self.n_jobs, "n_jobs")
        ind, dist = top_window(X, self.fit_X_, self.ids_, n, self.metric, workers)
        return (dist, ind) if return_distance else ind
