"""Usage-weighted neighbour assignment for the smart batch loader.

Real images are processed one after another as queries. Each synthetic
candidate carries a usage count ``u``; its weight ``1 / (1 + u)`` starts out
uniform and drops every time a query selects it. A query takes the ``k``
highest-weight candidates of its ranked window, falling back by rank among
equal weights, so heavily reused synthetic images are replaced by the next
nearest ones and more of the synthetic corpus gets covered.
"""
from __future__ import annotations

import csv
import hashlib
import json
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_positive_int, check_seed
from .exceptions import ConfigError, DataError, InvariantError
from .index import NeighborList, check_metric, knn_all
from .spfeat import FeatureSet

WEIGHTINGS = ("none", "inverse_usage")


def config_digest(**fields) -> str:
    """Short fingerprint of the settings that produced an artifact."""
    blob = json.dumps(fields, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class PairingManifest:
    """Per-query selections plus the usage and coverage they imply.

    ``ranks`` keeps the 1-based position of every selection inside the
    query's ranked neighbour list; it feeds the consistency statistics.
    """

    k: int
    window: int
    assignments: Dict[str, Tuple[str, ...]]
    ranks: Dict[str, Tuple[int, ...]]
    usage: Dict[str, int]
    n_candidates: int
    coverage: float
    weighting: str = "inverse_usage"
    metric: str = "euclidean"
    config_digest: str = ""

    @property
    def query_ids(self) -> List[str]:
        return list(self.assignments)

    def check(self) -> None:
        """Re-derive usage and coverage from the assignments and compare."""
        recount = Counter(s for sel in self.assignments.values() for s in sel)
        if dict(recount) != {s: u for s, u in self.usage.items() if u > 0}:
            raise InvariantError("usage map does not match assignments")
        for q, sel in self.assignments.items():
            if len(sel) != self.k or len(set(sel)) != self.k:
                raise InvariantError(f"{q}: expected {self.k} distinct selections, got {list(sel)}")
            if len(self.ranks.get(q, ())) != self.k:
                raise InvariantError(f"{q}: rank list does not match selections")
        if sum(self.usage.values()) != self.k * len(self.assignments):
            raise InvariantError("total usage differs from k * |queries|")
        expected = _coverage(len(recount), self.n_candidates)
        if self.coverage != expected:
            raise InvariantError(f"coverage {self.coverage} != {expected}")
        if self.n_candidates and self.coverage > min(1.0, self.k * len(self.assignments) / self.n_candidates):
            raise InvariantError("coverage exceeds the counting bound")

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "window": self.window,
            "metric": self.metric,
            "weighting": self.weighting,
            "config_digest": self.config_digest,
            "n_candidates": self.n_candidates,
            "coverage": self.coverage,
            "assignments": {q: list(s) for q, s in self.assignments.items()},
            "ranks": {q: list(r) for q, r in self.ranks.items()},
            "usage": dict(sorted(self.usage.items())),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PairingManifest":
        try:
            assignments = {str(q): tuple(map(str, s)) for q, s in doc["assignments"].items()}
            ranks = doc.get("ranks") or {q: () for q in assignments}
            return cls(
                k=int(doc["k"]),
                window=int(doc["window"]),
                assignments=assignments,
                ranks={str(q): tuple(int(x) for x in r) for q, r in ranks.items()},
                usage={str(s): int(u) for s, u in doc["usage"].items()},
                n_candidates=int(doc.get("n_candidates", len(doc["usage"]))),
                coverage=float(doc["coverage"]),
                weighting=str(doc.get("weighting", "inverse_usage")),
                metric=str(doc.get("metric", "euclidean")),
                config_digest=str(doc.get("config_digest", "")),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise DataError(f"malformed pairing manifest: {exc!r}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _coverage(used: int, n_candidates: int) -> float:
    return used / n_candidates if n_candidates else 0.0


def assign(
    neighbors: Sequence[NeighborList],
    k: int,
    weighting: str = "inverse_usage",
    *,
    n_candidates: Optional[int] = None,
    query_order: Optional[Sequence[str]] = None,
    metric: str = "euclidean",
    digest: str = "",
) -> PairingManifest:
    """Select ``k`` synthetic partners for every query, in one sequential pass.

    With ``inverse_usage`` each query's window is stably sorted by
    ``(usage, rank)`` and the first ``k`` entries are taken; the chosen
    candidates' usage is then incremented before the next query. With
    ``none`` the ``k`` nearest neighbours are taken as-is.

    Args:
        neighbors: ranked neighbour lists, one per query.
        n_candidates: size of the synthetic corpus for the coverage
            denominator; defaults to the number of distinct ids seen in the
            windows.
        query_order: explicit processing order (e.g. a seeded shuffle).
            Defaults to lexicographic query id order.
    """
    k = check_positive_int(k, "k")
    if weighting not in WEIGHTINGS:
        raise ConfigError(f"unknown weighting {weighting!r}; choose from {', '.join(WEIGHTINGS)}")
    by_query: Dict[str, NeighborList] = {}
    for nl in neighbors:
        if nl.query_id in by_query:
            raise DataError(f"duplicate query id {nl.query_id}")
        if len(nl) < k:
            raise DataError(f"{nl.query_id}: neighbour list has {len(nl)} entries, fewer than k={k}")
        by_query[nl.query_id] = nl
    if query_order is None:
        order = sorted(by_query)
    else:
        order = list(query_order)
        if sorted(order) != sorted(by_query):
            raise DataError("query_order must be a permutation of the query ids")
    window = max((len(nl) for nl in by_query.values()), default=k)
    if n_candidates is None:
        n_candidates = len({c for nl in by_query.values() for c in nl.ids})

    usage: Counter = Counter()
    chosen: Dict[str, Tuple[str, ...]] = {}
    chosen_ranks: Dict[str, Tuple[int, ...]] = {}
    for q in order:
        ids = by_query[q].ids
        if weighting == "none":
            picks = list(range(k))
        else:
            # sorted() is stable, so equal usage falls back on rank
            picks = sorted(range(len(ids)), key=lambda r: usage[ids[r]])[:k]
        sel = tuple(ids[r] for r in picks)
        if len(set(sel)) != k:
            raise DataError(f"{q}: neighbour list contains duplicate candidates")
        usage.update(sel)
        chosen[q] = sel
        chosen_ranks[q] = tuple(r + 1 for r in picks)

    assignments = {q: chosen[q] for q in sorted(chosen)}
    ranks = {q: chosen_ranks[q] for q in sorted(chosen)}
    manifest = PairingManifest(
        k=k, window=window, assignments=assignments, ranks=ranks,
        usage=dict(sorted(usage.items())), n_candidates=n_candidates,
        coverage=_coverage(len(usage), n_candidates), weighting=weighting,
        metric=metric, config_digest=digest,
    )
    return manifest


def shuffled_order(query_ids: Sequence[str], seed: int) -> List[str]:
    """Seeded permutation of query ids for order-sensitivity studies."""
    order = sorted(query_ids)
    random.Random(check_seed(seed)).shuffle(order)
    return order


@dataclass(frozen=True)
class CoverageReport:
    coverage: float
    n_candidates: int
    n_used: int
    usage_histogram: Dict[int, int]
    max_usage: int
    mean_rank: float

    def rows(self) -> List[Tuple[str, str]]:
        hist = ", ".join(f"{u}:{n}" for u, n in self.usage_histogram.items())
        return [
            ("coverage", f"{self.coverage:.4f}"),
            ("candidates used", f"{self.n_used} / {self.n_candidates}"),
            ("max usage", str(self.max_usage)),
            ("mean selected rank", f"{self.mean_rank:.4f}"),
            ("usage histogram", hist or "(empty)"),
        ]

    def to_text(self) -> str:
        rows = self.rows()
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["usage", "n_candidates"])
            for u, n in self.usage_histogram.items():
                w.writerow([u, n])
        return path


def coverage_report(manifest: PairingManifest, candidates: Union[FeatureSet, Sequence[str]]) -> CoverageReport:
    """Coverage, usage histogram and mean selected rank of a manifest.

    ``candidates`` is the synthetic feature set (or just its ids); every
    candidate with zero usage shows up in the histogram's ``0`` bucket.
    """
    cand_ids = candidates.ids if isinstance(candidates, FeatureSet) else list(candidates)
    cand_set = set(cand_ids)
    unknown = sorted(set(manifest.usage) - cand_set)
    if unknown:
        raise DataError(f"manifest references unknown candidates {unknown[:5]}")
    if not manifest.assignments:
        return CoverageReport(0.0, len(cand_set), 0, {}, 0, 0.0)
    counts = Counter(manifest.usage.get(c, 0) for c in cand_set)
    used = sum(n for u, n in counts.items() if u > 0)
    all_ranks = [r for rs in manifest.ranks.values() for r in rs]
    return CoverageReport(
        coverage=_coverage(used, len(cand_set)),
        n_candidates=len(cand_set),
        n_used=used,
        usage_histogram=dict(sorted(counts.items())),
        max_usage=max(counts),
        mean_rank=float(np.mean(all_ranks)) if all_ranks else 0.0,
    )


@dataclass(frozen=True)
class SweepRow:
    k: int
    coverage: float
    mean_rank: float


def sweep(neighbors: Sequence[NeighborList], k_values: Sequence[int],
          weighting: str = "inverse_usage", n_candidates: Optional[int] = None,
          candidates: Optional[Sequence[str]] = None) -> List[SweepRow]:
    """Coverage and mean selected rank for each ``k`` in ``k_values``."""
    window = min((len(nl) for nl in neighbors), default=None)
    if window is not None and k_values and max(k_values) > window:
        raise ConfigError(f"k exceeds window ({max(k_values)} > {window})")
    if candidates is not None and n_candidates is None:
        n_candidates = len(set(candidates))
    rows = []
    for k in k_values:
        m = assign(neighbors, k, weighting, n_candidates=n_candidates)
        ids = candidates if candidates is not None else sorted(
            {c for nl in neighbors for c in nl.ids})
        rep = coverage_report(m, ids)
        rows.append(SweepRow(k, m.coverage, rep.mean_rank))
    return rows


def sweep_table(rows: Sequence[SweepRow]) -> str:
    lines = [f"{'k':>4}  {'coverage':>8}  {'mean_rank':>9}"]
    lines += [f"{r.k:>4}  {r.coverage:>8.4f}  {r.mean_rank:>9.4f}" for r in rows]
    return "\n".join(lines)


def write_manifest(manifest: PairingManifest, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(manifest.to_json())
    return path


def read_manifest(path: Union[str, Path]) -> PairingManifest:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot read manifest ({exc})") from exc
    return PairingManifest.from_dict(doc)


class SmartPairing(BaseEstimator):
    """Estimator wrapper: fit on (real, synthetic) feature sets, expose the manifest.

    Parameters
    ----------
    k : int, default=15
        Partners kept per real image.
    window : int or None, default=None
        Ranked neighbours eligible for substitution; ``None`` means ``10 * k``.
    metric : str, default="euclidean"
    weighting : {"inverse_usage", "none"}, default="inverse_usage"
    n_jobs : int, default=1

    Attributes
    ----------
    neighbors_ : list of NeighborList
    manifest_ : PairingManifest
    coverage_ : float
    """

    def __init__(self, k=15, window=None, metric="euclidean", weighting="inverse_usage", n_jobs=1):
        self.k = k
        self.window = window
        self.metric = metric
        self.weighting = weighting
        self.n_jobs = n_jobs

    def fit(self, real: FeatureSet, synthetic: FeatureSet):
        metric = check_metric(self.metric)
        k = check_positive_int(self.k, "k")
        window = 10 * k if self.window is None else check_positive_int(self.window, "window")
        if k > window:
            raise ConfigError(f"k exceeds window ({k} > {window})")
        self.neighbors_ = knn_all(real, synthetic, k, window, metric, self.n_jobs)
        digest = config_digest(metric=metric, features=real.meta.digest(), k=k,
                               window=window, weighting=self.weighting)
        self.manifest_ = assign(self.neighbors_, k, self.weighting,
                                n_candidates=len(synthetic), metric=metric, digest=digest)
        self.coverage_ = self.manifest_.coverage
        return self
