"""Per-class pixel tallies and density comparison between corpora."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import DataError, SmartBatchError
from .labelmap import CorpusListing, LabelMap, decode_labelmap
from .schema import UNDER_REPRESENTED_CLASSES, ClassSchema, RemapTable, remap

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassDensityReport:
    corpus_name: str
    class_names: Tuple[str, ...]
    counts: Tuple[int, ...]
    ignored_pixels: int = 0
    n_images: int = 0
    schema_digest: str = ""

    @property
    def total_valid_pixels(self) -> int:
        return sum(self.counts)

    @property
    def empty(self) -> bool:
        return self.total_valid_pixels == 0

    @property
    def fractions(self) -> Tuple[float, ...]:
        """Share of valid pixels per class; NaN throughout for an empty corpus."""
        total = self.total_valid_pixels
        if total == 0:
            return tuple(math.nan for _ in self.counts)
        return tuple(c / total for c in self.counts)

    def __add__(self, other: "ClassDensityReport") -> "ClassDensityReport":
        if self.class_names != other.class_names:
            raise DataError("cannot merge density reports with different schemas")
        return ClassDensityReport(
            f"{self.corpus_name}+{other.corpus_name}", self.class_names,
            tuple(a + b for a, b in zip(self.counts, other.counts)),
            self.ignored_pixels + other.ignored_pixels, self.n_images + other.n_images,
            self.schema_digest,
        )

    def to_text(self) -> str:
        width = max(len("class"), *(len(n) for n in self.class_names))
        lines = [f"{'class'.ljust(width)}  {'count':>12}  {'fraction':>9}"]
        for name, c, f in zip(self.class_names, self.counts, self.fractions):
            lines.append(f"{name.ljust(width)}  {c:>12d}  {f:>9.6f}")
        lines.append(f"{'(ignored)'.ljust(width)}  {self.ignored_pixels:>12d}")
        if self.empty:
            lines.append("(empty corpus: fractions undefined)")
        return "\n".join(lines)

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "count", "fraction"])
            for name, c, f in zip(self.class_names, self.counts, self.fractions):
                w.writerow([name, c, "" if math.isnan(f) else "%.9g" % f])
        return path


def tally(lmap: LabelMap, schema: ClassSchema) -> Tuple[np.ndarray, int]:
    """Per-class counts of a canonical map, plus its ignored-pixel count."""
    hist = np.bincount(lmap.data.ravel(), minlength=256)
    counts = hist[:schema.n_classes].astype(np.int64)
    if hist.sum() != counts.sum() + hist[schema.ignore_id]:
        raise DataError(f"{lmap.id}: non-canonical IDs present")
    return counts, int(hist[schema.ignore_id])


def _tally_file(args):
    path, table, schema, strict = args
    try:
        counts, ignored = tally(remap(decode_labelmap(path), table, schema, strict=strict), schema)
        return counts, ignored, None
    except SmartBatchError as exc:
        return None, 0, str(exc)


def class_density(listing: CorpusListing, table: Optional[RemapTable], schema: ClassSchema, *,
                  corpus_name: Optional[str] = None, strict: bool = True,
                  fail_fast: bool = True, workers: int = 1) -> ClassDensityReport:
    """Exact integer pixel counts per canonical class over a whole corpus."""
    jobs = [(p, table, schema, strict) for _, p in listing]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_tally_file, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_tally_file(j) for j in jobs]
    total = np.zeros(schema.n_classes, dtype=np.int64)
    ignored = n = 0
    for (id, _), (counts, ign, err) in zip(listing, results):
        if err is not None:
            if fail_fast:
                raise DataError(f"{id}: {err}")
            logger.warning("skipping %s: %s", id, err)
            continue
        total += counts
        ignored += ign
        n += 1
    name = corpus_name or (table.corpus_name if table else listing.root.name)
    return ClassDensityReport(name, tuple(schema.names), tuple(int(c) for c in total),
                              ignored, n, schema.digest())


@dataclass(frozen=True)
class DensityComparison:
    names: Tuple[str, str]
    rows: Tuple[Tuple[str, float, float, float], ...]

    def to_text(self) -> str:
        a, b = self.names
        width = max(len("class"), *(len(r[0]) for r in self.rows)) if self.rows else len("class")
        fw = max(10, len(a), len(b))
        lines = [f"{'class'.ljust(width)}  {a:>{fw}}  {b:>{fw}}  {'ratio':>8}"]
        for name, fa, fb, ratio in self.rows:
            lines.append(f"{name.ljust(width)}  {fa:>{fw}.6f}  {fb:>{fw}.6f}  {format_ratio(ratio):>8}")
        return "\n".join(lines)

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", f"fraction_{self.names[0]}", f"fraction_{self.names[1]}", "ratio"])
            for name, fa, fb, ratio in self.rows:
                w.writerow([name, "%.9g" % fa, "%.9g" % fb, format_ratio(ratio)])
        return path


def format_ratio(r: float) -> str:
    if math.isinf(r):
        return "inf"
    if math.isnan(r):
        return "nan"
    return f"{r:.4f}"


def density_compare(a: ClassDensityReport, b: ClassDensityReport,
                    focus: Optional[Sequence[str]] = None,
                    schema: Optional[ClassSchema] = None) -> DensityComparison:
    """Per focus class: fraction in ``a``, fraction in ``b`` and ``b / a``.

    ``focus`` defaults to the eight rare driving classes (traffic light and
    sign, rider, truck, bus, train, motorcycle, bicycle).
    """
    if a.class_names != b.class_names:
        raise DataError("density reports use different schemas")
    if a.schema_digest and b.schema_digest and a.schema_digest != b.schema_digest:
        raise DataError("density reports use different schemas")
    if schema is None:
        schema = ClassSchema(tuple(enumerate(a.class_names)))
    focus = list(UNDER_REPRESENTED_CLASSES if focus is None else focus)
    idx = [schema.index_of(name) for name in focus]
    fa, fb = a.fractions, b.fractions
    rows: List[Tuple[str, float, float, float]] = []
    for i in idx:
        x, y = fa[i], fb[i]
        if math.isnan(x) or math.isnan(y):
            ratio = math.nan
        elif x == 0:
            ratio = math.nan if y == 0 else math.inf
        else:
            ratio = y / x
        rows.append((schema.names[i], x, y, ratio))
    return DensityComparison((a.corpus_name, b.corpus_name), tuple(rows))
