"""Spatial pyramid features (SP-Feat) of semantic label maps.

Each pyramid level splits the image into a ``rows x cols`` grid of
non-overlapping slices. Every slice contributes one class histogram of length
``C``; histograms are concatenated level-major, then slice row-major, then by
class, giving a vector of length ``C * total_slices``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_levels, check_positive_int
from .exceptions import ConfigError, DataError, SmartBatchError
from .labelmap import CorpusListing, LabelMap, decode_labelmap, downscale_nearest
from .schema import ClassSchema, RemapTable, check_canonical, remap

logger = logging.getLogger(__name__)

DEFAULT_LEVELS = ((1, 1), (2, 4))
FEATURE_SUFFIX = ".spf.csv"
META_SUFFIX = ".spf.meta.json"
NORMALIZATIONS = ("relative", "counts")


class Rect(NamedTuple):
    """Half-open pixel rectangle ``[top, bottom) x [left, right)``."""

    top: int
    bottom: int
    left: int
    right: int

    @property
    def area(self) -> int:
        return (self.bottom - self.top) * (self.right - self.left)


@dataclass(frozen=True)
class SliceGrid:
    levels: Tuple[Tuple[int, int], ...] = DEFAULT_LEVELS

    def __post_init__(self):
        object.__setattr__(self, "levels", check_levels(self.levels))

    @property
    def total_slices(self) -> int:
        return sum(r * c for r, c in self.levels)

    @classmethod
    def parse(cls, text: str) -> "SliceGrid":
        """Parse ``"1x1,2x4"`` style level lists."""
        try:
            levels = [tuple(int(v) for v in part.lower().split("x")) for part in text.split(",")]
        except ValueError:
            raise ConfigError(f"cannot parse grid {text!r}; expected e.g. '1x1,2x4'") from None
        if any(len(lv) != 2 for lv in levels):
            raise ConfigError(f"cannot parse grid {text!r}; expected e.g. '1x1,2x4'")
        return cls(tuple(levels))

    def __str__(self) -> str:
        return ",".join(f"{r}x{c}" for r, c in self.levels)


def _partition(length: int, parts: int) -> List[int]:
    return [(i * length) // parts for i in range(parts + 1)]


def slice_bounds(width: int, height: int, rows: int, cols: int) -> List[Rect]:
    """Row-major rectangles that exactly partition a ``width x height`` image.

    Row ``r`` spans pixel rows ``[floor(r*H/rows), floor((r+1)*H/rows))``;
    columns are split the same way.
    """
    if rows < 1 or cols < 1:
        raise ConfigError(f"grid ({rows}, {cols}) must have rows, cols >= 1")
    if rows > height or cols > width:
        raise DataError(
            f"grid finer than image: {rows}x{cols} slices on a {width}x{height} image"
        )
    ys = _partition(height, rows)
    xs = _partition(width, cols)
    return [Rect(ys[r], ys[r + 1], xs[c], xs[c + 1]) for r in range(rows) for c in range(cols)]


@lru_cache(maxsize=64)
def _slice_index(height: int, width: int, rows: int, cols: int) -> np.ndarray:
    """Per-pixel slice number for one level (read-only, cached)."""
    if rows > height or cols > width:
        raise DataError(
            f"grid finer than image: {rows}x{cols} slices on a {width}x{height} image"
        )
    row_of = np.searchsorted(_partition(height, rows), np.arange(height), side="right") - 1
    col_of = np.searchsorted(_partition(width, cols), np.arange(width), side="right") - 1
    idx = (row_of[:, None] * cols + col_of[None, :]).astype(np.int32)
    idx.flags.writeable = False
    return idx


def _histograms(data: np.ndarray, n_classes: int, ignore_id: int,
                levels: Sequence[Tuple[int, int]], normalize: bool) -> np.ndarray:
    # ignore pixels go to an extra bin (index C) that is dropped afterwards
    lut = np.full(256, n_classes, dtype=np.int32)
    lut[:n_classes] = np.arange(n_classes, dtype=np.int32)
    labels = lut[data]
    height, width = data.shape
    blocks = []
    for rows, cols in levels:
        n_slices = rows * cols
        codes = _slice_index(height, width, rows, cols) * (n_classes + 1) + labels
        counts = np.bincount(codes.ravel(), minlength=n_slices * (n_classes + 1))
        counts = counts.reshape(n_slices, n_classes + 1)[:, :n_classes].astype(np.float64)
        if normalize:
            totals = counts.sum(axis=1, keepdims=True)
            np.divide(counts, totals, out=counts, where=totals > 0)
        blocks.append(counts.ravel())
    return np.concatenate(blocks)


@dataclass(frozen=True, eq=False)
class SpFeat:
    id: str
    values: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.values)


def extract_spfeat(
    lmap: LabelMap,
    schema: ClassSchema,
    grid: SliceGrid = SliceGrid(),
    normalize: bool = True,
) -> SpFeat:
    """SP-Feat vector of a canonical label map.

    Ignore pixels count toward neither a class nor the slice total, so a
    fully-ignored slice yields ``C`` zeros. With ``normalize=False`` raw pixel
    counts are returned instead of per-slice frequencies.

    Raises:
        DataError: the map holds a non-canonical ID, or a grid level is finer
            than the image.
    """
    check_canonical(lmap, schema)
    values = _histograms(lmap.data, schema.n_classes, schema.ignore_id, grid.levels, normalize)
    return SpFeat(lmap.id, values)


@dataclass(frozen=True)
class FeatureMeta:
    """Everything that must agree before two feature sets may be compared."""

    provenance: str = "spfeat"
    dim: int = 0
    n_classes: Optional[int] = None
    levels: Optional[Tuple[Tuple[int, int], ...]] = None
    downscale: Optional[int] = None
    normalization: Optional[str] = None
    schema_digest: Optional[str] = None

    def __post_init__(self):
        if self.levels is not None:
            object.__setattr__(self, "levels", check_levels(self.levels))

    def to_dict(self) -> dict:
        d = {
            "provenance": self.provenance,
            "dim": self.dim,
            "n_classes": self.n_classes,
            "levels": [list(lv) for lv in self.levels] if self.levels is not None else None,
            "downscale": self.downscale,
            "normalization": self.normalization,
            "schema_digest": self.schema_digest,
        }
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureMeta":
        try:
            return cls(
                provenance=str(doc.get("provenance", "spfeat")),
                dim=int(doc["dim"]),
                n_classes=doc.get("n_classes"),
                levels=doc.get("levels"),
                downscale=doc.get("downscale"),
                normalization=doc.get("normalization"),
                schema_digest=doc.get("schema_digest"),
            )
        except (KeyError, TypeError, ValueError, ConfigError) as exc:
            raise DataError(f"malformed feature metadata: {exc}") from exc

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def check_compatible(self, other: "FeatureMeta") -> None:
        if self != other:
            a, b = self.to_dict(), other.to_dict()
            diffs = [f"{k}: {a[k]!r} != {b[k]!r}" for k in a if a[k] != b[k]]
            raise DataError("feature metadata mismatch (" + "; ".join(diffs) + ")")


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Feature vectors of one corpus, rows ordered by id."""

    corpus_name: str
    meta: FeatureMeta
    ids: Tuple[str, ...]
    X: np.ndarray = field(repr=False)
    skipped: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self):
        ids = tuple(self.ids)
        object.__setattr__(self, "ids", ids)
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, self.meta.dim)
        if X.ndim != 2 or X.shape[0] != len(ids):
            raise DataError(f"{self.corpus_name}: {len(ids)} ids but feature array shape {X.shape}")
        if X.shape[1] != self.meta.dim:
            raise DataError(f"{self.corpus_name}: rows have length {X.shape[1]}, metadata says {self.meta.dim}")
        if len(set(ids)) != len(ids):
            raise DataError(f"{self.corpus_name}: duplicate ids")
        X.flags.writeable = False
        object.__setattr__(self, "X", X)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.meta.dim

    @property
    def features(self) -> List[SpFeat]:
        return [SpFeat(i, row) for i, row in zip(self.ids, self.X)]

    def __iter__(self) -> Iterator[SpFeat]:
        return iter(self.features)

    def sorted(self) -> "FeatureSet":
        order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
        return replace(self, ids=tuple(self.ids[i] for i in order), X=self.X[order])


def spfeat_meta(schema: ClassSchema, grid: SliceGrid, downscale: int = 1,
                normalize: bool = True) -> FeatureMeta:
    return FeatureMeta(
        provenance="spfeat",
        dim=schema.n_classes * grid.total_slices,
        n_classes=schema.n_classes,
        levels=grid.levels,
        downscale=downscale,
        normalization="relative" if normalize else "counts",
        schema_digest=schema.digest(),
    )


def _extract_file(args):
    path, table, schema, grid, downscale, normalize, strict = args
    try:
        lmap = decode_labelmap(path)
        lmap = remap(lmap, table, schema, strict=strict)
        lmap = downscale_nearest(lmap, downscale)
        return extract_spfeat(lmap, schema, grid, normalize).values, None
    except SmartBatchError as exc:
        return None, str(exc)


def extract_corpus(
    listing: CorpusListing,
    table: Optional[RemapTable],
    schema: ClassSchema,
    grid: SliceGrid = SliceGrid(),
    downscale: int = 1,
    normalize: bool = True,
    *,
    corpus_name: Optional[str] = None,
    strict: bool = True,
    fail_fast: bool = True,
    workers: int = 1,
) -> FeatureSet:
    """Decode, remap, downscale and featurize every file of a corpus.

    Output rows follow the listing order whatever the worker count. With
    ``fail_fast=False`` undecodable files are left out and recorded in
    ``FeatureSet.skipped`` as ``(id, message)``.
    """
    downscale = check_positive_int(downscale, "downscale")
    workers = check_positive_int(workers, "workers")
    meta = spfeat_meta(schema, grid, downscale, normalize)
    name = corpus_name if corpus_name is not None else (table.corpus_name if table else listing.root.name)
    jobs = [(path, table, schema, grid, downscale, normalize, strict) for _, path in listing]
    if workers > 1 and len(jobs) > 1:
        chunk = max(1, len(jobs) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_extract_file, jobs, chunksize=chunk))
    else:
        results = [_extract_file(job) for job in jobs]

    ids, rows, skipped = [], [], []
    for (id, _), (values, err) in zip(listing, results):
        if err is not None:
            if fail_fast:
                raise DataError(f"{id}: {err}")
            logger.warning("skipping %s: %s", id, err)
            skipped.append((id, err))
            continue
        ids.append(id)
        rows.append(values)
    X = np.vstack(rows) if rows else np.empty((0, meta.dim))
    return FeatureSet(name, meta, tuple(ids), X, tuple(skipped))


def meta_path_for(path: Union[str, Path]) -> Path:
    path = Path(path)
    name = path.name
    if name.endswith(FEATURE_SUFFIX):
        name = name[: -len(FEATURE_SUFFIX)]
    elif name.endswith(".csv"):
        name = name[:-4]
    return path.with_name(name + META_SUFFIX)


def write_feature_set(fs: FeatureSet, path: Union[str, Path]) -> Path:
    """Write ``id,f0,...`` rows (9 significant digits) plus a metadata file."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id"] + [f"f{i}" for i in range(fs.dim)])
        for id, row in zip(fs.ids, fs.X):
            writer.writerow([id] + ["%.9g" % v for v in row])
    doc = {"corpus": fs.corpus_name, "n": len(fs), **fs.meta.to_dict()}
    meta_path_for(path).write_text(json.dumps(doc, indent=2) + "\n")
    return path


def read_feature_set(path: Union[str, Path], provenance: Optional[str] = None) -> FeatureSet:
    """Read a feature file and its metadata companion.

    A missing metadata file is only tolerated when ``provenance="embedding"``
    (externally produced activations); the dimension is then taken from the
    header.
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "id":
                raise DataError(f"{path}: header must start with 'id'")
            dim = len(header) - 1
            ids, rows = [], []
            for lineno, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                if len(rec) != dim + 1:
                    raise DataError(f"{path}:{lineno}: expected {dim + 1} fields, got {len(rec)}")
                ids.append(rec[0])
                try:
                    rows.append([float(v) for v in rec[1:]])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-numeric feature value") from None
    except OSError as exc:
        raise DataError(f"{path}: unreadable feature file ({exc})") from exc

    mpath = meta_path_for(path)
    if mpath.exists():
        try:
            doc = json.loads(mpath.read_text())
        except ValueError as exc:
            raise DataError(f"{mpath}: cannot parse metadata ({exc})") from exc
        meta = FeatureMeta.from_dict(doc)
        corpus = str(doc.get("corpus", path.name))
        if provenance is not None and meta.provenance != provenance:
            raise DataError(f"{path}: provenance is {meta.provenance!r}, expected {provenance!r}")
    elif provenance == "embedding":
        meta = FeatureMeta(provenance="embedding", dim=dim)
        corpus = path.name[: -len(FEATURE_SUFFIX)] if path.name.endswith(FEATURE_SUFFIX) else path.stem
    else:
        raise DataError(f"{path}: missing metadata file {mpath.name}")
    if meta.dim != dim:
        raise DataError(f"{path}: header has {dim} features, metadata says {meta.dim}")
    X = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return FeatureSet(corpus, meta, tuple(ids), X)


def _as_label_arrays(X) -> List[np.ndarray]:
    if isinstance(X, np.ndarray):
        if X.ndim == 2:
            return [X]
        if X.ndim == 3:
            return list(X)
        raise DataError(f"expected label maps, got an array of shape {X.shape}")
    return [m.data if isinstance(m, LabelMap) else np.asarray(m) for m in X]


class SpatialPyramidFeatures(TransformerMixin, BaseEstimator):
    """Transform canonical label maps into SP-Feat vectors.

    Parameters
    ----------
    n_classes : int, default=19
        Number of canonical classes ``C``.
    levels : sequence of (rows, cols), default=((1, 1), (2, 4))
        Pyramid levels; output width is ``n_classes * sum(rows * cols)``.
    ignore_id : int, default=255
        Label value excluded from every histogram.
    normalize : bool, default=True
        Per-slice relative frequencies when True, raw pixel counts otherwise.
    downscale : int, default=1
        Nearest-neighbour subsampling factor applied before counting.

    Examples
    --------
    >>> import numpy as np
    >>> maps = [np.array([[0, 0, 1, 0], [1, 1, 1, 0]])]
    >>> SpatialPyramidFeatures(n_classes=2, levels=[(1, 2)]).fit_transform(maps)
    array([[0.5, 0.5, 0.5, 0.5]])
    """

    def __init__(self, n_classes=19, levels=DEFAULT_LEVELS, ignore_id=255,
                 normalize=True, downscale=1):
        self.n_classes = n_classes
        self.levels = levels
        self.ignore_id = ignore_id
        self.normalize = normalize
        self.downscale = downscale

    def _schema(self) -> ClassSchema:
        n = check_positive_int(self.n_classes, "n_classes")
        return ClassSchema(tuple((i, f"class_{i}") for i in range(n)), self.ignore_id)

    def fit(self, X=None, y=None):
        self.schema_ = self._schema()
        self.grid_ = SliceGrid(self.levels)
        check_positive_int(self.downscale, "downscale")
        self.n_features_out_ = self.schema_.n_classes * self.grid_.total_slices
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "grid_")
        out = np.empty((0, self.n_features_out_))
        rows = []
        for i, data in enumerate(_as_label_arrays(X)):
            lmap = downscale_nearest(LabelMap(str(i), data), self.downscale)
            rows.append(extract_spfeat(lmap, self.schema_, self.grid_, self.normalize).values)
        return np.vstack(rows) if rows else out

    def get_feature_names_out(self, input_features=None) -> np.ndarray:
        check_is_fitted(self, "grid_")
        names = []
        for li, (rows, cols) in enumerate(self.grid_.levels):
            for s in range(rows * cols):
                names.extend(f"l{li}_s{s}_c{k}" for k in range(self.schema_.n_classes))
        return np.asarray(names, dtype=object)


__all__ = [
    "DEFAULT_LEVELS", "FeatureMeta", "FeatureSet", "Rect", "SliceGrid", "SpFeat",
    "SpatialPyramidFeatures", "extract_corpus", "extract_spfeat",
    "read_feature_set", "slice_bounds", "spfeat_meta", "write_feature_set",
]
