"""Canonical class schema and per-corpus raw-ID remapping.

Both corpora must share one class structure before features can be compared,
so every label map is remapped to canonical IDs ``0..C-1`` (plus the ignore
sentinel) before anything else touches it.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .exceptions import DataError
from .labelmap import LabelMap

logger = logging.getLogger(__name__)

DEFAULT_IGNORE_ID = 255
IGNORE = "ignore"

# Cityscapes evaluation classes, in train-ID order.
CITYSCAPES_CLASSES = (
    "Road", "Sidewalk", "Building", "Wall", "Fence", "Pole", "Traffic-light",
    "Traffic-sign", "Vegetation", "Terrain", "Sky", "Person", "Rider", "Car",
    "Truck", "Bus", "Train", "Motorcycle", "Bicycle",
)

# Classes that are rare in real driving data.
UNDER_REPRESENTED_CLASSES = (
    "Traffic light", "Traffic-sign", "Rider", "Truck", "Bus", "Train",
    "Motorcycle", "Bicycle",
)

_UNMAPPED = 256  # lookup-table marker for raw IDs absent from a table


def normalize_class_name(name: str) -> str:
    return re.sub(r"[\s_\-]+", " ", name).strip().casefold()


@dataclass(frozen=True)
class ClassSchema:
    """Ordered canonical classes plus the reserved ignore value."""

    classes: Tuple[Tuple[int, str], ...]
    ignore_id: int = DEFAULT_IGNORE_ID

    def __post_init__(self):
        classes = tuple((int(i), str(n)) for i, n in self.classes)
        object.__setattr__(self, "classes", classes)
        if not classes:
            raise DataError("empty class list")
        ids = [i for i, _ in classes]
        if len(set(ids)) != len(ids):
            dup = sorted(i for i, c in Counter(ids).items() if c > 1)
            raise DataError(f"duplicate canonical IDs {dup}")
        if sorted(ids) != list(range(len(ids))):
            raise DataError(f"gapped canonical IDs {sorted(ids)}")
        if ids != list(range(len(ids))):
            object.__setattr__(self, "classes", tuple(sorted(classes)))
        if not 0 <= self.ignore_id <= 255:
            raise DataError(f"ignore_id must lie in 0..255, got {self.ignore_id}")
        if self.ignore_id < len(ids):
            raise DataError(f"ignore_id {self.ignore_id} collides with a canonical ID")
        names = [normalize_class_name(n) for _, n in self.classes]
        if len(set(names)) != len(names):
            raise DataError("duplicate class names")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def names(self) -> List[str]:
        return [n for _, n in self.classes]

    def index_of(self, name: str) -> int:
        """Canonical ID of ``name``; case, spaces, ``-`` and ``_`` are ignored."""
        key = normalize_class_name(name)
        for i, n in self.classes:
            if normalize_class_name(n) == key:
                return i
        raise DataError(f"unknown class name {name!r}")

    def to_dict(self) -> dict:
        return {
            "classes": [{"id": i, "name": n} for i, n in self.classes],
            "ignore_id": self.ignore_id,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ClassSchema":
        try:
            classes = tuple((int(c["id"]), str(c["name"])) for c in doc["classes"])
            ignore_id = int(doc.get("ignore_id", DEFAULT_IGNORE_ID))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed schema document: {exc!r}") from exc
        return cls(classes, ignore_id)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def default(cls) -> "ClassSchema":
        return cls(tuple(enumerate(CITYSCAPES_CLASSES)), DEFAULT_IGNORE_ID)


def load_schema(path: Union[str, Path]) -> ClassSchema:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot parse schema ({exc})") from exc
    return ClassSchema.from_dict(doc)


def save_schema(schema: ClassSchema, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class RemapTable:
    """Mapping from raw corpus IDs to canonical IDs or :data:`IGNORE`."""

    corpus_name: str
    entries: Tuple[Tuple[int, Optional[int]], ...]

    def __post_init__(self):
        entries = []
        for raw, target in self.entries:
            raw = int(raw)
            if not 0 <= raw <= 255:
                raise DataError(f"{self.corpus_name}: raw ID {raw} outside 0..255")
            if target is not None and not isinstance(target, (int, np.integer)):
                raise DataError(f"{self.corpus_name}: target for raw {raw} must be int or 'ignore'")
            entries.append((raw, None if target is None else int(target)))
        raws = [r for r, _ in entries]
        if len(set(raws)) != len(raws):
            raise DataError(f"{self.corpus_name}: raw ID mapped more than once")
        object.__setattr__(self, "entries", tuple(sorted(entries)))

    @property
    def mapping(self) -> Dict[int, Optional[int]]:
        return dict(self.entries)

    def validate(self, schema: ClassSchema) -> None:
        for raw, target in self.entries:
            if target is not None and not 0 <= target < schema.n_classes:
                raise DataError(
                    f"{self.corpus_name}: raw {raw} maps to {target}, not a canonical ID"
                )

    def lookup_table(self, schema: ClassSchema) -> np.ndarray:
        """256-entry table; unmapped raws hold a marker outside ``0..255``."""
        self.validate(schema)
        lut = np.full(256, _UNMAPPED, dtype=np.int16)
        lut[schema.ignore_id] = schema.ignore_id
        for raw, target in self.entries:
            lut[raw] = schema.ignore_id if target is None else target
        return lut

    def compose(self, then: "RemapTable", schema: ClassSchema) -> "RemapTable":
        """Table equivalent to applying ``self`` and then ``then``."""
        second = then.mapping
        out = []
        for raw, mid in self.entries:
            if mid is None or mid == schema.ignore_id:
                out.append((raw, None))
            elif mid in second:
                out.append((raw, second[mid]))
        return RemapTable(f"{self.corpus_name}+{then.corpus_name}", tuple(out))

    def to_dict(self) -> dict:
        return {
            "corpus": self.corpus_name,
            "map": {str(r): (IGNORE if t is None else t) for r, t in self.entries},
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RemapTable":
        try:
            corpus = str(doc["corpus"])
            raw_map = doc["map"]
            entries = []
            for raw, target in raw_map.items():
                if target == IGNORE:
                    target = None
                elif isinstance(target, bool) or not isinstance(target, int):
                    raise ValueError(f"bad target {target!r} for raw {raw}")
                entries.append((int(raw), target))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise DataError(f"malformed remap document: {exc}") from exc
        return cls(corpus, tuple(entries))

    @classmethod
    def identity(cls, schema: ClassSchema, corpus_name: str = "identity") -> "RemapTable":
        return cls(corpus_name, tuple((i, i) for i in range(schema.n_classes)))


def load_remap(path: Union[str, Path], schema: Optional[ClassSchema] = None) -> RemapTable:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot parse remap table ({exc})") from exc
    table = RemapTable.from_dict(doc)
    if schema is not None:
        table.validate(schema)
    return table


def save_remap(table: RemapTable, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(table.to_dict(), indent=2) + "\n")


def remap(
    lmap: LabelMap,
    table: Optional[RemapTable],
    schema: ClassSchema,
    strict: bool = True,
    tally: Optional[Counter] = None,
) -> LabelMap:
    """Translate raw IDs of ``lmap`` into canonical IDs.

    ``table=None`` means the map is expected to be canonical already. The
    ignore value always passes through unchanged.

    In strict mode an unmapped raw ID raises :class:`DataError` naming the
    value and the (row, col) of its first occurrence. Otherwise those pixels
    become ignore and their raw values are counted into ``tally``.
    """
    if table is None:
        table = RemapTable.identity(schema)
    lut = table.lookup_table(schema)
    out = lut[lmap.data]
    bad = out == _UNMAPPED
    if bad.any():
        if strict:
            r, c = np.argwhere(bad)[0]
            raw = int(lmap.data[r, c])
            missing = sorted(set(np.unique(lmap.data[bad]).tolist()))
            raise DataError(
                f"{lmap.id}: unmapped raw ID {raw} at pixel (row={r}, col={c}); "
                f"all unmapped IDs: {missing}"
            )
        values, counts = np.unique(lmap.data[bad], return_counts=True)
        if tally is not None:
            tally.update(dict(zip(values.tolist(), counts.tolist())))
        logger.warning("%s: %d pixels with unmapped raw IDs %s set to ignore",
                       lmap.id, int(bad.sum()), values.tolist())
        out[bad] = schema.ignore_id
    return LabelMap(lmap.id, out.astype(np.uint8))


def check_canonical(lmap: LabelMap, schema: ClassSchema) -> None:
    """Raise if ``lmap`` holds anything besides canonical IDs and ignore."""
    data = lmap.data
    bad = (data >= schema.n_classes) & (data != schema.ignore_id)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(
            f"{lmap.id}: non-canonical ID {int(data[r, c])} at pixel (row={r}, col={c}); "
            "was the map remapped?"
        )
