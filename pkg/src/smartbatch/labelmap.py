"""Label-map decoding, corpus listing and nearest-neighbour downscaling.

Two on-disk formats are understood:

* ``.png``: single-channel 8-bit lossless raster (real datasets).
* ``.lgm``: plain-text grid. First line ``"<width> <height>"``, then
  ``height`` lines of ``width`` space-separated integers in ``0..255``.
"""
from __future__ import annotations

import fnmatch
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .exceptions import ConfigError, DataError

PathLike = Union[str, os.PathLike]

TEXT_GRID_SUFFIX = ".lgm"
RASTER_SUFFIX = ".png"
LABELMAP_SUFFIXES = (TEXT_GRID_SUFFIX, RASTER_SUFFIX)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """A 2-D grid of class IDs for one image.

    ``data`` is a read-only ``uint8`` array of shape ``(height, width)``.
    """

    id: str
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise DataError(f"label map {self.id!r}: expected a 2-D grid, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise DataError(f"label map {self.id!r}: zero-area image")
        if data.dtype != np.uint8:
            if data.size and (data.min() < 0 or data.max() > 255):
                raise DataError(f"label map {self.id!r}: values must lie in 0..255")
            data = data.astype(np.uint8)
        data = np.ascontiguousarray(data)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class CorpusListing:
    """Files of one corpus, ordered lexicographically by id (file stem)."""

    root: Path
    entries: Tuple[Tuple[str, Path], ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Tuple[str, Path]]:
        return iter(self.entries)

    @property
    def ids(self) -> List[str]:
        return [i for i, _ in self.entries]

    def subset(self, ids: Sequence[str]) -> "CorpusListing":
        wanted = set(ids)
        return CorpusListing(self.root, tuple(e for e in self.entries if e[0] in wanted))


def decode_text_grid(text: str, id: str = "") -> LabelMap:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"{id}: empty text grid")
    header = lines[0].split()
    if len(header) != 2:
        raise DataError(f"{id}: header must be '<width> <height>'")
    try:
        width, height = int(header[0]), int(header[1])
    except ValueError:
        raise DataError(f"{id}: header must be '<width> <height>'") from None
    if width < 1 or height < 1:
        raise DataError(f"{id}: zero-area image")
    rows = lines[1:]
    if len(rows) != height:
        raise DataError(f"{id}: ragged text grid, expected {height} rows, found {len(rows)}")
    for r, row in enumerate(rows):
        n = len(row.split())
        if n != width:
            raise DataError(f"{id}: ragged text grid, row {r} has {n} values, expected {width}")
    try:
        values = np.array(" ".join(rows).split(), dtype=np.int64)
    except ValueError:
        raise DataError(f"{id}: text grid contains non-integer values") from None
    if values.min() < 0 or values.max() > 255:
        raise DataError(f"{id}: values must lie in 0..255")
    return LabelMap(id, values.astype(np.uint8).reshape(height, width))


def encode_text_grid(lmap: LabelMap) -> str:
    body = "\n".join(" ".join(map(str, row)) for row in lmap.data.tolist())
    return f"{lmap.width} {lmap.height}\n{body}\n"


def _decode_raster(path: Path, id: str) -> LabelMap:
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode not in ("L", "P", "1"):
                if mode in ("I;16", "I;16B", "I;16L", "I", "F"):
                    raise DataError(f"{path}: expected 8-bit label map, got mode {mode}")
                raise DataError(f"{path}: expected single-channel label map, got mode {mode}")
            # palette images keep their raw indices, which are the class IDs
            data = np.array(img, dtype=np.uint8)
    except DataError:
        raise
    except OSError as exc:
        raise DataError(f"{path}: unreadable image ({exc})") from exc
    return LabelMap(id, data)


def decode_labelmap(path: PathLike) -> LabelMap:
    """Decode a label map from ``.png`` or ``.lgm``; the id is the file stem.

    Raises:
        DataError: unreadable file, multi-channel or >8-bit raster, ragged
            text grid or zero-area image.
    """
    path = Path(path)
    id = path.stem
    if path.suffix.lower() == TEXT_GRID_SUFFIX:
        try:
            text = path.read_text()
        except (OSError, UnicodeDecodeError) as exc:
            raise DataError(f"{path}: unreadable file ({exc})") from exc
        return decode_text_grid(text, id)
    if not path.is_file():
        raise DataError(f"{path}: unreadable file")
    return _decode_raster(path, id)


def write_labelmap(lmap: LabelMap, path: PathLike) -> Path:
    path = Path(path)
    if path.suffix.lower() == TEXT_GRID_SUFFIX:
        path.write_text(encode_text_grid(lmap))
    elif path.suffix.lower() == RASTER_SUFFIX:
        Image.fromarray(np.asarray(lmap.data), mode="L").save(path)
    else:
        raise ConfigError(f"{path}: unsupported label-map extension {path.suffix!r}")
    return path


def scan_corpus(root: PathLike, pattern: Optional[str] = None) -> CorpusListing:
    """List files in ``root`` matching ``pattern``, sorted by id.

    Without a pattern every ``.png`` and ``.lgm`` file is listed. Two files sharing
    a stem (``a.png`` and ``a.lgm``) are rejected since ids must be unique.
    """
    root = Path(root)
    try:
        names = os.listdir(root)
    except OSError as exc:
        raise DataError(f"{root}: unreadable directory ({exc})") from exc
    seen = {}
    for name in names:
        p = root / name
        if pattern is None:
            if p.suffix.lower() not in LABELMAP_SUFFIXES:
                continue
        elif not fnmatch.fnmatchcase(name, pattern):
            continue
        if not p.is_file():
            continue
        stem = p.stem
        if stem in seen:
            raise DataError(f"duplicate id {stem} ({seen[stem].name}, {name})")
        seen[stem] = p
    return CorpusListing(root, tuple((k, seen[k]) for k in sorted(seen)))


def downscale_nearest(lmap: LabelMap, factor: int) -> LabelMap:
    """Keep the top-left pixel of every ``factor x factor`` block.

    Output dims are ``ceil(dim / factor)``. Class IDs are categorical so no
    averaging ever happens.
    """
    if isinstance(factor, bool) or int(factor) != factor or factor < 1:
        raise ConfigError(f"downscale factor must be a positive integer, got {factor!r}")
    factor = int(factor)
    if factor == 1:
        return lmap
    return LabelMap(lmap.id, lmap.data[::factor, ::factor])
