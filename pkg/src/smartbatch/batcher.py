"""Seeded, reproducible (real, synthetic) batch plans for external trainers.

Every random decision is a pure function of ``(seed, epoch, real_id)``: the
epoch permutation sorts real ids by a keyed hash and each partner is picked by
another keyed hash. Plans are therefore identical no matter in which order
(or on how many workers) epochs and pairs are generated.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Tuple, Union

from ._validation import check_positive_int, check_seed
from .exceptions import DataError
from .pairing import PairingManifest

Pair = Tuple[str, str]


def keyed_u64(seed: int, *parts) -> int:
    """Deterministic 64-bit value for ``(seed, *parts)``."""
    h = hashlib.blake2b(struct.pack("<Q", seed), digest_size=8, person=b"smartbatch")
    for p in parts:
        b = str(p).encode()
        h.update(struct.pack("<I", len(b)))
        h.update(b)
    return int.from_bytes(h.digest(), "little")


def keyed_index(n: int, seed: int, *parts) -> int:
    """Index in ``range(n)``; bias is at most ``n / 2**64``."""
    return (keyed_u64(seed, *parts) * n) >> 64


def epoch_permutation(real_ids, seed: int, epoch: int) -> List[str]:
    return sorted(real_ids, key=lambda r: (keyed_u64(seed, "perm", epoch, r), r))


def draw_partner(partners, seed: int, epoch: int, real_id: str) -> str:
    return partners[keyed_index(len(partners), seed, "partner", epoch, real_id)]


@dataclass(frozen=True)
class Batch:
    epoch: int
    index: int
    pairs: Tuple[Pair, ...]
    short: bool = False


@dataclass(frozen=True)
class BatchPlan:
    seed: int
    batch_size: int
    epochs: int
    manifest_digest: str
    batches: Tuple[Batch, ...]

    def epoch_pairs(self, epoch: int) -> List[Pair]:
        return [p for b in self.batches if b.epoch == epoch for p in b.pairs]

    def __iter__(self) -> Iterator[Batch]:
        return iter(self.batches)

    @property
    def n_pairs(self) -> int:
        return sum(len(b.pairs) for b in self.batches)

    def header(self) -> dict:
        return {"seed": self.seed, "batch_size": self.batch_size, "epochs": self.epochs,
                "manifest_digest": self.manifest_digest}

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header())]
        for b in self.batches:
            lines.append(json.dumps({"epoch": b.epoch, "batch": b.index,
                                     "pairs": [list(p) for p in b.pairs], "short": b.short}))
        return "\n".join(lines) + "\n"


def plan_batches(manifest: PairingManifest, batch_size: int, epochs: int = 1,
                 seed: int = 0) -> BatchPlan:
    """Epoch-structured pairs: every real id once per epoch, partner drawn
    uniformly from its assignment list.

    The final batch of an epoch may be shorter than ``batch_size``; it is
    kept and flagged ``short``.
    """
    batch_size = check_positive_int(batch_size, "batch_size")
    epochs = check_positive_int(epochs, "epochs")
    seed = check_seed(seed)
    if not manifest.assignments:
        raise DataError("empty manifest: nothing to batch")
    batches: List[Batch] = []
    for e in range(epochs):
        order = epoch_permutation(manifest.assignments, seed, e)
        pairs = [(r, draw_partner(manifest.assignments[r], seed, e, r)) for r in order]
        for i, start in enumerate(range(0, len(pairs), batch_size)):
            chunk = tuple(pairs[start:start + batch_size])
            batches.append(Batch(e, i, chunk, short=len(chunk) < batch_size))
    return BatchPlan(seed, batch_size, epochs, manifest.digest(), tuple(batches))


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    message: str = "ok"

    def __bool__(self) -> bool:
        return self.ok


def validate_plan(plan: BatchPlan, manifest: PairingManifest) -> ValidationReport:
    """Check a plan against its manifest; reports the first violation found."""
    if plan.manifest_digest and plan.manifest_digest != manifest.digest():
        return ValidationReport(False, "manifest digest mismatch")
    real_ids = set(manifest.assignments)
    by_epoch: Dict[int, List[Batch]] = {}
    for b in plan.batches:
        by_epoch.setdefault(b.epoch, []).append(b)
    if sorted(by_epoch) != list(range(plan.epochs)):
        return ValidationReport(False, f"epochs present {sorted(by_epoch)} != 0..{plan.epochs - 1}")
    for e in range(plan.epochs):
        batches = by_epoch[e]
        if [b.index for b in batches] != list(range(len(batches))):
            return ValidationReport(False, f"epoch {e}: batch indices not sequential")
        for j, b in enumerate(batches):
            last = j == len(batches) - 1
            n = len(b.pairs)
            if n == 0 or n > plan.batch_size or (not last and n != plan.batch_size):
                return ValidationReport(False, f"epoch {e} batch {b.index}: size {n}, batch_size {plan.batch_size}")
        seen = set()
        for b in batches:
            for r, s in b.pairs:
                if r not in real_ids:
                    return ValidationReport(False, f"epoch {e}: unknown real id {r}")
                if r in seen:
                    return ValidationReport(False, f"duplicate real id {r} in epoch {e}")
                seen.add(r)
                if s not in manifest.assignments[r]:
                    return ValidationReport(False, f"foreign synthetic id in pair ({r}, {s}), epoch {e}")
        missing = real_ids - seen
        if missing:
            return ValidationReport(False, f"epoch {e}: missing real id {sorted(missing)[0]}")
    return ValidationReport(True)


def write_plan(plan: BatchPlan, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(plan.to_jsonl())
    return path


def read_plan(path: Union[str, Path]) -> BatchPlan:
    try:
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    except OSError as exc:
        raise DataError(f"{path}: cannot read plan ({exc})") from exc
    if not lines:
        raise DataError(f"{path}: empty plan file")
    try:
        head = json.loads(lines[0])
        batches = []
        for ln in lines[1:]:
            rec = json.loads(ln)
            batches.append(Batch(int(rec["epoch"]), int(rec["batch"]),
                                 tuple((str(r), str(s)) for r, s in rec["pairs"]),
                                 bool(rec.get("short", False))))
        return BatchPlan(int(head["seed"]), int(head["batch_size"]), int(head["epochs"]),
                         str(head.get("manifest_digest", "")), tuple(batches))
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed plan ({exc!r})") from exc
