"""Command-line front end: ``smartbatch <command> [options]``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal
invariant failure. Failures print a single ``error: ...`` line to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from ._validation import check_positive_int, check_seed
from .batcher import plan_batches, validate_plan, write_plan
from .exceptions import ConfigError, DataError, InvariantError, SmartBatchError
from .frechet import fid_table
from .index import check_metric, knn_all, write_neighbors
from .labelmap import scan_corpus
from .pairing import (
    WEIGHTINGS, PairingManifest, assign, config_digest, coverage_report, read_manifest,
    sweep, sweep_table, write_manifest,
)
from .schema import ClassSchema, RemapTable, load_remap, load_schema
from .spfeat import (
    FeatureSet, SliceGrid, extract_corpus, read_feature_set, spfeat_meta, write_feature_set,
)
from .stats import class_density, density_compare
from .toy import ToySpec, generate_toy

logger = logging.getLogger("smartbatch")

CORPORA = ("real", "synthetic")


@dataclass
class PipelineConfig:
    schema_path: Optional[str] = None
    remap_paths: Dict[str, str] = field(default_factory=dict)
    real_root: Optional[str] = None
    synthetic_root: Optional[str] = None
    levels: str = "1x1,2x4"
    downscale: int = 1
    metric: str = "euclidean"
    k: int = 15
    window: Optional[int] = None
    weighting: str = "inverse_usage"
    batch_size: int = 8
    epochs: int = 1
    seed: int = 0
    output_dir: str = "smartbatch_out"
    strict: bool = True
    fail_fast: bool = True
    focus: Optional[List[str]] = None

    @property
    def effective_window(self) -> int:
        return 10 * self.k if self.window is None else self.window

    def validate(self) -> None:
        check_positive_int(self.k, "k")
        if self.window is not None:
            check_positive_int(self.window, "window")
        if self.k > self.effective_window:
            raise ConfigError(f"k exceeds window ({self.k} > {self.effective_window})")
        check_positive_int(self.downscale, "downscale")
        check_positive_int(self.batch_size, "batch_size")
        check_positive_int(self.epochs, "epochs")
        check_seed(self.seed)
        check_metric(self.metric)
        if self.weighting not in WEIGHTINGS:
            raise ConfigError(f"unknown weighting {self.weighting!r}")
        SliceGrid.parse(self.levels)
        for p in [self.schema_path, *self.remap_paths.values()]:
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"missing file {p}")

    def require_roots(self) -> None:
        for name in ("real_root", "synthetic_root"):
            p = getattr(self, name)
            if p is None:
                raise ConfigError(f"{name} is not configured")
            if not Path(p).is_dir():
                raise ConfigError(f"{name} {p} is not a directory")


_PATH_FIELDS = ("schema_path", "real_root", "synthetic_root", "output_dir")


def load_config(path: Optional[str], overrides: dict) -> PipelineConfig:
    """Config file values, then flag overrides; relative paths in the file
    resolve against the file's directory."""
    values: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in fields(PipelineConfig)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        base = Path(path).parent
        for key in _PATH_FIELDS:
            if doc.get(key) is not None:
                doc[key] = str(base / doc[key])
        if doc.get("remap_paths"):
            doc["remap_paths"] = {c: str(base / p) for c, p in doc["remap_paths"].items()}
        if isinstance(doc.get("levels"), list):
            doc["levels"] = ",".join(f"{r}x{c}" for r, c in doc["levels"])
        values.update(doc)
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = PipelineConfig(**values)
    cfg.validate()
    return cfg


class Context:
    """Resolved inputs shared by the pipeline stages."""

    def __init__(self, cfg: PipelineConfig, workers: int):
        self.cfg = cfg
        self.workers = workers
        self.schema = load_schema(cfg.schema_path) if cfg.schema_path else ClassSchema.default()
        self.grid = SliceGrid.parse(cfg.levels)
        self.out = Path(cfg.output_dir)

    def remap_table(self, corpus: str) -> Optional[RemapTable]:
        p = self.cfg.remap_paths.get(corpus)
        return load_remap(p, self.schema) if p else None

    def root(self, corpus: str) -> str:
        return getattr(self.cfg, f"{corpus}_root")

    def feature_path(self, corpus: str) -> Path:
        return self.out / f"{corpus}.spf.csv"

    @property
    def manifest_path(self) -> Path:
        return self.out / "manifest.pairs.json"

    @property
    def plan_path(self) -> Path:
        return self.out / "batches.plan.jsonl"

    def expected_meta(self):
        return spfeat_meta(self.schema, self.grid, self.cfg.downscale)

    def pairing_digest(self) -> str:
        c = self.cfg
        return config_digest(metric=check_metric(c.metric), features=self.expected_meta().digest(),
                             k=c.k, window=c.effective_window, weighting=c.weighting)

    def load_features(self, corpus: str) -> FeatureSet:
        path = self.feature_path(corpus)
        if not path.exists():
            raise DataError(f"missing feature file {path}; run 'extract' first")
        fs = read_feature_set(path, provenance="spfeat")
        try:
            fs.meta.check_compatible(self.expected_meta())
        except DataError as exc:
            raise DataError(f"{path} is stale for the current configuration: {exc}") from None
        return fs


def _say(*lines: str) -> None:
    for ln in lines:
        print(ln)


def run_extract(ctx: Context) -> Dict[str, FeatureSet]:
    ctx.cfg.require_roots()
    ctx.out.mkdir(parents=True, exist_ok=True)
    result = {}
    for corpus in CORPORA:
        t0 = time.perf_counter()
        listing = scan_corpus(ctx.root(corpus))
        fs = extract_corpus(
            listing, ctx.remap_table(corpus), ctx.schema, ctx.grid, ctx.cfg.downscale,
            corpus_name=corpus, strict=ctx.cfg.strict, fail_fast=ctx.cfg.fail_fast,
            workers=ctx.workers,
        )
        write_feature_set(fs, ctx.feature_path(corpus))
        elapsed = time.perf_counter() - t0
        skipped = f", {len(fs.skipped)} skipped" if fs.skipped else ""
        _say(f"extract {corpus}: {len(fs)} images, dim {fs.dim}{skipped}, {elapsed:.2f}s")
        result[corpus] = fs
    return result


def run_pair(ctx: Context, dump_knn: bool = False) -> PairingManifest:
    real, synth = ctx.load_features("real"), ctx.load_features("synthetic")
    real.meta.check_compatible(synth.meta)
    c = ctx.cfg
    neighbors = knn_all(real, synth, c.k, c.effective_window, c.metric, ctx.workers)
    manifest = assign(neighbors, c.k, c.weighting, n_candidates=len(synth),
                      metric=check_metric(c.metric), digest=ctx.pairing_digest())
    manifest.check()
    ctx.out.mkdir(parents=True, exist_ok=True)
    write_manifest(manifest, ctx.manifest_path)
    if dump_knn:
        write_neighbors(neighbors, ctx.out / "neighbors.knn.jsonl")
    report = coverage_report(manifest, synth)
    report.write_csv(ctx.out / "coverage.csv")
    _say(f"pair: {len(manifest.assignments)} queries, k={manifest.k}, window={manifest.window}, "
         f"weighting={manifest.weighting}", report.to_text())
    return manifest


def run_batch(ctx: Context):
    if not ctx.manifest_path.exists():
        raise DataError(f"missing manifest {ctx.manifest_path}; run 'pair' first")
    manifest = read_manifest(ctx.manifest_path)
    if manifest.config_digest != ctx.pairing_digest():
        raise DataError(f"{ctx.manifest_path} was produced with a different configuration; rerun 'pair'")
    c = ctx.cfg
    plan = plan_batches(manifest, c.batch_size, c.epochs, c.seed)
    report = validate_plan(plan, manifest)
    if not report:
        raise InvariantError(f"generated plan failed validation: {report.message}")
    write_plan(plan, ctx.plan_path)
    _say(f"batch: {plan.n_pairs} pairs in {len(plan.batches)} batches over {plan.epochs} epoch(s)")
    return plan


def run_stats(ctx: Context):
    ctx.cfg.require_roots()
    ctx.out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for corpus in CORPORA:
        rep = class_density(scan_corpus(ctx.root(corpus)), ctx.remap_table(corpus), ctx.schema,
                            corpus_name=corpus, strict=ctx.cfg.strict,
                            fail_fast=ctx.cfg.fail_fast, workers=ctx.workers)
        rep.write_csv(ctx.out / f"density_{corpus}.csv")
        _say(f"density {corpus} ({rep.n_images} images)", rep.to_text(), "")
        reports[corpus] = rep
    focus = ctx.cfg.focus
    if focus is None and ctx.schema.names != ClassSchema.default().names:
        focus = ctx.schema.names
    cmp = density_compare(reports["real"], reports["synthetic"], focus, ctx.schema)
    cmp.write_csv(ctx.out / "density_compare.csv")
    _say("density comparison (ratio = synthetic / real)", cmp.to_text())
    return reports, cmp


def cmd_extract(args, ctx):
    run_extract(ctx)


def cmd_pair(args, ctx):
    run_pair(ctx, dump_knn=args.dump_knn)


def cmd_batch(args, ctx):
    run_batch(ctx)


def cmd_stats(args, ctx):
    run_stats(ctx)


def cmd_pipeline(args, ctx):
    t0 = time.perf_counter()
    run_extract(ctx)
    run_pair(ctx, dump_knn=args.dump_knn)
    run_batch(ctx)
    run_stats(ctx)
    _say(f"pipeline done in {time.perf_counter() - t0:.2f}s; outputs in {ctx.out}")


def cmd_sweep(args, ctx):
    real, synth = ctx.load_features("real"), ctx.load_features("synthetic")
    try:
        k_values = [int(v) for v in args.k_values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse --k-values {args.k_values!r}") from None
    for k in k_values:
        check_positive_int(k, "k")
    window = ctx.cfg.window or 10 * max(k_values, default=1)
    neighbors = knn_all(real, synth, max(k_values, default=1), window, ctx.cfg.metric, ctx.workers)
    rows = sweep(neighbors, k_values, ctx.cfg.weighting, candidates=synth.ids)
    ctx.out.mkdir(parents=True, exist_ok=True)
    with open(ctx.out / "sweep.csv", "w") as fh:
        fh.write("k,coverage,mean_rank\n")
        for r in rows:
            fh.write(f"{r.k},{r.coverage:.9g},{r.mean_rank:.9g}\n")
    _say(f"sweep ({ctx.cfg.weighting}, window={window})", sweep_table(rows))


def cmd_fid(args, _ctx):
    if len(args.paths) < 1:
        raise ConfigError("fid needs at least one embedding file")
    sets = [read_feature_set(p, provenance=args.provenance) for p in args.paths]
    names = [s.corpus_name for s in sets]
    if len(set(names)) != len(names):
        names = [Path(p).name for p in args.paths]
    table = fid_table(sets, names)
    _say(table.to_text())
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        table.write_csv(Path(args.out) / "fid.csv")


def cmd_gen_toy(args, _ctx):
    spec = ToySpec(
        seed=42 if args.seed is None else args.seed, n_real=args.n_real, n_synth=args.n_synth,
        width=args.width, height=args.height, n_classes=args.n_classes,
        cluster_count=args.cluster_count,
    )
    out = Path(args.out or "toy")
    generate_toy(out, spec)
    _say(f"gen-toy: {spec.n_real} real + {spec.n_synth} synthetic maps "
         f"({spec.width}x{spec.height}, {spec.n_classes} classes) in {out}; "
         f"run: smartbatch pipeline --config {out / 'pipeline.json'}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _global_flags(parser: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    parser.add_argument("--config", default=S, help="pipeline config (JSON)")
    parser.add_argument("--workers", type=int, default=S, help="worker count (default: CPU count)")
    parser.add_argument("--seed", type=int, default=S, help="unsigned 64-bit seed")
    parser.add_argument("--out", default=S, help="output directory")


def _pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--schema", dest="schema_path")
    parser.add_argument("--real-root")
    parser.add_argument("--synthetic-root")
    parser.add_argument("--remap", action="append", default=None, metavar="CORPUS=PATH",
                        help="remap table for a corpus (repeatable)")
    parser.add_argument("--levels", help="pyramid levels, e.g. 1x1,2x4")
    parser.add_argument("--downscale", type=int)
    parser.add_argument("--metric", choices=["euclidean", "histogram_intersection_distance", "chi_squared"])
    parser.add_argument("-k", "--k", type=int)
    parser.add_argument("--window", type=int)
    parser.add_argument("--weighting", choices=WEIGHTINGS)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lenient", action="store_true", help="map unknown raw IDs to ignore")
    parser.add_argument("--skip-bad", action="store_true", help="skip undecodable files instead of aborting")
    parser.add_argument("--focus", help="comma-separated class names for the density comparison")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smartbatch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    _global_flags(parser)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help, pipeline=True):
        p = sub.add_parser(name, help=help)
        _global_flags(p)
        if pipeline:
            _pipeline_flags(p)
        p.set_defaults(func=func, pipeline=pipeline)
        return p

    add("extract", cmd_extract, "compute SP-Feat files for both corpora")
    p = add("pair", cmd_pair, "build the pairing manifest")
    p.add_argument("--dump-knn", action="store_true", help="also write neighbors.knn.jsonl")
    add("batch", cmd_batch, "write the seeded batch plan")
    add("stats", cmd_stats, "class pixel densities and comparison")
    p = add("pipeline", cmd_pipeline, "extract + pair + batch + stats")
    p.add_argument("--dump-knn", action="store_true")
    p = add("sweep", cmd_sweep, "coverage / mean rank over several k")
    p.add_argument("--k-values", default="1,5,10,15,20,30")
    p = add("fid", cmd_fid, "pairwise Fréchet distances of embedding files", pipeline=False)
    p.add_argument("paths", nargs="+")
    p.add_argument("--provenance", choices=["embedding", "spfeat"], default="embedding")
    p = add("gen-toy", cmd_gen_toy, "write seeded toy corpora", pipeline=False)
    p.add_argument("--n-real", type=int, default=300)
    p.add_argument("--n-synth", type=int, default=2500)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--n-classes", type=int, default=19)
    p.add_argument("--cluster-count", type=int, default=12)
    return parser


def _overrides(args) -> dict:
    ov = {
        "schema_path": args.schema_path,
        "real_root": args.real_root,
        "synthetic_root": args.synthetic_root,
        "levels": args.levels,
        "downscale": args.downscale,
        "metric": args.metric,
        "k": args.k,
        "window": args.window,
        "weighting": args.weighting,
        "batch_size": args.batch_size,
        "epochs": args.epochs,
        "seed": getattr(args, "seed", None),
        "output_dir": getattr(args, "out", None),
    }
    if args.remap:
        remaps = {}
        for item in args.remap:
            corpus, sep, path = item.partition("=")
            if not sep or corpus not in CORPORA:
                raise ConfigError(f"--remap expects real=PATH or synthetic=PATH, got {item!r}")
            remaps[corpus] = path
        ov["remap_paths"] = remaps
    if args.lenient:
        ov["strict"] = False
    if args.skip_bad:
        ov["fail_fast"] = False
    if args.focus:
        ov["focus"] = [s.strip() for s in args.focus.split(",") if s.strip()]
    return ov


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.pipeline:
            workers = getattr(args, "workers", None) or os.cpu_count() or 1
            check_positive_int(workers, "workers")
            cfg = load_config(getattr(args, "config", None), _overrides(args))
            ctx = Context(cfg, workers)
        else:
            ctx = None
            if getattr(args, "seed", None) is not None:
                check_seed(args.seed)
            if not hasattr(args, "seed"):
                args.seed = None
            if not hasattr(args, "out"):
                args.out = None
        args.func(args, ctx)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InvariantError as exc:
        print(f"error: invariant violated: {exc}", file=sys.stderr)
        return 3
    except SmartBatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - one-line diagnostic contract
        print(f"error: internal failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
