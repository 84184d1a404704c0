"""Semantic-layout pairing of real and synthetic driving images.

Spatial pyramid class histograms (SP-Feat) of label maps drive an exact
nearest-neighbour search from real to synthetic images. A usage-weighted
assignment spreads the pairs over the synthetic corpus, and seeded batch plans
hand them to any external image-translation trainer. Fréchet distances and
class-density statistics support evaluation.
"""
from .batcher import BatchPlan, plan_batches, validate_plan
from .exceptions import ConfigError, DataError, InvariantError, SmartBatchError
from .frechet import EmbeddingSet, GaussianStats, fid, fid_table, fit_stats, sqrtm_psd
from .index import ExactNeighbors, NeighborList, distance, knn_all
from .labelmap import CorpusListing, LabelMap, decode_labelmap, downscale_nearest, scan_corpus
from .pairing import PairingManifest, SmartPairing, assign, coverage_report, sweep
from .schema import ClassSchema, RemapTable, load_remap, load_schema, remap
from .spfeat import (
    FeatureSet,
    SliceGrid,
    SpatialPyramidFeatures,
    SpFeat,
    extract_corpus,
    extract_spfeat,
    read_feature_set,
    slice_bounds,
    write_feature_set,
)
from .stats import ClassDensityReport, class_density, density_compare

__version__ = "0.1.0"

__all__ = [
    "BatchPlan", "ClassDensityReport", "ClassSchema", "ConfigError", "CorpusListing",
    "DataError", "EmbeddingSet", "ExactNeighbors", "FeatureSet", "GaussianStats",
    "InvariantError", "LabelMap", "NeighborList", "PairingManifest", "RemapTable",
    "SliceGrid", "SmartBatchError", "SmartPairing", "SpFeat", "SpatialPyramidFeatures",
    "assign", "class_density", "coverage_report", "decode_labelmap", "density_compare",
    "distance", "downscale_nearest", "extract_corpus", "extract_spfeat", "fid", "fid_table",
    "fit_stats", "knn_all", "load_remap", "load_schema", "plan_batches", "read_feature_set", "remap",
    "scan_corpus", "slice_bounds", "sqrtm_psd", "sweep", "validate_plan", "write_feature_set",
]
