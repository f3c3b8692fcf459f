"""Retinal vessel segmentation by region growing with a random-forest pixel classifier."""

from .connectivity import ConnectivityConfig
from .features import FeatureStack, build_stack, training_set, vector_at
from .forest import RandomForest, load_model, permutation_importance, save_model
from .growseg import SeedSet, grow_trace, segment, select_seeds
from .manifest import DatasetManifest, load_manifest
from .metrics import confusion, evaluate, metrics, roc_auc
from .pipeline import VesselSegmenter, run_pipeline, write_report

__version__ = "0.1.0"

__all__ = [
    "ConnectivityConfig",
    "DatasetManifest",
    "VesselSegmenter",
    "confusion",
    "evaluate",
    "load_manifest",
    "metrics",
    "roc_auc",
    "run_pipeline",
    "write_report",
    "FeatureStack",
    "RandomForest",
    "SeedSet",
    "build_stack",
    "grow_trace",
    "load_model",
    "permutation_importance",
    "save_model",
    "segment",
    "select_seeds",
    "training_set",
    "vector_at",
]
