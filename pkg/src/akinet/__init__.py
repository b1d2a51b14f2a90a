"""Acute kidney injury prediction from tabular ICU data with small numpy CNNs."""
from .data import (
    Dataset,
    FeatureSchema,
    NormalizationStats,
    PatientRecord,
    apply_normalization,
    fit_normalization,
    load_csv,
    preprocess,
    schema_for,
    smote_oversample,
    synth_generate,
)
from .errors import AkiError
from .evaluation import auroc, cross_validate, depth_sweep, kfold_split
from .models import ArchitectureSpec, build_model, load_checkpoint, predict, save_checkpoint, train
from .optim import Adam, Hyperparams

__all__ = [
    "Adam", "AkiError", "ArchitectureSpec", "Dataset", "FeatureSchema", "Hyperparams",
    "NormalizationStats", "PatientRecord", "apply_normalization", "auroc", "build_model",
    "cross_validate", "depth_sweep", "fit_normalization", "kfold_split", "load_checkpoint",
    "load_csv", "predict", "preprocess", "save_checkpoint", "schema_for", "smote_oversample",
    "synth_generate", "train",
]
