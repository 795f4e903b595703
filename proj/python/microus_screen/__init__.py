"""Patient-level prostate cancer screening from micro-ultrasound sweeps."""

from ._core import (
    Forest,
    ManifestError,
    auroc,
    classify_patient,
    compute_prostate_volume,
    confusion_metrics,
    derive_seed,
    evaluate,
    make_folds,
    patient_score,
    roc_curve,
    sample_clinical,
    synthesize,
)

__all__ = [
    "Forest",
    "ManifestError",
    "auroc",
    "classify_patient",
    "compute_prostate_volume",
    "confusion_metrics",
    "derive_seed",
    "evaluate",
    "make_folds",
    "patient_score",
    "roc_curve",
    "sample_clinical",
    "synthesize",
]
