"""Few-shot compound activity prediction toolkit.

Parse SMILES, fingerprint molecules, and train a few-shot regressor that
predicts a query compound's activity in an assay from a handful of that
assay's (compound, activity) measurements.
"""

from .data import (
    Dataset,
    Entry,
    IngestError,
    IngestOptions,
    InsufficientContextsError,
    SyntheticSpec,
    dump_dataset,
    generate_synthetic,
    ingest_tsv,
    load_dataset,
    sample_episode,
    split_assays,
)
from .fingerprint import Fingerprint, morgan_fingerprint, tanimoto
from .metrics import (
    enrichment,
    export_encodings,
    logistic_probe,
    mean_per_group_r,
    pearson_r,
    roc_auc,
)
from .model import (
    Episode,
    FSCAPConfig,
    FSCAPModel,
    encode_context_set,
    load_model,
    predict,
    predict_batch,
    save_model,
    train_epoch,
)
from .smiles import Molecule, SmilesParseError, parse_smiles

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Entry",
    "Episode",
    "FSCAPConfig",
    "FSCAPModel",
    "Fingerprint",
    "IngestError",
    "IngestOptions",
    "InsufficientContextsError",
    "Molecule",
    "SmilesParseError",
    "SyntheticSpec",
    "dump_dataset",
    "encode_context_set",
    "enrichment",
    "export_encodings",
    "generate_synthetic",
    "ingest_tsv",
    "load_dataset",
    "load_model",
    "logistic_probe",
    "mean_per_group_r",
    "morgan_fingerprint",
    "parse_smiles",
    "pearson_r",
    "predict",
    "predict_batch",
    "roc_auc",
    "sample_episode",
    "save_model",
    "split_assays",
    "tanimoto",
    "train_epoch",
    "__version__",
]
