"""Uncertainty-guided dataset curation, active learning and deferral toolkit.

Consumes per-training-epoch probability logs and embeddings from any
classifier and produces curation decisions, active-learning query schedules
and deployment-time deferral decisions, with a human-in-the-loop labeling
service.
"""

from .active import (
    ALSession,
    FineTuneTrainer,
    NoOpTrainer,
    RecordingRanking,
    SimulatedOracle,
    al_step,
    new_session,
    next_query_batch,
    rank_recordings,
    run_al_session,
)
from .curation import ConfigReport, SelectionManifest, compare_configs, select_data
from .deferral import (
    DeferralScore,
    RetentionCurve,
    ThresholdPick,
    explain,
    pick_threshold,
    retention_curve,
    score,
)
from .dynamics import (
    DynamicsLog,
    LogFormatError,
    SampleUncertainty,
    ingest_log,
    sample_metrics,
    sample_metrics_entropy,
    stratify,
)
from .neighbors import NeighborIndex, build_index, query_knn
from .refmodel import (
    EmbeddingSet,
    FeatureTable,
    ModelCheckpoint,
    SoftmaxNetClassifier,
    SyntheticDataset,
    SyntheticSpec,
    embed,
    generate_synthetic,
    project_2d,
    train_logged,
)

__version__ = "0.1.0"
