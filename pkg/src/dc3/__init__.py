"""Combined semi-supervised classification and overclustering with
per-image ambiguity estimation, plus the annotation-proposal workflow that
turns predictions into relabeling suggestions."""

from .dataset import (
    AnnotationRecord,
    DatasetItem,
    DatasetManifest,
    SoftLabel,
    SyntheticConfig,
    aggregate_soft_label,
    ambiguity,
    apply_label_mode,
    generate_synthetic,
    is_fuzzy,
    load_manifest,
    sample_hard_label,
    split_dataset,
    validate_manifest,
)
from .losses import (
    LossBreakdown,
    LossWeights,
    ambiguity_loss,
    confidence_mask,
    dc3_total_loss,
    inverse_cross_entropy,
    pseudo_ambiguity_targets,
    select_negative_partner,
    similarity_loss,
)
from .metrics import (
    EvalRecord,
    RunMetrics,
    degeneration_check,
    diff_score,
    evaluate,
    inner_distance,
    select_best_run,
    weighted_f1,
)
from .model import (
    HeadConfig,
    ModelOutputs,
    Prediction,
    build_backbone,
    load_checkpoint,
    route_prediction,
    save_checkpoint,
    split_head,
)
from .proposals import (
    AnnotationSession,
    AnnotatorBehavior,
    ConsistencyReport,
    ProposalSet,
    build_report,
    consistency,
    generate_proposals,
    simulate_annotator,
    speed_up,
)
from .ssl_algos import (
    SSLAlgorithmSpec,
    build_algorithm,
    ema_update,
    pi_model_loss,
    pseudo_label_loss,
    supervised_loss,
)
from .trainer import RunConfig, export_embeddings, run_suite, train

__version__ = "0.1.0"
