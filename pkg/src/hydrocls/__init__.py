"""Hydrocephalus slice classification pipeline.

Synthetic ventricle phantoms with ground-truth masks, dataset ingestion,
seeded augmentation, transfer-learning training on a frozen backbone,
repeated stratified cross-validation, bootstrap confidence reporting,
threshold calibration, and gradient-weighted class activation maps.
"""

__version__ = "0.1.0"

from .errors import (
    CapabilityError,
    ConfigurationError,
    HydroError,
    IngestError,
    LabelingError,
    NumericError,
    PlanningError,
    ShapeMismatchError,
    SpecValidationError,
    StatsError,
    TrainingError,
)
from .ingest import (
    LABEL_HYDROCEPHALUS,
    LABEL_NORMAL,
    DatasetManifest,
    ImageRecord,
    ValidationReport,
    build_manifest,
    extract_slice,
    read_manifest,
    validate_manifest,
    write_manifest,
)
from .phantom import (
    PhantomSample,
    PhantomSpec,
    classify_spec,
    generate_dataset,
    generate_phantom,
    synthetic_evans_index,
)
from .preprocess import (
    AugmentPolicy,
    NormalizationStats,
    augment,
    center_crop_resize,
    denormalize,
    evaluation_pipeline,
    normalize,
    sample_augment_params,
)
from .model import (
    CLASS_ORDER,
    HeadConfig,
    HydroClassifier,
    OneCycleConfig,
    TrainConfig,
    TrainedModel,
    backbone_checksum,
    build_classifier,
    freeze_backbone,
    head_checksum,
    load_checkpoint,
    one_cycle_lr,
    predict_proba,
    predict_records,
    save_checkpoint,
    train_head,
)
from .cvharness import (
    FoldAssignment,
    FoldPlan,
    FoldResult,
    plan_folds,
    read_fold_results,
    run_cv,
    train_single_fold,
    verify_no_leakage,
    write_fold_results,
)
from .stats import (
    BootstrapSummary,
    ConfusionMatrix,
    ThresholdReport,
    aggregate_cv,
    bootstrap_summary,
    calibrate_threshold,
    confusion,
    format_summary,
    metrics,
)
from .explain import (
    Heatmap,
    activation_mean,
    gradcam,
    localization_score,
    overlay,
    read_heatmap,
    resize_mask,
    write_heatmap,
)
from .config import PipelineConfig, load_config, save_config
