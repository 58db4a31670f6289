"""Deterministic engine for time-lapse embryo measurement pipelines.

Monotone stage-trajectory decoding, label-noise-aware loss,
ROI extraction, fragmentation gating, cross-focal-plane candidate
merging, a full evaluation-metric suite, and a synthetic data
generator, orchestrated over pluggable model backends.
"""

from .backends import (
    BackendSuite,
    FragmentationScorer,
    InstanceDetector,
    StageClassifier,
    ZonaSegmenter,
    file_backend_suite,
    suite_from_tables,
    synth_backend_suite,
)
from .decoder import (
    FrameDecode,
    TrajectoryResult,
    argmax_trajectory,
    brute_force_decode,
    decode_monotone,
    exclude_frames,
)
from .gating import (
    Detector,
    GateDecision,
    average_fragmentation,
    gate_embryo,
    middle_planes,
    route_frame,
)
from .geometry import (
    Roi,
    center_roi,
    crop_to_roi,
    embryo_roi,
    mask_iou,
    merge_across_planes,
    roi_around,
)
from .metrics import (
    AreaRatioStats,
    DetectionBlock,
    EvaluationReport,
    FragmentationBlock,
    MatchResult,
    SegmentationBlock,
    StageBlock,
    area_ratio_stats,
    average_precision_at,
    fragmentation_metrics,
    match_instances,
    mean_average_precision,
    pixel_accuracy,
    precision_recall,
    stage_metrics,
)
from .model import (
    BinaryMask,
    CandidateKind,
    ConfusionMatrix,
    EmbryoMovie,
    FragmentationScore,
    Frame,
    InstanceCandidate,
    ORDERED_CLASSES,
    SegClass,
    SegmentationMap,
    StageClass,
    StageProbabilityMatrix,
    validate_prob_vector,
)
from .pipeline import (
    FrameRecord,
    PipelineConfig,
    PipelineResult,
    evaluate_run,
    run_pipeline,
)
from .softloss import (
    ConfusionEstimate,
    TriplicateLabelSet,
    TriplicateRecord,
    estimate_confusion,
    mean_soft_loss,
    soft_likelihood,
    soft_log_likelihood,
)
from .synth import (
    GroundTruth,
    NoiseConfig,
    RenderedOutputs,
    SynthConfig,
    derive_embryo_seed,
    generate_movie,
    render_model_outputs,
)

__version__ = "0.1.0"
