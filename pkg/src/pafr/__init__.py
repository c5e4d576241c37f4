"""Panoptic machining-feature recognition on face-adjacency graphs."""

from .calibrate import (
    CalibratedBinaryClassifier,
    IsotonicModel,
    apply_isotonic,
    fit_calibrated,
    fit_isotonic,
)
from .gbdt import (
    DecisionTree,
    GbdtBinaryModel,
    GbdtMulticlassModel,
    TrainConfig,
    fit_binary,
    fit_multiclass,
    fit_tree,
)
from .graph import (
    EdgeRecord,
    EdgeSamples,
    FaceGrid,
    FaceRecord,
    GraphHeader,
    PartGraph,
    adjacency_matrix,
    binary_edge_labels,
    build_graph,
    ground_truth_instances,
    validate_instances,
)
from .io import load_parts, read_header, save_parts
from .metrics import (
    calibration_report,
    edge_binary_metrics,
    iou,
    match_instances,
    panoptic_quality,
    recognition_localization_accuracy,
)
from .pipeline import (
    PanopticPrediction,
    PipelineModel,
    components,
    infer,
    logit_sum_vote,
    predict_boundaries,
    train_pipeline,
)
from .serialize import load_model, save_model
from .synth import GenConfig, generate_dataset, generate_part

__version__ = "0.1.0"
