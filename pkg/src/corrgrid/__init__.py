"""Grid-based corrosion detection: segment scoring fused with object masks."""

__version__ = "0.1.0"

from .geometry import (BoundingBox, GridSpec, ImageDescriptor, PolygonMask, SegmentIndex,  # noqa: E402
                       flatten, intersection_fraction, rasterize_mask, segment_rect, unflatten)
from .annotations import (GridAnnotation, ObjectAnnotation, build_label_matrix,  # noqa: E402
                          parse_grid_annotation, parse_object_annotation, split_dataset)
from .ciss import TrainingSet, ciss, train_validation_split  # noqa: E402
from .scoring import BaselineScorer, ImageScoreResult, extract_features, score_image  # noqa: E402
from .detection import DetectedObject, baseline_detect, load_external_masks  # noqa: E402
from .ensemble import (EnsembleClassifier, erc_features, evaluate_ensemble,  # noqa: E402
                       predict_ensemble, train_ensemble)
from .metrics import (ConfusionCounts, DecisionConfig, average_precision,  # noqa: E402
                      confusion_metrics, derive_tau_I, ilp_decide, iop_decide, iou_bbox, iou_mask,
                      precision_at_iou, slp_decide)

__all__ = [
    "BoundingBox", "GridSpec", "ImageDescriptor", "PolygonMask", "SegmentIndex", "flatten",
    "intersection_fraction", "rasterize_mask", "segment_rect", "unflatten", "GridAnnotation",
    "ObjectAnnotation", "build_label_matrix", "parse_grid_annotation", "parse_object_annotation",
    "split_dataset", "TrainingSet", "ciss", "train_validation_split", "BaselineScorer",
    "ImageScoreResult", "extract_features", "score_image", "DetectedObject", "baseline_detect",
    "load_external_masks", "EnsembleClassifier", "erc_features", "evaluate_ensemble",
    "predict_ensemble", "train_ensemble", "ConfusionCounts", "DecisionConfig",
    "average_precision", "confusion_metrics", "derive_tau_I", "ilp_decide", "iop_decide",
    "iou_bbox", "iou_mask", "precision_at_iou", "slp_decide",
]
