"""Region-based ensemble: fuse segment scores with object-mask overlap.

For every segment of every image the overlap fraction with the predicted object
mask gives ``tB`` (1 when the fraction reaches the overlap threshold) and
``tI = fraction * conf_o`` (0 below the threshold). Two feature sets follow:
FB = (bhat, tB) and FC = (conf_c_seg, tI), both labelled with the ground truth.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import KFold
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import _nn
from .geometry import GridSpec, ImageDescriptor, grid_overlap_fractions, rasterize_mask
from .metrics import ConfusionCounts, confusion_metrics

OVERLAP_THRESHOLD = 0.10
FEATURE_COLUMNS = {"FB": ("bhat", "tB"), "FC": ("conf_c_seg", "tI")}
TABLE_COLUMNS = ("image_id", "x", "y", "conf_c_seg", "bhat", "tB", "tI", "truth")
PARAMS_FORMAT = "corrgrid-ensemble"
PARAMS_VERSION = 1


class EnsembleError(ValueError):
    pass


def erc_rule(fraction: float, conf_o: float, threshold: float = OVERLAP_THRESHOLD) -> tuple:
    """``(tB, tI)`` for one segment."""
    if fraction >= threshold:
        return 1, fraction * conf_o
    return 0, 0.0


@dataclass(frozen=True)
class ErcRow:
    image_id: str
    x: int
    y: int
    conf_c_seg: float
    bhat: int
    tB: int
    tI: float
    truth: int


@dataclass
class ErcTable:
    """Column-oriented rows, one per (image, segment), row-major within an image."""

    image_id: np.ndarray
    x: np.ndarray
    y: np.ndarray
    conf_c_seg: np.ndarray
    bhat: np.ndarray
    tB: np.ndarray
    tI: np.ndarray
    truth: np.ndarray

    def __len__(self):
        return len(self.image_id)

    def rows(self):
        for i in range(len(self)):
            yield ErcRow(str(self.image_id[i]), int(self.x[i]), int(self.y[i]),
                         float(self.conf_c_seg[i]), int(self.bhat[i]), int(self.tB[i]),
                         float(self.tI[i]), int(self.truth[i]))

    @classmethod
    def concat(cls, parts) -> "ErcTable":
        return cls(*(np.concatenate([getattr(p, c) for p in parts]) for c in TABLE_COLUMNS))


@dataclass
class EnsembleFeatureSet:
    kind: str
    table: ErcTable

    def __post_init__(self):
        if self.kind not in FEATURE_COLUMNS:
            raise EnsembleError(f"feature set kind must be FB or FC, got {self.kind!r}")

    @property
    def X(self) -> np.ndarray:
        a, b = FEATURE_COLUMNS[self.kind]
        return np.column_stack([getattr(self.table, a), getattr(self.table, b)]).astype(float)

    @property
    def y(self) -> np.ndarray:
        return self.table.truth.astype(int)

    def __len__(self):
        return len(self.table)


def _image_rows(image_id, result, det, truth, grid, image, threshold) -> ErcTable:
    n = grid.n
    if result.cs.shape != (n, n) or np.asarray(truth).shape != (n, n):
        raise EnsembleError(f"{image_id}: matrices do not match grid n={n}")
    if det is None:
        fractions = np.zeros((n, n))
        conf_o = 0.0
    else:
        fractions = grid_overlap_fractions(grid, rasterize_mask(det.mask, image).membership)
        conf_o = det.conf_o
    tB = (fractions >= threshold).astype(np.uint8)
    tI = np.where(tB == 1, fractions * conf_o, 0.0)
    xs, ys = np.meshgrid(np.arange(1, n + 1), np.arange(1, n + 1), indexing="ij")
    return ErcTable(np.full(n * n, image_id, dtype=object), xs.ravel(), ys.ravel(),
                    result.cs.ravel().astype(float), result.b_hat.ravel().astype(np.uint8),
                    tB.ravel(), tI.ravel(), np.asarray(truth).ravel().astype(np.uint8))


def erc_features(score_results, detections: Mapping, truths: Mapping, grid: GridSpec,
                 images: Optional[Mapping[str, ImageDescriptor]] = None,
                 overlap_threshold: float = OVERLAP_THRESHOLD) -> tuple:
    """Build ``(FC, FB)`` from per-image score results, detections and truth matrices.

    ``detections`` maps image id to a detection; a missing key is "no object",
    which yields ``tB = tI = 0`` for every segment of that image.
    """
    parts = []
    for r in score_results:
        if r.image_id not in truths:
            raise EnsembleError(f"no ground truth for image {r.image_id!r}")
        image = (images or {}).get(r.image_id) or ImageDescriptor(r.image_id, grid.width_px,
                                                                  grid.height_px)
        grid.check_image(image)
        parts.append(_image_rows(r.image_id, r, detections.get(r.image_id),
                                 truths[r.image_id], grid, image, overlap_threshold))
    if not parts:
        raise EnsembleError("no images to build ensemble features from")
    table = ErcTable.concat(parts)
    return EnsembleFeatureSet("FC", table), EnsembleFeatureSet("FB", table)


# -- classifier ---------------------------------------------------------------

class EnsembleClassifier(ClassifierMixin, BaseEstimator):
    """Per-segment classifier over two ensemble features.

    ``kind`` is ``"logistic"``, ``"mlp"`` (one tanh hidden layer) or ``"svm"``
    (linear max-margin: squared hinge loss with L2 penalty ``alpha``, the
    smooth variant used by liblinear's default). All kinds train by gradient
    descent. The decision is 1 when ``sigmoid(logit) >= 0.5``.
    """

    def __init__(self, kind="logistic", hidden_units=4, learning_rate=0.5, epochs=500,
                 batch_size=None, alpha=None, random_state=0):
        self.kind = kind
        self.hidden_units = hidden_units
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.alpha = alpha
        self.random_state = random_state

    @property
    def alpha_(self) -> float:
        if self.alpha is not None:
            return float(self.alpha)
        return 1e-3 if self.kind == "svm" else 0.0

    def fit(self, X, y):
        _nn.check_kind(self.kind)
        X, y = check_X_y(X, y, dtype=float)
        classes = np.unique(y)
        if len(classes) != 2 or not set(classes.tolist()) <= {0, 1}:
            raise EnsembleError(f"ensemble training needs both classes 0 and 1, got {classes.tolist()}")
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        rng = np.random.default_rng(self.random_state)
        init = _nn.init_params(self.kind, X.shape[1], rng, self.hidden_units)
        self.initial_params_ = {k: v.copy() for k, v in init.items()}
        self.params_, self.loss_curve_ = _nn.fit_gd(
            self.kind, init, X, y.astype(float), learning_rate=self.learning_rate,
            epochs=self.epochs, batch_size=self.batch_size, rng=rng, alpha=self.alpha_)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise EnsembleError(f"feature layout mismatch: expected {self.n_features_in_} "
                                f"columns, got {X.shape[1]}")
        return _nn.logits(self.kind, self.params_, X)

    def predict_proba(self, X):
        p = _nn.sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    def loss_and_grad(self, X, y, params=None):
        return _nn.loss_and_grad(self.kind, self.params_ if params is None else params,
                                 np.asarray(X, dtype=float), np.asarray(y, dtype=float),
                                 self.alpha_)

    def to_document(self, feature_kind: str | None = None) -> dict:
        check_is_fitted(self, "params_")
        return {"format": PARAMS_FORMAT, "version": PARAMS_VERSION,
                "feature_set": feature_kind, "hyperparams": self.get_params(),
                "n_features": int(self.n_features_in_),
                "params": _nn.params_to_document(self.params_)}

    @classmethod
    def from_document(cls, doc: dict) -> "EnsembleClassifier":
        if doc.get("format") != PARAMS_FORMAT or doc.get("version") != PARAMS_VERSION:
            raise EnsembleError("not a corrgrid ensemble parameter document")
        est = cls(**doc["hyperparams"])
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = int(doc["n_features"])
        est.params_ = _nn.params_from_document(doc["params"])
        return est


def train_ensemble(fs: EnsembleFeatureSet, kind: str = "logistic", hyperparams: dict | None = None,
                   seed: int = 0) -> EnsembleClassifier:
    return EnsembleClassifier(kind=kind, random_state=seed, **(hyperparams or {})).fit(fs.X, fs.y)


def predict_ensemble(model: EnsembleClassifier, features) -> tuple:
    """``(decisions, confidences)`` for an :class:`EnsembleFeatureSet` or a feature matrix."""
    X = features.X if isinstance(features, EnsembleFeatureSet) else features
    conf = model.predict_proba(X)[:, 1]
    return (conf >= 0.5).astype(np.uint8), conf


def evaluate_ensemble(folds: int, fs: EnsembleFeatureSet, kind: str = "logistic", seed: int = 0,
                      hyperparams: dict | None = None) -> dict:
    """Seeded k-fold over rows: per-fold scores, their mean, and pooled out-of-fold scores."""
    if folds < 2:
        raise EnsembleError(f"need at least 2 folds, got {folds}")
    if len(fs) < folds:
        raise EnsembleError(f"{len(fs)} rows are too few for {folds} folds")
    X, y = fs.X, fs.y
    oof = np.zeros(len(y), dtype=np.uint8)
    per_fold, assignment = [], np.zeros(len(y), dtype=int)
    splitter = KFold(n_splits=folds, shuffle=True, random_state=seed)
    for f, (tr, te) in enumerate(splitter.split(X)):
        model = train_ensemble(EnsembleFeatureSet(fs.kind, _take(fs.table, tr)), kind,
                               hyperparams, seed)
        pred, _ = predict_ensemble(model, X[te])
        oof[te] = pred
        assignment[te] = f
        per_fold.append(confusion_metrics(ConfusionCounts.from_predictions(y[te], pred)))
    keys = ("accuracy", "precision", "recall", "f1")
    mean = {k: float(np.mean([getattr(s, k) for s in per_fold])) for k in keys}
    pooled = confusion_metrics(ConfusionCounts.from_predictions(y, oof))
    return {"kind": kind, "feature_set": fs.kind, "folds": folds, "seed": seed,
            "per_fold": [s.as_dict() for s in per_fold], "mean": mean,
            "pooled": pooled.as_dict(), "fold_assignment": assignment, "oof_predictions": oof}


def _take(table: ErcTable, rows) -> ErcTable:
    return ErcTable(*(getattr(table, c)[rows] for c in TABLE_COLUMNS))


# -- files --------------------------------------------------------------------

def write_feature_table(path, table: ErcTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in table.rows():
            w.writerow((r.image_id, r.x, r.y, repr(r.conf_c_seg), r.bhat, r.tB, repr(r.tI), r.truth))


def read_feature_table(path) -> ErcTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TABLE_COLUMNS:
            raise EnsembleError(f"feature file header must be {','.join(TABLE_COLUMNS)}")
        rows = list(reader)
    col = lambda name, conv, dt: np.array([conv(r[name]) for r in rows], dtype=dt)  # noqa: E731
    return ErcTable(col("image_id", str, object), col("x", int, int), col("y", int, int),
                    col("conf_c_seg", float, float), col("bhat", int, np.uint8),
                    col("tB", int, np.uint8), col("tI", float, float), col("truth", int, np.uint8))


def save_model(path, model: EnsembleClassifier, feature_kind: str | None = None) -> None:
    Path(path).write_text(json.dumps(model.to_document(feature_kind)) + "\n", encoding="utf-8")


def load_model(path) -> tuple:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return EnsembleClassifier.from_document(doc), doc.get("feature_set")
