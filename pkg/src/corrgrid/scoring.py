"""Per-segment corrosion scoring.

A segment scorer is anything exposing ``score_segments(crops) -> array`` of
confidences in [0, 1]. :class:`BaselineScorer` is a trainable stand-in for a
segment CNN that learns from colour statistics; scores produced elsewhere enter
through :func:`load_external_scores`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import _nn
from .geometry import GridSpec, check_confidence_matrix, segment_blocks

log = logging.getLogger(__name__)

N_BINS = 8
THUMB = 8
N_FEATURES = 3 * 2 + 3 * N_BINS + THUMB * THUMB
PARAMS_FORMAT = "corrgrid-scorer"
PARAMS_VERSION = 1
SCORES_FORMAT = "corrgrid-scores"
SCORES_VERSION = 1


class ScoringError(ValueError):
    pass


class SegmentScorer(Protocol):
    def score_segments(self, crops: Sequence[np.ndarray]) -> np.ndarray: ...


# -- features -----------------------------------------------------------------

def _block_mean(gray: np.ndarray, size: int) -> np.ndarray:
    # upsample small rasters by repetition so every output cell gets >= 1 pixel
    for axis in (0, 1):
        dim = gray.shape[axis]
        if dim < size:
            gray = np.repeat(gray, -(-size // dim), axis=axis)
    h, w = gray.shape
    rows = (np.arange(size) * h) // size
    cols = (np.arange(size) * w) // size
    sums = np.add.reduceat(np.add.reduceat(gray, rows, axis=0), cols, axis=1)
    counts = np.outer(np.diff(np.append(rows, h)), np.diff(np.append(cols, w)))
    return sums / counts


def extract_features(pixels: np.ndarray, shape: tuple | None = None) -> np.ndarray:
    """94 colour features of one RGB segment.

    Layout: per-channel mean (3), per-channel std (3), per-channel normalized
    8-bin histogram (24), 8x8 grayscale thumbnail (64). Intensities scaled to [0, 1].
    """
    px = np.asarray(pixels)
    if px.ndim != 3 or px.shape[2] != 3:
        raise ScoringError(f"expected an (h, w, 3) RGB raster, got shape {px.shape}")
    if shape is not None and px.shape[:2] != tuple(shape):
        raise ScoringError(f"segment is {px.shape[1]}x{px.shape[0]}, expected "
                           f"{shape[1]}x{shape[0]}")
    if px.shape[0] == 0 or px.shape[1] == 0:
        raise ScoringError("empty segment")
    flat = px.reshape(-1, 3).astype(float)
    means = flat.mean(axis=0) / 255.0
    stds = flat.std(axis=0) / 255.0
    bins = np.minimum(flat.astype(int) * N_BINS // 256, N_BINS - 1)
    hist = np.stack([np.bincount(bins[:, c], minlength=N_BINS) for c in range(3)])
    hist = (hist / flat.shape[0]).reshape(-1)
    gray = px.astype(float) @ np.array([0.299, 0.587, 0.114])
    thumb = _block_mean(gray, THUMB).reshape(-1) / 255.0
    return np.concatenate([means, stds, hist, thumb])


class ColorFeatures(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping a sequence of RGB crops to feature rows."""

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return np.vstack([extract_features(c) for c in X]) if len(X) else np.empty((0, N_FEATURES))


# -- baseline scorer ----------------------------------------------------------

class BaselineScorer(ClassifierMixin, BaseEstimator):
    """Logistic or one-hidden-layer classifier on :func:`extract_features` rows.

    Trained by minibatch gradient descent on binary cross-entropy. Features are
    standardized with statistics from the training rows.
    """

    def __init__(self, architecture="logistic", hidden_units=16, learning_rate=0.1,
                 epochs=50, batch_size=32, standardize=True, random_state=0):
        self.architecture = architecture
        self.hidden_units = hidden_units
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.standardize = standardize
        self.random_state = random_state

    @property
    def _kind(self):
        if self.architecture not in ("logistic", "mlp"):
            raise ScoringError(f"architecture must be 'logistic' or 'mlp', got {self.architecture!r}")
        return self.architecture

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        classes = np.unique(y)
        if len(classes) != 2 or not set(classes.tolist()) <= {0, 1}:
            raise ScoringError(f"training labels must contain both 0 and 1, got {classes.tolist()}")
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            scale = X.std(axis=0)
            self.scale_ = np.where(scale > 1e-12, scale, 1.0)
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        rng = np.random.default_rng(self.random_state)
        init = _nn.init_params(self._kind, X.shape[1], rng, self.hidden_units)
        self.initial_params_ = {k: v.copy() for k, v in init.items()}
        self.params_, self.loss_curve_ = _nn.fit_gd(
            self._kind, init, self._prepare(X), y.astype(float),
            learning_rate=self.learning_rate, epochs=self.epochs,
            batch_size=self.batch_size, rng=rng)
        return self

    def _prepare(self, X):
        return (X - self.mean_) / self.scale_

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ScoringError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return _nn.logits(self._kind, self.params_, self._prepare(X))

    def predict_proba(self, X):
        p = _nn.sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    def score_segments(self, crops):
        if len(crops) == 0:
            return np.empty(0)
        return self.predict_proba(ColorFeatures().transform(crops))[:, 1]

    def loss_and_grad(self, X, y, params=None):
        """Training objective on already-extracted features, for gradient checks."""
        X = self._prepare(np.asarray(X, dtype=float))
        return _nn.loss_and_grad(self._kind, self.params_ if params is None else params,
                                 X, np.asarray(y, dtype=float))

    def to_document(self) -> dict:
        check_is_fitted(self, "params_")
        return {"format": PARAMS_FORMAT, "version": PARAMS_VERSION,
                "hyperparams": self.get_params(),
                "feature_spec": {"n_features": int(self.n_features_in_), "bins": N_BINS,
                                 "thumbnail": THUMB},
                "mean": self.mean_.tolist(), "scale": self.scale_.tolist(),
                "params": _nn.params_to_document(self.params_)}

    @classmethod
    def from_document(cls, doc: dict) -> "BaselineScorer":
        if doc.get("format") != PARAMS_FORMAT or doc.get("version") != PARAMS_VERSION:
            raise ScoringError("not a corrgrid scorer parameter document (or unsupported version)")
        est = cls(**doc["hyperparams"])
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = int(doc["feature_spec"]["n_features"])
        est.mean_ = np.asarray(doc["mean"], dtype=float)
        est.scale_ = np.asarray(doc["scale"], dtype=float)
        est.params_ = _nn.params_from_document(doc["params"])
        return est

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_document()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BaselineScorer":
        return cls.from_document(json.loads(Path(path).read_text(encoding="utf-8")))


def training_features(ts) -> tuple:
    """Feature matrix and labels of a :class:`~corrgrid.ciss.TrainingSet`."""
    X = ColorFeatures().transform(list(ts.iter_pixels()))
    return X, ts.labels


def train_baseline(ts, hyperparams: dict | None = None) -> BaselineScorer:
    hp = dict(hyperparams or {})
    rename = {"lr": "learning_rate", "batch": "batch_size", "seed": "random_state"}
    hp = {rename.get(k, k): v for k, v in hp.items()}
    X, y = training_features(ts)
    if len(np.unique(y)) < 2:
        raise ScoringError("training set contains a single class")
    return BaselineScorer(**hp).fit(X, y)


# -- image scoring ------------------------------------------------------------

@dataclass(frozen=True)
class ImageScoreResult:
    image_id: str
    cs: np.ndarray
    b_hat: np.ndarray
    conf_c: float
    tau_s: float

    @classmethod
    def from_confidences(cls, image_id: str, cs, tau_s: float = 0.5) -> "ImageScoreResult":
        cs = check_confidence_matrix(cs)
        b_hat = (cs >= tau_s).astype(np.uint8)
        return cls(image_id, cs, b_hat, float(b_hat.sum()) / b_hat.size, tau_s)

    @property
    def n(self) -> int:
        return self.cs.shape[0]


def score_image(scorer, pixels: np.ndarray, grid: GridSpec, tau_s: float = 0.5,
                image_id: str = "") -> ImageScoreResult:
    blocks = segment_blocks(np.asarray(pixels), grid)
    crops = [blocks[i, j] for i in range(grid.n) for j in range(grid.n)]
    try:
        conf = np.asarray(scorer.score_segments(crops), dtype=float)
    except Exception as exc:
        raise ScoringError(f"scorer failed on image {image_id!r}: {exc}") from exc
    if conf.shape != (grid.n_segments,):
        raise ScoringError(f"scorer returned {conf.shape} values for {grid.n_segments} segments "
                           f"of image {image_id!r}")
    if not np.isfinite(conf).all() or conf.min() < 0 or conf.max() > 1:
        raise ScoringError(f"scorer produced confidences outside [0, 1] on image {image_id!r}")
    return ImageScoreResult.from_confidences(image_id, conf.reshape(grid.n, grid.n), tau_s)


# -- score files --------------------------------------------------------------

def scores_to_document(results: Sequence[ImageScoreResult], tau_s: float | None = None) -> dict:
    images = []
    for r in results:
        entry = {"image_id": r.image_id, "n": r.n, "confidences": r.cs.reshape(-1).tolist()}
        if tau_s is not None:
            entry["decisions"] = r.b_hat.reshape(-1).astype(int).tolist()
        images.append(entry)
    return {"format": SCORES_FORMAT, "version": SCORES_VERSION, "tau_s": tau_s, "images": images}


def load_external_scores(document, n: int | None = None, expected_ids=None) -> list:
    """Parse a score document into ``(image_id, cs_matrix)`` pairs."""
    if isinstance(document, (str, bytes)):
        document = json.loads(document) if document.strip() else {}
    images = document.get("images", []) if isinstance(document, dict) else None
    if images is None:
        raise ScoringError("score document must be an object with an 'images' list")
    if not images:
        log.warning("score document contains no images")
    out, seen = [], set()
    for entry in images:
        image_id = str(entry["image_id"])
        size = int(entry["n"])
        if n is not None and size != n:
            raise ScoringError(f"{image_id}: score matrix n={size}, expected {n}")
        values = np.asarray(entry["confidences"], dtype=float)
        if values.size != size * size:
            raise ScoringError(f"{image_id}: {values.size} confidences for n={size}")
        if not np.isfinite(values).all() or values.min() < 0 or values.max() > 1:
            raise ScoringError(f"{image_id}: confidences outside [0, 1]")
        if image_id in seen:
            raise ScoringError(f"duplicate scores for image {image_id!r}")
        seen.add(image_id)
        out.append((image_id, values.reshape(size, size)))
    if expected_ids is not None:
        missing = sorted(set(expected_ids) - seen)
        if missing:
            raise ScoringError(f"scores missing for {len(missing)} images, e.g. {missing[:3]}")
    return out


def write_scores(path, results, tau_s=None) -> None:
    Path(path).write_text(json.dumps(scores_to_document(results, tau_s)) + "\n", encoding="utf-8")


def read_scores(path, n=None, expected_ids=None, tau_s: float = 0.5) -> list:
    doc = Path(path).read_text(encoding="utf-8")
    return [ImageScoreResult.from_confidences(i, cs, tau_s)
            for i, cs in load_external_scores(doc, n, expected_ids)]
