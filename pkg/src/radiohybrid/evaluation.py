"""Confusion matrices, precision/recall/F1, test-time augmentation and report I/O."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyDataset, EmptyMatrix, IndexOutOfRange, InvalidParam, LengthMismatch
from .fusionnet import ModelParams, predict_proba
from .imgio import CLASS_NAMES, Image, read_pgm
from .preprocess import AugmentConfig, augment, preprocess_image
from .radiomics import RadiomicsConfig, extract_radiomics

__all__ = [
    "ConfusionMatrix",
    "EvalReport",
    "confusion_matrix",
    "per_class_counts",
    "metrics_from_confusion",
    "tta_predict",
    "evaluate",
    "report_delta",
]


@dataclass
class ConfusionMatrix:
    """``counts[true, predicted]``."""

    counts: np.ndarray
    classes: tuple[str, ...] = CLASS_NAMES

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def confusion_matrix(preds, labels, classes: Sequence[str] = CLASS_NAMES) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise LengthMismatch(f"{preds.size} predictions vs {labels.size} labels")
    k = len(classes)
    for arr in (preds, labels):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise IndexOutOfRange(f"class index outside [0, {k})")
    counts = np.bincount(labels * k + preds, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts, tuple(classes))


def per_class_counts(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(TP, FP, FN)`` per class."""
    c = cm.counts
    tp = np.diag(c).copy()
    return tp, c.sum(axis=0) - tp, c.sum(axis=1) - tp


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


@dataclass
class EvalReport:
    """Metrics in percent. ``overall`` is the unweighted (macro) mean over classes."""

    accuracy: float
    per_class: dict[str, dict]
    overall: dict
    confusion: list[list[int]]
    classes: list[str]
    n_samples: int
    tta: bool = False
    n_views: int = 1
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": self.per_class,
            "overall": self.overall,
            "confusion": self.confusion,
            "classes": self.classes,
            "n_samples": self.n_samples,
            "tta": self.tta,
            "n_views": self.n_views,
            "warnings": self.warnings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))

    def write(self, path) -> None:
        Path(path).write_text(self.to_json())


def metrics_from_confusion(cm: ConfusionMatrix, tta: bool = False, n_views: int = 1) -> EvalReport:
    """Per-class precision/recall/F1, macro averages and accuracy.

    A zero denominator gives a metric of 0 and a warning in the report.
    """
    total = cm.total
    if total == 0:
        raise EmptyMatrix("confusion matrix has no samples")
    tp, fp, fn = per_class_counts(cm)
    warnings = []
    per_class = {}
    precisions, recalls, f1s = [], [], []
    for i, name in enumerate(cm.classes):
        if tp[i] + fp[i] == 0:
            warnings.append(f"precision undefined for {name} (no predictions); set to 0")
        if tp[i] + fn[i] == 0:
            warnings.append(f"recall undefined for {name} (no support); set to 0")
        p = _ratio(int(tp[i]), int(tp[i] + fp[i]))
        r = _ratio(int(tp[i]), int(tp[i] + fn[i]))
        f1 = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
        precisions.append(100.0 * p)
        recalls.append(100.0 * r)
        f1s.append(100.0 * f1)
        per_class[name] = {
            "precision": precisions[-1],
            "recall": recalls[-1],
            "f1": f1s[-1],
            "support": int(tp[i] + fn[i]),
        }
    overall = {
        "precision": float(np.mean(precisions)),
        "recall": float(np.mean(recalls)),
        "f1": float(np.mean(f1s)),
        "averaging": "macro",
    }
    return EvalReport(
        accuracy=100.0 * int(tp.sum()) / total,
        per_class=per_class,
        overall=overall,
        confusion=cm.counts.tolist(),
        classes=list(cm.classes),
        n_samples=total,
        tta=tta,
        n_views=n_views,
        warnings=warnings,
    )


def _view_index(base_index: int, view: int) -> int:
    return (int(base_index) << 16) | int(view)


def tta_predict(
    model: ModelParams,
    img: Image | np.ndarray,
    deep=None,
    n_views: int = 8,
    cfg: AugmentConfig | None = None,
    radiomics_cfg: RadiomicsConfig | None = None,
    base_index: int = 0,
) -> np.ndarray:
    """Average softmax output over the original image and ``n_views - 1`` augmented copies.

    ``img`` must already be preprocessed (resized, unit domain). Radiomic
    features are rounded through float32, exactly as when they are stored in
    a feature file, so view 0 reproduces the stored-feature prediction.
    """
    if n_views < 1:
        raise InvalidParam(f"n_views must be >= 1, got {n_views}")
    cfg = cfg or AugmentConfig()
    deep = None if deep is None else np.asarray(deep, dtype=np.float32).astype(np.float64).ravel()
    rows = []
    for v in range(n_views):
        view = img if v == 0 else augment(img, cfg, _view_index(base_index, v))
        rad = extract_radiomics(view, radiomics_cfg).vector.astype(np.float32).astype(np.float64)
        rows.append(rad if deep is None else np.concatenate([deep, rad]))
    probs = predict_proba(model, np.vstack(rows))
    mean = probs.mean(axis=0)
    return mean / mean.sum()


def evaluate(
    model: ModelParams,
    features,
    labels,
    tta: bool = False,
    n_views: int = 8,
    images: Sequence | None = None,
    aug_cfg: AugmentConfig | None = None,
    radiomics_cfg: RadiomicsConfig | None = None,
    deep=None,
    image_size: int = 224,
) -> EvalReport:
    """Predict every sample (argmax, lowest index on ties) and build the report.

    Without TTA the stored ``features`` rows are classified directly. With TTA
    each entry of ``images`` (path or raw Image) is preprocessed and passed
    through :func:`tta_predict`; ``deep`` supplies the fixed deep rows.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise EmptyDataset("nothing to evaluate")
    if not tta:
        probs = predict_proba(model, features)
        if len(probs) != len(labels):
            raise LengthMismatch(f"{len(probs)} feature rows vs {len(labels)} labels")
    else:
        if images is None or len(images) != len(labels):
            raise LengthMismatch("TTA needs one image per label")
        probs = np.empty((len(labels), model.sizes[-1]))
        for i, src in enumerate(images):
            raw = src if isinstance(src, Image) else read_pgm(src)
            pre = preprocess_image(raw, image_size)
            d = None if deep is None else deep[i]
            probs[i] = tta_predict(model, pre, d, n_views, aug_cfg, radiomics_cfg, base_index=i)
    preds = np.argmax(probs, axis=1)
    cm = confusion_matrix(preds, labels, model.classes)
    return metrics_from_confusion(cm, tta=tta, n_views=n_views if tta else 1)


def report_delta(base: EvalReport, other: EvalReport) -> dict:
    """Metric differences ``other - base`` in percentage points."""
    return {
        "accuracy": other.accuracy - base.accuracy,
        "overall": {k: other.overall[k] - base.overall[k] for k in ("precision", "recall", "f1")},
    }
