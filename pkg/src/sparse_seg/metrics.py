"""Confusion-matrix metrics (IoU, mean IoU, weighted IoU, precision, recall) and reports.

Scalar aggregates are computed in exact rational arithmetic from the integer
counts and converted to float once, so results are correctly rounded.
Undefined per-class values are NaN in arrays and ``null`` in reports.
"""

import csv
import json
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .data import pad_to
from .model import predict
from .train import as_float_images

CLASS_LABELS = ("background", "damage")


class EvaluationError(ValueError):
    pass


class ConfusionMatrix:
    """K x K pixel counts; entry (i, j) counts ground truth i predicted as j."""

    def __init__(self, num_classes=2, counts=None):
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got shape {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion matrix counts must be non-negative")
        self.counts = counts

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def accumulate(self, pred, truth):
        pred = np.asarray(pred)
        truth = np.asarray(truth)
        if pred.shape != truth.shape:
            raise ValueError(f"prediction shape {pred.shape} does not match truth {truth.shape}")
        k = self.num_classes
        for what, arr in (("prediction", pred), ("truth", truth)):
            if arr.size and (arr.min() < 0 or arr.max() >= k):
                raise ValueError(f"{what} has class ids outside 0..{k - 1}")
        flat = truth.astype(np.int64).ravel() * k + pred.astype(np.int64).ravel()
        self.counts += np.bincount(flat, minlength=k * k).reshape(k, k)
        return self

    def __add__(self, other):
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(counts=self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __repr__(self):
        return f"ConfusionMatrix({self.counts.tolist()})"

    # pieces shared by the metric functions
    def _parts(self):
        c = self.counts
        tp = np.diag(c)
        return [int(v) for v in tp], [int(v) for v in c.sum(1)], [int(v) for v in c.sum(0)]


def confusion_matrix(pred, truth, num_classes=2):
    return ConfusionMatrix(num_classes).accumulate(pred, truth)


def merge(matrices, num_classes=2):
    out = ConfusionMatrix(num_classes)
    for m in matrices:
        out = out + m
    return out


def _iou_fractions(cm):
    tp, rows, cols = cm._parts()
    out = []
    for t, r, c in zip(tp, rows, cols):
        union = r + c - t
        out.append(Fraction(t, union) if union else None)
    return out


def _require_counts(cm):
    if cm.total <= 0:
        raise EvaluationError("confusion matrix is empty")


def iou_per_class(cm):
    _require_counts(cm)
    return np.array([np.nan if f is None else float(f) for f in _iou_fractions(cm)])


def mean_iou(cm):
    """Unweighted mean over classes present in truth or prediction."""
    _require_counts(cm)
    defined = [f for f in _iou_fractions(cm) if f is not None]
    return float(sum(defined) / len(defined))


def weighted_iou(cm):
    """IoU averaged with ground-truth pixel frequencies as weights."""
    _require_counts(cm)
    _, rows, _ = cm._parts()
    total = cm.total
    acc = Fraction(0)
    for f, r in zip(_iou_fractions(cm), rows):
        if f is not None:
            acc += Fraction(r, total) * f
    return float(acc)


def precision_recall_accuracy(cm):
    """Per-class precision and recall (NaN where undefined) and pixel accuracy."""
    _require_counts(cm)
    tp, rows, cols = cm._parts()
    precision = np.array([t / c if c else np.nan for t, c in zip(tp, cols)])
    recall = np.array([t / r if r else np.nan for t, r in zip(tp, rows)])
    accuracy = float(Fraction(sum(tp), cm.total))
    return precision, recall, accuracy


# ----------------------------------------------------------------------------
# evaluation

def segment_image(net, image):
    """Predict an H x W class map for one C x H x W image of any size.

    The image is reflect-padded to a multiple of ``2**depth`` and the
    prediction cropped back.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != net.spec.in_channels:
        raise EvaluationError(
            f"image has shape {image.shape}; network expects {net.spec.in_channels} channels")
    h, w = image.shape[1:]
    div = net.spec.divisor
    padded = pad_to(image, -(-h // div) * div, -(-w // div) * div)
    pred = predict(net, as_float_images(padded[None], net.dtype))[0]
    return pred[:h, :w]


def _clean(x):
    x = float(x)
    return None if np.isnan(x) else x


def image_row(name, cm):
    iou = iou_per_class(cm)
    precision, recall, accuracy = precision_recall_accuracy(cm)
    return {"image": name, "iou_bg": _clean(iou[0]), "iou_fg": _clean(iou[1]),
            "precision_fg": _clean(precision[1]), "recall_fg": _clean(recall[1]),
            "accuracy": accuracy}


@dataclass
class Evaluation:
    rows: list
    matrix: ConfusionMatrix
    report: dict
    per_image: list = field(default_factory=list)  # ConfusionMatrix per image
    predictions: list = field(default_factory=list)


def build_report(cm, net=None, images=0, train_minutes=None, eval_seconds=None):
    _require_counts(cm)
    iou = iou_per_class(cm)
    precision, recall, accuracy = precision_recall_accuracy(cm)
    miou, wiou = mean_iou(cm), weighted_iou(cm)
    labels = CLASS_LABELS if cm.num_classes == 2 else tuple(
        f"class{c}" for c in range(cm.num_classes))
    report = {
        "model_kind": net.spec.kind if net is not None else None,
        "depth": net.spec.depth if net is not None else None,
        "params": net.num_parameters() if net is not None else None,
        "train_minutes": train_minutes,
        "eval_seconds": eval_seconds,
        "images": images,
        "pixels": cm.total,
        "mean_iou": miou,
        "weighted_iou": wiou,
        "accuracy": accuracy,
        "per_class": [
            {"class": c, "name": labels[c], "iou": _clean(iou[c]),
             "precision": _clean(precision[c]), "recall": _clean(recall[c])}
            for c in range(cm.num_classes)],
        "confusion_matrix": cm.counts.tolist(),
    }
    report["display"] = display_fields(report)
    return report


def fmt4(x):
    return "n/a" if x is None else f"{x:.4f}"


def display_fields(report):
    out = {k: fmt4(report[k]) for k in ("mean_iou", "weighted_iou", "accuracy")}
    for entry in report["per_class"]:
        for key in ("iou", "precision", "recall"):
            out[f"{entry['name']}_{key}"] = fmt4(entry[key])
    return out


def evaluate_arrays(net, images, masks, names=None, timing=True):
    """Evaluate on in-memory images (C x H x W each) and masks (H x W each)."""
    if len(images) == 0:
        raise EvaluationError("no images to evaluate")
    names = names or [f"image_{i:04d}" for i in range(len(images))]
    start = time.perf_counter()
    rows, mats, preds = [], [], []
    for name, img, mask in zip(names, images, masks):
        pred = segment_image(net, img)
        cm = confusion_matrix(pred, mask, net.spec.num_classes)
        rows.append(image_row(name, cm))
        mats.append(cm)
        preds.append(pred)
    pooled = merge(mats, net.spec.num_classes)
    seconds = time.perf_counter() - start if timing else None
    report = build_report(pooled, net, images=len(mats), eval_seconds=seconds)
    return Evaluation(rows, pooled, report, mats, preds)


def evaluate(net, manifest, timing=True):
    """Evaluate ``net`` on every pair of a test manifest."""
    if len(manifest) == 0:
        raise EvaluationError("no images to evaluate")
    loaded = [manifest.load(i) for i in range(len(manifest))]
    names = [img for img, _ in manifest.pairs]
    return evaluate_arrays(net, [a for a, _ in loaded], [b for _, b in loaded], names,
                           timing=timing)


# ----------------------------------------------------------------------------
# files

REPORT_KEYS = ("model_kind", "depth", "params", "train_minutes", "mean_iou",
               "weighted_iou", "per_class", "accuracy")


def emit_report(report, path):
    if not report or not report.get("images") or not report.get("pixels"):
        raise EvaluationError("refusing to write a report for an empty evaluation")
    missing = [k for k in REPORT_KEYS if k not in report]
    if missing:
        raise EvaluationError(f"report is missing keys {missing}")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def read_report(path):
    with open(path) as fh:
        return json.load(fh)


PER_IMAGE_FIELDS = ("image", "iou_bg", "iou_fg", "precision_fg", "recall_fg", "accuracy")


def write_per_image_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PER_IMAGE_FIELDS)
        for row in rows:
            w.writerow(["" if row[k] is None else (row[k] if k == "image" else repr(row[k]))
                        for k in PER_IMAGE_FIELDS])
