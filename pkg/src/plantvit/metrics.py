"""Classification metrics: confusion matrix, precision/recall/F1 and one-vs-rest AUC."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, MetricError


def confusion(labels, predictions, num_classes: int) -> np.ndarray:
    """``cm[t, p]`` counts samples of true class ``t`` predicted as ``p``."""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    predictions = np.asarray(predictions, dtype=np.int64).ravel()
    if labels.shape != predictions.shape:
        raise DataError(f"{labels.size} labels vs {predictions.size} predictions")
    for name, v in (("labels", labels), ("predictions", predictions)):
        if v.size and (v.min() < 0 or v.max() >= num_classes):
            raise DataError(f"{name} must lie in [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, predictions), 1)
    return cm


def _safe_div(num: np.ndarray, den: np.ndarray) -> tuple:
    out = np.zeros_like(num, dtype=np.float64)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out, ~ok


def _aggregate(values: np.ndarray, support: np.ndarray, mask: Optional[np.ndarray] = None) -> tuple:
    if mask is None:
        mask = np.ones(values.shape, dtype=bool)
    if not mask.any():
        return float("nan"), float("nan")
    v, s = values[mask], support[mask]
    weighted = float(np.sum(v * s) / np.sum(s)) if s.sum() > 0 else float("nan")
    return float(np.mean(v)), weighted


def prf1(cm: np.ndarray) -> dict:
    """Per-class, macro and support-weighted precision, recall and F1.

    A zero denominator yields 0 and is reported under ``flags``.
    """
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    precision, p_undef = _safe_div(tp, predicted)
    recall, r_undef = _safe_div(tp, support)
    f1, _ = _safe_div(2 * precision * recall, precision + recall)
    out = {"precision": precision, "recall": recall, "f1": f1, "support": support.astype(np.int64),
           "flags": {"precision_undefined": np.flatnonzero(p_undef).tolist(),
                     "zero_support": np.flatnonzero(r_undef).tolist()}}
    for agg in ("macro", "weighted"):
        out[agg] = {}
    for name in ("precision", "recall", "f1"):
        out["macro"][name], out["weighted"][name] = _aggregate(out[name], support)
    return out


def binary_auc(scores, positive) -> float:
    """Mann-Whitney AUC with midranks for tied scores."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both positive and negative samples")
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_ovr(labels, probs) -> dict:
    """One-vs-rest AUC per class, plus macro and support-weighted means.

    Classes absent from ``labels`` have no AUC; they get NaN, are listed in
    ``flags`` and are left out of both aggregates.
    """
    labels = np.asarray(labels, dtype=np.int64).ravel()
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != labels.size:
        raise DataError(f"probabilities {probs.shape} do not match {labels.size} labels")
    C = probs.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise DataError(f"labels must lie in [0, {C})")
    if not np.allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-4):
        raise MetricError("probability rows must sum to 1 within 1e-4")
    if np.unique(labels).size < 2:
        raise MetricError("AUC is undefined for a single-class label vector")
    support = np.bincount(labels, minlength=C).astype(np.float64)
    present = support > 0
    auc = np.full(C, np.nan)
    for c in np.flatnonzero(present):
        auc[c] = binary_auc(probs[:, c], labels == c)
    macro, weighted = _aggregate(auc, support, present)
    return {"auc": auc, "macro": macro, "weighted": weighted,
            "flags": {"auc_undefined": np.flatnonzero(~present).tolist()}}


@dataclass
class MetricReport:
    accuracy: float
    class_names: list
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    auc: np.ndarray
    support: np.ndarray
    macro: dict
    weighted: dict
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def num(v):
            v = float(v)
            return None if np.isnan(v) else v

        per_class = [{"name": n, "precision": num(p), "recall": num(r), "f1": num(f), "auc": num(a),
                      "support": int(s)}
                     for n, p, r, f, a, s in zip(self.class_names, self.precision, self.recall, self.f1,
                                                 self.auc, self.support)]
        return {"accuracy": self.accuracy, "per_class": per_class,
                "macro": {k: num(v) for k, v in self.macro.items()},
                "weighted": {k: num(v) for k, v in self.weighted.items()},
                "flags": self.flags}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        """Fixed-width text table, one row per class then the aggregates."""
        width = max([len(n) for n in self.class_names] + [8])
        head = f"{'class':<{width}}  {'prec':>7} {'recall':>7} {'f1':>7} {'auc':>7} {'support':>8}"
        lines = [head, "-" * len(head)]

        def fmt(v):
            return f"{v:7.4f}" if v is not None and not np.isnan(v) else f"{'-':>7}"

        for n, p, r, f, a, s in zip(self.class_names, self.precision, self.recall, self.f1, self.auc,
                                    self.support):
            lines.append(f"{n:<{width}}  {fmt(p)} {fmt(r)} {fmt(f)} {fmt(a)} {int(s):>8d}")
        total = int(np.sum(self.support))
        for name, agg in (("macro", self.macro), ("weighted", self.weighted)):
            lines.append(f"{name:<{width}}  {fmt(agg['precision'])} {fmt(agg['recall'])} {fmt(agg['f1'])} "
                         f"{fmt(agg['auc'])} {total:>8d}")
        lines.append(f"accuracy {self.accuracy:.4f}")
        return "\n".join(lines) + "\n"


def report(labels, probs, class_names: Optional[Sequence[str]] = None, predictions=None) -> tuple:
    """Build ``(MetricReport, confusion matrix)`` from labels and probability rows.

    Predictions default to the per-row argmax (lowest index on ties). AUC is left
    undefined (NaN) when fewer than two classes occur in ``labels``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    if labels.size == 0:
        raise DataError("cannot evaluate an empty split")
    C = probs.shape[1]
    names = list(class_names) if class_names is not None else [str(i) for i in range(C)]
    if predictions is None:
        predictions = np.argmax(probs, axis=1)
    cm = confusion(labels, predictions, C)
    accuracy = float(np.trace(cm) / cm.sum())
    pr = prf1(cm)
    flags = dict(pr["flags"])
    try:
        au = auc_ovr(labels, probs)
        flags.update(au["flags"])
    except MetricError:
        au = {"auc": np.full(C, np.nan), "macro": float("nan"), "weighted": float("nan")}
        flags["auc_undefined"] = list(range(C))
    macro = dict(pr["macro"], auc=au["macro"])
    weighted = dict(pr["weighted"], auc=au["weighted"])
    rep = MetricReport(accuracy, names, pr["precision"], pr["recall"], pr["f1"], au["auc"], pr["support"],
                       macro, weighted, flags)
    return rep, cm


def evaluate(model, stream, class_names: Optional[Sequence[str]] = None) -> tuple:
    """Single eval-mode pass over ``stream``; returns ``(MetricReport, confusion matrix)``."""
    from .model import predict
    from .training import infer

    logits, labels, _ = infer(model, stream)
    probs, preds = predict(logits)
    rep, cm = report(labels, probs, class_names, preds)
    if rep.accuracy != float(np.mean(preds == labels)):
        raise MetricError("accuracy does not match the confusion-matrix trace")
    return rep, cm


def write_confusion_csv(cm: np.ndarray, path, class_names: Optional[Sequence[str]] = None) -> None:
    names = list(class_names) if class_names is not None else [str(i) for i in range(len(cm))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred"] + names)
        for name, row in zip(names, cm):
            w.writerow([name] + [int(v) for v in row])
