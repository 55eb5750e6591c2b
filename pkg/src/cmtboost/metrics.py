"""Classification metrics, ROC/PR curves and PCA of embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad

Z_95 = 1.96
DECISION_THRESHOLD = 0.5


class DegenerateInputError(ValueError):
    """Input for which the requested statistic is undefined."""


@dataclass
class CurvePoints:
    """Ordered curve points with the score threshold that produced each one."""
    thresholds: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def rows(self):
        return zip(self.thresholds.tolist(), self.x.tolist(), self.y.tolist())


@dataclass
class EvalReport:
    tp: int
    tn: int
    fp: int
    fn: int
    acc: float
    sen: float
    pre: float
    f1: float
    precision_degenerate: bool
    sen_ci: float
    roc: Optional[CurvePoints] = None
    pr: Optional[CurvePoints] = None
    auc_roc: float = float("nan")
    auc_pr: float = float("nan")
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    ids: list = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def summary_rows(self) -> list[tuple[str, str]]:
        """``(metric, value)`` pairs for the report CSV."""
        return [
            ("n", str(self.total)), ("tp", str(self.tp)), ("tn", str(self.tn)),
            ("fp", str(self.fp)), ("fn", str(self.fn)),
            ("acc", f"{self.acc:.6f}"), ("sen", f"{self.sen:.6f}"),
            ("pre", f"{self.pre:.6f}"), ("f1", f"{self.f1:.6f}"),
            ("precision_degenerate", str(int(self.precision_degenerate))),
            ("sen_ci", f"{self.sen_ci:.6f}"),
            ("auc_roc", f"{self.auc_roc:.6f}"), ("auc_pr", f"{self.auc_pr:.6f}"),
        ]


def confidence_interval(error_rate: float, n: int, z: float = Z_95) -> float:
    """Normal-approximation half-width ``z * sqrt(e (1 - e) / n)``."""
    if not 0.0 <= error_rate <= 1.0:
        raise ValueError(f"error rate must lie in [0, 1], got {error_rate}")
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    return z * math.sqrt(error_rate * (1.0 - error_rate) / n)


def metrics_from_counts(tp: int, fn: int, fp: int, tn: int) -> dict:
    """Acc / Sen / Pre / F1 in percent.

    Precision has no value when nothing is predicted positive; it is then
    reported as 0 (as is F1) and ``precision_degenerate`` is set.
    """
    total = tp + fn + fp + tn
    if total == 0:
        raise DegenerateInputError("no records to score")
    acc = 100.0 * (tp + tn) / total
    sen = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    degenerate = tp + fp == 0
    pre = 0.0 if degenerate else 100.0 * tp / (tp + fp)
    f1 = 0.0 if degenerate or tp == 0 else 2.0 * pre * sen / (pre + sen)
    return {"acc": acc, "sen": sen, "pre": pre, "f1": f1, "precision_degenerate": degenerate,
            "sen_ci": confidence_interval(1.0 - sen / 100.0, total)}


def confusion_counts(scores, labels, threshold: float = DECISION_THRESHOLD) -> tuple[int, int, int, int]:
    """(TP, FN, FP, TN) with malignant (label 1) as the positive class."""
    pred = np.asarray(scores) >= threshold
    pos = np.asarray(labels) == 1
    return (int(np.sum(pred & pos)), int(np.sum(~pred & pos)),
            int(np.sum(pred & ~pos)), int(np.sum(~pred & ~pos)))


def roc_pr_curves(scores, labels) -> tuple[CurvePoints, CurvePoints, float, float]:
    """ROC (FPR, TPR) and PR (recall, precision) sweeps over distinct scores.

    Both curves open at threshold +inf, where nothing is predicted positive:
    ROC at (0, 0) and PR at (0, 1). Tied scores share one threshold. ROC area
    is trapezoidal; PR area is the step sum of precision over recall gains.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateInputError("ROC/PR curves need both classes present")
    order = np.argsort(-scores, kind="stable")
    s, pos = scores[order], (labels[order] == 1)
    tps, fps = np.cumsum(pos), np.cumsum(~pos)
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]  # final index of each tie group
    thr = np.r_[np.inf, s[last]]
    tp = np.r_[0, tps[last]].astype(np.float64)
    fp = np.r_[0, fps[last]].astype(np.float64)
    tpr, fpr = tp / n_pos, fp / n_neg
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 1.0)
    auc_roc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    auc_pr = float(np.sum((tpr[1:] - tpr[:-1]) * precision[1:]))
    return CurvePoints(thr, fpr, tpr), CurvePoints(thr, tpr, precision), auc_roc, auc_pr


def report_from_scores(scores, labels, ids: Sequence[str] = ()) -> EvalReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if scores.size == 0:
        raise DegenerateInputError("no records to evaluate")
    tp, fn, fp, tn = confusion_counts(scores, labels)
    m = metrics_from_counts(tp, fn, fp, tn)
    report = EvalReport(tp, tn, fp, fn, m["acc"], m["sen"], m["pre"], m["f1"],
                        m["precision_degenerate"], m["sen_ci"], scores=scores,
                        labels=labels, ids=list(ids))
    if 0 < labels.sum() < labels.size:
        report.roc, report.pr, report.auc_roc, report.auc_pr = roc_pr_curves(scores, labels)
    return report


def predict(model, x: np.ndarray, batch_size: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode malignant scores and penultimate (hidden FC) features."""
    scores, feats = [], []
    dtype = model.head.fc1_w.dtype
    with no_grad():
        for start in range(0, len(x), batch_size):
            probs, hidden = model(Tensor(x[start:start + batch_size].astype(dtype)),
                                  training=False, return_features=True)
            scores.append(probs.data[:, 1].astype(np.float64))
            feats.append(hidden.data.astype(np.float64))
    return np.concatenate(scores), np.concatenate(feats)


def evaluate(model, records, batch_size: int = 32) -> EvalReport:
    """Score ``records`` and compute the full metric battery."""
    if not records:
        raise DegenerateInputError("no records to evaluate")
    x = np.stack([r.pixels for r in records])
    labels = np.array([r.label for r in records], dtype=np.intp)
    scores, _ = predict(model, x, batch_size)
    return report_from_scores(scores, labels, [r.id for r in records])


# ---------------------------------------------------------------------------
# PCA

@dataclass
class PCAResult:
    projections: np.ndarray      # [n, k]
    components: np.ndarray       # [k, d], orthonormal rows
    explained_ratio: np.ndarray  # [k]
    mean: np.ndarray             # [d]


def _orient(v: np.ndarray) -> np.ndarray:
    return -v if v[np.argmax(np.abs(v))] < 0 else v


def pca_project(features, k: int = 2, tol: float = 1e-13, max_iter: int = 20000,
                seed: int = 0) -> PCAResult:
    """Top-``k`` principal components by power iteration with deflation.

    Each iterate is re-orthogonalized against the components already found,
    which keeps the basis orthonormal to rounding even when eigenvalues
    cluster. Each component's largest-magnitude entry is made positive.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DegenerateInputError(f"PCA needs an [n>=2, d] matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DegenerateInputError("PCA input contains non-finite values")
    n, d = X.shape
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    total = float(np.trace(cov))
    if total <= 1e-300:
        raise DegenerateInputError("PCA input has zero variance")
    rng = np.random.default_rng(seed)
    work = cov.copy()
    comps, eigvals = [], []
    for _ in range(k):
        v = rng.standard_normal(d)
        for c in comps:
            v -= (v @ c) * c
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = work @ v
            for c in comps:
                w -= (w @ c) * c
            norm = np.linalg.norm(w)
            if norm <= 1e-300:  # remaining spectrum is zero; any orthogonal direction will do
                break
            w /= norm
            done = min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol
            v, lam = w, norm
            if done:
                break
        lam = float(v @ cov @ v)
        v = _orient(v)
        comps.append(v)
        eigvals.append(lam)
        work = work - lam * np.outer(v, v)
    components = np.array(comps)
    return PCAResult(Xc @ components.T, components, np.array(eigvals) / total, mean)


def class_separation(pc: np.ndarray, labels) -> float:
    """|mean_1 - mean_0| divided by the pooled within-class standard deviation."""
    labels = np.asarray(labels)
    a, b = pc[labels == 0], pc[labels == 1]
    if a.size < 2 or b.size < 2:
        raise DegenerateInputError("each class needs at least two samples")
    within = math.sqrt(((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1))
                       / (a.size + b.size - 2))
    return abs(b.mean() - a.mean()) / within if within > 0 else math.inf
