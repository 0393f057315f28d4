"""Real-vs-spoof scoring, ROC/AUC, HTER and the EER operating point.

Spoof is the positive class. A sample is rejected as spoof when its score is
``>= threshold``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, UndefinedMetricError
from .tensor import Tensor


def spoof_score(probs) -> np.ndarray:
    """1 - p(real) for each row of a K+1 probability matrix."""
    p = np.asarray(probs.data if isinstance(probs, Tensor) else probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] < 2:
        raise ContractError(f"expected a B x (K+1) probability matrix, got shape {p.shape}")
    bad = np.flatnonzero((np.abs(p.sum(axis=1) - 1.0) > 1e-6) | (p < 0).any(axis=1))
    if bad.size:
        raise ContractError(f"row {bad[0]} is not a probability vector")
    return np.clip(p[:, 1:].sum(axis=1), 0.0, 1.0)


def _split(scores, is_spoof):
    scores = np.asarray(scores, dtype=np.float64)
    is_spoof = np.asarray(is_spoof, dtype=bool)
    if scores.shape != is_spoof.shape:
        raise ContractError(f"{scores.shape[0]} scores vs {is_spoof.shape[0]} labels")
    pos, neg = scores[is_spoof], scores[~is_spoof]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("metric needs both real and spoof samples")
    return pos, neg


def roc_curve(scores, is_spoof) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds), one point per distinct score plus (0, 0)."""
    pos, neg = _split(scores, is_spoof)
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    pos_sorted, neg_sorted = np.sort(pos), np.sort(neg)
    tpr = (pos.size - np.searchsorted(pos_sorted, thresholds, side="left")) / pos.size
    fpr = (neg.size - np.searchsorted(neg_sorted, thresholds, side="left")) / neg.size
    return (
        np.concatenate([[0.0], fpr]),
        np.concatenate([[0.0], tpr]),
        np.concatenate([[np.inf], thresholds]),
    )


def auc(scores, is_spoof) -> float:
    fpr, tpr, _ = roc_curve(scores, is_spoof)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def hter(scores, is_spoof, threshold: float) -> tuple[float, float, float]:
    """(HTER, FAR, FRR); FAR counts spoofs accepted as real."""
    pos, neg = _split(scores, is_spoof)
    far = float(np.mean(pos < threshold))
    frr = float(np.mean(neg >= threshold))
    return (far + frr) / 2.0, far, frr


def eer_threshold(scores, is_spoof) -> float:
    """Midpoint between consecutive distinct scores where |FAR - FRR| is smallest.

    Ties go to the smaller threshold. With a single distinct score there are no
    midpoints and that score is returned.
    """
    pos, neg = _split(scores, is_spoof)
    distinct = np.unique(np.concatenate([pos, neg]))
    if distinct.size == 1:
        return float(distinct[0])
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    far = np.searchsorted(np.sort(pos), mids, side="left") / pos.size
    frr = (neg.size - np.searchsorted(np.sort(neg), mids, side="left")) / neg.size
    return float(mids[np.argmin(np.abs(far - frr))])


@dataclass
class EvalReport:
    auc: float
    hter: float
    threshold: float
    threshold_source: str
    far: float
    frr: float
    roc: list[tuple[float, float]]
    per_class_accuracy: dict[str, float]
    mean_spoof_score: dict[str, float]
    n_samples: int
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "hter": self.hter,
            "threshold": self.threshold,
            "threshold_source": self.threshold_source,
            "far": self.far,
            "frr": self.frr,
            "roc": [[f, t] for f, t in self.roc],
            "per_class_accuracy": self.per_class_accuracy,
            "mean_spoof_score": self.mean_spoof_score,
            "n_samples": self.n_samples,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def roc_csv(self) -> str:
        return "fpr,tpr\n" + "".join(f"{f!r},{t!r}\n" for f, t in self.roc)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["roc"] = [tuple(p) for p in d["roc"]]
        return cls(**d)


def build_report(probs, labels, threshold: float | None = None, metadata: dict | None = None) -> EvalReport:
    """Score a K+1 probability matrix against integer labels (0 = real).

    Labels above K are unknown attacks: they count as spoof, and their
    per-class accuracy is the fraction not predicted as real.
    """
    probs = np.asarray(probs.data if isinstance(probs, Tensor) else probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    K = probs.shape[1] - 1
    scores = spoof_score(probs)
    is_spoof = labels != 0
    if threshold is None:
        threshold, source = eer_threshold(scores, is_spoof), "eer"
    else:
        source = "fixed"
    h, far, frr = hter(scores, is_spoof, threshold)
    fpr, tpr, _ = roc_curve(scores, is_spoof)
    pred = probs.argmax(axis=1)
    per_class, mean_score = {}, {}
    for c in np.unique(labels):
        sel = labels == c
        hit = pred[sel] == c if c <= K else pred[sel] != 0
        per_class[str(int(c))] = float(hit.mean())
        mean_score[str(int(c))] = float(scores[sel].mean())
    if np.any(labels > K):
        mean_score["unknown"] = float(scores[labels > K].mean())
    return EvalReport(
        auc=auc(scores, is_spoof),
        hter=h,
        threshold=float(threshold),
        threshold_source=source,
        far=far,
        frr=frr,
        roc=[(float(f), float(t)) for f, t in zip(fpr, tpr)],
        per_class_accuracy=per_class,
        mean_spoof_score=mean_score,
        n_samples=int(labels.size),
        metadata=dict(metadata or {}),
    )
