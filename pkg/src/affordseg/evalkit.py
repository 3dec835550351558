"""Masked binary cross entropy, IoU/accuracy metrics and threshold calibration.

Losses accept arrays shaped (..., A, H, W) with masks shaped (..., H, W); a
leading batch axis pools every pixel of the batch into one average.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import AFFORDANCES, NUM_AFFORDANCES, AffordanceTensor, CoverageMask

EPS = 1e-7
DEFAULT_GRID = np.arange(101) / 100.0
MODES = ("standard", "paper")


class EmptyMaskWarning(UserWarning):
    """A masked loss or gradient was requested over zero valid pixels."""


def _values(x) -> np.ndarray:
    if isinstance(x, AffordanceTensor):
        return x.values
    if isinstance(x, CoverageMask):
        return x.valid
    return np.asarray(x)


def _check_shapes(y, q, m=None):
    if y.shape != q.shape:
        raise ValueError(f"shape mismatch: target {y.shape} vs prediction {q.shape}")
    if y.ndim < 3:
        raise ValueError(f"expected (..., A, H, W) arrays, got {y.shape}")
    if m is not None and m.shape != y.shape[:-3] + y.shape[-2:]:
        raise ValueError(f"mask shape {m.shape} does not match {y.shape}")


def clamp(q):
    return np.clip(q, EPS, 1.0 - EPS)


def bce(p, q):
    """Elementwise H(p, q) = -p log q - (1 - p) log(1 - q), q clamped to [EPS, 1 - EPS]."""
    p = np.asarray(p, dtype=np.float64)
    q = clamp(np.asarray(q, dtype=np.float64))
    return -p * np.log(q) - (1.0 - p) * np.log1p(-q)


def loss_masked(y, q, m) -> float:
    """Cross entropy averaged over affordances and valid pixels only.

    Returns 0.0 (with an :class:`EmptyMaskWarning`) when no pixel is valid.
    """
    y, q, m = _values(y), _values(q), _values(m)
    _check_shapes(y, q, m)
    m = m.astype(np.float64)
    n_valid = m.sum()
    if n_valid == 0:
        warnings.warn("loss over an empty coverage mask", EmptyMaskWarning, stacklevel=2)
        return 0.0
    h = bce(y, q) * m[..., None, :, :]
    return float(h.sum() / (y.shape[-3] * n_valid))


def loss_unmasked(y, q) -> float:
    """Cross entropy averaged over every affordance and pixel."""
    y, q = _values(y), _values(q)
    _check_shapes(y, q)
    return loss_masked(y, q, np.ones(y.shape[:-3] + y.shape[-2:]))


def loss_masked_grad(y, q, m) -> np.ndarray:
    """d loss_masked / d prediction, same shape as the prediction."""
    y, q, m = _values(y), _values(q), _values(m)
    _check_shapes(y, q, m)
    m = m.astype(np.float64)
    n_valid = m.sum()
    if n_valid == 0:
        warnings.warn("gradient over an empty coverage mask", EmptyMaskWarning, stacklevel=2)
        return np.zeros(q.shape)
    qc = clamp(q.astype(np.float64))
    g = (qc - y) / (qc * (1.0 - qc)) / (y.shape[-3] * n_valid)
    return g * m[..., None, :, :]


# --- binarization and metrics -----------------------------------------------


@dataclass(frozen=True)
class ThresholdSet:
    thresholds: tuple[float, ...] = (0.5,) * NUM_AFFORDANCES

    def __post_init__(self):
        t = tuple(float(v) for v in self.thresholds)
        if len(t) != NUM_AFFORDANCES:
            raise ValueError(f"need {NUM_AFFORDANCES} thresholds, got {len(t)}")
        if any(not 0.0 <= v <= 1.0 for v in t):
            raise ValueError("thresholds must lie in [0, 1]")
        object.__setattr__(self, "thresholds", t)

    def as_array(self) -> np.ndarray:
        return np.array(self.thresholds)

    def to_json(self) -> str:
        return json.dumps(list(self.thresholds))

    @classmethod
    def from_json(cls, text: str) -> "ThresholdSet":
        return cls(tuple(json.loads(text)))


def binarize(q, thresholds: ThresholdSet) -> np.ndarray:
    """1 where the prediction reaches its affordance threshold (>=), else 0."""
    q = _values(q)
    tau = thresholds.as_array().reshape((NUM_AFFORDANCES, 1, 1))
    return (q >= tau).astype(np.uint8)


def binarize_target(y) -> np.ndarray:
    """Ground truth presence: partial (0.5) counts as present."""
    return (_values(y) >= 0.5).astype(np.uint8)


def confusion_counts(y_bin, q_bin, m) -> np.ndarray:
    """(A, 4) array of TP, FP, FN, TN per affordance over valid pixels."""
    y, q, m = _values(y_bin).astype(bool), _values(q_bin).astype(bool), _values(m).astype(bool)
    _check_shapes(y, q, m)
    axes = tuple(i for i in range(y.ndim) if i != y.ndim - 3)
    valid = np.broadcast_to(m[..., None, :, :], y.shape)
    tp = (y & q & valid).sum(axis=axes)
    fp = (~y & q & valid).sum(axis=axes)
    fn = (y & ~q & valid).sum(axis=axes)
    tn = (~y & ~q & valid).sum(axis=axes)
    return np.stack([tp, fp, fn, tn], axis=1).astype(np.int64)


def _ratio(num, den):
    return float(num) / float(den) if den else float("nan")


@dataclass
class MetricsReport:
    mode: str
    iou: list[float]
    accuracy: list[float]
    counts: list[list[int]]
    mean_iou: float
    mean_accuracy: float
    pixel_accuracy: float
    valid_pixels: int
    names: tuple[str, ...] = field(default=AFFORDANCES)

    def to_dict(self) -> dict:
        rows = []
        for name, iou, acc, (tp, fp, fn, tn) in zip(self.names, self.iou, self.accuracy, self.counts):
            rows.append({"affordance": name, "iou": iou, "accuracy": _json_num(acc),
                         "tp": tp, "fp": fp, "fn": fn, "tn": tn})
        return {
            "mode": self.mode,
            "mean_iou": self.mean_iou,
            "mean_accuracy": _json_num(self.mean_accuracy),
            "pixel_accuracy": _json_num(self.pixel_accuracy),
            "valid_pixels": self.valid_pixels,
            "affordances": rows,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def table(self) -> str:
        lines = [f"{'affordance':<14}{'IoU':>8}{'acc':>8}"]
        for name, iou, acc in zip(self.names, self.iou, self.accuracy):
            lines.append(f"{name:<14}{iou:>8.3f}{acc:>8.3f}")
        lines.append(f"{'mean':<14}{self.mean_iou:>8.3f}{self.mean_accuracy:>8.3f}")
        lines.append(f"pixel accuracy {self.pixel_accuracy:.3f} ({self.mode} mode)")
        return "\n".join(lines)


def _json_num(v):
    return None if v != v else v


def iou_from_counts(counts: np.ndarray) -> np.ndarray:
    tp, fp, fn = counts[:, 0], counts[:, 1], counts[:, 2]
    union = tp + fp + fn
    # both prediction and ground truth empty: perfect agreement
    return np.where(union > 0, tp / np.maximum(union, 1), 1.0)


def metrics_from_counts(counts: np.ndarray, valid_pixels: int, mode: str = "standard") -> MetricsReport:
    """Metrics from pooled TP/FP/FN/TN counts.

    ``standard`` divides pixel accuracy by all valid (affordance, pixel) pairs
    and uses per-class recall for the mean accuracy. ``paper`` divides both
    accuracies by the number of ground-truth positives, which can exceed 1.
    Classes whose accuracy denominator is zero are left out of the mean.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    counts = np.asarray(counts, dtype=np.int64)
    tp, fp, fn, tn = counts.T
    iou = iou_from_counts(counts)
    positives = tp + fn
    agree = tp + tn
    if mode == "paper":
        acc = [_ratio(a, p) for a, p in zip(agree, positives)]
        pixel = _ratio(agree.sum(), positives.sum())
    else:
        acc = [_ratio(t, p) for t, p in zip(tp, positives)]
        pixel = _ratio(agree.sum(), counts.sum())
    defined = [a for a in acc if a == a]
    mean_acc = math.fsum(defined) / len(defined) if defined else float("nan")
    return MetricsReport(
        mode=mode,
        iou=[float(v) for v in iou],
        accuracy=acc,
        counts=counts.tolist(),
        mean_iou=math.fsum(iou.tolist()) / len(iou),
        mean_accuracy=mean_acc,
        pixel_accuracy=pixel,
        valid_pixels=int(valid_pixels),
    )


def metrics(y_bin, q_bin, m, mode: str = "standard") -> MetricsReport:
    """Per-affordance IoU and accuracies over pixels with m == 1."""
    m = _values(m)
    return metrics_from_counts(confusion_counts(y_bin, q_bin, m), int(m.astype(bool).sum()), mode)


# --- threshold calibration ----------------------------------------------------


def _channel_scores(pairs, a):
    pos, neg = [], []
    for q, y, m in pairs:
        q, y, m = _values(q), _values(y), _values(m).astype(bool)
        _check_shapes(y, q, m)
        present = y[a] >= 0.5
        pos.append(q[a][m & present])
        neg.append(q[a][m & ~present])
    return np.sort(np.concatenate(pos)), np.sort(np.concatenate(neg))


def iou_curve(pos: np.ndarray, neg: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """IoU at each threshold given sorted positive and negative scores."""
    tp = len(pos) - np.searchsorted(pos, grid, side="left")
    fp = len(neg) - np.searchsorted(neg, grid, side="left")
    fn = len(pos) - tp
    union = tp + fp + fn
    return np.where(union > 0, tp / np.maximum(union, 1), 1.0)


def threshold_sweep(pairs, grid=DEFAULT_GRID) -> ThresholdSet:
    """Per-affordance threshold maximizing IoU pooled over all (prediction, target, mask) pairs.

    Ties go to the larger threshold.
    """
    pairs = list(pairs)
    grid = np.asarray(grid, dtype=np.float64)
    if not pairs:
        raise ValueError("threshold_sweep needs at least one (prediction, target, mask) triple")
    if grid.size == 0:
        raise ValueError("threshold grid is empty")
    chosen = []
    for a in range(NUM_AFFORDANCES):
        pos, neg = _channel_scores(pairs, a)
        iou = iou_curve(pos, neg, grid)
        best = iou.max()
        chosen.append(float(grid[iou == best].max()))
    return ThresholdSet(tuple(chosen))
