"""Independent reference computations: plain loops, no vectorized shortcuts."""
import math

import numpy as np


def bce_scalar(p, q, eps=1e-7):
    q = min(max(q, eps), 1 - eps)
    return -p * math.log(q) - (1 - p) * math.log(1 - q)


def loss_loop(y, q, m=None):
    a_n, h_n, w_n = y.shape
    total, valid = 0.0, 0
    for i in range(h_n):
        for j in range(w_n):
            if m is not None and m[i, j] == 0:
                continue
            valid += 1
            for a in range(a_n):
                total += bce_scalar(float(y[a, i, j]), float(q[a, i, j]))
    return total / (a_n * valid) if valid else 0.0


def central_difference(f, x, h):
    """Gradient of scalar f at array x by central differences, coordinate by coordinate."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def relative_error(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


def count_loop(y, q, m):
    """Per-class TP, FP, FN, TN over valid pixels by a triple loop."""
    a_n, h_n, w_n = y.shape
    out = []
    for a in range(a_n):
        tp = fp = fn = tn = 0
        for i in range(h_n):
            for j in range(w_n):
                if not m[i, j]:
                    continue
                t, p = y[a, i, j] == 1, q[a, i, j] == 1
                tp += t and p
                fp += (not t) and p
                fn += t and not p
                tn += (not t) and not p
        out.append((tp, fp, fn, tn))
    return out


def metrics_loop(y, q, m, mode):
    """Metrics straight from the indicator-sum definitions."""
    counts = count_loop(y, q, m)
    ious, accs = [], []
    agree_total = pos_total = pairs_total = 0
    for tp, fp, fn, tn in counts:
        union = tp + fp + fn
        ious.append(tp / union if union else 1.0)
        agree, pos = tp + tn, tp + fn
        agree_total += agree
        pos_total += pos
        pairs_total += tp + fp + fn + tn
        if pos:
            accs.append(agree / pos if mode == "paper" else tp / pos)
    # fsum is correctly rounded, so the result does not depend on summation order
    mean_iou = math.fsum(ious) / len(ious)
    mean_acc = math.fsum(accs) / len(accs) if accs else float("nan")
    denom = pos_total if mode == "paper" else pairs_total
    pixel = agree_total / denom if denom else float("nan")
    return ious, mean_iou, mean_acc, pixel


def iou_at(pairs, a, tau):
    tp = fp = fn = 0
    for q, y, m in pairs:
        for i in range(y.shape[1]):
            for j in range(y.shape[2]):
                if not m[i, j]:
                    continue
                t, p = y[a, i, j] >= 0.5, q[a, i, j] >= tau
                tp += t and p
                fp += (not t) and p
                fn += t and not p
    union = tp + fp + fn
    return tp / union if union else 1.0


def grid_argmax(pairs, a, grid):
    best, best_tau = -1.0, None
    for tau in grid:
        v = iou_at(pairs, a, tau)
        if v >= best:  # later (larger) thresholds win ties
            best, best_tau = v, tau
    return best_tau
