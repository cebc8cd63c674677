"""Incremental-learning metrics and weight/representation diagnostics.

Accuracies are fractions in [0, 1].
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class StageEval:
    stage: int
    new_classes: tuple
    seen_classes: tuple
    labels: np.ndarray
    preds: np.ndarray

    def class_acc(self):
        out = {}
        for c in self.seen_classes:
            mask = self.labels == c
            out[c] = float(np.mean(self.preds[mask] == c)) if mask.any() else 0.0
        return out

    @property
    def overall_acc(self):
        return float(np.mean(self.preds == self.labels)) if len(self.labels) else 0.0

    @property
    def new_acc(self):
        mask = np.isin(self.labels, self.new_classes)
        return float(np.mean(self.preds[mask] == self.labels[mask])) if mask.any() else 0.0


@dataclass
class MetricsLog:
    """Per-stage raw predictions on the seen-class test set plus the flat
    extractor update vector of each stage."""

    num_stages: int
    stages: list = field(default_factory=list)
    updates: list = field(default_factory=list)

    def record(self, stage, new_classes, seen_classes, labels, preds, update=None):
        if stage != len(self.stages) + 1:
            raise ValueError(f"expected stage {len(self.stages) + 1}, got {stage}")
        self.stages.append(
            StageEval(stage, tuple(new_classes), tuple(seen_classes), np.asarray(labels), np.asarray(preds))
        )
        if update is not None:
            self.updates.append(np.asarray(update, dtype=np.float64))

    @property
    def acc(self):
        """``acc[k][c]``: accuracy on class ``c`` after stage ``k`` (1-based)."""
        return {s.stage: s.class_acc() for s in self.stages}

    def _require_complete(self):
        if len(self.stages) != self.num_stages or self.num_stages < 1:
            raise ValueError(f"log has {len(self.stages)} of {self.num_stages} stages")


def average_incremental_accuracy(log):
    log._require_complete()
    return float(np.mean([s.overall_acc for s in log.stages]))


def forgetting(log):
    """Mean over classes learned before the last stage of (accuracy right after
    the class was learned) - (accuracy after the last stage)."""
    log._require_complete()
    acc = log.acc
    final = log.stages[-1].stage
    drops = []
    for s in log.stages[:-1]:
        for c in s.new_classes:
            drops.append(acc[s.stage][c] - acc[final][c])
    return float(np.mean(drops)) if drops else 0.0


def forgetting_max(log):
    """Variant measuring the drop from the best accuracy seen before the last stage."""
    log._require_complete()
    acc = log.acc
    final = log.stages[-1].stage
    drops = []
    for s in log.stages[:-1]:
        for c in s.new_classes:
            best = max(acc[k][c] for k in range(s.stage, final))
            drops.append(best - acc[final][c])
    return float(np.mean(drops)) if drops else 0.0


def average_new_accuracy(log):
    log._require_complete()
    return float(np.mean([s.new_acc for s in log.stages]))


def task_update_cosine_matrix(updates):
    """Pairwise cosine similarity of update vectors. A zero vector is 0 against
    everything else and 1 against itself."""
    u = np.asarray([np.asarray(v, dtype=np.float64).ravel() for v in updates])
    k = len(u)
    if k == 0:
        return np.zeros((0, 0))
    norms = np.linalg.norm(u, axis=1)
    s = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            if i == j:
                s[i, j] = 1.0
            elif norms[i] > 0 and norms[j] > 0:
                s[i, j] = float(u[i] @ u[j]) / (norms[i] * norms[j])
    return s


def mean_off_diagonal(matrix):
    m = np.asarray(matrix)
    k = len(m)
    if k < 2:
        return 0.0
    return float((m.sum() - np.trace(m)) / (k * (k - 1)))


def linear_cka(x, y):
    """Linear CKA between two representations of the same N samples."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or len(x) != len(y):
        raise ValueError(f"need two [N, F] matrices with equal N, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise ValueError("linear CKA needs at least 2 samples")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    cross = np.linalg.norm(yc.T @ xc) ** 2
    denom = np.linalg.norm(xc.T @ xc) * np.linalg.norm(yc.T @ yc)
    if denom == 0:
        return 0.0
    return float(cross / denom)


def _fmt(v):
    return repr(float(v))


def write_metrics_csv(log, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "seen_classes", "overall_acc", "new_acc"])
        for s in log.stages:
            w.writerow([s.stage, len(s.seen_classes), _fmt(s.overall_acc), _fmt(s.new_acc)])
        w.writerow([])
        w.writerow(["avg_inc_acc", _fmt(average_incremental_accuracy(log))])
        w.writerow(["forgetting", _fmt(forgetting(log))])
        w.writerow(["avg_new_acc", _fmt(average_new_accuracy(log))])


def read_metrics_csv(path):
    """Return (per-stage rows as dicts, summary dict)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, stages, summary = rows[0], [], {}
    i = 1
    while i < len(rows) and rows[i]:
        stages.append(dict(zip(header, rows[i])))
        i += 1
    for r in rows[i + 1:]:
        if r:
            summary[r[0]] = float(r[1])
    return stages, summary


def write_matrix_csv(matrix, path, labels=None):
    m = np.asarray(matrix)
    labels = list(range(1, len(m) + 1)) if labels is None else list(labels)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage"] + labels)
        for lab, row in zip(labels, m):
            w.writerow([lab] + [_fmt(v) for v in row])


def cka_baselines(num_stages):
    return sorted({1, math.ceil(num_stages / 2)})
