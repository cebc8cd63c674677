"""Weight-space merging and norm bounding.

Every function here is pure: inputs are never modified and results are new
arrays.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .nn import Classifier
from .params import ParameterSet


@dataclass
class BaseModelState:
    """Anchor for stage ``stage``: averaged extractor plus concatenated head rows."""

    theta_base: ParameterSet
    phi_base: Classifier
    stage: int

    def as_params(self):
        out = self.theta_base.copy()
        out.update(self.phi_base.as_params())
        return out


@dataclass
class IntraMergeAccumulator:
    theta_avg: Optional[ParameterSet] = None
    n: int = 0


def _combine(a, wa, b, wb):
    a.check_compatible(b)
    return ParameterSet((k, wa * a[k] + wb * b[k]) for k in a)


def uniform_merge_step(theta_base, theta_k, k):
    """Running mean of stage extractors: ``(k-1)/k * base + 1/k * theta_k``.

    At ``k == 1`` the base carries no weight and may be ``None`` or empty.
    """
    if int(k) != k or k < 1:
        raise ValueError(f"stage index must be an integer >= 1, got {k}")
    if k == 1:
        return theta_k.copy()
    if theta_base is None:
        raise ValueError("theta_base is required for k >= 2")
    return _combine(theta_base, (k - 1) / k, theta_k, 1.0 / k)


def ema_merge_step(theta_base, theta_k, alpha):
    """``(1 - alpha) * base + alpha * theta_k``; alpha weights the newest model."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return _combine(theta_base, 1.0 - alpha, theta_k, alpha)


def intra_merge_step(acc, theta_current):
    if acc.n == 0:
        return IntraMergeAccumulator(theta_current.copy(), 1)
    n = acc.n
    acc.theta_avg.check_compatible(theta_current, "merge accumulator and snapshot")
    # (n*avg + x)/(n+1) rewritten incrementally so merging a constant is exact
    avg = ParameterSet((k, v + (theta_current[k] - v) / (n + 1)) for k, v in acc.theta_avg.items())
    return IntraMergeAccumulator(avg, n + 1)


def concat_classifier(phi_base, phi_current, current_class_ids):
    """Base head rows followed by the current head's rows for ``current_class_ids``.

    Old-class rows of ``phi_current`` are ignored. ``phi_base`` may be ``None``
    at stage 1.
    """
    current_class_ids = tuple(int(c) for c in current_class_ids)
    if phi_base is None:
        phi_base = Classifier.empty(phi_current.weight.shape[1])
    overlap = set(current_class_ids) & set(phi_base.class_ids)
    if overlap:
        raise ValueError(f"classes {sorted(overlap)} are already in the base classifier")
    row = {c: r for r, c in enumerate(phi_current.class_ids)}
    missing = [c for c in current_class_ids if c not in row]
    if missing:
        raise ValueError(f"current classifier has no rows for classes {missing}")
    if phi_base.weight.shape[1] != phi_current.weight.shape[1]:
        raise ValueError("feature dimensions of the two classifiers differ")
    picks = [row[c] for c in current_class_ids]
    return Classifier(
        np.vstack([phi_base.weight, phi_current.weight[picks]]),
        np.concatenate([phi_base.bias, phi_current.bias[picks]]),
        phi_base.class_ids + current_class_ids,
    )


def displacement(theta, theta_base, shared_names):
    """``theta - theta_base`` over ``shared_names`` and its global L2 norm."""
    delta = ParameterSet()
    for name in shared_names:
        if name not in theta or name not in theta_base:
            raise KeyError(f"shared parameter {name!r} missing")
        if theta[name].shape != theta_base[name].shape:
            raise ValueError(f"{name!r}: shape {theta[name].shape} vs {theta_base[name].shape}")
        delta[name] = theta[name] - theta_base[name]
    return delta, float(np.linalg.norm(delta.flatten()))


def bound_update(theta, theta_base, shared_names, bound):
    """Project the shared coordinates of ``theta`` onto the L2 ball of radius
    ``bound`` around ``theta_base``. Coordinates outside ``shared_names`` pass
    through. Inside the ball the input comes back unchanged (as a copy).
    """
    if not bound > 0:
        raise ValueError(f"bound must be positive, got {bound}")
    delta, norm = displacement(theta, theta_base, shared_names)
    out = theta.copy()
    if norm > bound:
        scale = bound / norm
        for name, d in delta.items():
            out[name] = theta_base[name] + scale * d
    return out
