"""Class-incremental training loop with merge and bound hooks.

A stage goes ``init_stage -> run_stage -> finalize_stage``. ``init_stage``
starts from the base model (running average of finalized extractors plus the
concatenated head) or, with inter-task merging off, from the previous stage's
final model. ``run_stage`` trains with momentum SGD on the stage data plus
exemplar memory and fires the bound/merge hooks at epoch ends.
``finalize_stage`` swaps in the trajectory average, refreshes BN statistics,
stores exemplars and folds the stage into the next base model.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import nn
from .nn import HEAD_BIAS, HEAD_WEIGHT, BatchNorm, Classifier, Model
from .params import ParameterSet
from .rng import stream
from .weightspace import (
    BaseModelState,
    IntraMergeAccumulator,
    bound_update,
    concat_classifier,
    displacement,
    ema_merge_step,
    intra_merge_step,
    uniform_merge_step,
)

log = logging.getLogger(__name__)

OURS = "OURS"
RESET = "RESET"
NOCHANGE = "NOCHANGE"
BN_STRATEGIES = (OURS, RESET, NOCHANGE)
HERDING = "HERDING"
RANDOM = "RANDOM"


@dataclass
class TaskSequence:
    class_order: list
    initial_count: int
    num_stages: int
    stage_classes: list
    train_indices: list = field(default_factory=list)
    test_indices: list = field(default_factory=list)

    def seen_classes(self, k):
        return tuple(c for cs in self.stage_classes[:k] for c in cs)

    def stage_of(self, c):
        for k, cs in enumerate(self.stage_classes, start=1):
            if c in cs:
                return k
        raise KeyError(c)


def build_task_sequence(num_classes, num_stages, seed, initial_fraction=0.5, train=None, test=None,
                        order=None):
    """Split a seeded class order into ``num_stages`` disjoint class groups.

    Stage 1 receives ``int(num_classes * initial_fraction)`` classes (all of
    them when ``num_stages == 1``); the rest are dealt to stages 2..K in equal
    parts, with any remainder going one extra class each to the earliest
    incremental stages. Per-stage sample indices are filled in when datasets
    are given.
    """
    from .data import class_order

    if num_stages < 1:
        raise ValueError("need at least one stage")
    if num_stages > num_classes:
        raise ValueError(f"{num_stages} stages cannot be filled from {num_classes} classes")
    order = class_order(num_classes, seed) if order is None else [int(c) for c in order]
    if sorted(order) != list(range(num_classes)):
        raise ValueError("class order must be a permutation of range(num_classes)")
    if num_stages == 1:
        initial = num_classes
    else:
        initial = int(num_classes * initial_fraction)
        if not 1 <= initial <= num_classes - (num_stages - 1):
            raise ValueError(
                f"initial_fraction={initial_fraction} leaves {initial} initial classes; "
                f"need 1..{num_classes - (num_stages - 1)}"
            )
    stages = [order[:initial]]
    rest = order[initial:]
    if num_stages > 1:
        per, extra = divmod(len(rest), num_stages - 1)
        pos = 0
        for s in range(num_stages - 1):
            size = per + (1 if s < extra else 0)
            stages.append(rest[pos:pos + size])
            pos += size
    task = TaskSequence(order, initial, num_stages, stages)
    if train is not None:
        task.train_indices = [train.indices_of(cs) for cs in stages]
    if test is not None:
        task.test_indices = [test.indices_of(cs) for cs in stages]
    return task


@dataclass
class ExemplarMemory:
    budget: int
    per_class: dict = field(default_factory=dict)

    def indices(self):
        if not self.per_class:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.asarray(self.per_class[c], dtype=np.int64) for c in sorted(self.per_class)])

    def copy(self):
        return ExemplarMemory(self.budget, {c: list(v) for c, v in self.per_class.items()})


@dataclass
class StageConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    e_a: int = 1
    e_b: int = 15
    bound: float = 10.0
    bn_strategy: str = OURS
    enable_inter: bool = True
    enable_intra: bool = True
    enable_bound: bool = True
    ema_alpha: Optional[float] = None
    memory: int = 20
    exemplar_method: str = HERDING

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.e_a < 1 or self.e_b < 1:
            raise ValueError("e_a and e_b must be >= 1")
        if not self.bound > 0:
            raise ValueError("bound must be positive")
        if self.bn_strategy not in BN_STRATEGIES:
            raise ValueError(f"bn_strategy must be one of {BN_STRATEGIES}")
        if self.ema_alpha is not None and not 0 < self.ema_alpha < 1:
            raise ValueError("ema_alpha must lie in (0, 1)")
        if self.memory < 0:
            raise ValueError("memory must be >= 0")
        if self.exemplar_method not in (HERDING, RANDOM):
            raise ValueError(f"exemplar_method must be {HERDING} or {RANDOM}")


@dataclass
class StageState:
    stage: int
    model: Model
    base: Optional[BaseModelState]
    acc: IntraMergeAccumulator
    momentum_state: ParameterSet
    memory: ExemplarMemory
    start_theta: ParameterSet
    next_base: Optional[BaseModelState] = None
    update: Optional[np.ndarray] = None


@dataclass
class StageReport:
    stage: int
    epochs: list = field(default_factory=list)

    @property
    def empty(self):
        return not self.epochs


def select_exemplars(model, class_samples, m, method=HERDING, seed=0):
    """Indices into ``class_samples`` of at most ``m`` exemplars.

    Herding greedily adds the sample that brings the mean of the chosen
    features closest to the class feature mean (EVAL-mode features; ties go
    to the lower index). Random draws without replacement.
    """
    class_samples = np.asarray(class_samples, dtype=np.float64)
    n = len(class_samples)
    m = min(int(m), n)
    if m <= 0:
        return []
    if method == RANDOM:
        rng = seed if isinstance(seed, np.random.Generator) else stream(seed, "exemplar")
        return [int(i) for i in rng.choice(n, size=m, replace=False)]
    if method != HERDING:
        raise ValueError(f"unknown exemplar method {method!r}")
    feats = nn.extract(model, class_samples)
    return herding(feats, m)


def herding(features, m):
    features = np.asarray(features, dtype=np.float64)
    mu = features.mean(axis=0)
    chosen = []
    available = np.ones(len(features), dtype=bool)
    running = np.zeros_like(mu)
    for t in range(1, m + 1):
        cand = (running + features) / t
        dist = np.linalg.norm(mu - cand, axis=1)
        dist[~available] = np.inf
        i = int(np.argmin(dist))
        chosen.append(i)
        available[i] = False
        running = running + features[i]
    return chosen


def recompute_bn_stats(model, features, strategy, batch_size=32, rng=None):
    """Refresh BN running statistics for merged weights by forwarding ``features``
    once in TRAIN mode without touching the weights.

    OURS continues from the model's current statistics, RESET restarts them
    from mean 0 / variance 1, NOCHANGE leaves the model as is.
    """
    if strategy not in BN_STRATEGIES:
        raise ValueError(f"unknown BN strategy {strategy!r}")
    out = model.copy()
    has_bn = any(isinstance(l, BatchNorm) for l in model.layers)
    if strategy == NOCHANGE or not has_bn:
        return out
    features = np.asarray(features, dtype=np.float64)
    if len(features) == 0:
        raise ValueError("BN statistics need at least one sample")
    if strategy == RESET:
        for name in out.bn_stats:
            v = out.bn_stats[name]
            out.bn_stats[name] = np.zeros_like(v) if name.endswith("running_mean") else np.ones_like(v)
    order = np.arange(len(features)) if rng is None else rng.permutation(len(features))
    for batch in _batches(order, batch_size):
        nn.forward(out, features[batch], nn.TRAIN)
    return out


def _batches(order, batch_size):
    out = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    # a trailing single sample has no batch variance; fold it into the previous batch
    if len(out) > 1 and len(out[-1]) < 2:
        last = out.pop()
        out[-1] = np.concatenate([out[-1], last])
    return out


def _stage_data(state, task, k):
    return np.concatenate([np.asarray(task.train_indices[k - 1], dtype=np.int64), state.memory.indices()])


def init_stage(k, prev, task, cfg, seed, layers=None):
    if k == 1:
        if layers is None:
            raise ValueError("stage 1 needs the layer stack")
        model = Model.init(layers, stream(seed, "init", 1), task.stage_classes[0])
        memory = ExemplarMemory(cfg.memory)
        base = None
    else:
        if prev is None:
            raise ValueError(f"stage {k} needs the finalized state of stage {k - 1}")
        if cfg.enable_inter:
            base = prev.next_base
            if base is None:
                raise ValueError("previous stage did not produce a base model")
            model = prev.model.with_parts(theta=base.theta_base, classifier=base.phi_base)
        else:
            base = BaseModelState(prev.model.theta.copy(), prev.model.classifier.copy(), k)
            model = prev.model.copy()
        model = nn.expand_classifier(model, task.stage_classes[k - 1], stream(seed, "init", k))
        memory = prev.memory.copy()
    return StageState(
        stage=k,
        model=model,
        base=base,
        acc=IntraMergeAccumulator(),
        momentum_state=model.params.zeros_like(),
        memory=memory,
        start_theta=model.theta.copy(),
    )


def shared_view(model, base):
    """Extractor plus the head rows of the classes the base already knows."""
    n_old = len(base.phi_base.class_ids)
    if model.class_ids[:n_old] != base.phi_base.class_ids:
        raise ValueError("model head does not start with the base classes")
    view = model.theta
    view[HEAD_WEIGHT] = model.params[HEAD_WEIGHT][:n_old]
    view[HEAD_BIAS] = model.params[HEAD_BIAS][:n_old]
    return view


def apply_bound(model, base, bound):
    """Returns ``(bounded model, displacement before, displacement after)``."""
    base_params = base.as_params()
    view = shared_view(model, base)
    _, before = displacement(view, base_params, base_params.names)
    bounded = bound_update(view, base_params, base_params.names, bound)
    n_old = len(base.phi_base.class_ids)
    params = model.params.copy()
    for name in model.extractor_names:
        params[name] = bounded[name]
    params[HEAD_WEIGHT][:n_old] = bounded[HEAD_WEIGHT]
    params[HEAD_BIAS][:n_old] = bounded[HEAD_BIAS]
    out = Model(model.layers, params, model.class_ids, model.bn_stats.copy(), model.bn_momentum)
    _, after = displacement(shared_view(out, base), base_params, base_params.names)
    return out, before, after


def run_stage(state, cfg, train, task, seed, finalize=True):
    k = state.stage
    idx = _stage_data(state, task, k)
    if len(idx) == 0:
        raise ValueError(f"stage {k} has no training data")
    report = StageReport(k)
    model, v, acc = state.model.copy(), state.momentum_state.copy(), state.acc
    x, y = train.features, train.labels
    for epoch in range(1, cfg.epochs + 1):
        order = stream(seed, "shuffle", k, epoch).permutation(idx)
        losses = []
        for batch in _batches(order, cfg.batch_size):
            grads, loss = nn.backward(model, x[batch], y[batch])
            model.params, v = nn.sgd_step(model.params, grads, v, cfg.lr, cfg.momentum)
            losses.append(loss)
        entry = {"epoch": epoch, "loss": float(np.mean(losses))}
        if cfg.enable_bound and state.base is not None and epoch % cfg.e_b == 0:
            model, entry["disp_before"], entry["disp_after"] = apply_bound(model, state.base, cfg.bound)
        if cfg.enable_intra and epoch % cfg.e_a == 0:
            acc = intra_merge_step(acc, model.params)
            entry["merged"] = acc.n
        report.epochs.append(entry)
        log.debug("stage %d epoch %d %s", k, epoch, entry)
    state = replace(state, model=model, momentum_state=v, acc=acc)
    if finalize:
        state = finalize_stage(state, cfg, train, task, seed)
    return state, report


def finalize_stage(state, cfg, train, task, seed):
    k = state.stage
    model = state.model
    if cfg.enable_intra and state.acc.n > 0:
        avg = state.acc.theta_avg
        merged = Model(model.layers, avg.copy(), model.class_ids, model.bn_stats.copy(), model.bn_momentum)
        idx = _stage_data(state, task, k)
        model = recompute_bn_stats(
            merged, train.features[idx], cfg.bn_strategy, cfg.batch_size, stream(seed, "shuffle", k, 0)
        )

    memory = state.memory.copy()
    for c in task.stage_classes[k - 1]:
        pool = train.indices_of([c])
        picks = select_exemplars(model, train.features[pool], cfg.memory, cfg.exemplar_method,
                                 stream(seed, "exemplar", k, c))
        memory.per_class[c] = [int(pool[i]) for i in picks]

    next_base = None
    if cfg.enable_inter:
        prev_theta = state.base.theta_base if state.base is not None else None
        prev_phi = state.base.phi_base if state.base is not None else None
        if cfg.ema_alpha is not None and k > 1:
            theta = ema_merge_step(prev_theta, model.theta, cfg.ema_alpha)
        else:
            theta = uniform_merge_step(prev_theta, model.theta, k)
        phi = concat_classifier(prev_phi, model.classifier, task.stage_classes[k - 1])
        next_base = BaseModelState(theta, phi, k + 1)

    update = model.theta.flatten() - state.start_theta.flatten()
    return replace(state, model=model, memory=memory, next_base=next_base, update=update)


def evaluate(model, test, classes):
    idx = test.indices_of(classes)
    return test.labels[idx], nn.predict(model, test.features[idx])
