"""Whole-run orchestration: config files, method presets, artifacts, sweeps."""

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import ckpt, metrics, nn
from .data import TEST, TRAIN, gen_blobs, load_csv, load_idx
from .harness import (
    BN_STRATEGIES,
    HERDING,
    RANDOM,
    StageConfig,
    build_task_sequence,
    evaluate,
    init_stage,
    run_stage,
)

log = logging.getLogger(__name__)

# (enable_inter, enable_intra, enable_bound)
PRESETS = {
    "FINETUNE": (False, False, False),
    "MNB": (True, True, True),
    "MNB_NO_INTER": (False, True, True),
    "MNB_NO_INTRA": (True, False, True),
    "MNB_NO_BOUND": (True, True, False),
    "MNB_EMA": (True, True, True),
}
EMA_DEFAULT_ALPHA = 0.9
SWEEP_AXES = ("ema_alpha", "e_a", "e_b", "B", "bn_strategy", "method")


class ConfigError(ValueError):
    pass


def _opt_float(s):
    return None if s.lower() in ("none", "") else float(s)


def _opt_bool(s):
    if s.lower() in ("none", ""):
        return None
    return _bool(s)


def _bool(s):
    v = s.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_str(s):
    return None if s.lower() in ("none", "") else s


def _int_list(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


@dataclass
class ExperimentConfig:
    method: str = "MNB"
    seed: int = 0
    # dataset: blobs unless file paths are given
    num_classes: int = 10
    dim: int = 16
    n_train: int = 100
    n_test: int = 50
    separation: float = 6.0
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_csv: Optional[str] = None
    test_csv: Optional[str] = None
    K: int = 5
    initial_fraction: float = 0.5
    hidden: tuple = (32, 32)
    batchnorm: bool = True
    # stage training
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    e_a: int = 1
    e_b: int = 15
    B: float = 10.0
    bn_strategy: str = "OURS"
    ema_alpha: Optional[float] = None
    memory: int = 20
    exemplar_method: str = HERDING
    enable_inter: Optional[bool] = None
    enable_intra: Optional[bool] = None
    enable_bound: Optional[bool] = None
    out_dir: str = "runs/default"
    save_checkpoints: bool = True

    def resolved(self):
        """Copy with preset-derived fields made explicit."""
        if self.method not in PRESETS:
            raise ConfigError(f"method: unknown preset {self.method!r}; choose from {sorted(PRESETS)}")
        inter, intra, bound = PRESETS[self.method]
        out = dataclasses.replace(
            self,
            enable_inter=inter if self.enable_inter is None else self.enable_inter,
            enable_intra=intra if self.enable_intra is None else self.enable_intra,
            enable_bound=bound if self.enable_bound is None else self.enable_bound,
        )
        if self.method == "MNB_EMA" and self.ema_alpha is None:
            out.ema_alpha = EMA_DEFAULT_ALPHA
        out.validate()
        return out

    def validate(self):
        checks = [
            ("K", self.K >= 1, "must be >= 1"),
            ("num_classes", self.num_classes >= 1, "must be >= 1"),
            ("epochs", self.epochs >= 0, "must be >= 0"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("lr", self.lr > 0, "must be > 0"),
            ("momentum", 0 <= self.momentum < 1, "must be in [0, 1)"),
            ("e_a", self.e_a >= 1, "must be >= 1"),
            ("e_b", self.e_b >= 1, "must be >= 1"),
            ("B", self.B > 0, "must be > 0"),
            ("bn_strategy", self.bn_strategy in BN_STRATEGIES, f"must be one of {BN_STRATEGIES}"),
            ("ema_alpha", self.ema_alpha is None or 0 < self.ema_alpha < 1, "must be in (0, 1)"),
            ("memory", self.memory >= 0, "must be >= 0"),
            ("exemplar_method", self.exemplar_method in (HERDING, RANDOM), f"must be {HERDING} or {RANDOM}"),
            ("initial_fraction", 0 < self.initial_fraction <= 1, "must be in (0, 1]"),
            ("hidden", len(self.hidden) >= 1 and min(self.hidden) >= 1, "needs at least one positive width"),
            ("separation", self.separation > 0, "must be > 0"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(f"{key}: {msg} (got {getattr(self, key)!r})")
        idx = [self.train_images, self.train_labels, self.test_images, self.test_labels]
        if any(idx) and not all(idx):
            raise ConfigError("train_images/train_labels/test_images/test_labels must be given together")
        if bool(self.train_csv) != bool(self.test_csv):
            raise ConfigError("train_csv and test_csv must be given together")

    def stage_config(self):
        return StageConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, momentum=self.momentum,
            e_a=self.e_a, e_b=self.e_b, bound=self.B, bn_strategy=self.bn_strategy,
            enable_inter=self.enable_inter, enable_intra=self.enable_intra,
            enable_bound=self.enable_bound, ema_alpha=self.ema_alpha, memory=self.memory,
            exemplar_method=self.exemplar_method,
        )


_PARSERS = {
    int: int, float: float, str: str, bool: _bool, tuple: _int_list,
    Optional[float]: _opt_float, Optional[bool]: _opt_bool, Optional[str]: _opt_str,
}
_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _format_value(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(i) for i in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_value(key, text):
    if key not in _FIELDS:
        raise ConfigError(f"{key}: unknown config key")
    parser = _PARSERS[_FIELDS[key].type]
    try:
        return parser(text.strip())
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse {text!r} ({e})") from None


def parse_config_text(text, base=None):
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = parse_value(key, value)
    return dataclasses.replace(base or ExperimentConfig(), **values)


def load_config(path, overrides=None):
    with open(path, encoding="utf-8") as fh:
        cfg = parse_config_text(fh.read())
    if overrides:
        cfg = dataclasses.replace(cfg, **{k: parse_value(k, v) for k, v in overrides.items()})
    return cfg


def format_config(cfg):
    return "".join(f"{f}={_format_value(getattr(cfg, f))}\n" for f in _FIELDS)


def load_datasets(cfg):
    if cfg.train_images:
        train = load_idx(cfg.train_images, cfg.train_labels, TRAIN)
        test = load_idx(cfg.test_images, cfg.test_labels, TEST)
    elif cfg.train_csv:
        train = load_csv(cfg.train_csv, TRAIN)
        test = load_csv(cfg.test_csv, TEST)
    else:
        return gen_blobs(cfg.num_classes, cfg.dim, cfg.n_train, cfg.n_test, cfg.separation, cfg.seed)
    n = max(train.num_classes, test.num_classes)
    train.num_classes = test.num_classes = n
    return train, test


@dataclass
class RunResult:
    config: ExperimentConfig
    log: metrics.MetricsLog
    models: list
    bases: list
    reports: list
    task_cosine: np.ndarray
    cka: dict = field(default_factory=dict)

    @property
    def summary(self):
        return {
            "avg_inc_acc": metrics.average_incremental_accuracy(self.log),
            "forgetting": metrics.forgetting(self.log),
            "avg_new_acc": metrics.average_new_accuracy(self.log),
        }


def cka_matrices(models, test, task):
    """For each baseline stage b, linear CKA between the finalized models of
    stages b..K on test samples of the classes seen by stage b."""
    out = {}
    k_total = len(models)
    for b in metrics.cka_baselines(k_total):
        idx = test.indices_of(task.seen_classes(b))
        reps = [nn.extract(m, test.features[idx]) for m in models[b - 1:]]
        n = len(reps)
        mat = np.eye(n)
        for i in range(n):
            for j in range(i + 1, n):
                mat[i, j] = mat[j, i] = metrics.linear_cka(reps[i], reps[j])
        out[b] = mat
    return out


def run_experiment(cfg, out_dir=None, datasets=None):
    """Run stages 1..K. With ``out_dir`` set, write metrics, diagnostics,
    checkpoints and the resolved config there."""
    cfg = cfg.resolved()
    train, test = load_datasets(cfg) if datasets is None else datasets
    task = build_task_sequence(train.num_classes, cfg.K, cfg.seed, cfg.initial_fraction, train, test)
    stage_cfg = cfg.stage_config()
    layers = nn.mlp(train.dim, cfg.hidden, cfg.batchnorm)
    mlog = metrics.MetricsLog(cfg.K)
    models, bases, reports = [], [], []
    state = None
    for k in range(1, cfg.K + 1):
        state = init_stage(k, state, task, stage_cfg, cfg.seed, layers)
        state, report = run_stage(state, stage_cfg, train, task, cfg.seed)
        seen = task.seen_classes(k)
        labels, preds = evaluate(state.model, test, seen)
        mlog.record(k, task.stage_classes[k - 1], seen, labels, preds, state.update)
        models.append(state.model)
        bases.append(state.next_base)
        reports.append(report)
        log.info("stage %d/%d: seen=%d acc=%.4f", k, cfg.K, len(seen), mlog.stages[-1].overall_acc)
    result = RunResult(
        config=cfg,
        log=mlog,
        models=models,
        bases=bases,
        reports=reports,
        task_cosine=metrics.task_update_cosine_matrix(mlog.updates),
        cka=cka_matrices(models, test, task),
    )
    if out_dir is not None:
        write_artifacts(result, out_dir)
    return result


def write_artifacts(result, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    (out / "config.resolved").write_text(format_config(cfg), encoding="utf-8")
    metrics.write_metrics_csv(result.log, out / "metrics.csv")
    metrics.write_matrix_csv(result.task_cosine, out / "task_cosine.csv")
    for b, mat in result.cka.items():
        metrics.write_matrix_csv(mat, out / f"cka_{b}.csv", labels=range(b, b + len(mat)))
    if cfg.save_checkpoints:
        for k, (model, base) in enumerate(zip(result.models, result.bases), start=1):
            ckpt.save(model, out / f"stage_{k}.mnbw")
            if base is not None:
                ckpt.save(base.as_params(), out / f"base_{k + 1}.mnbw")


def output_dir(cfg):
    return os.environ.get("MNB_OUT") or cfg.out_dir


def sweep(base_cfg, axis, values, out_dir=None):
    """One independent run per value of ``axis``; returns ``[(value, summary)]``
    and, with ``out_dir``, writes ``<axis>=<value>/`` run directories plus
    ``sweep_summary.csv``."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis: unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    values = list(values)
    if not values:
        raise ConfigError("values: sweep needs at least one value")
    parsed = [v if not isinstance(v, str) else parse_value(axis, v) for v in values]
    rows = []
    for v in parsed:
        cfg = dataclasses.replace(base_cfg, **{axis: v})
        run_dir = None if out_dir is None else Path(out_dir) / f"{axis}={_format_value(v)}"
        result = run_experiment(cfg, run_dir)
        rows.append((v, result.summary))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(out_dir) / "sweep_summary.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write(f"{axis},forgetting,avg_new_acc,avg_inc_acc\n")
            for v, s in rows:
                fh.write(f"{_format_value(v)},{s['forgetting']!r},{s['avg_new_acc']!r},{s['avg_inc_acc']!r}\n")
    return rows
