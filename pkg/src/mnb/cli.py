"""Command line: ``mnb run | sweep | inspect-ckpt``.

Exit codes: 0 ok, 1 configuration error, 2 runtime error.
"""

import argparse
import dataclasses
import logging
import sys

import numpy as np

from . import ckpt
from .experiment import ConfigError, load_config, output_dir, run_experiment, sweep
from .nn import Model


def _split_overrides(extra):
    """``--key value`` pairs left over by argparse."""
    out = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}; overrides look like --key value")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            value = next(it, None)
            if value is None:
                raise ConfigError(f"{key}: missing value")
        out[key] = value
    return out


def inspect_ckpt(path, out=None):
    out = out or sys.stdout
    obj = ckpt.load(path)
    if isinstance(obj, Model):
        print(f"model {obj!r} classes={list(obj.class_ids)}", file=out)
        groups = [("param", obj.params), ("bn", obj.bn_stats)]
    else:
        groups = [("param", obj)]
    for kind, params in groups:
        for name, v in params.items():
            print(f"{kind:5s} {name:24s} {str(list(v.shape)):14s} norm={np.linalg.norm(v.ravel()):.6g}", file=out)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="mnb", description="Merge-and-Bound class-incremental runs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("--config", required=True)
    p_sweep = sub.add_parser("sweep", help="one run per value of an axis")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", required=True)
    p_sweep.add_argument("--values", required=True)
    p_ins = sub.add_parser("inspect-ckpt", help="print tensor names, shapes and norms")
    p_ins.add_argument("path")

    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "inspect-ckpt":
            if extra:
                raise ConfigError(f"unexpected arguments {extra}")
            inspect_ckpt(args.path)
            return 0
        cfg = load_config(args.config, _split_overrides(extra))
        cfg.resolved()
        out = output_dir(cfg)
        cfg = dataclasses.replace(cfg, out_dir=out)
        if args.command == "run":
            result = run_experiment(cfg, out)
            for k, v in result.summary.items():
                print(f"{k}={v:.6f}")
        else:
            values = [v for v in args.values.split(",") if v.strip()]
            for v, s in sweep(cfg, args.axis, values, out):
                print(f"{args.axis}={v} " + " ".join(f"{k}={x:.6f}" for k, x in s.items()))
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
