"""Command-line entry point: verify | train | eval | bench | figure | init.

One JSON config file drives every subcommand; `--set key=value` patches
single entries (dotted paths, JSON-parsed values). The config is checked
against a schema before anything runs, and unknown keys are rejected so
typos fail fast instead of silently using defaults.

Exit codes: 0 success, 1 validation error, 2 property-suite failure,
3 training divergence.

All randomness descends from the config's root `seed`, so identical
config plus seed reproduces identical primary outputs; only measured
timings differ between runs.
"""

import argparse
import csv
import json
import os
import sys
import time

import jsonschema
import numpy as np

from . import verify as verify_mod
from .init import InitSpec, eig_scatter
from .learn import DivergenceError
from .models import LTI_KINDS, LTV_KINDS, SISO_KINDS, build_model
from .training import (build_stack, evaluate, load_checkpoint, make_task,
                       restore_into, train)
from .types import ValidationError

__all__ = ["main", "load_config", "CONFIG_SCHEMA"]

MODEL_KINDS = LTI_KINDS + LTV_KINDS
MODES = ("recurrent", "scan", "conv")
WORKERS_ENV = "SSMKIT_WORKERS"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PROPERTY = 2
EXIT_DIVERGENCE = 3

_POS_INT = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "workers": {"type": ["integer", "null"], "minimum": 1},
        "task": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"enum": ["listops", "delayed_echo",
                                  "selective_copy"]},
                "n_train": _POS_INT, "n_val": _POS_INT, "n_test": _POS_INT,
                "max_len": _POS_INT, "max_depth": _POS_INT,
                "T": _POS_INT, "lag": {"type": "integer", "minimum": 0},
                "n_marks": _POS_INT,
            },
            "required": ["name"],
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(MODEL_KINDS)},
                "p": _POS_INT, "q": _POS_INT, "n_layers": _POS_INT,
                "delta_range": {"type": "array", "items": _NUM,
                                "minItems": 2, "maxItems": 2},
                "lru_ring": {"type": "array", "items": _NUM,
                             "minItems": 2, "maxItems": 3},
                "n_blocks": _POS_INT,
                "radius_cap": {"type": "number", "exclusiveMinimum": 0,
                               "maximum": 1},
            },
            "required": ["kind"],
        },
        "scaffold": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["mlp", "h3", "mamba"]},
                "norm": {"type": "boolean"},
                "gate": {"enum": ["sigmoid", "softmax", "silu"]},
                "conv_width": _POS_INT,
            },
        },
        "head": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"pooling": {"enum": ["mean", "last"]}},
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "dynamics_lr_scale": {"type": "number",
                                      "exclusiveMinimum": 0},
                "clip_norm": {"type": ["number", "null"],
                              "exclusiveMinimum": 0},
                "weight_decay": {"type": "number", "minimum": 0},
                "beta1": _NUM, "beta2": _NUM, "eps": _NUM,
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": {"type": "integer", "minimum": 0},
                "batch_size": _POS_INT,
                "eval_every": _POS_INT,
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "fault": {"enum": [None, "corrupt_gradient",
                                   "unstable_abar"]},
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "checkpoint": {"type": "string"},
                "split": {"enum": ["train", "val", "test"]},
            },
            "required": ["checkpoint"],
        },
        "bench": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(LTI_KINDS)},
                "p": _POS_INT, "q": _POS_INT,
                "repeats": _POS_INT,
                "lengths": {"type": "array", "items": _POS_INT,
                            "minItems": 1},
                "modes": {"type": "array", "minItems": 1,
                          "items": {"enum": list(MODES)}},
            },
        },
        "figure": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "models": {"type": "array", "minItems": 1,
                           "items": {"enum": list(MODEL_KINDS)}},
                "p": _POS_INT, "q": _POS_INT, "sample_T": _POS_INT,
            },
        },
        "init": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"sample_T": _POS_INT},
        },
    },
}


# ------------------------------------------------------------------ config

def _parse_override(text):
    if "=" not in text:
        raise ValidationError(f"--set needs key=value, got {text!r}")
    key, raw = text.split("=", 1)
    if not key:
        raise ValidationError(f"--set has empty key in {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings like `lru` stay strings
    return key.split("."), value


def _apply_override(cfg, path, value):
    node = cfg
    for part in path[:-1]:
        if part not in node:
            node[part] = {}
        if not isinstance(node[part], dict):
            raise ValidationError(
                f"--set path {'.'.join(path)} crosses non-object key {part!r}")
        node = node[part]
    node[path[-1]] = value


def load_config(path=None, overrides=()):
    """Config dict from JSON file plus --set patches, schema-checked."""
    if path is None:
        cfg = {}
    else:
        with open(path) as f:
            cfg = json.load(f)
        if not isinstance(cfg, dict):
            raise ValidationError("config root must be a JSON object")
    for text in overrides:
        key_path, value = _parse_override(text)
        _apply_override(cfg, key_path, value)
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        where = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ValidationError(f"config invalid at {where}: {e.message}")
    return cfg


def resolve_workers(flag, cfg):
    """Priority: --workers flag, config key, then the environment default."""
    for value in (flag, cfg.get("workers"), os.environ.get(WORKERS_ENV)):
        if value is not None:
            n = int(value)
            if n < 1:
                raise ValidationError(f"workers must be >= 1, got {n}")
            return n
    return None


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


# ------------------------------------------------------------- subcommands

def cmd_verify(cfg, out_dir, workers):
    fault = cfg.get("verify", {}).get("fault")
    report = verify_mod.run_all(seed=int(cfg.get("seed", 0)), fault=fault)
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    for check in report["checks"]:
        status = "PASS" if check["passed"] else "FAIL"
        print(f"{status} {check['name']}: measured {check['measured']:.3e} "
              f"vs tolerance {check['tolerance']:.3e} (n={check['n']})")
    print(f"verify: {'all checks passed' if report['passed'] else 'FAILED'}")
    return EXIT_OK if report["passed"] else EXIT_PROPERTY


def cmd_train(cfg, out_dir, workers):
    if "task" not in cfg or "model" not in cfg:
        raise ValidationError("train needs `task` and `model` config sections")
    summary = train(cfg, out_dir, workers=workers)
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"steps {summary['steps']}  final train loss "
          f"{summary['train_loss']:.4f}")
    print(f"val accuracy {summary['val_accuracy']:.4f}")
    print(f"test accuracy {summary['test_accuracy']:.4f}")
    return EXIT_OK


def cmd_eval(cfg, out_dir, workers):
    ecfg = cfg.get("eval")
    if not ecfg:
        raise ValidationError("eval needs an `eval` config section")
    ckpt = load_checkpoint(ecfg["checkpoint"])
    run_cfg = ckpt["config"]
    split = ecfg.get("split", "test")
    datasets = make_task(run_cfg["task"], int(run_cfg.get("seed", 0)))
    ds = datasets[split]
    stack, store = build_stack(run_cfg, ds.vocab_size, ds.n_classes)
    restore_into(store, ckpt)
    acc = evaluate(stack, ds, workers=workers)
    report = {"split": split, "accuracy": acc, "n_samples": len(ds),
              "checkpoint": ecfg["checkpoint"],
              "model_kind": ckpt["model_kind"]}
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"{split} accuracy {acc:.4f} over {len(ds)} samples")
    return EXIT_OK


def cmd_bench(cfg, out_dir, workers):
    bcfg = cfg.get("bench", {})
    kind = bcfg.get("kind", "s4d")
    p, q = int(bcfg.get("p", 16)), int(bcfg.get("q", 4))
    repeats = int(bcfg.get("repeats", 5))
    lengths = [int(t) for t in bcfg.get("lengths",
                                        [2 ** k for k in range(10, 17)])]
    modes = list(bcfg.get("modes", MODES))
    seed = int(cfg.get("seed", 0))
    model = build_model(InitSpec(kind=kind, p=p, q=q, seed=seed))
    rows = []
    for mode in modes:
        for T in lengths:
            u = np.random.default_rng((seed, 4242, T)).standard_normal((T, q))
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                model.forward(u, mode=mode, workers=workers)
                times.append(time.perf_counter() - t0)
            rows.append([mode, p, q, T, int(workers or 1),
                         f"{float(np.median(times)):.6f}"])
    path = os.path.join(out_dir, "bench.csv")
    _write_csv(path, ["mode", "p", "q", "T", "workers", "seconds"], rows)
    print(f"wrote {len(rows)} timings to {path}")
    return EXIT_OK


def _scatter_rows(records):
    return [[r["model"], r["input_id"], r["step"],
             f"{r['re']:.17g}", f"{r['im']:.17g}"] for r in records]


def _sample_streams(seed, kind_index, T, q):
    """Two tagged input streams for the input-gated models."""
    return [np.random.default_rng((seed, 777, kind_index, i))
            .standard_normal((T, q)) for i in range(2)]


def cmd_figure(cfg, out_dir, workers):
    fcfg = cfg.get("figure", {})
    kinds = list(fcfg.get("models", MODEL_KINDS))
    p, q = int(fcfg.get("p", 16)), int(fcfg.get("q", 4))
    sample_T = int(fcfg.get("sample_T", 64))
    seed = int(cfg.get("seed", 0))
    written = []
    for i, kind in enumerate(kinds):
        spec = InitSpec(kind=kind, p=q if kind == "rglru" else p, q=q,
                        seed=seed + i)
        model = build_model(spec)
        inputs = (_sample_streams(seed, i, sample_T, q)
                  if kind in LTV_KINDS else None)
        path = os.path.join(out_dir, f"eig_scatter_{kind}.csv")
        _write_csv(path, ["model", "input_id", "step", "re", "im"],
                   _scatter_rows(eig_scatter(model, inputs)))
        written.append(path)
    features = [[kind,
                 "lti" if kind in LTI_KINDS else "ltv",
                 "siso" if kind in SISO_KINDS else "mimo",
                 {"s4": "bilinear", "s4d": "zoh", "s5": "zoh",
                  "lru": "none", "s6": "zoh_per_step",
                  "rglru": "none"}[kind],
                 "recurrent scan conv" if kind in LTI_KINDS
                 else "recurrent scan",
                 "mamba" if kind in LTV_KINDS else "mlp h3"]
                for kind in kinds]
    fpath = os.path.join(out_dir, "features.csv")
    _write_csv(fpath, ["model", "parametrization", "structure",
                       "discretization", "engines", "scaffolds"], features)
    written.append(fpath)
    print("wrote " + ", ".join(os.path.basename(w) for w in written))
    return EXIT_OK


def cmd_init(cfg, out_dir, workers):
    if "model" not in cfg:
        raise ValidationError("init needs a `model` config section")
    mcfg = cfg["model"]
    kind = mcfg["kind"]
    seed = int(cfg.get("seed", 0))
    q = int(mcfg.get("q", 4))
    spec_kw = {"kind": kind, "q": q, "seed": seed,
               "p": q if kind == "rglru" else int(mcfg.get("p", 16))}
    for key in ("delta_range", "lru_ring", "n_blocks", "radius_cap"):
        if mcfg.get(key) is not None:
            spec_kw[key] = (tuple(mcfg[key]) if isinstance(mcfg[key], list)
                            else mcfg[key])
    model = build_model(InitSpec(**spec_kw))
    sample_T = int(cfg.get("init", {}).get("sample_T", 64))
    inputs = (_sample_streams(seed, 0, sample_T, q)
              if kind in LTV_KINDS else None)
    records = eig_scatter(model, inputs)
    path = os.path.join(out_dir, "eig_scatter.csv")
    _write_csv(path, ["model", "input_id", "step", "re", "im"],
               _scatter_rows(records))
    print(f"wrote {len(records)} eigenvalue records to {path}")
    return EXIT_OK


_COMMANDS = {
    "verify": cmd_verify,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "figure": cmd_figure,
    "init": cmd_init,
}


# ------------------------------------------------------------------- main

def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="ssmkit",
        description="State-space sequence models: train, verify, benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="JSON config file")
        p.add_argument("--set", action="append", default=[],
                       dest="overrides", metavar="KEY=VALUE",
                       help="override a config entry (dotted path)")
        p.add_argument("--out", required=True,
                       help="output directory")
        p.add_argument("--workers", type=int, default=None,
                       help=f"worker count (default ${WORKERS_ENV})")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        workers = resolve_workers(args.workers, cfg)
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](cfg, args.out, workers)
    except (ValidationError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
