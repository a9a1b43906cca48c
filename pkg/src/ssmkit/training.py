"""Desk-scale training: stack assembly, batching, metrics, checkpoints.

The trainer consumes a plain config dict (the CLI validates it against a
schema first), builds a LayerStack whose parameters live in a ParamStore,
and runs Adam over padded length-bucketed batches. Metrics stream to
`metrics.jsonl`, one JSON object per optimizer step, and the final
parameters land in `checkpoint.json` together with the config that
produced them. Every random draw descends from the config seed through
fixed substreams, so a rerun reproduces the loss curve exactly.
"""

import json
import math
import os
import time

import numpy as np

from . import autodiff as ad
from . import learn, tasks
from .init import InitSpec
from .models import build_model
from .scaffold import LayerStack, make_scaffold, stack_forward
from .types import DivergenceError, ValidationError

CHECKPOINT_VERSION = 1

__all__ = [
    "make_task", "build_stack", "evaluate", "train",
    "save_checkpoint", "load_checkpoint", "restore_into",
]


def make_task(task_cfg, seed):
    """Instantiate train/val/test datasets for one task config."""
    cfg = dict(task_cfg)
    name = cfg.pop("name", None)
    counts = {s: int(cfg.pop(k, d)) for s, k, d in
              [("train", "n_train", 2000), ("val", "n_val", 500),
               ("test", "n_test", 500)]}
    if name == "listops":
        gen = lambda n, split: tasks.gen_listops(
            seed, n, max_len=int(cfg.get("max_len", 128)),
            max_depth=int(cfg.get("max_depth", 4)), split=split)
    elif name == "delayed_echo":
        gen = lambda n, split: tasks.gen_delayed_echo(
            seed, n, T=int(cfg["T"]), lag=int(cfg["lag"]), split=split)
    elif name == "selective_copy":
        gen = lambda n, split: tasks.gen_selective_copy(
            seed, n, T=int(cfg["T"]), n_marks=int(cfg.get("n_marks", 3)), split=split)
    else:
        raise ValidationError(f"unknown task {name!r}")
    return {split: gen(n, split) for split, n in counts.items()}


def build_stack(config, vocab_size, n_classes, store=None):
    """LayerStack from config; parameters registered into `store`.

    Returns (stack, store). Core seeds and projection draws come from the
    (seed, 12345) substream in layer order, so stacks are reproducible.
    """
    mcfg = config["model"]
    scfg = config.get("scaffold", {})
    kind, q = mcfg["kind"], int(mcfg["q"])
    p = int(mcfg.get("p", q))
    rng = np.random.default_rng((int(config.get("seed", 0)), 12345))
    layers = []
    for _ in range(int(mcfg.get("n_layers", 2))):
        spec_kw = {"kind": kind, "p": q if kind == "rglru" else p, "q": q,
                   "seed": int(rng.integers(2**31))}
        for key in ("delta_range", "lru_ring", "n_blocks", "radius_cap"):
            if mcfg.get(key) is not None:
                spec_kw[key] = tuple(mcfg[key]) if isinstance(mcfg[key], list) else mcfg[key]
        core = build_model(InitSpec(**spec_kw))
        sc = make_scaffold(scfg.get("kind", "mlp"), q, rng,
                           gate_nonlinearity=scfg.get("gate"),
                           conv_width=int(scfg.get("conv_width", 4)))
        layers.append((sc, core))
    embed = rng.normal(size=(vocab_size, q)) / math.sqrt(q)
    # zero head: initial logits are uniform, so step-0 accuracy is chance
    stack = LayerStack(embed=embed, layers=layers,
                       head_w=np.zeros((n_classes, q)),
                       head_b=np.zeros(n_classes),
                       use_norm=bool(scfg.get("norm", True)),
                       pooling=config.get("head", {}).get("pooling", "mean"))
    if store is None:
        store = learn.ParamStore()
    dyn_scale = float(config.get("optimizer", {}).get("dynamics_lr_scale", 0.1))
    stack.register(store, dynamics_lr_scale=dyn_scale)
    return stack, store


def _padded_batch(ds, idx):
    seqs = [ds.sequences[i] for i in idx]
    T = max(len(s) for s in seqs)
    fill = ds.pad_id if ds.pad_id is not None else 0
    ids = np.full((len(idx), T), fill, dtype=np.int64)
    mask = np.zeros((len(idx), T), dtype=np.float64)
    for r, s in enumerate(seqs):
        ids[r, :len(s)] = s
        mask[r, :len(s)] = 1.0
    return ids, mask, ds.labels[idx]


def _batches(ds, batch_size, rng=None):
    """Length-bucketed batches; `rng` shuffles batch order for training."""
    order = np.argsort(ds.lengths(), kind="stable")
    groups = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None:
        rng.shuffle(groups)
    for idx in groups:
        yield _padded_batch(ds, idx)


def evaluate(stack, ds, batch_size=256, workers=None):
    """Classification accuracy of argmax logits over a dataset."""
    correct = 0
    for ids, mask, labels in _batches(ds, batch_size):
        logits = np.asarray(ad.val(stack_forward(stack, ids, mask=mask,
                                                 workers=workers)))
        correct += int(np.sum(np.argmax(logits, axis=-1) == labels))
    return correct / len(ds)


def save_checkpoint(path, store, config):
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_kind": config["model"]["kind"],
        "config": config,
        "step_count": store.step_count,
        "lr_scale": store.lr_scale,
        "params": {name: store[name].value.tolist() for name in store.names()},
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_checkpoint(path):
    with open(path) as f:
        ckpt = json.load(f)
    if ckpt.get("format_version") != CHECKPOINT_VERSION:
        raise ValidationError("unsupported checkpoint format version")
    return ckpt


def restore_into(store, ckpt):
    """Overwrite the store's leaves with checkpointed values, shape-checked."""
    saved = ckpt["params"]
    if set(saved) != set(store.names()):
        raise ValidationError("checkpoint parameter names do not match the stack")
    for name in store.names():
        arr = np.asarray(saved[name], dtype=np.float64)
        if arr.shape != store[name].value.shape:
            raise ValidationError(f"{name}: checkpoint shape {arr.shape} != "
                                  f"{store[name].value.shape}")
        store[name].value = arr
    store.step_count = int(ckpt.get("step_count", 0))


def train(config, out_dir, workers=None, quiet=True):
    """Full run: data, stack, Adam loop, metrics.jsonl, checkpoint.json.

    Returns a summary dict with final accuracies and artifact paths.
    Raises DivergenceError (with the offending step) if the loss or a
    gradient stops being finite.
    """
    t0 = time.perf_counter()
    seed = int(config.get("seed", 0))
    data = make_task(config["task"], seed)
    train_ds = data["train"]
    stack, store = build_stack(config, train_ds.vocab_size, train_ds.n_classes)
    ocfg = config.get("optimizer", {})
    adam = learn.AdamState(
        lr=float(ocfg.get("lr", 1e-3)),
        beta1=float(ocfg.get("beta1", 0.9)),
        beta2=float(ocfg.get("beta2", 0.999)),
        eps=float(ocfg.get("eps", 1e-8)),
        weight_decay=float(ocfg.get("weight_decay", 0.0)),
        clip_norm=ocfg.get("clip_norm", 1.0),
    )
    tcfg = config.get("train", {})
    total_steps = int(tcfg.get("steps", 500))
    batch_size = int(tcfg.get("batch_size", 64))
    eval_every = int(tcfg.get("eval_every", 0))
    batch_rng = np.random.default_rng((seed, 999))

    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    ckpt_path = os.path.join(out_dir, "checkpoint.json")
    step = 0
    last_loss = math.nan
    with open(metrics_path, "w") as mf:
        def emit(record):
            mf.write(json.dumps(record) + "\n")

        while step < total_steps:
            for ids, mask, labels in _batches(train_ds, batch_size, batch_rng):
                seen = {}

                def loss_fn():
                    logits = stack_forward(stack, ids, mask=mask, workers=workers)
                    seen["logits"] = np.asarray(ad.val(logits))
                    return ad.cross_entropy_mean(logits, labels)

                try:
                    loss, _ = learn.grad(loss_fn, store)
                    gnorm = learn.adam_step(store, adam)
                except DivergenceError as e:
                    raise DivergenceError(
                        f"diverged at step {step}: {e}; lower optimizer.lr "
                        f"or tighten optimizer.clip_norm") from e
                last_loss = loss
                step += 1
                acc = float(np.mean(np.argmax(seen["logits"], axis=-1) == labels))
                record = {
                    "epoch": round(step * batch_size / len(train_ds), 4),
                    "step": step,
                    "loss": loss,
                    "accuracy": acc,
                    "grad_norm": gnorm,
                    "wall_s": round(time.perf_counter() - t0, 3),
                }
                if eval_every and step % eval_every == 0:
                    record["val_accuracy"] = evaluate(stack, data["val"],
                                                      workers=workers)
                emit(record)
                if not quiet:
                    print(json.dumps(record))
                if step >= total_steps:
                    break

        val_acc = evaluate(stack, data["val"], workers=workers)
        test_acc = evaluate(stack, data["test"], workers=workers)
        emit({"step": step, "final": True, "val_accuracy": val_acc,
              "test_accuracy": test_acc,
              "wall_s": round(time.perf_counter() - t0, 3)})
    save_checkpoint(ckpt_path, store, config)
    return {
        "steps": step,
        "train_loss": last_loss,
        "val_accuracy": val_acc,
        "test_accuracy": test_acc,
        "wall_s": time.perf_counter() - t0,
        "metrics_path": metrics_path,
        "checkpoint_path": ckpt_path,
    }
