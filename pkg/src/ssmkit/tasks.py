"""Desk-scale classification tasks with exact label oracles.

Three generators, all pure functions of (seed, config, split):

  gen_listops        nested max/min/median/mean over digits, 10 classes
  gen_delayed_echo   classify the token seen `lag` steps before the end
  gen_selective_copy recall the earliest marked symbol among noise

Every label is recomputable from the token stream alone, so tests can
re-derive the whole dataset through an independent evaluator. ListOps
values stay in 0..9 because mean floors and median takes the lower
middle element. Splits draw from disjoint per-sample seed ranges, so
train/val/test never share a sample-level random stream.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .types import ValidationError

# ListOps token ids: 10 digits, 4 operators, brackets, separator, padding.
OP_MAX, OP_MIN, OP_MEDIAN, OP_MEAN = 10, 11, 12, 13
OPEN, CLOSE, SEP, PAD = 14, 15, 16, 17
LISTOPS_VOCAB = 18
LISTOPS_CLASSES = 10
OP_NAMES = {OP_MAX: "max", OP_MIN: "min", OP_MEDIAN: "median", OP_MEAN: "mean"}

ECHO_SYMBOLS = 8
COPY_SYMBOLS = 8
COPY_NOISE = 8  # filler token id in the selective-copy vocabulary

_SPLIT_BASE = {"train": 0, "val": 1 << 30, "test": 2 << 30}

_FORMAT_VERSION = 1
_MAGIC = b"SSMK"

__all__ = [
    "LISTOPS_VOCAB", "LISTOPS_CLASSES", "TaskSample", "Dataset",
    "serialize_listops", "parse_listops", "eval_listops",
    "eval_listops_tokens", "gen_listops", "gen_delayed_echo",
    "gen_selective_copy", "random_baseline",
]


@dataclass(frozen=True)
class TaskSample:
    tokens: np.ndarray
    label: int
    task: str


@dataclass
class Dataset:
    """Labeled token sequences plus the config that generated them."""

    task: str
    vocab_size: int
    n_classes: int
    sequences: list
    labels: np.ndarray
    config: dict = field(default_factory=dict)
    pad_id: int | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.sequences) != self.labels.shape[0]:
            raise ValidationError("sequence and label counts disagree")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.n_classes):
            raise ValidationError("label outside [0, n_classes)")

    def __len__(self):
        return len(self.sequences)

    def __getitem__(self, i) -> TaskSample:
        return TaskSample(self.sequences[i], int(self.labels[i]), self.task)

    def lengths(self):
        return np.array([len(s) for s in self.sequences], dtype=np.int64)

    def class_histogram(self):
        return np.bincount(self.labels, minlength=self.n_classes)

    def padded(self):
        """(ids, mask) with shape (N, T_max); mask marks real steps."""
        L = self.lengths()
        T = int(L.max())
        if np.any(L != T):
            if self.pad_id is None:
                raise ValidationError("ragged dataset has no pad token")
            fill = self.pad_id
        else:
            fill = 0
        ids = np.full((len(self), T), fill, dtype=np.int64)
        mask = np.zeros((len(self), T), dtype=np.float64)
        for i, seq in enumerate(self.sequences):
            ids[i, :len(seq)] = seq
            mask[i, :len(seq)] = 1.0
        return ids, mask

    # ------------------------------------------------------- serialization

    def save(self, prefix):
        """Write `prefix`.bin (length-prefixed records) and `prefix`.json."""
        with open(f"{prefix}.bin", "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<BI", _FORMAT_VERSION, len(self)))
            for seq, label in zip(self.sequences, self.labels):
                f.write(struct.pack("<II", len(seq), int(label)))
                f.write(np.asarray(seq, dtype="<u2").tobytes())
        manifest = {
            "format_version": _FORMAT_VERSION,
            "task": self.task,
            "n_samples": len(self),
            "vocab_size": self.vocab_size,
            "n_classes": self.n_classes,
            "pad_id": self.pad_id,
            "class_histogram": self.class_histogram().tolist(),
            "config": self.config,
        }
        with open(f"{prefix}.json", "w") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, prefix):
        with open(f"{prefix}.json") as f:
            manifest = json.load(f)
        if manifest.get("format_version") != _FORMAT_VERSION:
            raise ValidationError("unsupported dataset format version")
        with open(f"{prefix}.bin", "rb") as f:
            if f.read(4) != _MAGIC:
                raise ValidationError("not a dataset file (bad magic)")
            version, n = struct.unpack("<BI", f.read(5))
            if version != _FORMAT_VERSION:
                raise ValidationError("manifest and binary versions disagree")
            sequences, labels = [], np.empty(n, dtype=np.int64)
            for i in range(n):
                length, label = struct.unpack("<II", f.read(8))
                raw = f.read(2 * length)
                if len(raw) != 2 * length:
                    raise ValidationError("truncated dataset record")
                sequences.append(np.frombuffer(raw, dtype="<u2").astype(np.int64))
                labels[i] = label
        if n != manifest["n_samples"]:
            raise ValidationError("manifest sample count disagrees with binary")
        return cls(task=manifest["task"], vocab_size=manifest["vocab_size"],
                   n_classes=manifest["n_classes"], sequences=sequences,
                   labels=labels, config=manifest["config"],
                   pad_id=manifest["pad_id"])


def _sample_rng(seed, split, index):
    if split not in _SPLIT_BASE:
        raise ValidationError(f"unknown split {split!r}")
    return np.random.default_rng((int(seed), _SPLIT_BASE[split] + int(index)))


# ------------------------------------------------------------------ ListOps

def serialize_listops(expr):
    """Expression tree to token ids: OPEN op arg SEP arg ... CLOSE."""
    out = []

    def emit(node):
        if isinstance(node, (int, np.integer)):
            if not 0 <= int(node) <= 9:
                raise ValidationError("digit leaves must be in 0..9")
            out.append(int(node))
            return
        op, children = node
        if len(children) < 2:
            raise ValidationError("operators need at least two arguments")
        out.append(OPEN)
        out.append(op)
        for i, ch in enumerate(children):
            if i:
                out.append(SEP)
            emit(ch)
        out.append(CLOSE)

    emit(expr)
    return np.array(out, dtype=np.int64)


def parse_listops(tokens):
    """Invert serialize_listops; raises on malformed streams."""
    toks = list(np.asarray(tokens))
    pos = 0

    def fail(msg):
        raise ValidationError(f"malformed expression at token {pos}: {msg}")

    def parse_node():
        nonlocal pos
        if pos >= len(toks):
            fail("unexpected end")
        t = int(toks[pos])
        if 0 <= t <= 9:
            pos += 1
            return t
        if t != OPEN:
            fail(f"expected digit or '(', got {t}")
        pos += 1
        op = int(toks[pos]) if pos < len(toks) else fail("missing operator")
        if op not in OP_NAMES:
            fail(f"unknown operator id {op}")
        pos += 1
        children = [parse_node()]
        while pos < len(toks) and int(toks[pos]) == SEP:
            pos += 1
            children.append(parse_node())
        if pos >= len(toks) or int(toks[pos]) != CLOSE:
            fail("missing ')'")
        pos += 1
        if len(children) < 2:
            fail("operators need at least two arguments")
        return (op, children)

    expr = parse_node()
    if pos != len(toks):
        fail("trailing tokens")
    return expr


def eval_listops(expr):
    """Recursive evaluation; mean floors, median takes the lower middle."""
    if isinstance(expr, (int, np.integer)):
        return int(expr)
    op, children = expr
    vals = sorted(eval_listops(c) for c in children)
    if op == OP_MAX:
        return vals[-1]
    if op == OP_MIN:
        return vals[0]
    if op == OP_MEDIAN:
        return vals[(len(vals) - 1) // 2]
    if op == OP_MEAN:
        return sum(vals) // len(vals)
    raise ValidationError(f"unknown operator id {op}")


def eval_listops_tokens(tokens):
    """Stack-machine evaluation straight off the token stream.

    Kept independent of the recursive evaluator (separate arithmetic,
    no shared dispatch) so the two can serve as oracles for each other.
    """
    stack = []
    for t in np.asarray(tokens):
        t = int(t)
        if 0 <= t <= 9:
            stack.append(t)
        elif t in (OPEN, OP_MAX, OP_MIN, OP_MEDIAN, OP_MEAN):
            stack.append(-t)  # negative = control marker, digits stay >= 0
        elif t == SEP:
            continue
        elif t == CLOSE:
            args = []
            while stack and stack[-1] >= 0:
                args.append(stack.pop())
            if len(args) < 2 or not stack or stack[-1] not in (
                    -OP_MAX, -OP_MIN, -OP_MEDIAN, -OP_MEAN):
                raise ValidationError("malformed stream at ')'")
            op = -stack.pop()
            if not stack or stack[-1] != -OPEN:
                raise ValidationError("')' without matching '('")
            stack.pop()
            a = np.array(args)
            if op == OP_MAX:
                v = int(np.max(a))
            elif op == OP_MIN:
                v = int(np.min(a))
            elif op == OP_MEDIAN:
                v = int(np.partition(a, (len(a) - 1) // 2)[(len(a) - 1) // 2])
            else:
                v = int(np.floor(np.sum(a) / len(a)))
            stack.append(v)
        else:
            raise ValidationError(f"unexpected token id {t}")
    if len(stack) != 1 or stack[0] < 0:
        raise ValidationError("stream did not reduce to a single value")
    return stack[0]


def _grow_expr(rng, depth_left, budget):
    # node with arity k costs 2k + 2 tokens at minimum; a leaf costs 1
    if depth_left <= 0 or budget < 6 or rng.random() < 0.35:
        return int(rng.integers(0, 10))
    k = int(rng.integers(2, min(5, (budget - 2) // 2) + 1))
    op = int(rng.choice([OP_MAX, OP_MIN, OP_MEDIAN, OP_MEAN]))
    child_budget = (budget - 3 - (k - 1)) // k
    return (op, [_grow_expr(rng, depth_left - 1, child_budget) for _ in range(k)])


def gen_listops(seed, n_samples, max_len=128, max_depth=4, split="train"):
    """Nested-arithmetic classification; labels are the expression values."""
    if max_len < 6 or max_depth < 1:
        raise ValidationError("need max_len >= 6 and max_depth >= 1")
    if n_samples < 1:
        raise ValidationError("n_samples must be positive")
    sequences, labels = [], np.empty(n_samples, dtype=np.int64)
    for i in range(n_samples):
        rng = _sample_rng(seed, split, i)
        k = int(rng.integers(2, min(5, (max_len - 2) // 2) + 1))
        op = int(rng.choice([OP_MAX, OP_MIN, OP_MEDIAN, OP_MEAN]))
        child_budget = (max_len - 3 - (k - 1)) // k
        expr = (op, [_grow_expr(rng, max_depth - 1, child_budget)
                     for _ in range(k)])
        toks = serialize_listops(expr)
        sequences.append(toks)
        labels[i] = eval_listops(expr)
    config = {"seed": int(seed), "n_samples": int(n_samples),
              "max_len": int(max_len), "max_depth": int(max_depth),
              "split": split}
    return Dataset(task="listops", vocab_size=LISTOPS_VOCAB,
                   n_classes=LISTOPS_CLASSES, sequences=sequences,
                   labels=labels, config=config, pad_id=PAD)


# -------------------------------------------------------------- echo / copy

def gen_delayed_echo(seed, n, T, lag, split="train"):
    """Label is the token emitted exactly `lag` steps before the end."""
    if not 0 <= lag < T:
        raise ValidationError("need 0 <= lag < T")
    sequences, labels = [], np.empty(n, dtype=np.int64)
    for i in range(n):
        rng = _sample_rng(seed, split, i)
        toks = rng.integers(0, ECHO_SYMBOLS, size=T)
        sequences.append(toks.astype(np.int64))
        labels[i] = toks[T - 1 - lag]
    config = {"seed": int(seed), "n": int(n), "T": int(T),
              "lag": int(lag), "split": split}
    return Dataset(task="delayed_echo", vocab_size=ECHO_SYMBOLS,
                   n_classes=ECHO_SYMBOLS, sequences=sequences,
                   labels=labels, config=config)


def gen_selective_copy(seed, n, T, n_marks, split="train", positions=None):
    """Data symbols at sparse positions among noise; label = earliest one.

    `positions` pins the mark locations for every sample (handy for
    reductions); by default each sample draws its own mark positions.
    """
    if not 1 <= n_marks < T:
        raise ValidationError("need 1 <= n_marks < T")
    if positions is not None:
        positions = np.asarray(positions, dtype=np.int64)
        if (positions.shape != (n_marks,) or len(set(positions.tolist())) != n_marks
                or positions.min() < 0 or positions.max() >= T):
            raise ValidationError("positions must be n_marks distinct indices in [0, T)")
    sequences, labels = [], np.empty(n, dtype=np.int64)
    for i in range(n):
        rng = _sample_rng(seed, split, i)
        pos = (positions if positions is not None
               else rng.choice(T, size=n_marks, replace=False))
        toks = np.full(T, COPY_NOISE, dtype=np.int64)
        toks[pos] = rng.integers(0, COPY_SYMBOLS, size=n_marks)
        sequences.append(toks)
        labels[i] = toks[int(np.min(pos))]
    config = {"seed": int(seed), "n": int(n), "T": int(T),
              "n_marks": int(n_marks), "split": split,
              "positions": None if positions is None else positions.tolist()}
    return Dataset(task="selective_copy", vocab_size=COPY_SYMBOLS + 1,
                   n_classes=COPY_SYMBOLS, sequences=sequences,
                   labels=labels, config=config)


def random_baseline(dataset):
    """Chance accuracy of the task: exactly 1 / n_classes."""
    return 1.0 / dataset.n_classes
