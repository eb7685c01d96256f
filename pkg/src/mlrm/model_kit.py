"""Small multilayer perceptrons, magnitude pruning and model-level redundancy.

Parameters of a network live in one flat float64 vector: every weight
matrix (layer-major, each of shape ``(fan_in, fan_out)`` in row-major order)
followed by every bias vector.  Pruning masks index into that vector and
never touch biases.
"""

from __future__ import annotations

import json
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core_metrics import (
    EPSILON,
    MetricValue,
    RedundancyScore,
    balanced_accuracy,
    redundancy_index,
    removal_redundancy,
)
from .errors import (
    DivergenceDetected,
    FormatError,
    IncomparableSubmodules,
    InvalidSize,
    NotFound,
    ShapeMismatch,
)

RELU = "relu"
TANH = "tanh"
TAU_MODEL = 0.02


def worker_count():
    """Thread cap for independent model trainings (``MLRM_THREADS``, default 1)."""
    try:
        return max(1, int(os.environ.get("MLRM_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    activation: str = RELU
    seed: int = 0
    learning_rate: float = 0.05
    epochs: int = 100
    batch_size: int = 32
    momentum: float = 0.9

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"need >= 2 layers of size >= 1, got {sizes}")
        if self.activation not in (RELU, TANH):
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    @property
    def n_params(self):
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    @property
    def architecture(self):
        return f"mlp{'-'.join(map(str, self.layer_sizes))}:{self.activation}"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and optimizer settings independent of data dimensions."""

    hidden: tuple = (16,)
    activation: str = RELU
    learning_rate: float = 0.05
    epochs: int = 60
    batch_size: int = 32
    momentum: float = 0.9

    def spec_for(self, n_in, n_classes, seed=0, hidden=None):
        hidden = self.hidden if hidden is None else hidden
        return MlpSpec(
            (n_in, *hidden, n_classes),
            activation=self.activation,
            seed=seed,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            momentum=self.momentum,
        )

    def to_dict(self):
        return {
            "hidden": list(self.hidden),
            "activation": self.activation,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "momentum": self.momentum,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


def param_layout(layer_sizes):
    """Start offsets of every weight block then every bias block, plus the end."""
    s = layer_sizes
    sizes = [a * b for a, b in zip(s[:-1], s[1:])] + list(s[1:])
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)


@dataclass
class ParamVector:
    values: np.ndarray
    layout: np.ndarray

    @property
    def n_params(self):
        return int(self.values.size)

    @classmethod
    def zeros(cls, spec):
        layout = param_layout(spec.layer_sizes)
        return cls(np.zeros(int(layout[-1])), layout)

    def copy(self):
        return ParamVector(self.values.copy(), self.layout.copy())

    def n_layers(self):
        return (len(self.layout) - 1) // 2

    def unpack(self, spec):
        """Views (weights, biases) shaped per layer."""
        s = spec.layer_sizes
        n = len(s) - 1
        if self.values.size != spec.n_params:
            raise ShapeMismatch(f"{self.values.size} params but spec needs {spec.n_params}")
        ws, bs = [], []
        for i in range(n):
            ws.append(self.values[self.layout[i]:self.layout[i + 1]].reshape(s[i], s[i + 1]))
            bs.append(self.values[self.layout[n + i]:self.layout[n + i + 1]])
        return ws, bs

    def weight_flags(self):
        """True for weight entries, False for biases."""
        flags = np.zeros(self.values.size, dtype=bool)
        flags[: self.layout[self.n_layers()]] = True
        return flags


def init_params(spec):
    """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(spec.seed)
    p = ParamVector.zeros(spec)
    ws, _ = p.unpack(spec)
    for w in ws:
        a = math.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        w[...] = rng.uniform(-a, a, size=w.shape)
    return p


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == RELU else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0).astype(z.dtype) if kind == RELU else 1.0 - a * a


def forward(params, spec, x):
    """Logits of the network for inputs `x` of shape (N, n_in)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.layer_sizes[0]:
        raise ShapeMismatch(f"input shape {x.shape} does not match {spec.layer_sizes[0]} inputs")
    ws, bs = params.unpack(spec)
    h = x
    for i, (w, b) in enumerate(zip(ws, bs)):
        z = h @ w + b
        h = z if i == len(ws) - 1 else _act(z, spec.activation)
    return h


def _log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(params, spec, x, y):
    """Mean softmax cross-entropy and its gradient as a flat vector."""
    ws, bs = params.unpack(spec)
    n = x.shape[0]
    hs, zs = [x], []
    h = x
    for i, (w, b) in enumerate(zip(ws, bs)):
        z = h @ w + b
        zs.append(z)
        h = z if i == len(ws) - 1 else _act(z, spec.activation)
        hs.append(h)
    logp = _log_softmax(hs[-1])
    loss = -float(np.mean(logp[np.arange(n), y]))

    grad = ParamVector.zeros(spec)
    gws, gbs = grad.unpack(spec)
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    for i in range(len(ws) - 1, -1, -1):
        gws[i][...] = hs[i].T @ delta
        gbs[i][...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ ws[i].T) * _act_grad(zs[i - 1], hs[i], spec.activation)
    return loss, grad.values


def cross_entropy(params, spec, x, y):
    logp = _log_softmax(forward(params, spec, x))
    return -float(np.mean(logp[np.arange(x.shape[0]), y]))


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)

    @property
    def initial_loss(self):
        return self.losses[0]

    @property
    def final_loss(self):
        return self.losses[-1]


def train_mlp(spec, x, y):
    """Mini-batch gradient descent (with momentum) on softmax cross-entropy.

    Returns ``(params, log)`` where ``log.losses[0]`` is the loss at
    initialization and ``log.losses[e]`` the full-data loss after epoch e.
    The result is bitwise reproducible for a given spec and data.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64).ravel()
    if x.ndim != 2 or x.shape[1] != spec.layer_sizes[0]:
        raise ShapeMismatch(f"input shape {x.shape} does not match {spec.layer_sizes[0]} inputs")
    if y.size != x.shape[0]:
        raise ShapeMismatch("x and y have different lengths")
    if y.size and (y.min() < 0 or y.max() >= spec.layer_sizes[-1]):
        raise ShapeMismatch("labels outside the output layer range")

    with np.errstate(over="ignore", invalid="ignore"):
        return _train(spec, x, y)


def _train(spec, x, y):
    params = init_params(spec)
    rng = np.random.default_rng([spec.seed, 1])
    velocity = np.zeros_like(params.values)
    log = TrainLog([cross_entropy(params, spec, x, y)])
    n = x.shape[0]
    for _ in range(spec.epochs):
        order = rng.permutation(n)
        for start in range(0, n, spec.batch_size):
            idx = order[start:start + spec.batch_size]
            loss, g = loss_and_grad(params, spec, x[idx], y[idx])
            if not math.isfinite(loss):
                raise DivergenceDetected(f"loss became {loss}; lower the learning rate (now {spec.learning_rate})")
            velocity *= spec.momentum
            velocity -= spec.learning_rate * g
            params.values += velocity
        epoch_loss = cross_entropy(params, spec, x, y)
        if not math.isfinite(epoch_loss):
            raise DivergenceDetected(f"loss became {epoch_loss}; lower the learning rate (now {spec.learning_rate})")
        log.losses.append(epoch_loss)
    return params, log


def predict(params, spec, x, mask=None):
    if mask is not None:
        params = apply_mask(params, mask)
    return np.argmax(forward(params, spec, x), axis=1)


def evaluate_model(params, spec, x, y, mask=None):
    """Balanced accuracy of argmax predictions."""
    return balanced_accuracy(y, predict(params, spec, x, mask))


# --- data plumbing -------------------------------------------------------------


def stratified_split(y, ratios=(0.8, 0.1, 0.1), seed=0):
    """Deterministic per-class split into train/val/test index arrays."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.size != 3 or np.any(ratios <= 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    y = np.asarray(y).ravel()
    rng = np.random.default_rng([seed, 2])
    parts = ([], [], [])
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        n = idx.size
        n_val = int(round(ratios[1] * n))
        n_test = int(round(ratios[2] * n))
        n_train = n - n_val - n_test
        if n >= 3:
            n_train = max(n_train, 1)
            n_val = max(min(n_val, n - n_train - 1), 1)
            n_test = n - n_train - n_val
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    return tuple(np.sort(np.concatenate(p)).astype(np.int64) for p in parts)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x):
        x = np.asarray(x, dtype=np.float64)
        sd = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def __call__(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale


def fit_and_score(x, y, train_idx, eval_idx, config, seed=0, n_classes=None):
    """Standardize on the training rows, train, and score on the evaluation rows.

    A matrix with zero columns yields the majority-class predictor.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n_classes = int(n_classes or y.max() + 1)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] == 0:
        majority = int(np.argmax(np.bincount(y[train_idx], minlength=n_classes)))
        pred = np.full(len(eval_idx), majority)
        return balanced_accuracy(y[eval_idx], pred), None
    scaler = Standardizer.fit(x[train_idx])
    spec = config.spec_for(x.shape[1], n_classes, seed=seed)
    params, _ = train_mlp(spec, scaler(x[train_idx]), y[train_idx])
    acc = evaluate_model(params, spec, scaler(x[eval_idx]), y[eval_idx])
    return acc, (params, spec, scaler)


# --- pruning and model-level redundancy ---------------------------------------


@dataclass(frozen=True)
class PruneMask:
    keep: np.ndarray

    @property
    def sparsity(self):
        return float(np.count_nonzero(~self.keep)) / self.keep.size

    @property
    def n_pruned(self):
        return int(np.count_nonzero(~self.keep))


def apply_mask(params, mask):
    if mask.keep.size != params.values.size:
        raise ShapeMismatch("mask length differs from parameter count")
    return ParamVector(np.where(mask.keep, params.values, 0.0), params.layout)


def magnitude_mask(params, n_prune):
    """Mask the `n_prune` weights of smallest |theta|; biases are never pruned."""
    flags = params.weight_flags()
    weight_idx = np.flatnonzero(flags)
    order = weight_idx[np.argsort(np.abs(params.values[weight_idx]), kind="stable")]
    keep = np.ones(params.values.size, dtype=bool)
    keep[order[:n_prune]] = False
    return PruneMask(keep)


@dataclass
class PruneResult:
    mask: PruneMask
    score: RedundancyScore
    baseline: MetricValue
    pruned: MetricValue
    curve: list

    @property
    def sparsity(self):
        return self.mask.sparsity

    def __iter__(self):
        return iter((self.mask, self.score))


def l1_prune_search(params, spec, x_val, y_val, step=0.01, tol=0.01):
    """One-shot global magnitude pruning sweep over fractions of the weights.

    Every fraction ``step, 2*step, ...`` (up to all weights) is tried; the
    largest one whose validation balanced accuracy stays within `tol` of the
    unpruned baseline is returned together with its removal redundancy.
    """
    if not 0 < step <= 0.05:
        raise ValueError(f"step must be in (0, 0.05], got {step}")
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    baseline = evaluate_model(params, spec, x_val, y_val)
    n_weights = int(params.weight_flags().sum())
    best_mask = PruneMask(np.ones(params.values.size, dtype=bool))
    best_acc = baseline
    curve = []
    k = 1
    while k * step <= 1.0 + 1e-12:
        frac = min(k * step, 1.0)
        n_prune = int(round(frac * n_weights))
        mask = magnitude_mask(params, n_prune)
        acc = evaluate_model(params, spec, x_val, y_val, mask)
        ok = acc.value >= baseline.value - tol
        curve.append({"fraction": frac, "sparsity": mask.sparsity, "accuracy": acc.value, "ok": ok})
        if ok:
            best_mask, best_acc = mask, acc
        k += 1
    score = overparam_redundancy(baseline, best_acc, "removed")
    return PruneResult(best_mask, score, baseline, best_acc, curve)


ADDED = "added"
REMOVED = "removed"


def overparam_redundancy(acc_base, acc_modified, mode, epsilon=EPSILON):
    """Redundancy of a parameter set added to (``"added"``) or removed from
    (``"removed"``) a trained model."""
    if not isinstance(acc_base, MetricValue):
        acc_base = MetricValue.higher(acc_base)
    if not isinstance(acc_modified, MetricValue):
        acc_modified = MetricValue.higher(acc_modified)
    mode = str(mode).lower()
    if mode == ADDED:
        return redundancy_index(acc_base, acc_modified, epsilon)
    if mode == REMOVED:
        return removal_redundancy(acc_base, acc_modified, epsilon)
    raise ValueError(f"mode must be 'added' or 'removed', got {mode!r}")


@dataclass
class CapacityResult:
    chosen: int
    accuracies: dict
    score: RedundancyScore

    def to_dict(self):
        return {"chosen": self.chosen, "accuracies": {str(k): v for k, v in self.accuracies.items()},
                "score": self.score.to_dict()}


def capacity_search(x, y, widths, template=None, tol=0.01, seed=0, ratios=(0.8, 0.1, 0.1), split=None):
    """Smallest hidden width whose validation accuracy is within `tol` of the best.

    Every hidden layer of `template` is set to the candidate width.  The
    returned score is the redundancy of growing from the chosen width to the
    widest candidate.  `split` optionally fixes the (train, val) row indices;
    otherwise a stratified split by `ratios` is drawn.
    """
    widths = [int(w) for w in widths]
    if not widths or any(w < 1 for w in widths) or widths != sorted(widths):
        raise InvalidSize("widths must be a nonempty ascending list of positive counts")
    template = template or ModelConfig()
    y = np.asarray(y, dtype=np.int64)
    train, val = split if split is not None else stratified_split(y, ratios, seed)[:2]
    n_layers = max(len(template.hidden), 1)

    def run(w):
        cfg = replace(template, hidden=(w,) * n_layers)
        acc, _ = fit_and_score(x, y, train, val, cfg, seed)
        return acc.value

    accs = dict(zip(widths, parallel_map(run, widths)))
    bar = max(accs.values()) - tol
    chosen = next(w for w in widths if accs[w] >= bar)
    score = overparam_redundancy(accs[chosen], accs[widths[-1]], ADDED)
    return CapacityResult(chosen, accs, score)


# --- submodules ----------------------------------------------------------------


@dataclass
class Submodule:
    id: str
    params: ParamVector
    spec: MlpSpec

    @property
    def architecture(self):
        return self.spec.architecture


def majority_vote(predictions, n_classes):
    """Column-wise majority of stacked predictions; ties go to the lowest class."""
    predictions = np.asarray(predictions, dtype=np.int64)
    counts = np.zeros((predictions.shape[1], n_classes), dtype=np.int64)
    for row in predictions:
        counts[np.arange(row.size), row] += 1
    return np.argmax(counts, axis=1)


@dataclass
class SubmodularResult:
    score: RedundancyScore
    raw_drop: float
    full: MetricValue
    reduced: MetricValue


def submodular_perf_redundancy(ensemble, drop, x, y):
    """Effect of removing member `drop` from a majority-vote ensemble.

    `score` follows the ``1 - drop`` convention of the other redundancy
    measures; `raw_drop` is the normalized accuracy drop itself.
    """
    if len(ensemble) < 2:
        raise InvalidSize("ensemble needs at least two members")
    ids = [m.id for m in ensemble]
    if drop not in ids:
        raise NotFound(f"no submodule with id {drop!r}")
    n_classes = max(m.spec.layer_sizes[-1] for m in ensemble)
    preds = {m.id: predict(m.params, m.spec, x) for m in ensemble}
    full = balanced_accuracy(y, majority_vote([preds[i] for i in ids], n_classes))
    rest = [preds[i] for i in ids if i != drop]
    reduced = balanced_accuracy(y, majority_vote(rest, n_classes))
    score = removal_redundancy(full, reduced)
    raw = (full.value - reduced.value) / abs(full.value) if full.value else 0.0
    return SubmodularResult(score, raw, full, reduced)


def submodule_param_distance(m_i, m_j):
    """Euclidean distance between the parameter vectors of two same-architecture submodules."""
    if m_i.architecture != m_j.architecture or m_i.params.n_params != m_j.params.n_params:
        raise IncomparableSubmodules(f"{m_i.architecture} vs {m_j.architecture}")
    d = m_i.params.values - m_j.params.values
    return float(np.sqrt(np.dot(d, d)))


# --- .mlpk serialization -----------------------------------------------------

_MAGIC = b"MLPK"


def encode_params(params, spec):
    """Serialize as ``MLPK | u32 header length | JSON header | float64 LE values``."""
    header = json.dumps({
        "format": "mlpk/1",
        "layer_sizes": list(spec.layer_sizes),
        "activation": spec.activation,
        "layout": [int(v) for v in params.layout],
        "seed": spec.seed,
        "n_params": params.n_params,
    }, sort_keys=True).encode("utf-8")
    return _MAGIC + struct.pack("<I", len(header)) + header + params.values.astype("<f8").tobytes()


def save_params(path, params, spec):
    with open(path, "wb") as fh:
        fh.write(encode_params(params, spec))


def load_params(path):
    """Inverse of :func:`save_params`; returns ``(params, spec)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError("not an .mlpk file", path, 0)
    if len(blob) < 8:
        raise FormatError("truncated header length", path, 4)
    (n,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad JSON header: {exc}", path, 8) from exc
    body = blob[8 + n:]
    if len(body) != 8 * header["n_params"]:
        raise FormatError(f"expected {header['n_params']} float64 values", path, 8 + n)
    spec = MlpSpec(tuple(header["layer_sizes"]), activation=header["activation"], seed=header["seed"])
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return ParamVector(values, np.asarray(header["layout"], dtype=np.int64)), spec
