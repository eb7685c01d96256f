"""Cross-variable redundancy: correlation, mutual-information scores,
wrapper deltas, forward/backward selection and PCA feature learning."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .core_metrics import (
    QUANTILE,
    TAU_NUM,
    conditional_mutual_information,
    joint_entropy,
    mutual_information,
    quantize_features,
    redundancy_index,
    removal_redundancy,
)
from .errors import InvalidK, ShapeMismatch, UndefinedCorrelation
from .model_kit import TAU_MODEL, ModelConfig, fit_and_score, parallel_map, stratified_split

DEFAULT_BINS = 16
PEARSON = "pearson"
SPEARMAN = "spearman"
FORWARD = "forward"
BACKWARD = "backward"


def correlation(f_k, f_l, kind=PEARSON):
    a = np.asarray(f_k, dtype=np.float64).ravel()
    b = np.asarray(f_l, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ShapeMismatch(f"column lengths differ: {a.size} vs {b.size}")
    if a.size < 2:
        raise UndefinedCorrelation("need at least two samples")
    if kind == SPEARMAN:
        a, b = rankdata(a), rankdata(b)
    elif kind != PEARSON:
        raise ValueError(f"unknown correlation kind {kind!r}")
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if denom == 0:
        raise UndefinedCorrelation("a column has zero variance")
    return float(np.clip(np.dot(a, b) / denom, -1.0, 1.0))


def _coded(col, bins):
    col = np.asarray(col)
    if bins is None:
        return col.astype(np.int64).ravel()
    return quantize_features(col.astype(np.float64), bins, QUANTILE)[:, 0]


def pair_redundancy(f_k, f_l, bins=DEFAULT_BINS):
    """Normalized mutual information I(f_k; f_l) / min(H(f_k), H(f_l)).

    With ``bins=None`` the columns are taken as already integer-coded.
    1 means one column determines the other.
    """
    a, b = _coded(f_k, bins), _coded(f_l, bins)
    if a.size != b.size:
        raise ShapeMismatch(f"column lengths differ: {a.size} vs {b.size}")
    denom = max(min(joint_entropy(a), joint_entropy(b)), TAU_NUM)
    return mutual_information(a, b) / denom


def cmi_gain(k, y, given, x, bins=DEFAULT_BINS):
    """Information (bits) column `k` of `x` adds about `y` beyond columns `given`."""
    given = sorted(set(int(g) for g in given))
    if k in given:
        return 0.0
    x = np.asarray(x, dtype=np.float64)
    codes = quantize_features(x[:, [k, *given]], bins, QUANTILE) if bins else x[:, [k, *given]].astype(np.int64)
    return conditional_mutual_information(codes[:, 0], np.asarray(y), codes[:, 1:])


# --- PCA ---------------------------------------------------------------------


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def k(self):
        return self.components.shape[0]

    def transform(self, x):
        return pca_transform(self, x)


def pca_fit(x, k):
    """Top-`k` principal axes of the sample covariance (via SVD of centered data).

    Each axis is signed so that its largest-magnitude entry is positive.
    """
    x = np.asarray(x, dtype=np.float64)
    n, m = x.shape
    if not 1 <= k <= min(n - 1, m):
        raise InvalidK(f"k must lie in [1, {min(n - 1, m)}], got {k}")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:k].copy()
    pivots = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivots])
    comps *= np.where(signs == 0, 1.0, signs)[:, None]
    var = s[:k] ** 2 / (n - 1)
    return PcaModel(mean, comps, var)


def pca_transform(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.mean.size:
        raise ShapeMismatch(f"expected {model.mean.size} columns, got shape {x.shape}")
    return (x - model.mean) @ model.components.T


# --- wrapper-based redundancy --------------------------------------------------


def _score_subset(x, y, cols, train, val, config, seed):
    acc, _ = fit_and_score(x[:, list(cols)], y, train, val, config, seed)
    return acc


def wrapper_redundancy(x, y, base, candidate, model_cfg=None, ratios=(0.8, 0.1, 0.1), seed=0):
    """Redundancy of adding column `candidate` to the columns `base`.

    Both classifiers share one stratified split and one seed; performance is
    validation balanced accuracy.
    """
    base = sorted(set(int(b) for b in base))
    if candidate in base:
        raise ValueError(f"candidate {candidate} already in base set")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    model_cfg = model_cfg or ModelConfig()
    train, val, _ = stratified_split(y, ratios, seed)
    before = _score_subset(x, y, base, train, val, model_cfg, seed)
    after = _score_subset(x, y, sorted(base + [candidate]), train, val, model_cfg, seed)
    return redundancy_index(before, after)


# --- selection -------------------------------------------------------------------


@dataclass
class SelectionResult:
    indices: list
    trail: list = field(default_factory=list)

    def to_dict(self):
        return {"indices": list(self.indices), "trail": list(self.trail)}


def _best(scores, prefer_high):
    """(index, score) of the winner; ties go to the lowest column index."""
    items = sorted(scores.items())
    key = (lambda kv: (-kv[1], kv[0])) if prefer_high else (lambda kv: (kv[1], kv[0]))
    return min(items, key=key)


def select_features(x, y, mode=FORWARD, max_features=None, min_gain=0.0, scorer="cmi",
                    model_cfg=None, bins=DEFAULT_BINS, seed=0, ratios=(0.8, 0.1, 0.1),
                    tau_model=TAU_MODEL):
    """Greedy forward selection or backward elimination.

    With the ``"cmi"`` scorer a feature's value is its conditional mutual
    information with `y` given the current set.  With ``"wrapper"`` it is
    the relative change in validation balanced accuracy, and the decision
    uses the redundancy index.  Forward selection stops once the best gain
    falls below `min_gain` or `max_features` are chosen; backward
    elimination stops once every remaining feature is informative (CMI loss
    > `min_gain`, or removal redundancy < 1 - `tau_model`) or only
    `max_features` remain.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, m = x.shape
    if y.size != n:
        raise ShapeMismatch("x and y have different lengths")
    if scorer not in ("cmi", "wrapper"):
        raise ValueError(f"unknown scorer {scorer!r}")
    trail = []
    if scorer == "cmi":
        codes = quantize_features(x, bins, QUANTILE) if bins else x.astype(np.int64)

        def gain(k, given):
            return conditional_mutual_information(codes[:, k], y, codes[:, sorted(given)])
    else:
        model_cfg = model_cfg or ModelConfig()
        train, val, _ = stratified_split(y, ratios, seed)
        cache = {}

        def perf(cols):
            key = tuple(sorted(cols))
            if key not in cache:
                cache[key] = _score_subset(x, y, key, train, val, model_cfg, seed)
            return cache[key]

    if mode == FORWARD:
        limit = m if max_features is None else min(int(max_features), m)
        chosen = []
        round_no = 0
        while len(chosen) < limit:
            remaining = [k for k in range(m) if k not in chosen]
            if scorer == "cmi":
                scores = dict(zip(remaining, parallel_map(lambda k: gain(k, chosen), remaining)))
                k, s = _best(scores, prefer_high=True)
                step_gain = s
            else:
                base = perf(chosen)
                scores = {k: redundancy_index(base, perf(chosen + [k])).r for k in remaining}
                k, s = _best(scores, prefer_high=False)
                step_gain = 1.0 - s
            accepted = step_gain >= min_gain
            trail.append({"round": round_no, "scores": {str(i): v for i, v in scores.items()},
                          "feature": k, "score": s, "action": "add" if accepted else "stop"})
            if not accepted:
                break
            chosen.append(k)
            round_no += 1
        return SelectionResult(sorted(chosen), trail)

    if mode == BACKWARD:
        floor = 0 if max_features is None else int(max_features)
        kept = list(range(m))
        round_no = 0
        while len(kept) > max(floor, 0) and kept:
            if scorer == "cmi":
                scores = dict(zip(kept, parallel_map(lambda k: gain(k, [j for j in kept if j != k]), kept)))
                k, s = _best(scores, prefer_high=False)
                removable = s <= min_gain + TAU_NUM
            else:
                full = perf(kept)
                scores = {k: removal_redundancy(full, perf([j for j in kept if j != k])).r for k in kept}
                k, s = _best(scores, prefer_high=True)
                removable = s >= 1.0 - tau_model
            trail.append({"round": round_no, "scores": {str(i): v for i, v in scores.items()},
                          "feature": k, "score": s, "action": "remove" if removable else "stop"})
            if not removable:
                break
            kept.remove(k)
            round_no += 1
        return SelectionResult(sorted(kept), trail)

    raise ValueError(f"unknown mode {mode!r}")
