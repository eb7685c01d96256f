"""Cross-sensor redundancy: feature-set mutual information, ridge mapping
error between modalities, and performance-based sensor-removal verdicts."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core_metrics import (
    EPSILON,
    QUANTILE,
    MetricValue,
    RedundancyScore,
    joint_codes,
    mutual_information,
    quantize_features,
    redundancy_index,
)
from .errors import NotRegistered, ShapeMismatch, TooFewSamples
from .feature_redundancy import pca_fit, pca_transform
from .model_kit import TAU_MODEL, ModelConfig, fit_and_score, parallel_map, stratified_split

VISUAL = "visual"
AUDIO = "audio"


class Basis(str, Enum):
    PERFORMANCE_DELTA = "PerformanceDelta"
    MAPPING_MSE = "MappingMse"
    MUTUAL_INFO = "MutualInfo"


class Recommendation(str, Enum):
    KEEP = "Keep"
    REMOVABLE = "RemovableAtInference"


def _matrix(a):
    a = np.asarray(a, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def _paired(f_v, f_a):
    f_v, f_a = _matrix(f_v), _matrix(f_a)
    if f_v.shape[0] != f_a.shape[0]:
        raise NotRegistered(f"sensor feature sets have {f_v.shape[0]} and {f_a.shape[0]} rows")
    return f_v, f_a


def _reduce(f, max_dims):
    if f.shape[1] <= max_dims:
        return f
    return pca_transform(pca_fit(f, max_dims), f)


def cross_sensor_mi(f_v, f_a, bins=4, max_dims=2):
    """I(F_V; F_A) in bits between jointly coded feature sets.

    Each side is reduced to at most `max_dims` principal components, each
    component is quantile-binned, and the per-side bin tuples form one
    discrete variable.  Joint histograms grow as bins**(2 * max_dims), so
    keep both small relative to N.
    """
    f_v, f_a = _paired(f_v, f_a)
    cv = joint_codes(quantize_features(_reduce(f_v, max_dims), bins, QUANTILE))
    ca = joint_codes(quantize_features(_reduce(f_a, max_dims), bins, QUANTILE))
    return mutual_information(cv, ca)


# --- mapping model ----------------------------------------------------------------------


@dataclass(frozen=True)
class RidgeMap:
    """Affine map ``x -> x @ weights.T + bias`` fitted by ridge regression."""

    weights: np.ndarray  # (m_A, m_V)
    bias: np.ndarray  # (m_A,)
    lam: float

    def predict(self, x):
        x = _matrix(x)
        if x.shape[1] != self.weights.shape[1]:
            raise ShapeMismatch(f"expected {self.weights.shape[1]} input columns, got {x.shape[1]}")
        return x @ self.weights.T + self.bias


def fit_ridge(x, y, lam=None):
    """Closed-form ridge on centered data: (XᵀX + λI) W = XᵀY.

    The default λ is 1e-3 · trace(XᵀX) / m, which scales with the data.
    """
    x, y = _matrix(x), _matrix(y)
    if x.shape[0] != y.shape[0]:
        raise ShapeMismatch("x and y have different lengths")
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    gram = xc.T @ xc
    m = x.shape[1]
    if lam is None:
        lam = 1e-3 * np.trace(gram) / m
        lam = lam if lam > 0 else 1e-12
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    w = np.linalg.solve(gram + lam * np.eye(m), xc.T @ yc).T
    return RidgeMap(w, my - w @ mx, float(lam))


def mapping_mse(ridge, x, y):
    """Mean squared error over all rows and output columns."""
    return float(np.mean((ridge.predict(x) - _matrix(y)) ** 2))


def mapping_fit_mse(d_v, d_a, lam=None, split=0.8, seed=0):
    """Fit f: D_V -> D_A on a random `split` share of rows; MSE on the rest.

    A small held-out error means one sensor's features largely determine the
    other's.
    """
    d_v, d_a = _paired(d_v, d_a)
    n = d_v.shape[0]
    if n < 10:
        raise TooFewSamples(f"need at least 10 paired samples, got {n}")
    if not 0 < split < 1:
        raise ValueError("split must lie in (0, 1)")
    perm = np.random.default_rng([seed, 3]).permutation(n)
    n_train = min(max(int(round(split * n)), 2), n - 1)
    tr, te = perm[:n_train], perm[n_train:]
    ridge = fit_ridge(d_v[tr], d_a[tr], lam)
    return ridge, mapping_mse(ridge, d_v[te], d_a[te])


# --- performance-based verdicts ------------------------------------------------------------


def _accuracy(v):
    return v if isinstance(v, MetricValue) else MetricValue.higher(v)


def cross_sensor_performance_redundancy(acc_with, acc_without, epsilon=EPSILON):
    """Redundancy of a sensor from fused accuracy versus the accuracy the
    remaining sensor achieves alone."""
    before, after = _accuracy(acc_without), _accuracy(acc_with)
    for v in (before, after):
        if not 0.0 <= v.value <= 1.0:
            raise ValueError(f"balanced accuracy must lie in [0, 1], got {v.value}")
    return redundancy_index(before, after, epsilon)


@dataclass(frozen=True)
class SensorVerdict:
    sensor_id: str
    r: RedundancyScore
    basis: Basis
    recommendation: Recommendation
    evidence: dict = field(default_factory=dict)

    @property
    def removable(self):
        return self.recommendation is Recommendation.REMOVABLE

    def to_dict(self):
        return {
            "sensor_id": self.sensor_id,
            "r": self.r.to_dict(),
            "basis": self.basis.value,
            "recommendation": self.recommendation.value,
            "evidence": dict(self.evidence),
        }


@dataclass(frozen=True)
class SensorRemovalResult:
    visual: SensorVerdict
    audio: SensorVerdict
    accuracies: dict
    mapping_mse: dict

    def __iter__(self):
        return iter((self.visual, self.audio))

    def to_dict(self):
        return {
            "verdicts": [self.visual.to_dict(), self.audio.to_dict()],
            "accuracies": dict(self.accuracies),
            "mapping_mse": dict(self.mapping_mse),
        }


def sensor_verdicts(x_v, x_a, y, train, eval_idx, model_cfg=None, seed=0, tau_model=TAU_MODEL):
    """Verdict per sensor from V-only, A-only and fused classifiers trained on
    rows `train` and scored by balanced accuracy on rows `eval_idx`.

    A sensor is removable at inference when dropping it from the fused model
    leaves R ≥ 1 - `tau_model`.
    """
    x_v, x_a = _paired(x_v, x_a)
    y = np.asarray(y, dtype=np.int64).ravel()
    if y.size != x_v.shape[0]:
        raise ShapeMismatch("labels and features have different lengths")
    model_cfg = model_cfg or ModelConfig()
    n_classes = int(y.max()) + 1
    inputs = {VISUAL: x_v, AUDIO: x_a, "fusion": np.hstack([x_v, x_a])}
    names = list(inputs)
    scores = parallel_map(
        lambda k: fit_and_score(inputs[k], y, train, eval_idx, model_cfg, seed, n_classes)[0], names)
    acc = dict(zip(names, scores))
    _, mse_va = mapping_fit_mse(x_v[train], x_a[train], seed=seed)
    _, mse_av = mapping_fit_mse(x_a[train], x_v[train], seed=seed)
    mse = {"visual_to_audio": mse_va, "audio_to_visual": mse_av}

    def verdict(sensor, other):
        r = cross_sensor_performance_redundancy(acc["fusion"], acc[other])
        rec = Recommendation.REMOVABLE if r.r >= 1.0 - tau_model else Recommendation.KEEP
        evidence = {"acc_fusion": acc["fusion"].value, f"acc_{other}_only": acc[other].value,
                    "tau_model": tau_model, **mse}
        return SensorVerdict(sensor, r, Basis.PERFORMANCE_DELTA, rec, evidence)

    return SensorRemovalResult(verdict(VISUAL, AUDIO), verdict(AUDIO, VISUAL),
                               {k: v.value for k, v in acc.items()}, mse)


def recommend_sensor_removal(x_v, x_a, y, model_cfg=None, seed=0, ratios=(0.8, 0.1, 0.1), tau_model=TAU_MODEL):
    """:func:`sensor_verdicts` on a stratified split, scored on the test rows."""
    y = np.asarray(y, dtype=np.int64).ravel()
    train, _, test = stratified_split(y, ratios, seed)
    return sensor_verdicts(x_v, x_a, y, train, test, model_cfg, seed, tau_model)
