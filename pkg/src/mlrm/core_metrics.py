"""Redundancy index, information-theoretic primitives and shared metrics.

The redundancy index compares a performance value before and after a
component is added::

    R = 1 - (P(K + C) - P(K)) / (|P(K)| + eps)

R < 1 means the component is not fully redundant, R == 1 means it is fully
redundant without affecting performance, and R > 1 means it is fully
redundant and harmful.  When lower values of P are better (losses, errors)
the numerator is flipped.

Entropies are in bits.  Mutual information uses the plug-in estimator on
joint histograms of integer-coded columns, with no bias correction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateLabels,
    DirectionMismatch,
    DivisionByZero,
    EmptyInput,
    InvalidBins,
    InvalidMetric,
    ShapeMismatch,
)

EPSILON = 1e-12
TAU_EQ = 1e-9
TAU_NUM = 1e-9


class Direction(str, enum.Enum):
    HIGHER_IS_BETTER = "higher_is_better"
    LOWER_IS_BETTER = "lower_is_better"


class Interpretation(str, enum.Enum):
    NOT_FULLY_REDUNDANT = "not_fully_redundant"
    FULLY_REDUNDANT_NEUTRAL = "fully_redundant_neutral"
    FULLY_REDUNDANT_HARMFUL = "fully_redundant_harmful"


@dataclass(frozen=True)
class MetricValue:
    value: float
    direction: Direction

    def __post_init__(self):
        if not isinstance(self.direction, Direction):
            raise InvalidMetric(f"direction must be a Direction, got {self.direction!r}")
        try:
            v = float(self.value)
        except (TypeError, ValueError) as exc:
            raise InvalidMetric(f"metric value {self.value!r} is not a real number") from exc
        if not math.isfinite(v):
            raise InvalidMetric(f"metric value must be finite, got {v}")
        object.__setattr__(self, "value", v)

    @classmethod
    def higher(cls, value):
        return cls(value, Direction.HIGHER_IS_BETTER)

    @classmethod
    def lower(cls, value):
        return cls(value, Direction.LOWER_IS_BETTER)


def interpret(r, tol=TAU_EQ):
    if abs(r - 1.0) <= tol:
        return Interpretation.FULLY_REDUNDANT_NEUTRAL
    return Interpretation.NOT_FULLY_REDUNDANT if r < 1.0 else Interpretation.FULLY_REDUNDANT_HARMFUL


@dataclass(frozen=True)
class RedundancyScore:
    """Value of the redundancy index plus the P values it came from."""

    r: float
    interpretation: Interpretation = field(init=False)
    p_before: float | None = None
    p_after: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.r):
            raise InvalidMetric(f"redundancy must be finite, got {self.r}")
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "interpretation", interpret(self.r))

    @property
    def fully_redundant(self):
        return self.interpretation is not Interpretation.NOT_FULLY_REDUNDANT

    def to_dict(self):
        return {
            "r": self.r,
            "interpretation": self.interpretation.value,
            "p_before": self.p_before,
            "p_after": self.p_after,
        }


def _check_pair(p_before, p_after, epsilon):
    if not isinstance(p_before, MetricValue) or not isinstance(p_after, MetricValue):
        raise InvalidMetric("p_before and p_after must be MetricValue instances")
    if p_before.direction is not p_after.direction:
        raise DirectionMismatch(
            f"cannot compare {p_before.direction.value} with {p_after.direction.value}"
        )
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise InvalidMetric(f"epsilon must be a positive finite number, got {epsilon}")


def redundancy_index(p_before, p_after, epsilon=EPSILON):
    """Redundancy of a component whose addition moves P from `p_before` to `p_after`.

    Parameters
    ----------
    p_before : MetricValue
        P(K), performance without the component.
    p_after : MetricValue
        P(K + C), performance with the component added.
    epsilon : float
        Guard against division by zero.

    Returns
    -------
    RedundancyScore
    """
    _check_pair(p_before, p_after, epsilon)
    if p_before.direction is Direction.HIGHER_IS_BETTER:
        gain = p_after.value - p_before.value
    else:
        gain = p_before.value - p_after.value
    r = 1.0 - gain / (abs(p_before.value) + epsilon)
    return RedundancyScore(r, p_before=p_before.value, p_after=p_after.value)


def removal_redundancy(p_full, p_reduced, epsilon=EPSILON):
    """Redundancy of a subset removed from a component set.

    ``1 - (P(full) - P(full minus subset)) / |P(full)|`` for higher-is-better
    metrics; the numerator flips for lower-is-better ones.  Equal values give
    exactly 1.
    """
    _check_pair(p_full, p_reduced, epsilon)
    if p_full.direction is Direction.HIGHER_IS_BETTER:
        loss = p_full.value - p_reduced.value
    else:
        loss = p_reduced.value - p_full.value
    r = 1.0 - loss / (abs(p_full.value) + epsilon)
    return RedundancyScore(r, p_before=p_full.value, p_after=p_reduced.value)


def relative_redundancy(p_g1, p_g2):
    """Ratio P(G1) / P(G2) of two presence measures."""
    p_g1, p_g2 = float(p_g1), float(p_g2)
    if not (math.isfinite(p_g1) and math.isfinite(p_g2)) or p_g1 < 0 or p_g2 < 0:
        raise InvalidMetric("presence measures must be finite and nonnegative")
    if p_g2 == 0.0:
        raise DivisionByZero("reference subgroup has zero presence")
    return p_g1 / p_g2


@dataclass(frozen=True)
class Histogram:
    bin_counts: tuple
    total: int

    @classmethod
    def from_counts(cls, counts):
        counts = tuple(int(c) for c in counts)
        if any(c < 0 for c in counts):
            raise ValueError("bin counts must be nonnegative")
        return cls(counts, sum(counts))

    @classmethod
    def from_codes(cls, codes, n_bins=None):
        codes = np.asarray(codes, dtype=np.int64).ravel()
        return cls.from_counts(np.bincount(codes, minlength=n_bins or 0))


def _entropy_from_counts(counts):
    # sorted so the sum does not depend on bin order
    counts = np.sort(np.asarray(counts, dtype=np.float64).ravel())
    counts = counts[counts > 0]
    total = counts.sum()
    if total <= 0:
        raise EmptyInput("histogram is empty")
    p = counts / total
    h = -float(np.sum(p * np.log2(p)))
    return max(h, 0.0)


def shannon_entropy(hist):
    """Entropy in bits of a histogram (a Histogram or an array of counts)."""
    counts = hist.bin_counts if isinstance(hist, Histogram) else hist
    counts = np.asarray(counts)
    if counts.size == 0:
        raise EmptyInput("histogram has no bins")
    if np.any(counts < 0):
        raise ValueError("bin counts must be nonnegative")
    return _entropy_from_counts(counts)


# --- discretization -------------------------------------------------------

EQUAL_WIDTH = "equal_width"
QUANTILE = "quantile"


def fit_bin_edges(x, bins, scheme=QUANTILE):
    """Interior bin edges per column, shape (m, bins - 1)."""
    if int(bins) != bins or bins < 2:
        raise InvalidBins(f"bins must be an integer >= 2, got {bins}")
    bins = int(bins)
    x = _as_matrix(x)
    n, m = x.shape
    edges = np.empty((m, bins - 1))
    if scheme == EQUAL_WIDTH:
        lo, hi = x.min(axis=0), x.max(axis=0)
        steps = np.arange(1, bins) / bins
        edges[:] = lo[:, None] + (hi - lo)[:, None] * steps[None, :]
    elif scheme == QUANTILE:
        xs = np.sort(x, axis=0)
        # nearest-rank quantile positions
        ranks = np.ceil(np.arange(1, bins) * n / bins).astype(np.int64) - 1
        ranks = np.clip(ranks, 0, n - 1)
        edges[:] = xs[ranks, :].T
    else:
        raise ValueError(f"unknown binning scheme {scheme!r}")
    return edges


def apply_bin_edges(x, edges, scheme=QUANTILE):
    """Map each column to integer codes using previously fitted edges."""
    x = _as_matrix(x)
    if x.shape[1] != edges.shape[0]:
        raise ShapeMismatch(f"{x.shape[1]} columns but edges for {edges.shape[0]}")
    codes = np.empty(x.shape, dtype=np.int64)
    for j in range(x.shape[1]):
        e = edges[j]
        # quantile ties go to the lower bin, equal-width boundaries to the upper
        # one; a collapsed (constant) column always codes its value as 0
        degenerate = e.size > 0 and e[0] == e[-1]
        side = "left" if scheme == QUANTILE or degenerate else "right"
        codes[:, j] = np.searchsorted(e, x[:, j], side=side)
    return codes


def quantize_features(x, bins, scheme=QUANTILE):
    """Integer-code every column of `x` into ``bins`` bins."""
    edges = fit_bin_edges(x, bins, scheme)
    return apply_bin_edges(x, edges, scheme)


# --- mutual information ----------------------------------------------------


def _as_matrix(x):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise EmptyInput(f"expected a nonempty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidMetric("feature matrix contains non-finite entries")
    return a


def _code_columns(*cols):
    """Stack coded columns (1-D or 2-D) into one (N, k) integer matrix."""
    parts = []
    n = None
    for c in cols:
        a = np.asarray(c)
        if a.ndim == 1:
            a = a[:, None]
        if a.shape[1] == 0:
            if n is None:
                n = a.shape[0]
            elif a.shape[0] != n:
                raise ShapeMismatch("column lengths differ")
            continue
        if n is None:
            n = a.shape[0]
        elif a.shape[0] != n:
            raise ShapeMismatch(f"column lengths differ: {a.shape[0]} vs {n}")
        parts.append(a.astype(np.int64, copy=False))
    if n is None or n < 1:
        raise EmptyInput("no samples")
    if not parts:
        return np.zeros((n, 0), dtype=np.int64)
    return np.concatenate(parts, axis=1)


def joint_entropy(*cols):
    """Entropy in bits of the joint distribution of coded columns."""
    z = _code_columns(*cols)
    if z.shape[1] == 0:
        return 0.0
    _, counts = np.unique(z, axis=0, return_counts=True)
    return _entropy_from_counts(counts)


def joint_codes(cols):
    """Collapse the rows of a coded matrix into a single integer code per row."""
    z = _code_columns(cols)
    if z.shape[1] == 0:
        return np.zeros(z.shape[0], dtype=np.int64)
    _, inverse = np.unique(z, axis=0, return_inverse=True)
    return inverse.ravel().astype(np.int64)


def mutual_information(f_k, f_l):
    """I(f_k; f_l) = H(f_k) + H(f_l) - H(f_k, f_l) in bits."""
    a = np.asarray(f_k)
    b = np.asarray(f_l)
    if a.shape[0] != b.shape[0]:
        raise ShapeMismatch(f"column lengths differ: {a.shape[0]} vs {b.shape[0]}")
    i = joint_entropy(a) + joint_entropy(b) - joint_entropy(a, b)
    return max(i, 0.0)


def conditional_mutual_information(f_k, y, given=None):
    """I(f_k; y | given) in bits; `given` may be None or have zero columns."""
    n = np.asarray(f_k).shape[0]
    if np.asarray(y).shape[0] != n:
        raise ShapeMismatch("f_k and y lengths differ")
    if given is None:
        given = np.zeros((n, 0), dtype=np.int64)
    g = np.asarray(given)
    if g.ndim == 1:
        g = g[:, None]
    if g.shape[0] != n:
        raise ShapeMismatch("conditioning columns have a different length")
    if g.shape[1] == 0:
        return mutual_information(f_k, y)
    i = joint_entropy(g, f_k) + joint_entropy(g, y) - joint_entropy(g, f_k, y) - joint_entropy(g)
    return max(i, 0.0)


# --- supervised metrics and distances ---------------------------------------


def balanced_accuracy(y_true, y_pred, n_classes=None):
    """Mean per-class recall over the classes of `y_true`.

    If `n_classes` is given every class in ``range(n_classes)`` must occur in
    `y_true`.
    """
    t = np.asarray(y_true).ravel()
    p = np.asarray(y_pred).ravel()
    if t.shape != p.shape:
        raise ShapeMismatch(f"y_true has {t.size} labels, y_pred {p.size}")
    if t.size == 0:
        raise DegenerateLabels("no labels")
    classes = np.unique(t)
    if n_classes is not None:
        missing = sorted(set(range(n_classes)) - set(classes.tolist()))
        if missing:
            raise DegenerateLabels(f"classes {missing} absent from y_true")
    recalls = [float(np.mean(p[t == c] == c)) for c in classes]
    return MetricValue.higher(float(np.mean(recalls)))


EUCLIDEAN = "euclidean"
MANHATTAN = "manhattan"


def pairwise_distance(a, b, metric=EUCLIDEAN):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeMismatch(f"vector lengths differ: {a.size} vs {b.size}")
    d = a - b
    if metric == EUCLIDEAN:
        return float(np.sqrt(np.dot(d, d)))
    if metric == MANHATTAN:
        return float(np.sum(np.abs(d)))
    raise ValueError(f"unknown metric {metric!r}")
