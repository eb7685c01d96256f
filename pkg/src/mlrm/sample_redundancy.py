"""Sample-level redundancy: holistic and group-relative measures plus
diversity downsampling and SMOTE oversampling."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist

from .core_metrics import (
    EPSILON,
    EUCLIDEAN,
    MANHATTAN,
    MetricValue,
    _as_matrix,
    _entropy_from_counts,
    redundancy_index,
)
from .errors import CannotInterpolate, EmptyInput, InvalidSize, ShapeMismatch, TooFewSamples

MAX_PAIRS = 2_000_000
ENTROPY = "entropy"
DIVERSITY = "diversity"
COVERAGE = "coverage"

_SCIPY_METRIC = {EUCLIDEAN: "euclidean", MANHATTAN: "cityblock"}


def _metric(metric):
    try:
        return _SCIPY_METRIC[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}") from None


def _pair_from_linear(k, n):
    """Row/column of the k-th pair (i < j) in row-major upper-triangle order."""
    k = np.asarray(k, dtype=np.int64)
    # offset(i) = i*(2n - i - 1)/2 is the linear index of pair (i, i+1)
    b = 2 * n - 1
    i = np.floor((b - np.sqrt(b * b - 8.0 * k)) / 2).astype(np.int64)
    offset = i * (2 * n - i - 1) // 2
    # repair float rounding in either direction
    too_far = offset > k
    i[too_far] -= 1
    offset = i * (2 * n - i - 1) // 2
    nxt = (i + 1) * (2 * n - i - 2) // 2
    short = nxt <= k
    i[short] += 1
    offset = i * (2 * n - i - 1) // 2
    j = k - offset + i + 1
    return i, j


def avg_pairwise_distance(x, metric=EUCLIDEAN, max_pairs=MAX_PAIRS, seed=0):
    """Mean distance over all unordered pairs of rows.

    When there are more than `max_pairs` pairs, `max_pairs` distinct pairs
    are drawn uniformly (reproducibly for a given `seed`) instead.
    """
    x = _as_matrix(x)
    n = x.shape[0]
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples, got {n}")
    total = n * (n - 1) // 2
    if max_pairs is None or total <= max_pairs:
        return float(np.mean(pdist(x, _metric(metric))))
    rng = np.random.default_rng(seed)
    k = np.sort(rng.choice(total, size=int(max_pairs), replace=False))
    i, j = _pair_from_linear(k, n)
    d = x[i] - x[j]
    if metric == EUCLIDEAN:
        dist = np.sqrt(np.einsum("ij,ij->i", d, d))
    else:
        _metric(metric)
        dist = np.abs(d).sum(axis=1)
    return float(np.mean(dist))


# --- grids -------------------------------------------------------------------


@dataclass(frozen=True)
class CoverageGrid:
    """Frozen reference frame for coverage and dataset-entropy measures.

    Rows are projected onto the first `dims_used` principal axes of the
    reference data (or used raw when the data has at most three columns and
    `dims_used` equals that count), min-max normalized with the reference
    bounds and cut into `bins_per_dim` equal cells per axis.  Values outside
    the bounds clamp to the edge cells.
    """

    dims_used: int
    bins_per_dim: int
    mean: np.ndarray
    components: np.ndarray | None
    lo: np.ndarray
    hi: np.ndarray
    degenerate: tuple

    @classmethod
    def fit(cls, x, dims=2, bins=8):
        x = _as_matrix(x)
        n, m = x.shape
        if not 1 <= dims <= 3 or dims > m:
            raise InvalidSize(f"dims must be in [1, min(3, {m})], got {dims}")
        if bins < 1:
            raise InvalidSize("bins must be >= 1")
        mean = x.mean(axis=0)
        if dims == m:
            components = None
            proj = x
        else:
            _, _, vt = np.linalg.svd(x - mean, full_matrices=False)
            components = np.zeros((dims, m))
            r = min(dims, vt.shape[0])
            components[:r] = vt[:r]
            pivots = np.argmax(np.abs(components), axis=1)
            signs = np.sign(components[np.arange(dims), pivots])
            components *= np.where(signs == 0, 1.0, signs)[:, None]
            proj = (x - mean) @ components.T
        lo, hi = proj.min(axis=0), proj.max(axis=0)
        # PCA scores of a constant direction can carry rounding noise
        span_tol = 1e-12 * max(1.0, float(np.abs(proj).max(initial=0.0)))
        degenerate = tuple(bool(h - l <= span_tol) for l, h in zip(lo, hi))
        if any(degenerate):
            warnings.warn("coverage grid has a degenerate dimension; it contributes one cell", RuntimeWarning,
                          stacklevel=2)
        return cls(dims, int(bins), mean, components, lo, hi, degenerate)

    def project(self, x):
        x = _as_matrix(x)
        if x.shape[1] != self.mean.size:
            raise ShapeMismatch(f"expected {self.mean.size} columns, got {x.shape[1]}")
        if self.components is None:
            return x
        return (x - self.mean) @ self.components.T

    def cell_codes(self, x):
        """Per-axis integer cell indices, shape (N, dims_used)."""
        proj = self.project(x)
        span = np.where(np.array(self.degenerate), 1.0, self.hi - self.lo)
        u = (proj - self.lo) / span
        cells = np.floor(u * self.bins_per_dim).astype(np.int64)
        cells = np.clip(cells, 0, self.bins_per_dim - 1)
        cells[:, np.array(self.degenerate, dtype=bool)] = 0
        return cells

    def cell_ids(self, x):
        cells = self.cell_codes(x)
        weights = self.bins_per_dim ** np.arange(self.dims_used)
        return cells @ weights

    @property
    def n_cells(self):
        return self.bins_per_dim ** self.dims_used

    def coverage(self, x):
        return np.unique(self.cell_ids(x)).size / self.n_cells

    def entropy(self, x):
        """Entropy (bits) of the joint cell-code distribution."""
        _, counts = np.unique(self.cell_ids(x), return_counts=True)
        return _entropy_from_counts(counts)


def grid_coverage(x, dims=2, bins=8, grid=None):
    """Fraction of grid cells occupied by `x` (grid fitted on `x` unless given)."""
    grid = grid or CoverageGrid.fit(x, dims, bins)
    return grid.coverage(x)


def holistic_redundancy(x0, batch, measure=ENTROPY, dims=2, bins=None, metric=EUCLIDEAN,
                        max_pairs=MAX_PAIRS, seed=0, epsilon=EPSILON):
    """Redundancy of adding `batch` to the base dataset `x0`.

    The measure is evaluated on `x0` and on the union; any grid is fitted on
    `x0` alone.  Entropy defaults to 16 bins per axis, coverage to 8.
    """
    x0 = _as_matrix(x0)
    batch = _as_matrix(batch)
    if batch.shape[1] != x0.shape[1]:
        raise ShapeMismatch(f"batch has {batch.shape[1]} columns, base has {x0.shape[1]}")
    union = np.vstack([x0, batch])
    if measure in (ENTROPY, COVERAGE):
        bins = bins or (16 if measure == ENTROPY else 8)
        d = min(dims, x0.shape[1], 3)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            grid = CoverageGrid.fit(x0, d, bins)
        fn = grid.entropy if measure == ENTROPY else grid.coverage
        before, after = fn(x0), fn(union)
    elif measure == DIVERSITY:
        before = avg_pairwise_distance(x0, metric, max_pairs, seed)
        after = avg_pairwise_distance(union, metric, max_pairs, seed)
    else:
        raise ValueError(f"unknown measure {measure!r}")
    return redundancy_index(MetricValue.higher(before), MetricValue.higher(after), epsilon)


# --- groups ------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupStats:
    names: tuple
    counts: tuple
    rates: tuple
    disparity: np.ndarray

    def to_dict(self):
        return {
            "groups": [{"name": n, "count": c, "rate": r} for n, c, r in zip(self.names, self.counts, self.rates)],
            "disparity": self.disparity.tolist(),
        }


def group_stats(group_ids, group_names=None):
    """Representation rate |G_i| / N per group and the pairwise disparity ratios."""
    ids = np.asarray(group_ids, dtype=np.int64).ravel()
    if ids.size == 0:
        raise EmptyInput("empty partition")
    n_groups = int(ids.max()) + 1 if group_names is None else len(group_names)
    counts = np.bincount(ids, minlength=n_groups)
    if counts.size > n_groups:
        raise ShapeMismatch("group id beyond the named groups")
    if np.any(counts == 0):
        raise EmptyInput(f"groups {np.flatnonzero(counts == 0).tolist()} are empty")
    names = tuple(group_names) if group_names is not None else tuple(str(i) for i in range(n_groups))
    rates = counts / ids.size
    disparity = rates[:, None] / rates[None, :]
    return GroupStats(names, tuple(int(c) for c in counts), tuple(float(r) for r in rates), disparity)


# --- mitigation -------------------------------------------------------------------


def greedy_diverse_subset(x, target_size, metric=EUCLIDEAN, seed=0):
    """Farthest-point selection of `target_size` rows, returned as sorted indices.

    Starts from the row nearest the centroid and repeatedly adds the row
    whose distance to the chosen set is largest.  `seed` only breaks exact
    ties.
    """
    x = _as_matrix(x)
    n = x.shape[0]
    if not 1 <= target_size <= n:
        raise InvalidSize(f"target_size must be in [1, {n}], got {target_size}")
    rng = np.random.default_rng(seed)
    scipy_metric = _metric(metric)

    def pick(scores, best_high):
        target = scores.max() if best_high else scores.min()
        ties = np.flatnonzero(scores == target)
        return int(ties[0] if ties.size == 1 else rng.choice(ties))

    centroid = x.mean(axis=0, keepdims=True)
    first = pick(cdist(x, centroid, scipy_metric)[:, 0], best_high=False)
    chosen = [first]
    selected = np.zeros(n, dtype=bool)
    selected[first] = True
    min_d = cdist(x, x[first:first + 1], scipy_metric)[:, 0]
    while len(chosen) < target_size:
        scores = np.where(selected, -np.inf, min_d)
        nxt = pick(scores, best_high=True)
        chosen.append(nxt)
        selected[nxt] = True
        min_d = np.minimum(min_d, cdist(x, x[nxt:nxt + 1], scipy_metric)[:, 0])
    return sorted(chosen)


def smote_oversample(x, y, target_ratio=1.0, k=5, seed=0):
    """SMOTE: interpolate new minority rows toward random minority neighbours.

    Every class whose count is below ``target_ratio * majority_count`` is
    topped up to ``ceil(target_ratio * majority_count)``.  Synthetic rows are
    appended after the originals.
    """
    x = _as_matrix(x)
    y = np.asarray(y, dtype=np.int64).ravel()
    if y.size != x.shape[0]:
        raise ShapeMismatch("x and y have different lengths")
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    counts = np.bincount(y)
    n_major = counts.max()
    target = int(math.ceil(target_ratio * n_major - 1e-9))
    new_x, new_y = [x], [y]
    for cls in np.flatnonzero(counts):
        need = target - counts[cls]
        if need <= 0:
            continue
        pts = x[y == cls]
        if pts.shape[0] < 2:
            raise CannotInterpolate(f"class {cls} has a single sample")
        kk = min(k, pts.shape[0] - 1)
        _, nbrs = cKDTree(pts).query(pts, k=kk + 1)
        nbrs = np.asarray(nbrs).reshape(pts.shape[0], kk + 1)[:, 1:]
        base = rng.integers(0, pts.shape[0], need)
        pick = nbrs[base, rng.integers(0, kk, need)]
        lam = rng.uniform(0.0, 1.0, (need, 1))
        new_x.append(pts[base] + lam * (pts[pick] - pts[base]))
        new_y.append(np.full(need, cls, dtype=np.int64))
    return np.vstack(new_x), np.concatenate(new_y)
