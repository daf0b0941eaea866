"""Twelve normalized similarity measures over block descriptor vectors.

Direct similarity kinds (cosine, jaccard, dice) and correlation kinds
(pearson_r, spearman_rho, kendall_tau, mapped from [-1,1] to [0,1] by
s = (r+1)/2) are computed as such; distance kinds are converted through
s = 1 - d/d_max with a fixed per-kind d_max, clamping at 0 where a
distance can exceed its nominal maximum.  Degenerate inputs follow
explicit rules: two all-zero vectors are identical (1), one all-zero
vector matches nothing (0), and constant vectors follow the same
pattern for the correlation kinds.  All kinds are reflexive: equal
inputs score exactly 1.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import rankdata

SIMILARITY_KINDS = ("cosine", "jaccard", "dice")
CORRELATION_KINDS = ("pearson_r", "spearman_rho", "kendall_tau")
DISTANCE_KINDS = ("squared_l2", "l1", "euclidean", "hellinger", "sorensen", "clark")

METRIC_KINDS = (
    "cosine", "squared_l2", "pearson_r", "spearman_rho", "kendall_tau",
    "jaccard", "dice", "l1", "euclidean", "hellinger", "sorensen", "clark",
)

D_MAX = {
    "squared_l2": 2.0,
    "l1": 2.0,
    "euclidean": math.sqrt(2.0),
    "hellinger": 2.0,
    "sorensen": 1.0,
    "clark": math.sqrt(2.0),
}

_RANGE_TOL = 1e-9
_TINY = 1e-300


class SimilarityError(ValueError):
    pass


@dataclass(frozen=True)
class Metric:
    kind: str

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise SimilarityError(f"unknown metric kind {self.kind!r}")

    @property
    def d_max(self):
        return D_MAX.get(self.kind)

    @property
    def is_distance(self):
        return self.kind in DISTANCE_KINDS

    def __str__(self):
        return self.kind


@dataclass(frozen=True)
class BlockFrame:
    """Mapping from descriptor-grid indices back to world millimetres."""

    scale: float
    origin: tuple
    block_px: int
    stride_px: int

    def block_bbox_mm(self, row0, col0, row1, col1):
        """World bbox of the inclusive block-index rectangle."""
        x0 = self.origin[0] + (col0 * self.stride_px) / self.scale
        y0 = self.origin[1] + (row0 * self.stride_px) / self.scale
        x1 = self.origin[0] + (col1 * self.stride_px + self.block_px) / self.scale
        y1 = self.origin[1] + (row1 * self.stride_px + self.block_px) / self.scale
        return (x0, y0, x1, y1)


@dataclass
class SimilarityMap:
    values: np.ndarray
    valid: np.ndarray
    metric: Metric
    frame: BlockFrame | None = None


@lru_cache(maxsize=8)
def _pair_indices(n):
    iu = np.triu_indices(n, k=1)
    return iu[0], iu[1]


def raw_distance(kind, p, q):
    """Table distance d(p, q) for the six distance kinds, batched over
    leading axes."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    diff = p - q
    if kind == "squared_l2":
        return np.sum(diff * diff, axis=-1)
    if kind == "l1":
        return np.sum(np.abs(diff), axis=-1)
    if kind == "euclidean":
        return np.sqrt(np.sum(diff * diff, axis=-1))
    if kind == "hellinger":
        # as defined for this family: sqrt(2 * sum((p-q)^2))
        return np.sqrt(2.0 * np.sum(diff * diff, axis=-1))
    if kind == "sorensen":
        denom = np.sum(p + q, axis=-1)
        return np.sum(np.abs(diff), axis=-1) / np.where(denom > 0, denom, 1.0)
    if kind == "clark":
        denom = p + q
        ratio = np.where(denom > 0, np.abs(diff) / np.where(denom > 0, denom, 1.0), 0.0)
        return np.sqrt(np.sum(ratio * ratio, axis=-1))
    raise SimilarityError(f"not a distance kind: {kind!r}")


def _pearson_of(p, q):
    pc = p - p.mean(axis=-1, keepdims=True)
    qc = q - q.mean(axis=-1, keepdims=True)
    cov = np.sum(pc * qc, axis=-1)
    var = np.sum(pc * pc, axis=-1) * np.sum(qc * qc, axis=-1)
    return cov / np.sqrt(np.maximum(var, _TINY))


def _kendall_tau(p, q):
    n = p.shape[-1]
    i_idx, j_idx = _pair_indices(n)
    lead = p.shape[:-1]
    flat_p = p.reshape(-1, n)
    flat_q = q.reshape(-1, n)
    out = np.empty(flat_p.shape[0])
    # the pair expansion is n(n-1)/2 wide; chunk rows to bound memory
    step = max(1, int(4e6 // max(len(i_idx), 1)))
    for start in range(0, flat_p.shape[0], step):
        stop = start + step
        sp = np.sign(flat_p[start:stop, i_idx] - flat_p[start:stop, j_idx])
        sq = np.sign(flat_q[start:stop, i_idx] - flat_q[start:stop, j_idx])
        out[start:stop] = np.sum(sp * sq, axis=-1)
    return out.reshape(lead) / (n * (n - 1) / 2.0)


def _raw_similarity(kind, p, q):
    """Similarity before degenerate overrides and clamping."""
    if kind in DISTANCE_KINDS:
        return 1.0 - raw_distance(kind, p, q) / D_MAX[kind]

    sum_pq = np.sum(p * q, axis=-1)
    if kind == "cosine":
        norm = np.sum(p * p, axis=-1) * np.sum(q * q, axis=-1)
        return sum_pq / np.sqrt(np.maximum(norm, _TINY))
    if kind == "jaccard":
        denom = np.sum(p * p, axis=-1) + np.sum(q * q, axis=-1) - sum_pq
        return sum_pq / np.where(denom > 0, denom, 1.0)
    if kind == "dice":
        denom = np.sum(p * p, axis=-1) + np.sum(q * q, axis=-1)
        return 2.0 * sum_pq / np.where(denom > 0, denom, 1.0)
    if kind == "pearson_r":
        return (_pearson_of(p, q) + 1.0) / 2.0
    if kind == "spearman_rho":
        rp = rankdata(p, method="average", axis=-1)
        rq = rankdata(q, method="average", axis=-1)
        return (_pearson_of(rp, rq) + 1.0) / 2.0
    if kind == "kendall_tau":
        return (_kendall_tau(p, q) + 1.0) / 2.0
    raise SimilarityError(f"unknown metric kind {kind!r}")


def batch_similarity(p, q, m):
    """Vectorized similarity over matching leading axes of p and q."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise SimilarityError("vector shapes differ")
    if p.shape[-1] < 2:
        raise SimilarityError("vectors must have length >= 2")
    if np.any(p < 0) or np.any(q < 0):
        raise SimilarityError("negative descriptor entries")

    with np.errstate(invalid="ignore", divide="ignore"):
        s = _raw_similarity(m.kind, p, q)

    zero_p = ~np.any(p > 0, axis=-1)
    zero_q = ~np.any(q > 0, axis=-1)
    s = np.where(zero_p & zero_q, 1.0, s)
    s = np.where(zero_p ^ zero_q, 0.0, s)

    if m.kind in CORRELATION_KINDS:
        const_p = np.all(p == p[..., :1], axis=-1)
        const_q = np.all(q == q[..., :1], axis=-1)
        both_zero = zero_p & zero_q
        one_zero = zero_p ^ zero_q
        plain = ~(both_zero | one_zero)
        s = np.where(plain & const_p & const_q, 1.0, s)
        s = np.where(plain & (const_p ^ const_q), 0.0, s)

    equal = np.all(p == q, axis=-1)
    s = np.where(equal, 1.0, s)

    if np.any(np.isnan(s)):
        raise SimilarityError(f"{m.kind} produced NaN outside degenerate cases")
    overshoot = np.max(s, initial=0.0) - 1.0
    if overshoot > _RANGE_TOL:
        raise SimilarityError(
            f"{m.kind} produced {1.0 + overshoot:.12f}, above 1 beyond tolerance"
        )
    return np.clip(s, 0.0, 1.0)


def similarity(p, q, m):
    """Scalar similarity in [0, 1] between two descriptor vectors."""
    p = np.asarray(p, dtype=float).reshape(-1)
    q = np.asarray(q, dtype=float).reshape(-1)
    if p.shape != q.shape:
        raise SimilarityError("vector lengths differ")
    return float(batch_similarity(p[None, :], q[None, :], m)[0])


def similarity_map(real, ref, m, frame=None):
    """Element-wise similarity of two HogFields of identical layout."""
    if real.grid_dims != ref.grid_dims:
        raise SimilarityError("descriptor grids differ in shape")
    if real.config != ref.config:
        raise SimilarityError("descriptor configs differ")
    values = batch_similarity(real.blocks, ref.blocks, m)
    valid = np.asarray(real.block_valid) & np.asarray(ref.block_valid)
    values = np.where(valid, values, 0.0)
    return SimilarityMap(values=values, valid=valid, metric=m, frame=frame)


def all_metrics():
    return [Metric(kind) for kind in METRIC_KINDS]


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def qualitative_cases(bins=9):
    """Five canonical histogram pairs spanning agreement to disjointness."""
    base = _unit(np.array([0.5, 2.0, 6.0, 9.0, 5.0, 2.0, 1.0, 0.5, 0.5]))
    small = base.copy()
    small[2] += 0.04
    small[4] -= 0.03
    small[6] += 0.02
    small = _unit(np.clip(small, 0.0, None))
    level = base.copy()
    level[3] *= 1.8
    level[2] *= 1.3
    level = _unit(level)
    shifted = _unit(np.roll(base, 3))
    left = _unit(np.array([2.0, 3.0, 1.5, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]))
    right = _unit(np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.5, 3.0, 2.0]))
    return [
        ("complete_match", base, base.copy()),
        ("small_deviations", base, small),
        ("level_difference", base, level),
        ("significant_shift", base, shifted),
        ("non_overlapping", left, right),
    ]


def metric_response_profile(cases):
    """Similarities of each (p, q) case under all twelve metrics.

    cases: iterable of (p, q) or (name, p, q); returns (n_cases, 12).
    """
    rows = []
    for case in cases:
        p, q = case[-2], case[-1]
        rows.append([similarity(p, q, Metric(kind)) for kind in METRIC_KINDS])
    return np.array(rows)


def response_profile_csv(named_cases):
    """CSV table of the response profile, values as percentages."""
    header = "case," + ",".join(METRIC_KINDS)
    lines = [header]
    values = metric_response_profile([(p, q) for _, p, q in named_cases])
    for (name, _, _), row in zip(named_cases, values):
        lines.append(name + "," + ",".join(f"{100.0 * v:.2f}" for v in row))
    return "\n".join(lines) + "\n"
