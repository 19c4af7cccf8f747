"""
Ranking losses over L2-normalized logits.

BatchAll, BatchHard, BatchMean triplet losses and the temperature-scaled
contrastive loss. All four are built from engine primitives so they can be
differentiated; index selection (valid triplets, hardest pairs) is computed
from the current values and treated as constant.
"""

from typing import Callable, Dict, Optional, Sequence, Tuple
import logging

import numpy as np

from app.core.exceptions import ConfigError, ZeroNormRowError
from app.engine.ops import DISTANCE_EPS, row_norms, stable_softplus
from app.engine.tensor import (
    Tensor,
    clamp_min,
    exp,
    l2_normalize,
    log,
    relu,
    softplus,
    sqrt,
    square,
    take,
    take_rows,
)
from app.schemas.experiment import PositiveNormalization, RankingVariant
from app.schemas.ranking import (
    NormalizedLogitsBatch,
    RankingLossConfig,
    RankingLossResult,
    TripletCensus,
)

logger = logging.getLogger(__name__)

ZERO_NORM = 1e-12


# ==================== Batch construction ====================

def l2_normalize_rows(logits: Tensor) -> Tensor:
    """Scale every row to unit Euclidean norm"""
    norms = row_norms(logits.data, axis=1).reshape(-1)
    degenerate = np.nonzero(~(norms > ZERO_NORM))[0]
    if degenerate.size:
        raise ZeroNormRowError(int(degenerate[0]))
    return l2_normalize(logits, axis=1)


def make_batch(
    logits: Tensor,
    labels: Sequence[int],
    num_classes: Optional[int] = None,
    normalize: bool = True,
) -> NormalizedLogitsBatch:
    """Build C from raw logits; `normalize=False` is the ablation without L2-normalization"""
    rows = l2_normalize_rows(logits) if normalize else logits
    return NormalizedLogitsBatch(
        logits=rows,
        labels=[int(label) for label in labels],
        num_classes=num_classes or logits.shape[1],
        normalized=normalize,
    )


def label_masks(labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(positive, negative) masks; positives exclude the anchor itself"""
    same = labels[:, None] == labels[None, :]
    positive = same & ~np.eye(len(labels), dtype=bool)
    return positive, ~same


# ==================== Pairwise geometry ====================

def pairwise_euclidean(batch: NormalizedLogitsBatch) -> Tensor:
    """count x count distance matrix; coincident rows get exactly 0 and no gradient"""
    x = batch.logits
    n, k = x.shape
    diff = x.reshape(n, 1, k) - x.reshape(1, n, k)
    squared = square(diff).sum(axis=2)
    live = (squared.data > DISTANCE_EPS).astype(x.data.dtype)
    return sqrt(clamp_min(squared, DISTANCE_EPS)) * live


def pairwise_cosine(batch: NormalizedLogitsBatch) -> Tensor:
    """Row dot products; equal to cosine similarity for unit rows"""
    x = batch.logits
    return x @ x.T


def soft_margin(x: float) -> float:
    """ln(1 + exp(x)) without overflow"""
    return float(stable_softplus(np.float64(x)))


def _margin_function(values: Tensor, config: RankingLossConfig) -> Tensor:
    return softplus(values) if config.soft_margin else relu(values)


def _zero(batch: NormalizedLogitsBatch) -> Tensor:
    return Tensor(0.0, dtype=batch.logits.data.dtype)


# ==================== Census ====================

def count_triplets(labels: Sequence[int], anchors: Optional[Sequence[int]] = None) -> TripletCensus:
    """
    Count what each mining strategy considers.

    V sums |P(a)|.|N(a)| over anchors; BatchHard counts anchors with both a
    positive and a negative; BatchMean counts anchors with a negative.
    """
    y = np.asarray(labels, dtype=np.int64)
    n = len(y)
    if n == 0:
        return TripletCensus()
    same = y[:, None] == y[None, :]
    positives = same.sum(axis=1) - 1
    negatives = n - same.sum(axis=1)
    selected = np.arange(n) if anchors is None else np.asarray(anchors, dtype=np.int64)
    p, q = positives[selected], negatives[selected]
    return TripletCensus(
        batch_all_triplets=int(np.sum(p * q)),
        batch_hard_triplets=int(np.sum((p > 0) & (q > 0))),
        batch_mean_triplets=int(np.sum(q > 0)),
        pairwise_terms=n * n,
    )


def balanced_labels(n: int, k: int) -> np.ndarray:
    """n labels cycling through k classes; class sizes differ by at most one"""
    if n < 0 or k < 1:
        raise ValueError("need n >= 0 and k >= 1")
    return np.arange(n, dtype=np.int64) % k


def balanced_census(n: int, k: int) -> TripletCensus:
    """Closed form for a batch of n rows split evenly over k classes (k divides n)"""
    per_class = n // k
    return TripletCensus(
        batch_all_triplets=n * (per_class - 1) * (n - per_class),
        batch_hard_triplets=n if per_class > 1 and k > 1 else 0,
        batch_mean_triplets=n if k > 1 else 0,
        pairwise_terms=n * n,
    )


# ==================== Triplet losses ====================

def _valid_triplet_indices(positive: np.ndarray, negative: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Flat (a, p) and (a, n) indices of every valid triplet, ordered by anchor, positive, negative"""
    n = positive.shape[0]
    anchors, positives, negatives = np.nonzero(positive[:, :, None] & negative[:, None, :])
    return anchors * n + positives, anchors * n + negatives


def batch_all_triplet_loss(batch: NormalizedLogitsBatch, config: RankingLossConfig) -> RankingLossResult:
    """Mean of f(m + d_ap - d_an) over every valid triplet"""
    labels = batch.label_array
    census = count_triplets(labels)
    positive, negative = label_masks(labels)
    ap, an = _valid_triplet_indices(positive, negative)
    if ap.size == 0:
        return RankingLossResult(loss=_zero(batch), census=census)

    distances = pairwise_euclidean(batch)
    arguments = config.margin + take(distances, ap) - take(distances, an)
    loss = _margin_function(arguments, config).sum() / float(ap.size)
    return RankingLossResult(loss=loss, census=census)


def batch_hard_triplet_loss(batch: NormalizedLogitsBatch, config: RankingLossConfig) -> RankingLossResult:
    """Per anchor: furthest positive against nearest negative; mean over |C|"""
    labels = batch.label_array
    n = batch.count
    census = count_triplets(labels)
    positive, negative = label_masks(labels)
    valid = np.nonzero(positive.any(axis=1) & negative.any(axis=1))[0]
    if valid.size == 0:
        return RankingLossResult(loss=_zero(batch), census=census)

    distances = pairwise_euclidean(batch)
    values = distances.data
    # argmax/argmin return the first hit, so ties go to the lowest row index
    hardest_positive = np.argmax(np.where(positive, values, -np.inf), axis=1)
    hardest_negative = np.argmin(np.where(negative, values, np.inf), axis=1)
    ap = valid * n + hardest_positive[valid]
    an = valid * n + hardest_negative[valid]

    arguments = config.margin + take(distances, ap) - take(distances, an)
    loss = _margin_function(arguments, config).sum() / float(n)
    return RankingLossResult(loss=loss, census=census)


def batch_mean_triplet_loss(batch: NormalizedLogitsBatch, config: RankingLossConfig) -> RankingLossResult:
    """
    Per anchor: mean positive distance against mean negative distance.

    In batch-size mode the inner sums are divided by |C|; in positive-count
    mode by |P(a)| and |N(a)| (an empty positive set contributes 0). Anchors
    without negatives are skipped; the outer mean is over |C|.
    """
    labels = batch.label_array
    n = batch.count
    census = count_triplets(labels)
    positive, negative = label_masks(labels)
    valid = np.nonzero(negative.any(axis=1))[0]
    if valid.size == 0:
        return RankingLossResult(loss=_zero(batch), census=census)

    dtype = batch.logits.data.dtype
    distances = pairwise_euclidean(batch)
    positive_sum = (distances * positive.astype(dtype)).sum(axis=1)
    negative_sum = (distances * negative.astype(dtype)).sum(axis=1)

    if config.positive_normalization == PositiveNormalization.POSITIVE_COUNT:
        positive_term = positive_sum / np.maximum(positive.sum(axis=1), 1).astype(dtype)
        negative_term = negative_sum / np.maximum(negative.sum(axis=1), 1).astype(dtype)
    else:
        positive_term = positive_sum / float(n)
        negative_term = negative_sum / float(n)

    arguments = take_rows(config.margin + positive_term - negative_term, valid)
    loss = _margin_function(arguments, config).sum() / float(n)
    return RankingLossResult(loss=loss, census=census)


# ==================== Contrastive loss ====================

def contrastive_loss(batch: NormalizedLogitsBatch, config: RankingLossConfig) -> RankingLossResult:
    """
    Temperature-scaled cross-entropy over ordered (anchor, positive) pairs.

    Each pair's denominator holds its own positive term plus every negative
    of the anchor. Shifts used for stability are detached constants; the
    value is invariant to them.
    """
    labels = batch.label_array
    n = batch.count
    census = count_triplets(labels)
    positive, negative = label_masks(labels)
    anchors, positives = np.nonzero(positive)
    if anchors.size == 0:
        return RankingLossResult(loss=_zero(batch), census=census, pair_count=0)

    dtype = batch.logits.data.dtype
    scaled = pairwise_cosine(batch) / config.temperature
    z = scaled.data

    has_negative = negative.any(axis=1)
    negative_max = np.where(negative, z, -np.inf).max(axis=1)
    shift = np.where(has_negative, negative_max, 0.0)
    # Non-negatives are pushed to -inf so they vanish under exp
    offsets = np.where(negative, shift[:, None], np.inf).astype(dtype)
    negative_exp = exp(scaled * negative.astype(dtype) - offsets)
    negative_sum = negative_exp.sum(axis=1)

    pair_index = anchors * n + positives
    z_pair = take(scaled, pair_index)
    pair_shift = np.maximum(z[anchors, positives], negative_max[anchors]).astype(dtype)
    coefficient = np.exp(shift[anchors] - pair_shift).astype(dtype)

    denominator = exp(z_pair - pair_shift) + take_rows(negative_sum, anchors) * coefficient
    terms = log(denominator) + pair_shift - z_pair
    loss = terms.sum() / float(anchors.size)
    return RankingLossResult(loss=loss, census=census, pair_count=int(anchors.size))


RANKING_LOSSES: Dict[RankingVariant, Callable[[NormalizedLogitsBatch, RankingLossConfig], RankingLossResult]] = {
    RankingVariant.BATCH_ALL: batch_all_triplet_loss,
    RankingVariant.BATCH_HARD: batch_hard_triplet_loss,
    RankingVariant.BATCH_MEAN: batch_mean_triplet_loss,
    RankingVariant.CONTRASTIVE: contrastive_loss,
}


def ranking_loss(
    batch: NormalizedLogitsBatch,
    variant: RankingVariant,
    config: RankingLossConfig,
) -> RankingLossResult:
    try:
        loss_fn = RANKING_LOSSES[RankingVariant(variant)]
    except (KeyError, ValueError):
        raise ConfigError(f"unknown ranking variant {variant!r}")
    return loss_fn(batch, config)
