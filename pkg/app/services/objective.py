"""
The RankingMatch training objective.

Supervised cross-entropy on weakly augmented labeled samples, pseudo-labeled
cross-entropy on strongly augmented unlabeled samples, and a ranking loss on
the L2-normalized logits of both branches, combined with weights lambda_u
and lambda_r.
"""

from typing import Callable, Optional, Tuple
import logging

import numpy as np

from app.core.exceptions import ShapeError
from app.engine.ops import stable_softmax
from app.engine.tensor import Tensor, clamp_min, log, softmax as softmax_op, take_rows
from app.schemas.experiment import ExperimentConfig
from app.schemas.objective import (
    LabeledBatch,
    LossBreakdown,
    PseudoLabelOutcome,
    UnlabeledBatch,
)
from app.schemas.ranking import RankingLossConfig, TripletCensus
from app.services.ranking_losses import make_batch, ranking_loss

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-12

LogitsFn = Callable[[np.ndarray], Tensor]
AugmentFn = Callable[[np.ndarray], np.ndarray]


def _identity(samples: np.ndarray) -> np.ndarray:
    return samples


# ==================== Probabilities ====================

def softmax(logits) -> np.ndarray:
    """Row-wise softmax with max subtraction"""
    values = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    return stable_softmax(values, axis=-1)


def cross_entropy(target, prediction) -> float:
    """-sum(v * ln q) with q floored at 1e-12"""
    target = np.asarray(target, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    return float(-np.sum(target * np.log(np.maximum(prediction, PROBABILITY_FLOOR))))


def cross_entropy_rows(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row cross-entropy between one-hot targets and softmax(logits), on the tape"""
    probabilities = softmax_op(logits, axis=1)
    log_q = log(clamp_min(probabilities, PROBABILITY_FLOOR))
    return -(log_q * targets.astype(logits.data.dtype)).sum(axis=1)


def pseudo_label(weak_logits, threshold: float) -> PseudoLabelOutcome:
    """Hard labels from the weak branch; mask is max probability >= threshold"""
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    probabilities = softmax(weak_logits)
    # argmax keeps the first maximum, i.e. the lowest class index
    hard = np.argmax(probabilities, axis=1)
    confident = probabilities.max(axis=1) >= threshold
    return PseudoLabelOutcome(
        probabilities=probabilities,
        hard_labels=hard.tolist(),
        confidence_mask=confident.tolist(),
    )


# ==================== Cross-entropy terms ====================

def supervised_ce_from_logits(logits: Tensor, batch: LabeledBatch) -> Tensor:
    return cross_entropy_rows(logits, batch.one_hot_labels).sum() / float(batch.size)


def unsupervised_ce_from_logits(strong_logits: Tensor, outcome: PseudoLabelOutcome) -> Tensor:
    rows = cross_entropy_rows(strong_logits, outcome.one_hot())
    mask = outcome.mask_array.astype(strong_logits.data.dtype)
    # Normalizer stays mu*B whatever the mask holds
    return (rows * mask).sum() / float(len(outcome.hard_labels))


def supervised_ce_loss(
    batch: LabeledBatch,
    model: LogitsFn,
    weak_augment: Optional[AugmentFn] = None,
) -> Tensor:
    weak_augment = weak_augment or _identity
    return supervised_ce_from_logits(model(weak_augment(batch.samples)), batch)


def unsupervised_ce_loss(
    batch: UnlabeledBatch,
    model: LogitsFn,
    weak_augment: Optional[AugmentFn],
    strong_augment: Optional[AugmentFn],
    threshold: float,
) -> Tuple[Tensor, PseudoLabelOutcome]:
    weak_augment = weak_augment or _identity
    strong_augment = strong_augment or _identity
    outcome = pseudo_label(model(weak_augment(batch.samples)).data, threshold)
    loss = unsupervised_ce_from_logits(model(strong_augment(batch.samples)), outcome)
    return loss, outcome


# ==================== Ranking terms ====================

def _ranking_term(
    logits: Tensor,
    labels: np.ndarray,
    config: ExperimentConfig,
    loss_config: RankingLossConfig,
) -> Tuple[Tensor, TripletCensus, Optional[float]]:
    if labels.size == 0:
        return Tensor(0.0, dtype=logits.data.dtype), TripletCensus(), None
    batch = make_batch(logits, labels, num_classes=logits.shape[1], normalize=config.normalize)
    result = ranking_loss(batch, config.variant, loss_config)
    return result.loss, result.census, _max_distance(batch.logits.data)


def _max_distance(rows: np.ndarray) -> float:
    squared = np.sum((rows[:, None, :] - rows[None, :, :]) ** 2, axis=2)
    return float(np.sqrt(np.max(squared)))


# ==================== Total ====================

def compute_objective(
    labeled: LabeledBatch,
    unlabeled: UnlabeledBatch,
    model: LogitsFn,
    config: ExperimentConfig,
    weak_augment: Optional[AugmentFn] = None,
    strong_augment: Optional[AugmentFn] = None,
    unlabeled_weak_augment: Optional[AugmentFn] = None,
) -> Tuple[Tensor, LossBreakdown]:
    """
    Forward all three branches once and assemble the weighted total.

    Returns the differentiable total and the float breakdown. The ranking
    term on unlabeled data uses every strong-branch row with its pseudo-label
    unless `mask_ranking` restricts it to confident rows.
    """
    if unlabeled.mu is not None and unlabeled.size != unlabeled.mu * labeled.size:
        raise ShapeError(
            f"unlabeled batch has {unlabeled.size} rows, expected mu*B = {unlabeled.mu}*{labeled.size}",
            node="unlabeled",
        )
    weak_augment = weak_augment or _identity
    strong_augment = strong_augment or _identity
    unlabeled_weak_augment = unlabeled_weak_augment or weak_augment

    labeled_logits = model(weak_augment(labeled.samples))
    weak_unlabeled = model(unlabeled_weak_augment(unlabeled.samples))
    outcome = pseudo_label(weak_unlabeled.data, config.threshold)
    strong_logits = model(strong_augment(unlabeled.samples))

    supervised_ce = supervised_ce_from_logits(labeled_logits, labeled)
    unsupervised_ce = unsupervised_ce_from_logits(strong_logits, outcome)

    dtype = labeled_logits.data.dtype
    supervised_rank = Tensor(0.0, dtype=dtype)
    unsupervised_rank = Tensor(0.0, dtype=dtype)
    census = TripletCensus()
    max_distance = None

    if config.uses_ranking:
        loss_config = RankingLossConfig.from_experiment(config)
        supervised_rank, labeled_census, labeled_max = _ranking_term(
            labeled_logits, labeled.labels, config, loss_config
        )
        rows = np.arange(unlabeled.size)
        if loss_config.apply_confidence_mask:
            rows = rows[outcome.mask_array]
        strong_rows = strong_logits if rows.size == unlabeled.size else take_rows(strong_logits, rows)
        pseudo = np.asarray(outcome.hard_labels, dtype=np.int64)[rows]
        unsupervised_rank, unlabeled_census, unlabeled_max = _ranking_term(
            strong_rows, pseudo, config, loss_config
        )
        census = labeled_census + unlabeled_census
        maxima = [m for m in (labeled_max, unlabeled_max) if m is not None]
        max_distance = max(maxima) if maxima else None

    total = supervised_ce + config.lambda_u * unsupervised_ce + config.lambda_r * (supervised_rank + unsupervised_rank)

    breakdown = LossBreakdown(
        supervised_ce=float(supervised_ce.data),
        unsupervised_ce=float(unsupervised_ce.data),
        supervised_rank=float(supervised_rank.data),
        unsupervised_rank=float(unsupervised_rank.data),
        total=float(total.data),
        confident_fraction=outcome.confident_fraction,
        census=census,
        max_distance=max_distance,
    )
    return total, breakdown


def total_loss(
    labeled: LabeledBatch,
    unlabeled: UnlabeledBatch,
    model: LogitsFn,
    config: ExperimentConfig,
    weak_augment: Optional[AugmentFn] = None,
    strong_augment: Optional[AugmentFn] = None,
) -> LossBreakdown:
    _, breakdown = compute_objective(labeled, unlabeled, model, config, weak_augment, strong_augment)
    return breakdown


def confident_fraction(logits, threshold: float) -> float:
    return pseudo_label(logits, threshold).confident_fraction
