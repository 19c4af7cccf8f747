"""
Compute-cost profiling of the ranking losses.

Timings are medians of forward+backward over at least five repetitions,
after discarded warmup runs, minus the median of an empty-loss baseline
that only builds and differentiates the normalized batch. The memory proxy
is the number of materialized pairwise / triplet terms.
"""

from pathlib import Path
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple
import logging
import time

import numpy as np
import pandas as pd

from app.engine.tensor import Tensor
from app.schemas.bench import BENCH_COLUMNS, CENSUS_COLUMNS, BenchRecord, CensusRow
from app.schemas.experiment import ExperimentConfig, RankingVariant
from app.schemas.objective import PseudoLabelOutcome
from app.schemas.ranking import RankingLossConfig
from app.services.objective import pseudo_label
from app.services.ranking_losses import (
    balanced_census,
    balanced_labels,
    count_triplets,
    make_batch,
    ranking_loss,
)
from app.utils.helpers import median_ns

logger = logging.getLogger(__name__)

WARMUP_RUNS = 2
MIN_REPETITIONS = 5
BENCH_VARIANTS = (
    RankingVariant.BATCH_ALL,
    RankingVariant.BATCH_HARD,
    RankingVariant.BATCH_MEAN,
    RankingVariant.CONTRASTIVE,
)


def _timed(run: Callable[[], None], repetitions: int, warmup: int) -> List[int]:
    for _ in range(warmup):
        run()
    samples = []
    for _ in range(repetitions):
        start = time.perf_counter_ns()
        run()
        samples.append(time.perf_counter_ns() - start)
    return samples


def time_loss_variant(
    variant: RankingVariant,
    logits: np.ndarray,
    labels: Sequence[int],
    config: Optional[RankingLossConfig] = None,
    repetitions: int = 7,
    confident_fraction: float = 1.0,
    warmup: int = WARMUP_RUNS,
) -> BenchRecord:
    """Median wall time of loss forward+backward on one batch of raw logits"""
    if repetitions < MIN_REPETITIONS:
        raise ValueError(f"repetitions must be at least {MIN_REPETITIONS}")
    config = config or RankingLossConfig()
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = logits.shape[1]
    pair_counts = []

    def baseline() -> None:
        x = Tensor(logits, requires_grad=True)
        make_batch(x, labels, num_classes=num_classes).logits.sum().backward()

    def loss() -> None:
        x = Tensor(logits, requires_grad=True)
        result = ranking_loss(make_batch(x, labels, num_classes=num_classes), variant, config)
        if result.loss.requires_grad:
            result.loss.backward()
        pair_counts.append(result.pair_count)

    base = median_ns(_timed(baseline, repetitions, warmup))
    measured = median_ns(_timed(loss, repetitions, warmup))
    record = BenchRecord(
        variant=variant,
        batch_size=len(labels),
        class_count=int(len(np.unique(labels))),
        confident_fraction=confident_fraction,
        census=count_triplets(labels),
        pair_count=pair_counts[-1] if pair_counts else 0,
        wall_time_ns=max(measured - base, 0),
        baseline_ns=base,
        repetitions=repetitions,
    )
    logger.debug("%s n=%d: %d ns (baseline %d ns)", variant.value, len(labels), record.wall_time_ns, base)
    return record


def census_scaling(
    sizes: Iterable[int],
    class_counts: Iterable[int],
    labels_for: Callable[[int, int], np.ndarray] = balanced_labels,
) -> List[CensusRow]:
    """Enumerated census next to the balanced closed form for every (n, k)"""
    rows = []
    for k in class_counts:
        for n in sizes:
            census = count_triplets(labels_for(n, k))
            closed = balanced_census(n, k).batch_all_triplets if n % k == 0 else -1
            rows.append(CensusRow(batch_size=n, class_count=k, census=census, closed_form_batch_all=closed))
    return rows


def _weak_outcomes(
    model: Callable[[np.ndarray], Tensor],
    unlabeled_batches: Iterable[np.ndarray],
    threshold: float,
) -> Iterator[Tuple[np.ndarray, PseudoLabelOutcome]]:
    for samples in unlabeled_batches:
        logits = model(samples)
        values = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
        yield values, pseudo_label(values, threshold)


def confidence_sweep(
    model: Callable[[np.ndarray], Tensor],
    unlabeled_batches: Iterable[np.ndarray],
    threshold: float,
) -> List[float]:
    """Fraction of each unlabeled batch whose weak prediction passes the threshold"""
    return [outcome.confident_fraction for _, outcome in _weak_outcomes(model, unlabeled_batches, threshold)]


def confidence_cost_profile(
    model: Callable[[np.ndarray], Tensor],
    unlabeled_batches: Iterable[np.ndarray],
    threshold: float,
    config: Optional[RankingLossConfig] = None,
    repetitions: int = 7,
) -> List[BenchRecord]:
    """
    BatchAll cost on the confident rows of each unlabeled batch, labeled with
    their pseudo-labels. Batches with no confident row are skipped.
    """
    records = []
    for index, (logits, outcome) in enumerate(_weak_outcomes(model, unlabeled_batches, threshold)):
        mask = outcome.mask_array
        if not mask.any():
            logger.debug("batch %d: no confident rows", index)
            continue
        labels = np.asarray(outcome.hard_labels, dtype=np.int64)[mask]
        records.append(time_loss_variant(
            RankingVariant.BATCH_ALL, logits[mask], labels, config,
            repetitions=repetitions, confident_fraction=outcome.confident_fraction,
        ))
    return records


def timing_inversions(records: Sequence[BenchRecord]) -> int:
    """Adjacent pairs, ordered by evaluated terms, where wall time goes down"""
    ordered = sorted(records, key=lambda record: (record.triplets, record.batch_size))
    return sum(
        1 for before, after in zip(ordered, ordered[1:])
        if after.triplets > before.triplets and after.wall_time_ns < before.wall_time_ns
    )


def sweep_batches(samples: np.ndarray, width: int, count: int, seed: int) -> List[np.ndarray]:
    """Up to `count` disjoint shuffled batches of `width` rows"""
    order = np.random.default_rng(seed).permutation(len(samples))
    count = min(count, len(samples) // width)
    return [samples[order[i * width:(i + 1) * width]] for i in range(count)]


def run_bench(config: ExperimentConfig) -> List[BenchRecord]:
    """Every variant over config.bench_sizes with balanced, all-confident labels"""
    rng = np.random.default_rng(config.seed)
    loss_config = RankingLossConfig.from_experiment(config)
    records = []
    for n in config.bench_sizes:
        logits = rng.standard_normal((n, config.bench_classes))
        labels = balanced_labels(n, config.bench_classes)
        for variant in BENCH_VARIANTS:
            records.append(time_loss_variant(
                variant, logits, labels, loss_config, repetitions=config.bench_repetitions,
            ))
    return records


def write_bench_csv(records: Sequence[BenchRecord], path: str) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([record.as_row() for record in records], columns=BENCH_COLUMNS)
    frame.to_csv(target, index=False, lineterminator="\n")
    return target


def write_census_csv(rows: Sequence[CensusRow], path: str) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([row.as_row() for row in rows], columns=CENSUS_COLUMNS)
    frame.to_csv(target, index=False, lineterminator="\n")
    return target
