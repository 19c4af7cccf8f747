import numpy as np
import pandas as pd
import pytest

from app.engine import Tensor
from app.schemas.bench import BENCH_COLUMNS, CENSUS_COLUMNS, BenchRecord
from app.schemas.experiment import RankingVariant
from app.services.bench import (
    census_scaling,
    confidence_cost_profile,
    confidence_sweep,
    run_bench,
    sweep_batches,
    time_loss_variant,
    timing_inversions,
    write_bench_csv,
    write_census_csv,
)
from app.services.ranking_losses import balanced_labels, count_triplets


def test_census_rows_match_closed_form():
    rows = census_scaling([8, 16, 32, 64], [2, 4, 8])
    assert len(rows) == 12
    assert all(row.matches_closed_form for row in rows)
    by_size = {(row.batch_size, row.class_count): row for row in rows}
    assert by_size[(8, 2)].census.batch_all_triplets == 8 * 3 * 4
    assert by_size[(64, 8)].census.batch_hard_triplets == 64


def test_census_skips_closed_form_for_uneven_batches():
    (row,) = census_scaling([10], [4])
    assert row.closed_form_batch_all == -1
    assert not row.matches_closed_form


def test_census_csv(tmp_path):
    path = write_census_csv(census_scaling([8, 16], [2]), str(tmp_path / "census.csv"))
    frame = pd.read_csv(path)
    assert list(frame.columns) == CENSUS_COLUMNS
    assert frame["batch_all_triplets"].tolist() == [96, 896]


def test_confidence_sweep_on_uniform_and_confident_models():
    batches = [np.zeros((6, 3)), np.ones((4, 3))]
    uniform = confidence_sweep(lambda x: Tensor(np.zeros((len(x), 10))), batches, 0.95)
    assert uniform == [0.0, 0.0]

    def confident(x):
        return 100.0 * np.eye(10)[np.arange(len(x)) % 10]

    assert confidence_sweep(confident, batches, 0.95) == [1.0, 1.0]


def confident_model(x):
    return 100.0 * np.eye(4)[np.arange(len(x)) % 4]


def test_confidence_cost_profile_times_confident_rows():
    batches = [np.zeros((8, 3)), np.zeros((12, 3))]
    records = confidence_cost_profile(confident_model, batches, 0.95, repetitions=5)
    assert [record.batch_size for record in records] == [8, 12]
    assert all(record.variant == RankingVariant.BATCH_ALL for record in records)
    assert all(record.confident_fraction == 1.0 for record in records)
    assert records[0].triplets == count_triplets(np.arange(8) % 4).batch_all_triplets


def test_confidence_cost_profile_keeps_only_confident_rows():
    def half_confident(x):
        logits = np.zeros((len(x), 4))
        logits[::2] = 100.0 * np.eye(4)[np.arange(0, len(x), 2) % 4]
        return logits

    (record,) = confidence_cost_profile(half_confident, [np.zeros((8, 3))], 0.95, repetitions=5)
    assert record.batch_size == 4
    assert record.confident_fraction == 0.5


def test_confidence_cost_profile_skips_batches_without_confident_rows():
    def uniform(x):
        return np.zeros((len(x), 4))

    assert confidence_cost_profile(uniform, [np.zeros((6, 3))], 0.95, repetitions=5) == []


def test_sweep_batches_are_disjoint_and_capped():
    samples = np.arange(50, dtype=np.float64)[:, None]
    batches = sweep_batches(samples, 8, 10, seed=0)
    assert len(batches) == 6
    seen = np.concatenate(batches).ravel()
    assert len(np.unique(seen)) == 48
    assert [b.shape for b in sweep_batches(samples, 8, 2, seed=0)] == [(8, 1), (8, 1)]


def _record(n, wall_time_ns):
    return BenchRecord(
        variant=RankingVariant.BATCH_ALL, batch_size=n, class_count=2,
        census=count_triplets(balanced_labels(n, 2)), wall_time_ns=wall_time_ns, repetitions=5,
    )


def test_timing_inversions_counts_drops_in_triplet_order():
    monotone = [_record(n, 10 * n) for n in (4, 6, 8, 10)]
    assert timing_inversions(monotone) == 0
    assert timing_inversions(list(reversed(monotone))) == 0
    bumpy = [_record(4, 10), _record(6, 5), _record(8, 30), _record(10, 20)]
    assert timing_inversions(bumpy) == 2


def test_time_loss_variant_record():
    rng = np.random.default_rng(0)
    labels = balanced_labels(16, 4)
    record = time_loss_variant(RankingVariant.BATCH_ALL, rng.standard_normal((16, 4)), labels, repetitions=5)
    assert record.batch_size == 16
    assert record.class_count == 4
    assert record.triplets == 16 * 3 * 12
    assert record.wall_time_ns >= 0
    assert record.as_row()["pairwise_terms"] == record.census.pairwise_terms


def test_contrastive_record_counts_pairs():
    labels = balanced_labels(8, 2)
    record = time_loss_variant(RankingVariant.CONTRASTIVE, np.random.default_rng(1).standard_normal((8, 2)), labels, repetitions=5)
    assert record.triplets == record.pair_count == 8 * 3


def test_too_few_repetitions():
    with pytest.raises(ValueError):
        time_loss_variant(RankingVariant.BATCH_MEAN, np.ones((4, 2)), [0, 0, 1, 1], repetitions=4)


def test_run_bench_writes_every_variant(tmp_path, small_config):
    config = small_config(bench_sizes=[8, 16], bench_classes=4, bench_repetitions=5)
    records = run_bench(config)
    assert len(records) == 8
    frame = pd.read_csv(write_bench_csv(records, str(tmp_path / "bench.csv")))
    assert list(frame.columns) == BENCH_COLUMNS
    assert set(frame["variant"]) == {variant.value for variant in RankingVariant if variant != RankingVariant.NONE}


@pytest.mark.slow
def test_batch_all_costs_more_than_batch_mean():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal((64, 10))
    labels = balanced_labels(64, 10)
    timings = {
        variant: time_loss_variant(variant, logits, labels, repetitions=15).wall_time_ns
        for variant in (RankingVariant.BATCH_ALL, RankingVariant.BATCH_HARD, RankingVariant.BATCH_MEAN)
    }
    assert timings[RankingVariant.BATCH_ALL] > timings[RankingVariant.BATCH_MEAN]
    hard, mean = timings[RankingVariant.BATCH_HARD], timings[RankingVariant.BATCH_MEAN]
    assert abs(hard - mean) <= 0.25 * max(hard, mean)


@pytest.mark.slow
def test_batch_all_time_grows_with_triplet_count(small_config):
    config = small_config()
    rng = np.random.default_rng(3)
    records = [
        time_loss_variant(
            RankingVariant.BATCH_ALL,
            rng.standard_normal((n, config.bench_classes)),
            balanced_labels(n, config.bench_classes),
            repetitions=5,
        )
        for n in config.bench_sizes
    ]
    assert len(records) == 8
    triplets = [record.triplets for record in records]
    assert triplets == sorted(triplets)
    assert timing_inversions(records) <= 2
