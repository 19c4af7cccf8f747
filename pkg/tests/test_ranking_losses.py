import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from pydantic import ValidationError

from app.core.exceptions import ConfigError, ZeroNormRowError
from app.engine import Tensor, finite_difference_check
from app.schemas.experiment import PositiveNormalization, RankingVariant
from app.schemas.ranking import NormalizedLogitsBatch, RankingLossConfig
from app.services.ranking_losses import (
    _valid_triplet_indices,
    balanced_census,
    balanced_labels,
    batch_all_triplet_loss,
    batch_hard_triplet_loss,
    batch_mean_triplet_loss,
    contrastive_loss,
    count_triplets,
    l2_normalize_rows,
    label_masks,
    make_batch,
    pairwise_cosine,
    pairwise_euclidean,
    ranking_loss,
    soft_margin,
)
from tests import reference

CONFIG = RankingLossConfig()
VARIANTS = [
    RankingVariant.BATCH_ALL,
    RankingVariant.BATCH_HARD,
    RankingVariant.BATCH_MEAN,
    RankingVariant.CONTRASTIVE,
]
REFERENCE = {
    RankingVariant.BATCH_ALL: lambda rows, labels: reference.batch_all(rows, labels),
    RankingVariant.BATCH_HARD: lambda rows, labels: reference.batch_hard(rows, labels),
    RankingVariant.BATCH_MEAN: lambda rows, labels: reference.batch_mean(rows, labels),
    RankingVariant.CONTRASTIVE: lambda rows, labels: reference.contrastive(rows, labels),
}


def batch_of(rows, labels, normalize=True, num_classes=None):
    return make_batch(Tensor(np.asarray(rows, dtype=np.float64)), labels, num_classes=num_classes, normalize=normalize)


def random_batch(seed, max_rows=16, max_classes=4, width=4):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, max_rows + 1))
    classes = int(rng.integers(1, max_classes + 1))
    return rng.standard_normal((n, width)), rng.integers(0, classes, size=n).tolist()


# ==================== Normalization and geometry ====================

def test_normalize_three_four_five():
    np.testing.assert_allclose(l2_normalize_rows(Tensor([[3.0, 4.0]])).data, [[0.6, 0.8]])


def test_normalize_keeps_unit_rows():
    row = np.array([[0.0, 1.0, 0.0]])
    np.testing.assert_array_equal(l2_normalize_rows(Tensor(row)).data, row)


def test_normalized_norms_are_one(rng):
    rows = l2_normalize_rows(Tensor(rng.standard_normal((8, 10)))).data
    np.testing.assert_allclose(np.linalg.norm(rows, axis=1), 1.0, atol=1e-9)


def test_zero_row_is_reported_by_index():
    with pytest.raises(ZeroNormRowError) as info:
        l2_normalize_rows(Tensor([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]))
    assert info.value.row == 1


def test_batch_rejects_out_of_range_labels():
    with pytest.raises(ValidationError):
        batch_of([[1.0, 0.0]], [2])


def test_orthogonal_rows_are_root_two_apart():
    distances = pairwise_euclidean(batch_of([[1.0, 0.0], [0.0, 1.0]], [0, 1])).data
    assert distances[0, 1] == pytest.approx(math.sqrt(2.0), abs=1e-12)


def test_identical_rows_are_zero_apart():
    distances = pairwise_euclidean(batch_of([[1.0, 0.0], [1.0, 0.0]], [0, 0])).data
    assert distances[0, 1] == 0.0


def test_distances_match_direct_recomputation(rng):
    batch = batch_of(rng.standard_normal((7, 5)), [0] * 7)
    rows = batch.logits.data
    distances = pairwise_euclidean(batch).data
    for i in range(7):
        for j in range(7):
            assert distances[i, j] == pytest.approx(np.linalg.norm(rows[i] - rows[j]), abs=1e-12)
    np.testing.assert_array_equal(distances, distances.T)
    np.testing.assert_array_equal(np.diag(distances), 0.0)


@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_normalized_distances_are_bounded(seed):
    rows, labels = random_batch(seed)
    distances = pairwise_euclidean(batch_of(rows, labels)).data
    assert np.all(distances >= 0.0)
    assert np.all(distances <= 2.0 + 1e-9)


@pytest.mark.parametrize("other, expected", [([1.0, 0.0], 1.0), ([0.0, 1.0], 0.0), ([-1.0, 0.0], -1.0)])
def test_cosine_similarity(other, expected):
    similarity = pairwise_cosine(batch_of([[1.0, 0.0], other], [0, 0])).data
    assert similarity[0, 1] == pytest.approx(expected, abs=1e-12)
    assert similarity[0, 0] == pytest.approx(1.0)


@pytest.mark.parametrize("x, expected", [(0.0, math.log(2.0)), (0.5, 0.974077), (100.0, 100.0)])
def test_soft_margin_values(x, expected):
    assert soft_margin(x) == pytest.approx(expected, abs=1e-6)


@given(st.floats(min_value=-50, max_value=50), st.floats(min_value=1e-3, max_value=5))
def test_soft_margin_positive_and_increasing(x, step):
    assert soft_margin(x) > 0
    assert soft_margin(x + step) > soft_margin(x)


# ==================== Census ====================

def test_single_anchor_scenario():
    # one anchor whose class has 4 members, against 2 negatives
    census = count_triplets([0, 0, 0, 0, 1, 1], anchors=[0])
    assert census.batch_all_triplets == 6
    assert census.batch_hard_triplets == 1
    assert census.batch_mean_triplets == 1


def test_single_class_has_no_triplets():
    census = count_triplets([3] * 9)
    assert census.batch_all_triplets == 0
    assert census.batch_hard_triplets == 0
    assert census.pairwise_terms == 81


def test_empty_label_list():
    assert count_triplets([]).pairwise_terms == 0


def test_balanced_sixty_four_over_ten_classes():
    labels = balanced_labels(64, 10).tolist()
    census = count_triplets(labels)
    v, hard, mean = reference.census(labels)
    assert (census.batch_all_triplets, census.batch_hard_triplets, census.batch_mean_triplets) == (v, hard, mean)


@pytest.mark.parametrize("n", [8, 16, 32, 64])
@pytest.mark.parametrize("k", [2, 4, 8])
def test_closed_form_balanced_census(n, k):
    enumerated = count_triplets(balanced_labels(n, k))
    assert enumerated == balanced_census(n, k)
    assert enumerated.batch_all_triplets == n * (n // k - 1) * (n - n // k)


@given(st.lists(st.integers(min_value=0, max_value=5), max_size=24))
def test_census_matches_brute_force(labels):
    census = count_triplets(labels)
    v, hard, mean = reference.census(labels)
    assert census.batch_all_triplets == v
    assert census.batch_hard_triplets == hard
    assert census.batch_mean_triplets == mean
    assert census.batch_hard_triplets <= census.batch_mean_triplets


@given(st.lists(st.integers(min_value=0, max_value=5), max_size=24))
def test_triplet_indices_enumerate_every_valid_triplet_in_order(labels):
    n = len(labels)
    expected = [
        (a * n + p, a * n + q)
        for a in range(n) for p in range(n) for q in range(n)
        if p != a and labels[p] == labels[a] and labels[q] != labels[a]
    ]
    positive, negative = label_masks(np.asarray(labels, dtype=np.int64))
    ap, an = _valid_triplet_indices(positive, negative)
    assert list(zip(ap.tolist(), an.tolist())) == expected
    assert len(expected) == count_triplets(labels).batch_all_triplets


# ==================== Worked values ====================

def test_batch_all_toy_value(toy_rows):
    result = batch_all_triplet_loss(batch_of(*toy_rows), CONFIG)
    assert result.census.batch_all_triplets == 2
    assert result.value == pytest.approx(0.3371, abs=1e-4)
    assert result.value == pytest.approx(soft_margin(0.5 - math.sqrt(2.0)), rel=1e-12)


def test_batch_hard_toy_value(toy_rows):
    result = batch_hard_triplet_loss(batch_of(*toy_rows), CONFIG)
    assert result.value == pytest.approx(0.2247, abs=1e-4)
    assert result.value == pytest.approx(2.0 / 3.0 * soft_margin(0.5 - math.sqrt(2.0)), rel=1e-12)


def test_batch_mean_toy_value(toy_rows):
    result = batch_mean_triplet_loss(batch_of(*toy_rows), CONFIG)
    expected = (2 * soft_margin(0.5 - math.sqrt(2.0) / 3) + soft_margin(0.5 - 2 * math.sqrt(2.0) / 3)) / 3
    assert result.value == pytest.approx(0.6370, abs=1e-4)
    assert result.value == pytest.approx(expected, rel=1e-12)


def test_contrastive_toy_value(toy_rows):
    result = contrastive_loss(batch_of(*toy_rows), CONFIG)
    assert result.pair_count == 2
    assert result.value == pytest.approx(0.006715, abs=1e-6)
    assert result.value == pytest.approx(math.log1p(math.exp(-5.0)), rel=1e-12)


def test_contrastive_without_negatives_is_zero():
    result = contrastive_loss(batch_of([[1.0, 0.0], [0.6, 0.8]], [0, 0]), CONFIG)
    assert result.pair_count == 2
    assert result.value == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("variant", VARIANTS)
def test_singleton_classes_give_zero_pair_losses(variant):
    batch = batch_of([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [0, 1, 2])
    result = ranking_loss(batch, variant, CONFIG)
    if variant == RankingVariant.BATCH_MEAN:
        # every anchor has negatives, so BatchMean still counts them
        assert result.value > 0
    else:
        assert result.value == 0.0


@pytest.mark.parametrize("variant", VARIANTS)
def test_single_class_batch_is_zero_with_zero_gradient(variant):
    if variant == RankingVariant.CONTRASTIVE:
        pytest.skip("a single class still has positive pairs")
    x = Tensor(np.random.default_rng(3).standard_normal((5, 3)), requires_grad=True)
    result = ranking_loss(make_batch(x, [1] * 5), variant, CONFIG)
    assert result.value == 0.0
    if result.loss.requires_grad:
        result.loss.backward()
    assert x.grad is None or not np.any(x.grad)


def test_batch_of_one():
    for variant in VARIANTS:
        result = ranking_loss(batch_of([[0.3, 0.4]], [0]), variant, CONFIG)
        assert result.value == 0.0


def test_unknown_variant():
    with pytest.raises(ConfigError):
        ranking_loss(batch_of([[1.0, 0.0]], [0]), "XX", CONFIG)


# ==================== Oracle equivalence ====================

@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_losses_match_loop_reference(seed):
    rows, labels = random_batch(seed)
    batch = batch_of(rows, labels)
    normalized = batch.logits.data.tolist()
    for variant in VARIANTS:
        got = ranking_loss(batch, variant, CONFIG).value
        want = REFERENCE[variant](normalized, labels)
        assert got == pytest.approx(want, rel=1e-9, abs=1e-12), variant


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_hinge_and_positive_count_modes_match_reference(seed):
    rows, labels = random_batch(seed)
    batch = batch_of(rows, labels)
    normalized = batch.logits.data.tolist()

    hinge = RankingLossConfig(soft_margin=False)
    assert batch_all_triplet_loss(batch, hinge).value == pytest.approx(
        reference.batch_all(normalized, labels, soft=False), rel=1e-9, abs=1e-12)
    assert batch_hard_triplet_loss(batch, hinge).value == pytest.approx(
        reference.batch_hard(normalized, labels, soft=False), rel=1e-9, abs=1e-12)

    per_count = RankingLossConfig(positive_normalization=PositiveNormalization.POSITIVE_COUNT)
    assert batch_mean_triplet_loss(batch, per_count).value == pytest.approx(
        reference.batch_mean(normalized, labels, per_count=True), rel=1e-9, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_losses_are_permutation_invariant(seed):
    rows, labels = random_batch(seed)
    order = np.random.default_rng(seed).permutation(len(labels))
    shuffled_rows = rows[order]
    shuffled_labels = [labels[i] for i in order]
    for variant in VARIANTS:
        before = ranking_loss(batch_of(rows, labels), variant, CONFIG).value
        after = ranking_loss(batch_of(shuffled_rows, shuffled_labels), variant, CONFIG).value
        assert after == pytest.approx(before, abs=1e-12)


# ==================== Properties ====================

@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_soft_margin_losses_positive_when_valid(seed):
    rows, labels = random_batch(seed)
    batch = batch_of(rows, labels)
    census = count_triplets(labels)
    if census.batch_all_triplets:
        assert batch_all_triplet_loss(batch, CONFIG).value > 0
        assert batch_hard_triplet_loss(batch, CONFIG).value > 0
    if census.batch_mean_triplets:
        assert batch_mean_triplet_loss(batch, CONFIG).value > 0


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_triplet_losses_monotone_in_margin(seed, a, b):
    low, high = sorted((a, b))
    batch = batch_of(*random_batch(seed))
    for loss_fn in (batch_all_triplet_loss, batch_hard_triplet_loss, batch_mean_triplet_loss):
        assert loss_fn(batch, RankingLossConfig(margin=low)).value <= loss_fn(batch, RankingLossConfig(margin=high)).value + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_hardest_pairs_dominate_means_per_anchor(seed):
    rows, labels = random_batch(seed)
    distances = pairwise_euclidean(batch_of(rows, labels)).data
    y = np.asarray(labels)
    for a in range(len(y)):
        positive = (y == y[a]) & (np.arange(len(y)) != a)
        negative = y != y[a]
        if positive.any() and negative.any():
            hard = distances[a, positive].max() - distances[a, negative].min()
            mean = distances[a, positive].mean() - distances[a, negative].mean()
            assert soft_margin(0.5 + hard) >= soft_margin(0.5 + mean)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_loss_arguments_bounded_for_normalized_rows(seed):
    rows, labels = random_batch(seed)
    distances = pairwise_euclidean(batch_of(rows, labels)).data
    n = len(labels)
    y = np.asarray(labels)
    for a in range(n):
        positive = (y == y[a]) & (np.arange(n) != a)
        negative = y != y[a]
        argument = 0.5 + distances[a, positive].sum() / n - distances[a, negative].sum() / n
        assert 0.5 - 2.0 - 1e-9 <= argument <= 0.5 + 2.0 + 1e-9


def test_contrastive_stays_finite_on_large_unnormalized_rows(rng):
    rows = 50.0 * rng.standard_normal((8, 4))
    result = contrastive_loss(batch_of(rows, [0, 0, 1, 1, 2, 2, 3, 3], normalize=False), CONFIG)
    assert np.isfinite(result.value)


# ==================== Gradients ====================

@pytest.mark.parametrize("variant", VARIANTS)
def test_loss_gradients_match_finite_differences(variant):
    rng = np.random.default_rng(11)
    logits = rng.standard_normal((6, 4))
    labels = [0, 0, 1, 1, 2, 0]

    def f(x):
        return ranking_loss(make_batch(x, labels), variant, CONFIG).loss

    assert finite_difference_check(f, logits) < 1e-4


def test_contrastive_gradient_at_temperature_point_two():
    rng = np.random.default_rng(12)
    logits = rng.standard_normal((7, 3))
    labels = [0, 1, 2, 0, 1, 2, 0]

    def f(x):
        return contrastive_loss(make_batch(x, labels), RankingLossConfig(temperature=0.2)).loss

    assert finite_difference_check(f, logits) < 1e-4


def test_batch_hard_ignores_a_row_batch_mean_uses():
    # the class-2 row has no positive and is nobody's nearest negative
    rows = np.array([
        [1.0, 0.0, 0.0],
        [1.0, 0.2, 0.0],
        [0.3, 1.0, 0.0],
        [0.2, 1.0, 0.0],
        [0.0, 0.0, 1.0],
    ])
    labels = [0, 0, 1, 1, 2]
    gradients = {}
    for variant in (RankingVariant.BATCH_HARD, RankingVariant.BATCH_MEAN):
        x = Tensor(rows, requires_grad=True)
        ranking_loss(make_batch(x, labels), variant, CONFIG).loss.backward()
        gradients[variant] = x.grad

    assert not np.any(gradients[RankingVariant.BATCH_HARD][4])
    assert np.any(gradients[RankingVariant.BATCH_MEAN][4])
    assert np.all(np.abs(gradients[RankingVariant.BATCH_MEAN]).sum(axis=1) > 0)
