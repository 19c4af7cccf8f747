"""
Dataset ingestion, synthetic data and the labeled/unlabeled protocol.

CIFAR-10 binary: consecutive 3073-byte records (label byte, then 1024
red, 1024 green and 1024 blue bytes, row-major 32x32).

Synthetic file layout (all little-endian):
    magic b"RMSYNTH\\0", uint32 version, uint32 K, uint32 D,
    uint64 train/validation/test counts,
    then per split: float64 samples (count x D) followed by int64 labels.
"""

from pathlib import Path
from typing import Iterator, List, Tuple
import logging
import struct

import numpy as np

from app.core.exceptions import ConfigError, FormatError
from app.schemas.dataset import (
    CIFAR10_CLASSES,
    CIFAR10_RECORD_BYTES,
    CIFAR10_SHAPE,
    Cifar10Record,
    DatasetSplit,
    SampleSet,
    SyntheticSpec,
)
from app.schemas.experiment import DatasetKind, ExperimentConfig
from app.schemas.objective import LabeledBatch, UnlabeledBatch

logger = logging.getLogger(__name__)

SYNTHETIC_MAGIC = b"RMSYNTH\x00"
SYNTHETIC_VERSION = 1
SYNTHETIC_HEADER = struct.Struct("<8sIIIQQQ")


# ==================== CIFAR-10 ====================

def decode_cifar10(data: bytes) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized decode to (N, 3, 32, 32) pixels in [0, 1] and int labels"""
    remainder = len(data) % CIFAR10_RECORD_BYTES
    if remainder:
        offset = len(data) - remainder
        raise FormatError(
            f"{len(data)} bytes is not a whole number of {CIFAR10_RECORD_BYTES}-byte records; "
            f"{remainder} trailing bytes",
            offset=offset,
            record_index=offset // CIFAR10_RECORD_BYTES,
        )
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR10_RECORD_BYTES)
    labels = raw[:, 0].astype(np.int64)
    bad = np.nonzero(labels >= CIFAR10_CLASSES)[0]
    if bad.size:
        index = int(bad[0])
        raise FormatError(
            f"label {labels[index]} is not a CIFAR-10 class",
            offset=index * CIFAR10_RECORD_BYTES,
            record_index=index,
        )
    pixels = raw[:, 1:].reshape((-1,) + CIFAR10_SHAPE).astype(np.float64) / 255.0
    return pixels, labels


def parse_cifar10_binary(data: bytes) -> List[Cifar10Record]:
    pixels, labels = decode_cifar10(data)
    return [Cifar10Record(label=int(label), pixels=image) for image, label in zip(pixels, labels)]


def encode_cifar10_records(images: np.ndarray, labels) -> bytes:
    """Inverse of decode_cifar10; float pixels are rounded to the nearest byte"""
    images = np.asarray(images)
    labels = np.asarray(labels, dtype=np.int64)
    if images.shape[1:] != CIFAR10_SHAPE or len(images) != len(labels):
        raise FormatError(f"cannot encode images of shape {images.shape} with {len(labels)} labels")
    if np.any((labels < 0) | (labels >= CIFAR10_CLASSES)):
        raise FormatError("labels must lie in [0, 10)")
    if images.dtype != np.uint8:
        images = np.clip(np.round(images * 255.0), 0, 255).astype(np.uint8)
    records = np.empty((len(labels), CIFAR10_RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = images.reshape(len(labels), -1)
    return records.tobytes()


def _read_cifar10_files(paths: List[Path]) -> SampleSet:
    images, labels = [], []
    for path in paths:
        try:
            data = path.read_bytes()
        except OSError as e:
            raise ConfigError(f"cannot read CIFAR-10 file {path}: {e}") from e
        try:
            pixels, y = decode_cifar10(data)
        except FormatError as e:
            raise FormatError(f"{path}: {e}") from e
        images.append(pixels)
        labels.append(y)
    return SampleSet(samples=np.concatenate(images), labels=np.concatenate(labels))


def _cifar10_paths(path: str, pattern: str) -> List[Path]:
    location = Path(path)
    if location.is_dir():
        found = sorted(location.glob(pattern))
        if not found:
            raise ConfigError(f"no files matching {pattern} in {location}")
        return found
    return [location]


def load_cifar10(config: ExperimentConfig) -> DatasetSplit:
    """Train files minus a seeded validation hold-out (45000/5000 by default), plus the test batch"""
    train = _read_cifar10_files(_cifar10_paths(config.cifar10_path, "data_batch_*.bin"))
    if config.cifar10_test_path:
        test = _read_cifar10_files([Path(config.cifar10_test_path)])
    elif Path(config.cifar10_path).is_dir():
        test = _read_cifar10_files(_cifar10_paths(config.cifar10_path, "test_batch.bin"))
    else:
        raise ConfigError("cifar10_test_path is required when cifar10_path is a single file")

    if config.validation_size >= len(train):
        raise ConfigError(f"validation_size {config.validation_size} leaves no training data")
    order = np.random.default_rng(config.seed).permutation(len(train))
    validation = train.subset(np.sort(order[:config.validation_size]))
    train = train.subset(np.sort(order[config.validation_size:]))
    logger.info("CIFAR-10: %d train, %d validation, %d test", len(train), len(validation), len(test))
    return DatasetSplit(train=train, validation=validation, test=test, num_classes=CIFAR10_CLASSES)


# ==================== Synthetic blobs ====================

def _draw(rng: np.random.Generator, means: np.ndarray, stdev: float, count: int) -> SampleSet:
    labels = np.arange(count) % len(means)
    rng.shuffle(labels)
    noise = rng.standard_normal((count, means.shape[1]))
    return SampleSet(samples=means[labels] + stdev * noise, labels=labels.astype(np.int64))


def make_synthetic_blobs(spec: SyntheticSpec) -> DatasetSplit:
    """Class-balanced Gaussian blobs; deterministic per seed"""
    means = spec.class_means()
    rng = np.random.default_rng(spec.seed)
    return DatasetSplit(
        train=_draw(rng, means, spec.stdev, spec.train_count),
        validation=_draw(rng, means, spec.stdev, spec.validation_count),
        test=_draw(rng, means, spec.stdev, spec.test_count),
        num_classes=spec.num_classes,
    )


def save_synthetic(split: DatasetSplit, path: str) -> Path:
    dims = split.train.samples.shape[1]
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    header = SYNTHETIC_HEADER.pack(
        SYNTHETIC_MAGIC, SYNTHETIC_VERSION, split.num_classes, dims,
        len(split.train), len(split.validation), len(split.test),
    )
    with target.open("wb") as handle:
        handle.write(header)
        for part in (split.train, split.validation, split.test):
            handle.write(np.ascontiguousarray(part.samples, dtype="<f8").tobytes())
            handle.write(np.ascontiguousarray(part.labels, dtype="<i8").tobytes())
    return target


def load_synthetic(path: str) -> DatasetSplit:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read synthetic dataset {path}: {e}") from e
    if len(data) < SYNTHETIC_HEADER.size:
        raise FormatError("file shorter than the synthetic header", offset=len(data))

    magic, version, classes, dims, *counts = SYNTHETIC_HEADER.unpack_from(data)
    if magic != SYNTHETIC_MAGIC:
        raise FormatError("bad magic for a synthetic dataset file", offset=0)
    if version != SYNTHETIC_VERSION:
        raise FormatError(f"unsupported synthetic dataset version {version}", offset=8)

    expected = SYNTHETIC_HEADER.size + sum(count * (dims + 1) * 8 for count in counts)
    if len(data) != expected:
        raise FormatError(f"expected {expected} bytes, found {len(data)}", offset=min(len(data), expected))

    offset = SYNTHETIC_HEADER.size
    parts = []
    for count in counts:
        samples = np.frombuffer(data, dtype="<f8", count=count * dims, offset=offset).reshape(count, dims)
        offset += count * dims * 8
        labels = np.frombuffer(data, dtype="<i8", count=count, offset=offset)
        offset += count * 8
        parts.append(SampleSet(samples=samples.astype(np.float64), labels=labels.astype(np.int64)))
    return DatasetSplit(train=parts[0], validation=parts[1], test=parts[2], num_classes=classes)


def synthetic_spec_from_config(config: ExperimentConfig) -> SyntheticSpec:
    return SyntheticSpec(
        num_classes=config.synthetic_classes,
        dims=config.synthetic_dims,
        stdev=config.synthetic_stdev,
        mean_scale=config.synthetic_mean_scale,
        train_count=config.synthetic_train,
        validation_count=config.synthetic_validation,
        test_count=config.synthetic_test,
        seed=config.seed,
    )


def load_dataset(config: ExperimentConfig) -> DatasetSplit:
    """Load or generate the configured dataset and apply input_scale"""
    if config.dataset == DatasetKind.CIFAR10:
        split = load_cifar10(config)
    elif config.synthetic_path and Path(config.synthetic_path).exists():
        split = load_synthetic(config.synthetic_path)
    else:
        split = make_synthetic_blobs(synthetic_spec_from_config(config))
        if config.synthetic_path:
            save_synthetic(split, config.synthetic_path)

    if config.input_scale != 1.0:
        split = DatasetSplit(
            train=SampleSet(samples=split.train.samples * config.input_scale, labels=split.train.labels),
            validation=SampleSet(samples=split.validation.samples * config.input_scale, labels=split.validation.labels),
            test=SampleSet(samples=split.test.samples * config.input_scale, labels=split.test.labels),
            num_classes=split.num_classes,
        )
    return split


# ==================== Labeled / unlabeled protocol ====================

def split_labeled_unlabeled(
    train: SampleSet,
    num_labels: int,
    seed: int,
    num_classes: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Class-balanced labeled indices and the unlabeled pool.

    Every train sample, labeled ones included, stays in the unlabeled pool.
    """
    if num_labels > len(train):
        raise ConfigError(f"num_labels {num_labels} exceeds the {len(train)} training samples")
    if num_labels % num_classes:
        raise ConfigError(f"num_labels {num_labels} is not divisible by {num_classes} classes")

    per_class = num_labels // num_classes
    rng = np.random.default_rng(seed)
    chosen = []
    for label in range(num_classes):
        members = np.nonzero(train.labels == label)[0]
        if len(members) < per_class:
            raise ConfigError(f"class {label} has {len(members)} samples, {per_class} labels requested")
        chosen.append(rng.choice(members, size=per_class, replace=False))
    labeled = np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=np.int64)
    return labeled.astype(np.int64), np.arange(len(train), dtype=np.int64)


def with_labeled_split(split: DatasetSplit, num_labels: int, seed: int) -> DatasetSplit:
    labeled, _ = split_labeled_unlabeled(split.train, num_labels, seed, split.num_classes)
    return split.model_copy(update={"labeled_indices": labeled.tolist()})


def steps_per_epoch(unlabeled_size: int, batch_size: int, mu: int) -> int:
    """Full unlabeled batches per epoch; the ragged remainder is dropped"""
    steps = unlabeled_size // (batch_size * mu)
    if steps < 1:
        raise ConfigError(
            f"unlabeled pool of {unlabeled_size} cannot fill one batch of mu*B = {batch_size * mu}"
        )
    return steps


def batch_iterator(
    labeled: SampleSet,
    unlabeled: SampleSet,
    batch_size: int,
    mu: int,
    seed: int,
    epoch: int,
    num_classes: int,
) -> Iterator[Tuple[LabeledBatch, UnlabeledBatch]]:
    """B labeled and mu*B unlabeled samples per step; labeled samples cycle with reshuffling"""
    if batch_size < 1 or mu < 1:
        raise ConfigError("batch_size and mu must be at least 1")
    if len(labeled) == 0 or len(unlabeled) == 0:
        raise ConfigError("labeled and unlabeled sets must be nonempty")

    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    unlabeled_order = rng.permutation(len(unlabeled))
    labeled_order = rng.permutation(len(labeled))
    cursor = 0
    width = batch_size * mu

    for step in range(steps_per_epoch(len(unlabeled), batch_size, mu)):
        picks = []
        while len(picks) < batch_size:
            if cursor == len(labeled_order):
                labeled_order = rng.permutation(len(labeled))
                cursor = 0
            take = min(batch_size - len(picks), len(labeled_order) - cursor)
            picks.extend(labeled_order[cursor:cursor + take].tolist())
            cursor += take

        rows = unlabeled_order[step * width:(step + 1) * width]
        yield (
            LabeledBatch.from_labels(labeled.samples[picks], labeled.labels[picks], num_classes),
            UnlabeledBatch(samples=unlabeled.samples[rows], mu=mu),
        )
