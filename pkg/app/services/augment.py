"""
Weak and strong augmentation for channel-major float images in [0, 1]
and for feature vectors.

Geometric transforms resample with bilinear interpolation and zero fill.
Every sample draws from its own rng stream, so batch results do not
depend on processing order or on the worker count.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence
import logging

import numpy as np
from scipy import ndimage

from app.core.config import settings
from app.core.exceptions import AugmentError
from app.schemas.augment import AugmentMode, AugmentPolicy
from app.schemas.experiment import PadMode

logger = logging.getLogger(__name__)

CUTOUT_FILL = 0.5
LUMA = np.array([0.299, 0.587, 0.114])
SMOOTH_KERNEL = np.array([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]]) / 13.0

Transform = Callable[[np.ndarray, float], np.ndarray]


def check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or min(image.shape) < 1:
        raise AugmentError(f"expected a (channels, height, width) image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise AugmentError("image has non-finite pixels")
    return image


# ==================== Pixel transforms ====================

def _grayscale(image: np.ndarray) -> np.ndarray:
    if image.shape[0] == 3:
        return np.tensordot(LUMA, image, axes=1)[None]
    return image.mean(axis=0, keepdims=True)


def _blend(base: np.ndarray, image: np.ndarray, factor: float) -> np.ndarray:
    return base + factor * (image - base)


def identity(image: np.ndarray, magnitude: float) -> np.ndarray:
    return image.copy()


def autocontrast(image: np.ndarray, magnitude: float) -> np.ndarray:
    low = image.min(axis=(1, 2), keepdims=True)
    high = image.max(axis=(1, 2), keepdims=True)
    span = high - low
    stretched = (image - low) / np.where(span > 0, span, 1.0)
    return np.where(span > 0, stretched, image)


def equalize(image: np.ndarray, magnitude: float) -> np.ndarray:
    """Per-channel histogram equalization over 256 levels"""
    levels = np.clip(np.round(image * 255.0), 0, 255).astype(np.int64)
    result = np.empty_like(image)
    for c in range(image.shape[0]):
        histogram = np.bincount(levels[c].ravel(), minlength=256)
        cdf = np.cumsum(histogram)
        first = cdf[np.nonzero(histogram)[0][0]]
        total = cdf[-1]
        if total == first:
            result[c] = image[c]
            continue
        lookup = (cdf - first) / float(total - first)
        result[c] = np.clip(lookup, 0.0, 1.0)[levels[c]]
    return result


def posterize(image: np.ndarray, magnitude: float) -> np.ndarray:
    bits = int(round(magnitude))
    levels = np.clip(np.floor(image * 255.0), 0, 255).astype(np.uint8)
    mask = np.uint8((0xFF << (8 - bits)) & 0xFF)
    return (levels & mask).astype(np.float64) / 255.0


def solarize(image: np.ndarray, magnitude: float) -> np.ndarray:
    return np.where(image > magnitude, 1.0 - image, image)


def brightness(image: np.ndarray, magnitude: float) -> np.ndarray:
    return _blend(np.zeros_like(image), image, magnitude)


def color(image: np.ndarray, magnitude: float) -> np.ndarray:
    return _blend(np.broadcast_to(_grayscale(image), image.shape), image, magnitude)


def contrast(image: np.ndarray, magnitude: float) -> np.ndarray:
    mean = np.full_like(image, float(_grayscale(image).mean()))
    return _blend(mean, image, magnitude)


def sharpness(image: np.ndarray, magnitude: float) -> np.ndarray:
    smooth = np.stack([ndimage.convolve(channel, SMOOTH_KERNEL, mode="nearest") for channel in image])
    return _blend(smooth, image, magnitude)


# ==================== Geometric transforms ====================

def _affine(image: np.ndarray, matrix: np.ndarray, shift=(0.0, 0.0)) -> np.ndarray:
    """Resample each channel; output (row, col) reads input matrix @ (o - c) + c + shift"""
    height, width = image.shape[1:]
    center = np.array([(height - 1) / 2.0, (width - 1) / 2.0])
    offset = center - matrix @ center + np.asarray(shift, dtype=np.float64)
    return np.stack([
        ndimage.affine_transform(channel, matrix, offset=offset, order=1, mode="constant", cval=0.0)
        for channel in image
    ])


def rotate(image: np.ndarray, magnitude: float) -> np.ndarray:
    theta = np.deg2rad(magnitude)
    cos, sin = np.cos(theta), np.sin(theta)
    return _affine(image, np.array([[cos, -sin], [sin, cos]]))


def shear_x(image: np.ndarray, magnitude: float) -> np.ndarray:
    return _affine(image, np.array([[1.0, 0.0], [magnitude, 1.0]]))


def shear_y(image: np.ndarray, magnitude: float) -> np.ndarray:
    return _affine(image, np.array([[1.0, magnitude], [0.0, 1.0]]))


def translate_x(image: np.ndarray, magnitude: float) -> np.ndarray:
    return _affine(image, np.eye(2), shift=(0.0, -magnitude * image.shape[2]))


def translate_y(image: np.ndarray, magnitude: float) -> np.ndarray:
    return _affine(image, np.eye(2), shift=(-magnitude * image.shape[1], 0.0))


TRANSFORMS: Dict[str, Transform] = {
    "Autocontrast": autocontrast,
    "Brightness": brightness,
    "Color": color,
    "Contrast": contrast,
    "Equalize": equalize,
    "Identity": identity,
    "Posterize": posterize,
    "Rotate": rotate,
    "Sharpness": sharpness,
    "ShearX": shear_x,
    "ShearY": shear_y,
    "Solarize": solarize,
    "TranslateX": translate_x,
    "TranslateY": translate_y,
}


def transform_apply(
    name: str,
    image: np.ndarray,
    magnitude: float,
    rng: Optional[np.random.Generator] = None,
    ranges: Optional[Dict] = None,
) -> np.ndarray:
    """Apply one registered transform; output is clipped to [0, 1]"""
    if name not in TRANSFORMS:
        raise AugmentError(f"unregistered transform {name!r}")
    low, high = (ranges or AugmentPolicy().magnitude_ranges)[name]
    if not low <= magnitude <= high:
        raise AugmentError(f"{name} magnitude {magnitude} outside [{low}, {high}]")
    return np.clip(TRANSFORMS[name](check_image(image), float(magnitude)), 0.0, 1.0)


# ==================== Pipelines ====================

def cutout(image: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Fill a size x size square (clipped at borders) with mid-gray"""
    if size <= 0:
        return image
    height, width = image.shape[1:]
    cy = int(rng.integers(0, height))
    cx = int(rng.integers(0, width))
    top, left = max(cy - size // 2, 0), max(cx - size // 2, 0)
    bottom, right = min(cy - size // 2 + size, height), min(cx - size // 2 + size, width)
    result = image.copy()
    result[:, top:bottom, left:right] = CUTOUT_FILL
    return result


def weak_augment(image: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """Pad, crop back at a random offset, then flip horizontally with flip_probability"""
    image = check_image(image)
    height, width = image.shape[1:]
    pad = policy.pad
    if pad >= height or pad >= width:
        raise AugmentError(f"pad {pad} must be smaller than the image side ({height}x{width})")

    if pad:
        mode = "reflect" if policy.pad_mode == PadMode.REFLECT else "constant"
        padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)), mode=mode)
        top, left = rng.integers(0, 2 * pad + 1, size=2)
        image = padded[:, top:top + height, left:left + width]
    else:
        image = image.copy()

    if rng.random() < policy.flip_probability:
        image = image[:, :, ::-1].copy()
    return image


def strong_augment(image: np.ndarray, policy: AugmentPolicy, rng: np.random.Generator) -> np.ndarray:
    """transform_count distinct transforms with random magnitudes, then cutout"""
    image = check_image(image)
    unknown = [name for name in policy.transforms if name not in TRANSFORMS]
    if unknown:
        raise AugmentError(f"unregistered transforms: {unknown}")

    chosen = rng.choice(len(policy.transforms), size=policy.transform_count, replace=False)
    for index in chosen:
        name = policy.transforms[int(index)]
        low, high = policy.magnitude_ranges[name]
        image = transform_apply(name, image, rng.uniform(low, high), ranges=policy.magnitude_ranges)
    return np.clip(cutout(image, policy.cutout_size, rng), 0.0, 1.0)


def vector_augment(
    sample: np.ndarray,
    mode: AugmentMode,
    rng: np.random.Generator,
    policy: Optional[AugmentPolicy] = None,
) -> np.ndarray:
    """Gaussian jitter; the strong mode also zeroes a random fraction of coordinates"""
    policy = policy or AugmentPolicy()
    sample = np.asarray(sample, dtype=np.float64)
    if AugmentMode(mode) == AugmentMode.WEAK:
        return sample + rng.normal(0.0, policy.sigma_weak, size=sample.shape) if policy.sigma_weak else sample.copy()

    noisy = sample + rng.normal(0.0, policy.sigma_strong, size=sample.shape) if policy.sigma_strong else sample.copy()
    if policy.drop_fraction:
        noisy[rng.random(sample.shape) < policy.drop_fraction] = 0.0
    return noisy


# ==================== Batches ====================

def sample_streams(seed: int, epoch: int, step: int, branch: int, count: int) -> List[np.random.Generator]:
    """One independent generator per sample position"""
    return [np.random.default_rng(np.random.SeedSequence([seed, epoch, step, branch, i])) for i in range(count)]


def augment_batch(
    samples: np.ndarray,
    policy: AugmentPolicy,
    streams: Sequence[np.random.Generator],
    workers: Optional[int] = None,
) -> np.ndarray:
    """Augment every row with its own stream; images or vectors depending on rank"""
    if len(streams) != len(samples):
        raise AugmentError(f"{len(streams)} rng streams for {len(samples)} samples")

    if samples.ndim == 4:
        pipeline = weak_augment if policy.mode == AugmentMode.WEAK else strong_augment

        def one(i: int) -> np.ndarray:
            return pipeline(samples[i], policy, streams[i])
    else:
        def one(i: int) -> np.ndarray:
            return vector_augment(samples[i], policy.mode, streams[i], policy)

    workers = workers or settings.AUGMENT_WORKERS
    if workers > 1 and len(samples) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(len(samples))))
    else:
        rows = [one(i) for i in range(len(samples))]
    return np.stack(rows).astype(samples.dtype, copy=False)


class BatchAugmenter:
    """Callable that augments a batch with streams keyed by (seed, epoch, step, branch)"""

    def __init__(self, policy: AugmentPolicy, epoch: int, step: int, branch: int):
        self.policy = policy
        self.epoch = epoch
        self.step = step
        self.branch = branch

    def __call__(self, samples: np.ndarray) -> np.ndarray:
        streams = sample_streams(self.policy.rng_seed, self.epoch, self.step, self.branch, len(samples))
        return augment_batch(samples, self.policy, streams)
