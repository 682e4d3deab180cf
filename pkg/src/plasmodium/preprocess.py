"""Image standardization and training-time augmentation.

All transforms are pure functions of their inputs plus an explicit random
generator, so they can be replayed exactly and applied from multiple
workers as long as each worker owns its own stream (see ``rng_for_sample``).

Pixel-value contract: ingestion produces integer 0-255 images; a normalized
standardize pass produces float32 in [0, 1]. Float inputs are assumed to be
unit-range already and are never rescaled, which makes standardize
idempotent on conforming inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class AugmentConfig:
    """Ranges for the stochastic training transforms (flips, rotation,
    shear and shift). Magnitudes are mild defaults suitable for cell crops;
    the fill for exposed pixels is nearest-edge so augmented images carry
    no synthetic black borders."""

    horizontal_flip: bool = True
    vertical_flip: bool = True
    rotation_range: float = 20.0  # degrees, draw from [-r, r]
    shear_range: float = 10.0  # degrees, x-shear
    shift_range: float = 0.1  # fraction of each image dimension
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rotation_range <= 180.0:
            raise ValueError(f"rotation_range must be in [0, 180], got {self.rotation_range}")
        if not 0.0 <= self.shear_range <= 45.0:
            raise ValueError(f"shear_range must be in [0, 45], got {self.shear_range}")
        if not 0.0 <= self.shift_range <= 0.5:
            raise ValueError(f"shift_range must be in [0, 0.5], got {self.shift_range}")

    def to_json(self) -> dict:
        return {
            "horizontal_flip": self.horizontal_flip,
            "vertical_flip": self.vertical_flip,
            "rotation_range": self.rotation_range,
            "shear_range": self.shear_range,
            "shift_range": self.shift_range,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AugmentConfig":
        return cls(**obj)


@dataclass(frozen=True)
class PreprocessProfile:
    """Deterministic half of the pipeline: resize target, unit-range flag,
    and an optional augmentation config for training batches. The profile
    serializes into export bundles so the browser applies the identical
    contract (channel order is always RGB)."""

    target_size: tuple[int, int]
    normalize: bool = True
    augment: AugmentConfig | None = None

    def __post_init__(self):
        h, w = self.target_size
        if h < 1 or w < 1:
            raise ValueError(f"target_size must be positive, got {self.target_size}")

    def to_json(self) -> dict:
        obj = {
            "target_size": list(self.target_size),
            "normalize": self.normalize,
            "channel_order": "RGB",
        }
        if self.augment is not None:
            obj["augment"] = self.augment.to_json()
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "PreprocessProfile":
        augment = obj.get("augment")
        return cls(
            target_size=tuple(obj["target_size"]),
            normalize=obj["normalize"],
            augment=AugmentConfig.from_json(augment) if augment else None,
        )


# Shipped profiles. 224x224 feeds the zero-padding CNN, 128x128 the other
# deep nets, 32x32 the SVM feature extractor.
CNN_B_PROFILE = PreprocessProfile(target_size=(224, 224))
SMALL_IMAGE_PROFILE = PreprocessProfile(target_size=(128, 128))
SVM_FEATURE_PROFILE = PreprocessProfile(target_size=(32, 32))


def _check_image(pixels: np.ndarray) -> np.ndarray:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {pixels.shape}")
    if pixels.shape[0] < 1 or pixels.shape[1] < 1:
        raise ValueError(f"zero-area image: shape {pixels.shape}")
    return pixels


def resize_bilinear(image: np.ndarray, target_size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with half-pixel-center sampling and edge clamping.

    Implemented directly (rather than via an image library) so the browser
    front end can reproduce it bit-for-bit from the same definition:
    src = (dst + 0.5) * (in_size / out_size) - 0.5, clamped to the valid
    coordinate range.
    """
    image = _check_image(image).astype(np.float32, copy=False)
    h, w = image.shape[:2]
    th, tw = target_size
    if (h, w) == (th, tw):
        return image.copy()

    ys = np.clip((np.arange(th, dtype=np.float64) + 0.5) * (h / th) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(tw, dtype=np.float64) + 0.5) * (w / tw) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(np.float32)[:, None, None]
    wx = (xs - x0).astype(np.float32)[None, :, None]

    top = image[y0[:, None], x0[None, :], :] * (1 - wx) + image[y0[:, None], x1[None, :], :] * wx
    bot = image[y1[:, None], x0[None, :], :] * (1 - wx) + image[y1[:, None], x1[None, :], :] * wx
    return top * (1 - wy) + bot * wy


def standardize(image, profile: PreprocessProfile) -> np.ndarray:
    """Resize to the profile target and (optionally) scale to unit range.

    ``image`` is a LabeledImage or a bare (H, W, 3) array. Integer inputs
    are divided by 255 when normalizing; float inputs pass through
    unscaled. Returns float32 of shape (target_h, target_w, 3).
    """
    pixels = image.pixels if hasattr(image, "pixels") else image
    pixels = _check_image(pixels)
    integer_input = np.issubdtype(pixels.dtype, np.integer)
    out = resize_bilinear(pixels, profile.target_size)
    if profile.normalize and integer_input:
        out = out / np.float32(255.0)
    return out


@dataclass(frozen=True)
class AugmentParams:
    """One concrete draw from an AugmentConfig."""

    flip_horizontal: bool = False
    flip_vertical: bool = False
    rotation_deg: float = 0.0
    shear_deg: float = 0.0
    shift_y: float = 0.0  # fraction of height
    shift_x: float = 0.0  # fraction of width

    @property
    def is_identity(self) -> bool:
        return (
            not self.flip_horizontal
            and not self.flip_vertical
            and self.rotation_deg == 0.0
            and self.shear_deg == 0.0
            and self.shift_y == 0.0
            and self.shift_x == 0.0
        )


def draw_params(config: AugmentConfig, rng: np.random.Generator) -> AugmentParams:
    """Sample transform parameters from the config ranges."""
    return AugmentParams(
        flip_horizontal=bool(config.horizontal_flip and rng.random() < 0.5),
        flip_vertical=bool(config.vertical_flip and rng.random() < 0.5),
        rotation_deg=float(rng.uniform(-config.rotation_range, config.rotation_range)) if config.rotation_range else 0.0,
        shear_deg=float(rng.uniform(-config.shear_range, config.shear_range)) if config.shear_range else 0.0,
        shift_y=float(rng.uniform(-config.shift_range, config.shift_range)) if config.shift_range else 0.0,
        shift_x=float(rng.uniform(-config.shift_range, config.shift_range)) if config.shift_range else 0.0,
    )


def apply_params(image: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Apply one drawn transform: flips, rotation (counter-clockwise
    positive), x-shear, then shift, all about the image center with
    bilinear resampling and nearest-edge fill."""
    image = _check_image(image)
    if params.is_identity:
        return image.copy()

    h, w = image.shape[:2]
    theta = math.radians(params.rotation_deg)
    phi = math.radians(params.shear_deg)

    # Forward map in (y, x): flip . rotate . shear. A +theta rotation turns
    # the image counter-clockwise on screen (y axis points down).
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    shear = np.array([[1.0, 0.0], [math.tan(phi), 1.0]])
    flip = np.diag([-1.0 if params.flip_vertical else 1.0, -1.0 if params.flip_horizontal else 1.0])
    forward = flip @ rot @ shear

    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    shift = np.array([params.shift_y * h, params.shift_x * w])
    inverse = np.linalg.inv(forward)

    matrix = np.eye(3)
    matrix[:2, :2] = inverse
    offset = np.zeros(3)
    offset[:2] = center - inverse @ (center + shift)

    out = ndimage.affine_transform(
        image.astype(np.float32, copy=False),
        matrix=matrix,
        offset=offset,
        order=1,
        mode="nearest",
    )
    return np.clip(out, 0.0, 1.0, out=out)


def augment(image: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Stochastic training transform of a standardized image. Shape is
    preserved and values stay in [0, 1]; all transforms are label-invariant
    for this task."""
    image = _check_image(image)
    if not np.issubdtype(image.dtype, np.floating):
        raise ValueError("augment expects a standardized float image")
    return apply_params(image, draw_params(config, rng))


def rng_for_sample(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Independent per-sample stream so parallel workers stay reproducible."""
    return np.random.default_rng([seed, epoch, index])
