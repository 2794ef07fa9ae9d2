"""Semantic-depth fusion, depth slicing and sim-to-real laser augmentation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from pseudolaser_nav.config import NoiseParams

logger = logging.getLogger(__name__)

MIN_RANGE = 0.01

RngLike = Union[int, np.random.Generator, None]


class ShapeMismatchError(ValueError):
    """Raised when a depth image and a mask do not share H x W."""


@dataclass(frozen=True)
class DepthImage:
    values: np.ndarray
    max_range: float

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"depth image must be 2-D, got shape {values.shape}")
        if np.any(values <= 0) or np.any(values > self.max_range):
            raise ValueError("depth values must lie in (0, max_range]")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class TraversabilityMask:
    """1 where the pixel is not traversable, 0 on traversable ground."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {values.shape}")
        if not np.all((values == 0) | (values == 1)):
            raise ValueError("mask must be binary")
        object.__setattr__(self, "values", values.astype(np.uint8))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class MaskedDepth:
    """Depth with traversable pixels zeroed out."""

    values: np.ndarray
    max_range: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class PseudoLaser:
    ranges: np.ndarray
    max_range: float

    def __post_init__(self) -> None:
        ranges = np.asarray(self.ranges, dtype=np.float64)
        if ranges.ndim != 1:
            raise ValueError(f"pseudo-laser must be 1-D, got shape {ranges.shape}")
        if np.any(ranges <= 0) or np.any(ranges > self.max_range):
            raise ValueError("pseudo-laser ranges must lie in (0, max_range]")
        object.__setattr__(self, "ranges", ranges)

    @property
    def d_laser(self) -> int:
        return len(self.ranges)


def apply_semantic_mask(depth: DepthImage, mask: TraversabilityMask) -> MaskedDepth:
    if depth.shape != mask.shape:
        raise ShapeMismatchError(f"depth {depth.shape} and mask {mask.shape} differ")
    return MaskedDepth(depth.values * mask.values, depth.max_range)


def unmasked(depth: DepthImage) -> MaskedDepth:
    """The depth image viewed as a semantic-depth map with nothing masked."""
    return MaskedDepth(depth.values.copy(), depth.max_range)


def slice_min_pool(m: MaskedDepth) -> PseudoLaser:
    """Column-wise minimum over the nonzero entries of the lower half.

    Columns whose lower half is entirely masked read ``max_range``.
    """
    h = m.shape[0]
    if h % 2:
        raise ValueError(f"image height must be even, got {h}")
    lower = m.values[h // 2 :]
    pooled = np.min(np.where(lower != 0, lower, np.inf), axis=0)
    return PseudoLaser(np.where(np.isfinite(pooled), pooled, m.max_range), m.max_range)


def slice_row(m: MaskedDepth, row: Optional[int] = None) -> PseudoLaser:
    """Naive 1-D slice along a single image row (default: first row below the horizon)."""
    h = m.shape[0]
    row = h // 2 if row is None else row
    if not 0 <= row < h:
        raise ValueError(f"slice row {row} outside image of height {h}")
    values = m.values[row]
    return PseudoLaser(np.where(values != 0, values, m.max_range), m.max_range)


def detect_junctions(laser: PseudoLaser, alpha: float) -> list[tuple[int, int]]:
    """Adjacent index pairs whose ranges differ by more than ``alpha``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    jumps = np.abs(np.diff(laser.ranges)) > alpha
    return [(int(j), int(j) + 1) for j in np.flatnonzero(jumps)]


def junction_windows(
    junctions: list[tuple[int, int]], halfwidth: int, length: int
) -> list[tuple[int, int]]:
    """Closed spans [lo, hi] whose interior is replaced by interpolation.

    Each junction (j, j+1) covers ``halfwidth`` entries on either side, with
    the endpoints one step further out. Spans whose interiors overlap merge.
    """
    spans: list[tuple[int, int]] = []
    for j, _ in junctions:
        lo = max(j - halfwidth, 0)
        hi = min(j + 1 + halfwidth, length - 1)
        if spans and lo < spans[-1][1]:
            spans[-1] = (spans[-1][0], max(hi, spans[-1][1]))
        else:
            spans.append((lo, hi))
    return spans


def augment_noise(
    laser: PseudoLaser, params: NoiseParams, rng_seed: RngLike = None
) -> PseudoLaser:
    """Interpolate across junction neighbourhoods and add range-proportional noise."""
    if not params.enabled:
        return laser

    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    ranges = laser.ranges.copy()
    n = len(ranges)

    junctions = detect_junctions(laser, params.junction_threshold)
    spans = junction_windows(junctions, params.neighborhood_halfwidth, n)

    noisy = np.ones(n, dtype=bool)
    for lo, hi in spans:
        if hi - lo >= 2:
            ranges[lo : hi + 1] = np.linspace(laser.ranges[lo], laser.ranges[hi], hi - lo + 1)
        noisy[lo : hi + 1] = False

    if params.gaussian_scale > 0:
        draws = rng.standard_normal(n)
        ranges = np.where(noisy, ranges + params.gaussian_scale * ranges * draws, ranges)

    if junctions:
        logger.debug(f"Augmented laser: {len(junctions)} junctions, {len(spans)} windows")

    return PseudoLaser(np.clip(ranges, MIN_RANGE, laser.max_range), laser.max_range)
