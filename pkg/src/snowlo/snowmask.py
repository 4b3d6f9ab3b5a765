"""Intensity threshold mask for low-reflectance snowflake returns."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

DEFAULT_RATIO = 0.01


@dataclass(frozen=True, eq=False)
class IntensityMask:
    bits: np.ndarray  # uint8, 0 = flagged as snow
    threshold: float

    @property
    def n_masked(self) -> int:
        return int(np.count_nonzero(self.bits == 0))

    def __len__(self) -> int:
        return len(self.bits)


def compute_threshold(intensities, ratio: float = DEFAULT_RATIO) -> float:
    """Per-frame threshold ``max(I) * ratio``."""
    inten = np.asarray(intensities, dtype=np.float64)
    if inten.size == 0:
        raise InvalidArgument("cannot threshold an empty intensity list")
    if not 0 < ratio < 1:
        raise InvalidArgument(f"ratio must lie in (0, 1), got {ratio}")
    return float(inten.max() * ratio)


def apply_mask(intensities, threshold: float) -> IntensityMask:
    if threshold < 0:
        raise InvalidArgument("threshold must be non-negative")
    inten = np.asarray(intensities, dtype=np.float64)
    return IntensityMask((inten >= threshold).astype(np.uint8), float(threshold))


def snow_mask(intensities, ratio: float = DEFAULT_RATIO) -> IntensityMask:
    return apply_mask(intensities, compute_threshold(intensities, ratio))
