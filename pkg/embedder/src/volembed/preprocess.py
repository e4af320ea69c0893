"""Per-slice intensity windowing and spatial resizing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InputError


@dataclass(frozen=True)
class Preprocess:
    """Window/level normalization plus resize to a square input.

    Intensities are clipped to [center - width/2, center + width/2] and
    scaled to [0, 1]; the defaults are the common CT soft-tissue window.
    """

    window_center: float = 40.0
    window_width: float = 400.0
    target_size: int = 224

    def __post_init__(self) -> None:
        if self.window_width <= 0:
            raise InputError(f"window width must be positive, got {self.window_width}")
        if self.target_size < 1:
            raise InputError(f"target size must be >= 1, got {self.target_size}")

    def apply(self, slice_image: np.ndarray) -> np.ndarray:
        """One (rows, cols) slice -> (target, target) float32 in [0, 1]."""
        image = np.asarray(slice_image, dtype=np.float32)
        if image.ndim != 2:
            raise InputError(f"slice must be 2-D, got shape {image.shape}")
        lo = self.window_center - self.window_width / 2.0
        hi = self.window_center + self.window_width / 2.0
        image = (np.clip(image, lo, hi) - lo) / (hi - lo)
        if image.shape != (self.target_size, self.target_size):
            factors = (self.target_size / image.shape[0],
                       self.target_size / image.shape[1])
            image = ndimage.zoom(image, factors, order=1, mode="nearest",
                                 grid_mode=True)
            image = np.clip(image, 0.0, 1.0)
        return np.ascontiguousarray(image, dtype=np.float32)

    def apply_volume(self, volume: np.ndarray) -> np.ndarray:
        """(slices, rows, cols) -> (slices, target*target) row-per-slice."""
        if volume.ndim != 3:
            raise InputError(f"volume must be 3-D, got shape {volume.shape}")
        rows = [self.apply(volume[i]).reshape(-1) for i in range(volume.shape[0])]
        return np.stack(rows)
