"""Feature extractor registry.

A model turns a batch of preprocessed slices (rows of flattened pixels)
into L2-normalized embedding rows. The built-in ``proj-<L>`` family is a
seeded Gaussian random projection: fully deterministic, no weights to
fetch, and dimensionally faithful to the extraction pipeline it stands
in for. Wrappers around pretrained networks register the same way; they
only need to honor ``dim`` and ``embed``.
"""

from __future__ import annotations

import hashlib
import re
from typing import Callable, Protocol

import numpy as np

from .errors import ModelError


class FeatureExtractor(Protocol):
    """What the extraction pipeline requires of a model."""

    name: str
    dim: int

    def embed(self, pixel_rows: np.ndarray) -> np.ndarray: ...


class SeededProjection:
    """Deterministic random-projection features.

    The projection matrix is drawn once from a generator seeded by the
    model name, so the same name always maps the same pixels to the same
    embedding, across processes and runs.
    """

    def __init__(self, name: str, dim: int):
        if dim < 1:
            raise ModelError(f"embedding dimension must be >= 1, got {dim}")
        self.name = name
        self.dim = dim
        self._matrix: np.ndarray | None = None
        self._input_size: int | None = None

    def _projection(self, input_size: int) -> np.ndarray:
        if self._matrix is None or self._input_size != input_size:
            digest = hashlib.sha256(self.name.encode("utf-8")).digest()
            seed = np.frombuffer(digest[:16], dtype=np.uint64)
            rng = np.random.default_rng(seed)
            scale = 1.0 / np.sqrt(input_size)
            self._matrix = (rng.standard_normal((input_size, self.dim))
                            * scale).astype(np.float32)
            self._input_size = input_size
        return self._matrix

    def embed(self, pixel_rows: np.ndarray) -> np.ndarray:
        pixel_rows = np.asarray(pixel_rows, dtype=np.float32)
        if pixel_rows.ndim != 2:
            raise ModelError(f"expected a 2-D pixel batch, got shape {pixel_rows.shape}")
        projected = pixel_rows @ self._projection(pixel_rows.shape[1])
        norms = np.linalg.norm(projected.astype(np.float64), axis=1, keepdims=True)
        if np.any(norms == 0.0):
            # an all-equal slice projects near zero; nudge deterministically
            # so the output stays a valid unit vector
            projected = projected + np.float32(1e-6)
            norms = np.linalg.norm(projected.astype(np.float64), axis=1,
                                   keepdims=True)
        return (projected / norms.astype(np.float32)).astype(np.float32)


_PROJECTION_FORM = re.compile(r"^proj-(\d+)$")

_FACTORIES: dict[str, Callable[[str], FeatureExtractor]] = {}


def register_model(name: str, factory: Callable[[str], FeatureExtractor]) -> None:
    """Expose an extractor under an exact name."""
    _FACTORIES[name] = factory


def load_model(name: str) -> FeatureExtractor:
    """Resolve a model identifier to a ready extractor."""
    factory = _FACTORIES.get(name)
    if factory is not None:
        return factory(name)
    match = _PROJECTION_FORM.match(name)
    if match:
        return SeededProjection(name, int(match.group(1)))
    raise ModelError(
        f"unknown model {name!r}; built in: proj-<dim> (e.g. proj-256)"
        + (f", registered: {sorted(_FACTORIES)}" if _FACTORIES else ""))
