"""Slice-level nearest-neighbor indexes.

Two interchangeable backends answer cosine top-k queries over the
slices of a corpus: a brute-force exact index (the reference answer)
and a navigable small-world graph for sublinear search. Both return
hits sorted by score descending with ties broken by (volume_id,
slice_index) ascending, and both support excluding one volume's slices
from the answer, which the retrieval layer uses to drop self-matches.

Built indexes are immutable; concurrent ``knn`` calls are safe.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Protocol

import numpy as np

from . import hnsw
from .corpus import Corpus, VolumeRecord
from .errors import FormatError, QueryError, ValidationError

INDEX_MODES = ("exact", "hnsw")
INDEX_FORMAT_VERSION = 1

#: Predicate deciding whether a slice participates (e.g. organ slices only).
SliceFilter = Callable[[VolumeRecord, int], bool]


def organ_slices_only(volume: VolumeRecord, slice_index: int) -> bool:
    """The canonical segmentation filter: keep slices containing the organ."""
    return slice_index in volume.organ_slice_indices


class SliceHit(NamedTuple):
    """One retrieved slice with its cosine score."""

    volume_id: str
    slice_index: int
    score: float


@dataclass(frozen=True)
class IndexConfig:
    """Index backend and graph parameters."""

    mode: str = "hnsw"
    m: int = 32
    ef_construction: int = 200
    ef_search: int = 128
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in INDEX_MODES:
            raise ValidationError(f"mode must be one of {INDEX_MODES}, got {self.mode!r}")
        if self.m < 2:
            raise ValidationError(f"m must be >= 2, got {self.m}")
        if self.ef_construction < self.m:
            raise ValidationError("ef_construction must be >= m")
        if self.ef_search < 1:
            raise ValidationError("ef_search must be >= 1")

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, raw: dict) -> "IndexConfig":
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown index config keys: {sorted(unknown)}")
        return cls(**raw)


class SliceIndex(Protocol):
    """What the retrieval layer needs from an index backend."""

    config: IndexConfig
    dim: int

    def __len__(self) -> int: ...

    def knn(self, query: np.ndarray, k: int,
            exclude_volume: str | None = None) -> list[SliceHit]: ...

    def volume_slice_count(self, volume_id: str) -> int: ...


class _BaseIndex:
    def __init__(self, vectors: np.ndarray, volume_ids: list[str],
                 vol_codes: np.ndarray, slice_indices: np.ndarray,
                 config: IndexConfig):
        self._vectors = vectors
        self._volume_ids = volume_ids  # sorted unique; position == code
        self._vol_codes = vol_codes
        self._slice_indices = slice_indices
        self.config = config
        self.dim = int(vectors.shape[1])
        # rows of one volume are contiguous because builds walk sorted ids
        self._row_spans: dict[str, tuple[int, int]] = {}
        starts = np.flatnonzero(np.diff(vol_codes, prepend=-1))
        stops = np.append(starts[1:], len(vol_codes))
        for start, stop in zip(starts, stops):
            self._row_spans[volume_ids[int(vol_codes[start])]] = (int(start), int(stop))
        vectors.setflags(write=False)

    def __len__(self) -> int:
        return int(self._vectors.shape[0])

    def volume_slice_count(self, volume_id: str) -> int:
        span = self._row_spans.get(volume_id)
        return 0 if span is None else span[1] - span[0]

    def _prepare_query(self, query: np.ndarray, k: int) -> np.ndarray:
        if k < 1:
            raise QueryError(f"k must be >= 1, got {k}")
        query = np.asarray(query, dtype=np.float64).reshape(-1)
        if query.shape[0] != self.dim:
            raise QueryError(f"query has dim {query.shape[0]}, index has dim {self.dim}")
        if not np.all(np.isfinite(query)):
            raise QueryError("query contains non-finite components")
        norm = float(np.linalg.norm(query))
        if norm == 0.0:
            raise QueryError("query has zero norm")
        if abs(norm - 1.0) > 1e-6:
            query = query / norm
        return query

    def _allowed_mask(self, exclude_volume: str | None) -> np.ndarray | None:
        if exclude_volume is None:
            return None
        span = self._row_spans.get(exclude_volume)
        if span is None:
            return None
        mask = np.ones(len(self), dtype=bool)
        mask[span[0]:span[1]] = False
        return mask

    def _hits_from_rows(self, rows: np.ndarray, scores: np.ndarray, k: int) -> list[SliceHit]:
        """Order candidate rows by (-score, volume_id, slice_index) and take ``k``."""
        order = np.lexsort((self._slice_indices[rows], self._vol_codes[rows], -scores))
        out = []
        for t in order[:k]:
            row = int(rows[t])
            out.append(SliceHit(self._volume_ids[int(self._vol_codes[row])],
                                int(self._slice_indices[row]),
                                float(scores[t])))
        return out

    def _rescore(self, rows: np.ndarray, query64: np.ndarray) -> np.ndarray:
        return self._vectors[rows] @ query64


class ExactIndex(_BaseIndex):
    """Brute-force cosine top-k; the ground truth the graph is measured against."""

    def knn(self, query: np.ndarray, k: int,
            exclude_volume: str | None = None) -> list[SliceHit]:
        query64 = self._prepare_query(query, k)
        scores = self._vectors @ query64
        mask = self._allowed_mask(exclude_volume)
        available = len(self) if mask is None else int(mask.sum())
        take = min(k, available)
        if take == 0:
            return []
        if mask is not None:
            scores = np.where(mask, scores, -np.inf)
        # boundary value of the k-th best, then every row tied with it
        bound = np.partition(scores, len(scores) - take)[len(scores) - take]
        rows = np.flatnonzero(scores >= bound)
        return self._hits_from_rows(rows, scores[rows], take)


class HnswIndex(_BaseIndex):
    """Graph-backed approximate cosine top-k."""

    def __init__(self, vectors, volume_ids, vol_codes, slice_indices, config,
                 graph: hnsw.HnswGraph | None = None):
        super().__init__(vectors, volume_ids, vol_codes, slice_indices, config)
        if graph is None:
            graph = hnsw.HnswGraph(self._vectors, config.m, config.ef_construction,
                                   config.seed)
        self._graph = graph

    def knn(self, query: np.ndarray, k: int,
            exclude_volume: str | None = None) -> list[SliceHit]:
        query64 = self._prepare_query(query, k)
        excluded = 0 if exclude_volume is None else self.volume_slice_count(exclude_volume)
        ef = max(self.config.ef_search, k + excluded)
        ef = min(ef, len(self))
        rows, _ = self._graph.search(query64.astype(np.float32), ef)
        if exclude_volume is not None:
            span = self._row_spans.get(exclude_volume)
            if span is not None:
                rows = rows[(rows < span[0]) | (rows >= span[1])]
        if rows.size == 0:
            return []
        return self._hits_from_rows(rows, self._rescore(rows, query64), k)


def build_index(corpus: Corpus, config: IndexConfig | None = None,
                slice_filter: SliceFilter | None = None) -> SliceIndex:
    """Assemble the slice matrix of ``corpus`` and build the configured index.

    Volumes are walked in ascending id order, slices ascending, with
    ``slice_filter`` deciding membership. Same corpus, config, and
    filter always produce the same index.
    """
    config = config or IndexConfig()
    vectors = []
    codes = []
    slice_indices = []
    volume_ids = []
    for code, record in enumerate(corpus):
        volume_ids.append(record.volume_id)
        for index in range(record.num_slices):
            if slice_filter is not None and not slice_filter(record, index):
                continue
            vectors.append(record.embeddings[index])
            codes.append(code)
            slice_indices.append(index)
    if not vectors:
        raise ValidationError("index would be empty (filter removed every slice)")

    matrix = np.vstack(vectors).astype(np.float32, copy=False)
    vol_codes = np.asarray(codes, dtype=np.int32)
    slices = np.asarray(slice_indices, dtype=np.int32)
    cls = ExactIndex if config.mode == "exact" else HnswIndex
    return cls(matrix, volume_ids, vol_codes, slices, config)


def save_index(index: SliceIndex, path: str | Path) -> None:
    """Persist an index as an .npz archive with a versioned header."""
    path = Path(path)
    payload: dict[str, np.ndarray] = {
        "index_format_version": np.int64(INDEX_FORMAT_VERSION),
        "config_json": np.frombuffer(
            json.dumps(index.config.to_json_dict()).encode("utf-8"), dtype=np.uint8),
        "vectors": index._vectors,
        "volume_ids": np.asarray(index._volume_ids),
        "vol_codes": index._vol_codes,
        "slice_indices": index._slice_indices,
    }
    if isinstance(index, HnswIndex):
        for key, value in index._graph.state_arrays().items():
            payload[f"graph_{key}"] = value
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **payload)
    tmp.replace(path)


def load_index(path: str | Path) -> SliceIndex:
    path = Path(path)
    try:
        archive = np.load(path, allow_pickle=False)
    except FileNotFoundError:
        raise FormatError(f"index file not found: {path}") from None
    except (ValueError, OSError) as exc:
        raise FormatError(f"{path}: not a readable index archive ({exc})") from None
    with archive:
        try:
            version = int(archive["index_format_version"])
            if version != INDEX_FORMAT_VERSION:
                raise FormatError(f"{path}: unsupported index format version {version}")
            config = IndexConfig.from_json_dict(
                json.loads(bytes(archive["config_json"]).decode("utf-8")))
            vectors = np.ascontiguousarray(archive["vectors"], dtype=np.float32)
            volume_ids = [str(v) for v in archive["volume_ids"]]
            vol_codes = np.asarray(archive["vol_codes"], np.int32)
            slice_indices = np.asarray(archive["slice_indices"], np.int32)
            if config.mode == "exact":
                return ExactIndex(vectors, volume_ids, vol_codes, slice_indices, config)
            state = {key[len("graph_"):]: archive[key]
                     for key in archive.files if key.startswith("graph_")}
            graph = hnsw.HnswGraph.restore(vectors, config.m, config.ef_construction,
                                           config.seed, state)
            return HnswIndex(vectors, volume_ids, vol_codes, slice_indices, config,
                             graph=graph)
        except KeyError as exc:
            raise FormatError(f"{path}: index archive missing field {exc}") from None


def exact_config(seed: int = 0) -> IndexConfig:
    """Convenience: exact-mode config (graph parameters ignored)."""
    return IndexConfig(mode="exact", seed=seed)


def as_mode(config: IndexConfig, mode: str) -> IndexConfig:
    """The same configuration with a different backend mode."""
    return replace(config, mode=mode)
