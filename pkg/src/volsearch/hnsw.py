"""Hierarchical navigable small-world graph over unit vectors.

Similarity is the dot product (cosine on unit inputs), so heaps are
ordered by similarity rather than distance. The numba kernels below
cover the hot paths: best-first layer search, diversity-based neighbor
selection, and backlink pruning. Layer membership is drawn from a
seeded geometric-like distribution, so builds are fully deterministic.

Graph shape follows the usual conventions: every node keeps at most
``m`` links on layers >= 1 and ``2 * m`` on layer 0.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

#: Hard ceiling on layer membership; reachable only for absurd draws.
MAX_LEVEL = 48


@njit(cache=True, nogil=True)
def _dot_rows(vectors, i, j):
    total = np.float32(0.0)
    for d in range(vectors.shape[1]):
        total += vectors[i, d] * vectors[j, d]
    return total


@njit(cache=True, nogil=True)
def _dot_query(vectors, i, query):
    total = np.float32(0.0)
    for d in range(vectors.shape[1]):
        total += vectors[i, d] * query[d]
    return total


@njit(cache=True, nogil=True)
def _greedy_descend(vectors, adj, cnt, query, entry, entry_sim):
    """Hill-climb to the locally best node of one layer (ef = 1)."""
    best = entry
    best_sim = entry_sim
    improved = True
    while improved:
        improved = False
        for e in range(cnt[best]):
            nb = adj[best, e]
            s = _dot_query(vectors, nb, query)
            if s > best_sim:
                best_sim = s
                best = nb
                improved = True
    return best, best_sim


@njit(cache=True, nogil=True)
def _search_layer(vectors, adj, cnt, query, entry_ids, ef):
    """Best-first search of one layer; returns up to ``ef`` hits, similarity descending."""
    n = vectors.shape[0]
    visited = np.zeros(n, np.uint8)
    # candidate max-heap stores negated similarity; result min-heap keeps the ef best
    cand_sims = np.empty(n + 1, np.float32)
    cand_ids = np.empty(n + 1, np.int32)
    res_sims = np.empty(ef + 1, np.float32)
    res_ids = np.empty(ef + 1, np.int32)
    ncand = 0
    nres = 0

    for t in range(entry_ids.shape[0]):
        e = entry_ids[t]
        if visited[e]:
            continue
        visited[e] = 1
        s = _dot_query(vectors, e, query)

        cand_sims[ncand] = -s
        cand_ids[ncand] = e
        j = ncand
        ncand += 1
        while j > 0:
            p = (j - 1) >> 1
            if cand_sims[j] < cand_sims[p]:
                cand_sims[j], cand_sims[p] = cand_sims[p], cand_sims[j]
                cand_ids[j], cand_ids[p] = cand_ids[p], cand_ids[j]
                j = p
            else:
                break

        res_sims[nres] = s
        res_ids[nres] = e
        j = nres
        nres += 1
        while j > 0:
            p = (j - 1) >> 1
            if res_sims[j] < res_sims[p]:
                res_sims[j], res_sims[p] = res_sims[p], res_sims[j]
                res_ids[j], res_ids[p] = res_ids[p], res_ids[j]
                j = p
            else:
                break
        if nres > ef:
            nres -= 1
            res_sims[0] = res_sims[nres]
            res_ids[0] = res_ids[nres]
            j = 0
            while True:
                l = 2 * j + 1
                r = l + 1
                worst = j
                if l < nres and res_sims[l] < res_sims[worst]:
                    worst = l
                if r < nres and res_sims[r] < res_sims[worst]:
                    worst = r
                if worst == j:
                    break
                res_sims[j], res_sims[worst] = res_sims[worst], res_sims[j]
                res_ids[j], res_ids[worst] = res_ids[worst], res_ids[j]
                j = worst

    while ncand > 0:
        top_s = -cand_sims[0]
        top_i = cand_ids[0]
        ncand -= 1
        cand_sims[0] = cand_sims[ncand]
        cand_ids[0] = cand_ids[ncand]
        j = 0
        while True:
            l = 2 * j + 1
            r = l + 1
            small = j
            if l < ncand and cand_sims[l] < cand_sims[small]:
                small = l
            if r < ncand and cand_sims[r] < cand_sims[small]:
                small = r
            if small == j:
                break
            cand_sims[j], cand_sims[small] = cand_sims[small], cand_sims[j]
            cand_ids[j], cand_ids[small] = cand_ids[small], cand_ids[j]
            j = small

        if nres >= ef and top_s < res_sims[0]:
            break

        for e in range(cnt[top_i]):
            nb = adj[top_i, e]
            if visited[nb]:
                continue
            visited[nb] = 1
            s = _dot_query(vectors, nb, query)
            if nres < ef or s > res_sims[0]:
                cand_sims[ncand] = -s
                cand_ids[ncand] = nb
                j = ncand
                ncand += 1
                while j > 0:
                    p = (j - 1) >> 1
                    if cand_sims[j] < cand_sims[p]:
                        cand_sims[j], cand_sims[p] = cand_sims[p], cand_sims[j]
                        cand_ids[j], cand_ids[p] = cand_ids[p], cand_ids[j]
                        j = p
                    else:
                        break

                res_sims[nres] = s
                res_ids[nres] = nb
                j = nres
                nres += 1
                while j > 0:
                    p = (j - 1) >> 1
                    if res_sims[j] < res_sims[p]:
                        res_sims[j], res_sims[p] = res_sims[p], res_sims[j]
                        res_ids[j], res_ids[p] = res_ids[p], res_ids[j]
                        j = p
                    else:
                        break
                if nres > ef:
                    nres -= 1
                    res_sims[0] = res_sims[nres]
                    res_ids[0] = res_ids[nres]
                    j = 0
                    while True:
                        l = 2 * j + 1
                        r = l + 1
                        worst = j
                        if l < nres and res_sims[l] < res_sims[worst]:
                            worst = l
                        if r < nres and res_sims[r] < res_sims[worst]:
                            worst = r
                        if worst == j:
                            break
                        res_sims[j], res_sims[worst] = res_sims[worst], res_sims[j]
                        res_ids[j], res_ids[worst] = res_ids[worst], res_ids[j]
                        j = worst

    # drain the min-heap back to front for a similarity-descending result
    out_ids = np.empty(nres, np.int32)
    out_sims = np.empty(nres, np.float32)
    for i in range(nres - 1, -1, -1):
        out_ids[i] = res_ids[0]
        out_sims[i] = res_sims[0]
        nres -= 1
        res_sims[0] = res_sims[nres]
        res_ids[0] = res_ids[nres]
        j = 0
        while True:
            l = 2 * j + 1
            r = l + 1
            worst = j
            if l < nres and res_sims[l] < res_sims[worst]:
                worst = l
            if r < nres and res_sims[r] < res_sims[worst]:
                worst = r
            if worst == j:
                break
            res_sims[j], res_sims[worst] = res_sims[worst], res_sims[j]
            res_ids[j], res_ids[worst] = res_ids[worst], res_ids[j]
            j = worst
    return out_ids, out_sims


@njit(cache=True, nogil=True)
def _select_neighbors(vectors, cand_ids, cand_sims, m):
    """Diversity heuristic: keep candidates closer to the target than to
    anything already kept; pruned candidates fill leftover slots."""
    k = cand_ids.shape[0]
    if k <= m:
        order = np.argsort(-cand_sims)
        out = np.empty(k, np.int32)
        for i in range(k):
            out[i] = cand_ids[order[i]]
        return out
    order = np.argsort(-cand_sims)
    chosen = np.empty(m, np.int32)
    dropped = np.empty(k, np.int32)
    nchosen = 0
    ndropped = 0
    for t in range(k):
        if nchosen == m:
            break
        c = cand_ids[order[t]]
        cs = cand_sims[order[t]]
        keep = True
        for j in range(nchosen):
            if _dot_rows(vectors, c, chosen[j]) > cs:
                keep = False
                break
        if keep:
            chosen[nchosen] = c
            nchosen += 1
        else:
            dropped[ndropped] = c
            ndropped += 1
    t = 0
    while nchosen < m and t < ndropped:
        chosen[nchosen] = dropped[t]
        nchosen += 1
        t += 1
    return chosen[:nchosen]


@njit(cache=True, nogil=True)
def _connect(vectors, adj, cnt, new_id, chosen, m_max):
    """Link ``new_id`` to ``chosen`` bidirectionally, pruning overfull rows."""
    for j in range(chosen.shape[0]):
        adj[new_id, j] = chosen[j]
    cnt[new_id] = chosen.shape[0]
    for j in range(chosen.shape[0]):
        nb = chosen[j]
        if cnt[nb] < m_max:
            adj[nb, cnt[nb]] = new_id
            cnt[nb] += 1
        else:
            total = cnt[nb] + 1
            ids = np.empty(total, np.int32)
            sims = np.empty(total, np.float32)
            for e in range(cnt[nb]):
                ids[e] = adj[nb, e]
                sims[e] = _dot_rows(vectors, ids[e], nb)
            ids[total - 1] = new_id
            sims[total - 1] = _dot_rows(vectors, new_id, nb)
            keep = _select_neighbors(vectors, ids, sims, m_max)
            cnt[nb] = keep.shape[0]
            for e in range(keep.shape[0]):
                adj[nb, e] = keep[e]


def draw_levels(count: int, m: int, seed: int) -> np.ndarray:
    """Seeded layer memberships: level = floor(-ln(U) / ln(m))."""
    rng = np.random.default_rng(seed)
    u = rng.random(count)
    ml = 1.0 / math.log(m)
    levels = np.floor(-np.log1p(-u) * ml).astype(np.int32)
    return np.minimum(levels, MAX_LEVEL)


class HnswGraph:
    """Built navigable-small-world graph; immutable once constructed."""

    def __init__(self, vectors: np.ndarray, m: int, ef_construction: int, seed: int,
                 _restore: dict | None = None):
        if vectors.ndim != 2 or vectors.dtype != np.float32:
            raise ValueError("vectors must be a 2-D float32 array")
        self.vectors = np.ascontiguousarray(vectors)
        self.m = int(m)
        self.m0 = 2 * int(m)
        self.ef_construction = int(ef_construction)
        self.seed = int(seed)
        if _restore is not None:
            self.levels = _restore["levels"]
            self.adj0 = _restore["adj0"]
            self.cnt0 = _restore["cnt0"]
            self.upper_adj = _restore["upper_adj"]
            self.upper_cnt = _restore["upper_cnt"]
            self.entry = int(_restore["entry"])
            self.top_level = int(_restore["top_level"])
        else:
            self._build()

    def _build(self) -> None:
        n = self.vectors.shape[0]
        self.levels = draw_levels(n, self.m, self.seed)
        self.adj0 = np.full((n, self.m0), -1, np.int32)
        self.cnt0 = np.zeros(n, np.int32)
        self.upper_adj: list[np.ndarray] = []
        self.upper_cnt: list[np.ndarray] = []
        self.entry = 0
        self.top_level = int(self.levels[0])
        self._ensure_layers(self.top_level, n)

        for node in range(1, n):
            self._insert(node)

    def _ensure_layers(self, level: int, n: int) -> None:
        while len(self.upper_adj) < level:
            self.upper_adj.append(np.full((n, self.m), -1, np.int32))
            self.upper_cnt.append(np.zeros(n, np.int32))

    def _layer(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        if level == 0:
            return self.adj0, self.cnt0
        return self.upper_adj[level - 1], self.upper_cnt[level - 1]

    def _insert(self, node: int) -> None:
        vectors = self.vectors
        level = int(self.levels[node])
        query = vectors[node]

        ep = self.entry
        ep_sim = float(_dot_query(vectors, ep, query))
        for layer in range(self.top_level, level, -1):
            adj, cnt = self._layer(layer)
            ep, ep_sim = _greedy_descend(vectors, adj, cnt, query, ep, ep_sim)

        entry_ids = np.array([ep], dtype=np.int32)
        for layer in range(min(level, self.top_level), -1, -1):
            adj, cnt = self._layer(layer)
            ids, sims = _search_layer(vectors, adj, cnt, query, entry_ids,
                                      self.ef_construction)
            chosen = _select_neighbors(vectors, ids, sims, self.m)
            m_max = self.m0 if layer == 0 else self.m
            _connect(vectors, adj, cnt, node, chosen, m_max)
            entry_ids = ids

        if level > self.top_level:
            self._ensure_layers(level, vectors.shape[0])
            self.entry = node
            self.top_level = level

    def search(self, query: np.ndarray, ef: int) -> tuple[np.ndarray, np.ndarray]:
        """Approximate nearest rows for a unit query; similarity descending."""
        vectors = self.vectors
        query = np.ascontiguousarray(query, dtype=np.float32)
        ep = self.entry
        ep_sim = float(_dot_query(vectors, ep, query))
        for layer in range(self.top_level, 0, -1):
            adj, cnt = self._layer(layer)
            ep, ep_sim = _greedy_descend(vectors, adj, cnt, query, ep, ep_sim)
        entry_ids = np.array([ep], dtype=np.int32)
        return _search_layer(vectors, self.adj0, self.cnt0, query, entry_ids, int(ef))

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Graph state for persistence (vectors excluded; the index owns them)."""
        state = {
            "levels": self.levels,
            "adj0": self.adj0,
            "cnt0": self.cnt0,
            "entry": np.int64(self.entry),
            "top_level": np.int64(self.top_level),
            "num_upper": np.int64(len(self.upper_adj)),
        }
        for i, (adj, cnt) in enumerate(zip(self.upper_adj, self.upper_cnt)):
            state[f"upper_adj_{i}"] = adj
            state[f"upper_cnt_{i}"] = cnt
        return state

    @classmethod
    def restore(cls, vectors: np.ndarray, m: int, ef_construction: int, seed: int,
                state: dict) -> "HnswGraph":
        num_upper = int(state["num_upper"])
        restore = {
            "levels": np.asarray(state["levels"], np.int32),
            "adj0": np.asarray(state["adj0"], np.int32),
            "cnt0": np.asarray(state["cnt0"], np.int32),
            "upper_adj": [np.asarray(state[f"upper_adj_{i}"], np.int32)
                          for i in range(num_upper)],
            "upper_cnt": [np.asarray(state[f"upper_cnt_{i}"], np.int32)
                          for i in range(num_upper)],
            "entry": state["entry"],
            "top_level": state["top_level"],
        }
        return cls(vectors, m, ef_construction, seed, _restore=restore)
