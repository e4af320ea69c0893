"""Independent reference implementations the tests check the engine against.

Everything here is deliberately written the slow, obvious way: python
loops, per-pair dot products, explicit enumeration. None of it shares
code with the package.
"""

from __future__ import annotations

import itertools

import numpy as np


def oracle_knn(corpus, query, k, exclude=None, slice_filter=None):
    """Brute-force top-k slices: sort every slice by (-score, volume_id, slice_index)."""
    query = np.asarray(query, dtype=np.float64)
    scored = []
    for volume in corpus:
        if exclude is not None and volume.volume_id == exclude:
            continue
        for i in range(volume.num_slices):
            if slice_filter is not None and not slice_filter(volume, i):
                continue
            score = float(np.dot(volume.embeddings[i].astype(np.float64), query))
            scored.append((-score, volume.volume_id, i))
    scored.sort()
    return [(vid, idx, -neg) for neg, vid, idx in scored[:k]]


def oracle_hit_table(corpus_db, query_volume, k, query_slice_filter=None):
    """Nested-loop hit accumulation over a database corpus (self always excluded)."""
    table = {}
    for i in range(query_volume.num_slices):
        if query_slice_filter is not None and not query_slice_filter(query_volume, i):
            continue
        hits = oracle_knn(corpus_db, query_volume.embeddings[i], k,
                          exclude=query_volume.volume_id)
        for vid, _, score in hits:
            count, best, total = table.get(vid, (0, float("-inf"), 0.0))
            table[vid] = (count + 1, max(best, score), total + score)
    return table


def oracle_rank(table, flavor, limit):
    """Sort an oracle hit table the way one of the three aggregations does."""
    if flavor == "count_base":
        key = lambda kv: (-kv[1][0], -kv[1][2], kv[0])
        score = lambda st: float(st[0])
    elif flavor == "max_score":
        key = lambda kv: (-kv[1][1], -kv[1][0], kv[0])
        score = lambda st: st[1]
    elif flavor == "sum_sim":
        key = lambda kv: (-kv[1][2], -kv[1][0], kv[0])
        score = lambda st: st[2]
    else:
        raise ValueError(flavor)
    return [(vid, score(st)) for vid, st in sorted(table.items(), key=key)[:limit]]


def oracle_similarity(query_matrix, candidate_matrix):
    """Pairwise cosines via per-pair np.dot in float64."""
    n, m = len(query_matrix), len(candidate_matrix)
    out = np.empty((n, m))
    for i in range(n):
        qi = np.asarray(query_matrix[i], dtype=np.float64)
        for j in range(m):
            out[i, j] = float(np.dot(qi, np.asarray(candidate_matrix[j], np.float64)))
    return out


def oracle_late_interaction(query_matrix, candidate_matrix):
    """Double loop: per query slice take the best candidate similarity, then sum."""
    total = 0.0
    for i in range(len(query_matrix)):
        qi = np.asarray(query_matrix[i], dtype=np.float64)
        best = float("-inf")
        for j in range(len(candidate_matrix)):
            s = float(np.dot(qi, np.asarray(candidate_matrix[j], np.float64)))
            if s > best:
                best = s
        total += best
    return total


def oracle_rrf(lists, k):
    """Reciprocal-rank fusion by explicit enumeration over every list entry."""
    scores = {}
    for ranked in lists:
        for position, (vid, _) in enumerate(ranked, start=1):
            scores[vid] = scores.get(vid, 0.0) + 1.0 / (k + position)
    return sorted(scores.items(), key=lambda item: (-item[1], item[0]))


def oracle_wilcoxon(a, b):
    """Exact two-sided signed-rank p-value by enumerating all 2^m sign vectors.

    Ranks come from scipy (an independent route); the p-value is
    min(1, 2 * count(W+ <= min(W+, W-)) / 2^m) using doubled integer ranks.
    """
    from scipy.stats import rankdata

    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    d = d[d != 0.0]
    m = d.size
    if m == 0:
        return 1.0
    ranks2 = np.rint(2.0 * rankdata(np.abs(d))).astype(int)
    w_plus2 = int(ranks2[d > 0].sum())
    total2 = int(ranks2.sum())
    w_min2 = min(w_plus2, total2 - w_plus2)
    count = 0
    for signs in itertools.product((0, 1), repeat=m):
        w2 = sum(r for r, s in zip(ranks2, signs) if s)
        if w2 <= w_min2:
            count += 1
    return min(1.0, 2.0 * count / (1 << m))
