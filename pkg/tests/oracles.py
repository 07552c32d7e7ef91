"""Reference implementations used to check the real ones.

Everything here is written independently of the package internals: cosine is
computed on raw vectors per query (the store pre-normalizes a matrix
instead), ranking uses Python's stable sort on explicit keys, and pooling is
an exhaustive enumeration. Slow on purpose; used on sizes where slow is fine.
"""

import math


def cosine(a, b):
    num = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return num / (na * nb)


def knn_oracle(rows, query, k):
    """rows: list of (sentence_id, token_index, vector). Returns the top-k
    (sentence_id, token_index, score) under score desc, sid asc, tok asc."""
    scored = [(sid, tok, cosine(vec, query)) for sid, tok, vec in rows]
    scored.sort(key=lambda t: (-t[2], t[0], t[1]))
    return scored[:k]


def knn_oracle_numpy(rows, query, k):
    """Same contract as knn_oracle, numpy for the dot products only; keeps
    the independent raw-cosine formulation and Python sort."""
    import numpy as np

    mat = np.array([vec for _, _, vec in rows], dtype=np.float64)
    q = np.asarray(query, dtype=np.float64)
    scores = (mat @ q) / (np.linalg.norm(mat, axis=1) * np.linalg.norm(q))
    scored = [(rows[i][0], rows[i][1], float(scores[i])) for i in range(len(rows))]
    scored.sort(key=lambda t: (-t[2], t[0], t[1]))
    return scored[:k]


def token_demo_oracle(rows, queries, K, k):
    """Exhaustive version of entity-level demonstration retrieval.

    For every query vector rank the entire store, take the K best, pool all
    hits keeping each record's best score, rank the pool, walk down
    collecting distinct sentence ids until k.
    """
    pool = {}
    for q in queries:
        for sid, tok, score in knn_oracle(rows, q, K):
            key = (sid, tok)
            if key not in pool or score > pool[key]:
                pool[key] = score
    ranked = sorted(pool.items(), key=lambda kv: (-kv[1], kv[0][0], kv[0][1]))
    out = []
    for (sid, _), _ in ranked:
        if sid not in out:
            out.append(sid)
        if len(out) == k:
            break
    return out


def merge_oracle(spans, priority):
    """Flat-mode merge by repeated best-pick: repeatedly take the longest
    span (ties: higher-priority type, then earlier start) that does not
    overlap anything already kept. spans: (start, end, type) triples."""
    remaining = sorted(
        spans, key=lambda s: (-(s[1] - s[0]), priority.index(s[2]), s[0], s[1])
    )
    kept = []
    for cand in remaining:
        if all(cand[1] < x[0] or x[1] < cand[0] for x in kept):
            kept.append(cand)
    return sorted(kept)


def prf_oracle(tp, fp, fn):
    p = 1.0 if tp + fp == 0 else tp / (tp + fp)
    r = 1.0 if tp + fn == 0 else tp / (tp + fn)
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f
