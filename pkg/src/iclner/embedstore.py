"""Exact nearest-neighbour retrieval over precomputed embeddings.

Stores are built from vector records carrying provenance (sentence id, and
token index for token-level stores). Similarity is cosine; vectors are
L2-normalized once at build time so a query is a single matrix-vector
product. No approximate index: scans are exact by design and results carry
a total order (score desc, then sentence id asc, then token index asc) so
retrieval is reproducible bit-for-bit.

The on-disk format is EMB1: little-endian, magic ``EMB1``, u32 dim,
u32 level (0 sentence, 1 token), u64 record count, then per record
u32 sentence_id, u32 token_index (0xFFFFFFFF at sentence level) and
dim float32 components.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

SENTENCE_LEVEL = "sentence"
TOKEN_LEVEL = "token"
NO_TOKEN = 0xFFFFFFFF

MAGIC = b"EMB1"
HEADER = struct.Struct("<4sIIQ")
ZERO_NORM_EPS = 1e-12


class EmbedstoreError(DataError):
    pass


class DimensionMismatch(EmbedstoreError):
    pass


class ZeroVector(EmbedstoreError):
    pass


class EmptyQuery(EmbedstoreError):
    pass


class KTooLarge(EmbedstoreError):
    pass


class Emb1FormatError(EmbedstoreError):
    pass


class LevelMismatch(EmbedstoreError):
    pass


@dataclass(frozen=True, eq=False)
class VectorRecord:
    """One embedding with provenance. token_index is NO_TOKEN for
    sentence-level records."""

    sentence_id: int
    token_index: int
    vector: np.ndarray

    def key(self) -> tuple[int, int]:
        return (self.sentence_id, self.token_index)


@dataclass(frozen=True, eq=False)
class Neighbor:
    record: VectorRecord
    score: float

    @property
    def sentence_id(self) -> int:
        return self.record.sentence_id

    @property
    def token_index(self) -> int:
        return self.record.token_index


class Datastore:
    """Immutable exact-kNN store over records of one level."""

    def __init__(self, records: Sequence[VectorRecord]):
        if not records:
            raise EmbedstoreError("cannot build an empty store")
        levels = {r.token_index == NO_TOKEN for r in records}
        if len(levels) != 1:
            raise EmbedstoreError("records mix sentence-level and token-level entries")
        self.level = SENTENCE_LEVEL if levels.pop() else TOKEN_LEVEL
        dims = {int(np.asarray(r.vector).shape[-1]) for r in records}
        if len(dims) != 1:
            raise DimensionMismatch(f"records carry mixed dimensions {sorted(dims)}")
        self.dim = dims.pop()
        matrix = np.array([np.asarray(r.vector, dtype=np.float64).ravel() for r in records])
        if matrix.shape != (len(records), self.dim):
            raise DimensionMismatch("records are not flat vectors of one dimension")
        norms = np.linalg.norm(matrix, axis=1)
        bad = np.nonzero(norms < ZERO_NORM_EPS)[0]
        if bad.size:
            r = records[int(bad[0])]
            raise ZeroVector(
                f"record (sentence {r.sentence_id}, token {r.token_index}) has near-zero norm"
            )
        self._matrix = matrix / norms[:, None]
        self._records = tuple(records)
        self._sids = np.array([r.sentence_id for r in records], dtype=np.int64)
        self._toks = np.array([r.token_index for r in records], dtype=np.int64)

    @property
    def size(self) -> int:
        return len(self._records)

    def _normalize_query(self, vector) -> np.ndarray:
        q = np.asarray(vector, dtype=np.float64).ravel()
        if q.shape[0] != self.dim:
            raise DimensionMismatch(f"query has dim {q.shape[0]}, store has dim {self.dim}")
        norm = float(np.linalg.norm(q))
        if norm < ZERO_NORM_EPS:
            raise ZeroVector("query vector has near-zero norm")
        return q / norm

    def query(self, vector, k: int) -> list[Neighbor]:
        """k exact nearest records by cosine, total order
        (score desc, sentence_id asc, token_index asc)."""
        if k < 0:
            raise KTooLarge(f"k must be non-negative, got {k}")
        if k > self.size:
            raise KTooLarge(f"k={k} exceeds store size {self.size}")
        if k == 0:
            return []
        q = self._normalize_query(vector)
        scores = self._matrix @ q
        # lexsort: last key is primary
        order = np.lexsort((self._toks, self._sids, -scores))
        top = order[:k]
        return [Neighbor(record=self._records[i], score=float(scores[i])) for i in top]

    def knn_sentences(self, vector, k: int) -> list[Neighbor]:
        """Sentence-level kNN; requires a sentence-level store."""
        if self.level != SENTENCE_LEVEL:
            raise LevelMismatch("knn_sentences needs a sentence-level store")
        return self.query(vector, k)

    def retrieve_token_demos(
        self, query_vectors: Sequence[tuple[int, object]], K: int, k: int
    ) -> list[int]:
        """Entity-level demonstration retrieval.

        Each query (one per candidate token of the input sentence, given as
        (token_index, vector) pairs; the index is provenance only) pulls its
        K nearest token records. The pooled hits are deduplicated per record
        keeping the best score, ranked by the total order, and scanned top
        down collecting distinct sentence ids until k are found (fewer if the
        pool covers fewer sentences). Growing k only ever extends the
        returned ranking.
        """
        if self.level != TOKEN_LEVEL:
            raise LevelMismatch("retrieve_token_demos needs a token-level store")
        if not query_vectors:
            raise EmptyQuery("no query vectors given")
        if k < 0:
            raise KTooLarge(f"k must be non-negative, got {k}")
        if K <= 0 or K > self.size:
            raise KTooLarge(f"per-token K={K} must be in 1..{self.size}")
        best: dict[tuple[int, int], Neighbor] = {}
        for _, vec in query_vectors:
            for nb in self.query(vec, K):
                key = nb.record.key()
                cur = best.get(key)
                if cur is None or nb.score > cur.score:
                    best[key] = nb
        pooled = sorted(
            best.values(), key=lambda nb: (-nb.score, nb.sentence_id, nb.token_index)
        )
        out: list[int] = []
        seen: set[int] = set()
        for nb in pooled:
            if nb.sentence_id in seen:
                continue
            seen.add(nb.sentence_id)
            out.append(nb.sentence_id)
            if len(out) == k:
                break
        return out


def build_store(records: Sequence[VectorRecord]) -> Datastore:
    return Datastore(records)


def random_demos(corpus_size: int, k: int, seed: int) -> list[int]:
    """k distinct sentence ids drawn uniformly without replacement from
    range(corpus_size), reproducible for a given seed."""
    if k < 0 or k > corpus_size:
        raise KTooLarge(f"k={k} not in 0..{corpus_size}")
    return random.Random(seed).sample(range(corpus_size), k)


def write_emb1(
    path: str | Path, dim: int, level: str, records: Iterable[tuple[int, int, Sequence[float]]]
) -> int:
    """Write records of (sentence_id, token_index, vector) to an EMB1 file.
    Returns the record count. Pass token_index NO_TOKEN for sentence level."""
    if level not in (SENTENCE_LEVEL, TOKEN_LEVEL):
        raise Emb1FormatError(f"bad level {level!r}")
    if dim <= 0:
        raise Emb1FormatError(f"bad dimension {dim}")
    rows = list(records)
    level_code = 0 if level == SENTENCE_LEVEL else 1
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(HEADER.pack(MAGIC, dim, level_code, len(rows)))
        rec = struct.Struct("<II")
        for sid, tok, vec in rows:
            arr = np.asarray(vec, dtype=np.float32)
            if arr.shape != (dim,):
                raise Emb1FormatError(f"vector for sentence {sid} has shape {arr.shape}")
            fh.write(rec.pack(sid, tok))
            fh.write(arr.tobytes())
    return len(rows)


def read_emb1(path: str | Path) -> tuple[str, int, list[VectorRecord]]:
    """Read and validate an EMB1 file. Returns (level, dim, records).

    Validation covers the magic, a positive dimension, a known level code,
    an exact byte length for the declared count, and token-index sentinel
    consistency with the level.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < HEADER.size:
        raise Emb1FormatError(f"{path}: truncated header")
    magic, dim, level_code, count = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise Emb1FormatError(f"{path}: bad magic {magic!r}")
    if dim == 0:
        raise Emb1FormatError(f"{path}: zero dimension")
    if level_code not in (0, 1):
        raise Emb1FormatError(f"{path}: unknown level code {level_code}")
    level = SENTENCE_LEVEL if level_code == 0 else TOKEN_LEVEL
    record_size = 8 + 4 * dim
    want = HEADER.size + count * record_size
    if len(data) != want:
        raise Emb1FormatError(
            f"{path}: size is {len(data)} bytes, header implies {want}"
        )
    dtype = np.dtype(
        [("sid", "<u4"), ("tok", "<u4"), ("vec", "<f4", (dim,))]
    )
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=HEADER.size)
    records = []
    for row in raw:
        sid, tok = int(row["sid"]), int(row["tok"])
        if level == SENTENCE_LEVEL and tok != NO_TOKEN:
            raise Emb1FormatError(
                f"{path}: sentence-level record for sentence {sid} has token index {tok}"
            )
        if level == TOKEN_LEVEL and tok == NO_TOKEN:
            raise Emb1FormatError(
                f"{path}: token-level record for sentence {sid} has the sentence sentinel"
            )
        records.append(
            VectorRecord(sentence_id=sid, token_index=tok, vector=np.array(row["vec"]))
        )
    return level, dim, records


def load_store(path: str | Path, expect_level: str | None = None) -> Datastore:
    level, _, records = read_emb1(path)
    if expect_level is not None and level != expect_level:
        raise LevelMismatch(f"{path}: is {level}-level, expected {expect_level}")
    return build_store(records)
