"""Immutable cosine-similarity vector index with exact top-k queries.

Exact scan, not approximate ANN: scalability in this stack comes from
aggregating the neighborhood, not from index approximation, and exactness
keeps the evidence counts reproducible. Desk-scale repositories (<= 1e5
vectors) are fine for a numpy scan.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, DimensionMismatchError, DuplicateIdError
from .util import dump_json

INDEX_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Neighborhood:
    query_id_or_text: str
    hits: tuple[tuple[str, float], ...]  # (item_id, cosine), sorted desc, ties by id
    k_requested: int


class VectorIndex:
    """Immutable (id, unit vector) collection answering exact top-k by cosine."""

    def __init__(self, ids: Sequence[str], matrix: np.ndarray):
        self.ids: tuple[str, ...] = tuple(ids)
        self.matrix = matrix  # (n, dim), unit-norm rows
        self.dimension = int(matrix.shape[1])
        self._row_of = {item_id: i for i, item_id in enumerate(self.ids)}
        # Lexicographic rank per row: the deterministic tiebreaker for equal scores.
        order = sorted(range(len(self.ids)), key=lambda i: self.ids[i])
        self._tie_rank = np.empty(len(self.ids), dtype=np.int64)
        for rank, row in enumerate(order):
            self._tie_rank[row] = rank

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._row_of

    def vector(self, item_id: str) -> np.ndarray:
        try:
            return self.matrix[self._row_of[item_id]]
        except KeyError:
            raise DataError(f"unknown item id {item_id!r}") from None


def build_index(items: Iterable[tuple[str, np.ndarray]]) -> VectorIndex:
    """Build an index; insertion order is irrelevant to query results."""
    ids: list[str] = []
    vectors: list[np.ndarray] = []
    seen: set[str] = set()
    dim: int | None = None
    for item_id, vec in items:
        if item_id in seen:
            raise DuplicateIdError(f"duplicate item id {item_id!r}")
        seen.add(item_id)
        vec = np.asarray(vec, dtype=np.float64)
        if vec.ndim != 1:
            raise DimensionMismatchError(f"vector for {item_id!r} is not 1-d")
        if dim is None:
            dim = int(vec.shape[0])
        elif vec.shape[0] != dim:
            raise DimensionMismatchError(
                f"vector for {item_id!r} has dimension {vec.shape[0]}, expected {dim}"
            )
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise DataError(f"zero vector for {item_id!r}")
        if abs(norm - 1.0) > 1e-12:  # keep already-unit vectors bit-stable
            vec = vec / norm
        ids.append(item_id)
        vectors.append(vec)
    if not ids:
        raise DataError("cannot build an index from zero items")
    return VectorIndex(ids, np.vstack(vectors))


def top_k(index: VectorIndex, query: np.ndarray, k: int, query_label: str = "") -> Neighborhood:
    """Exact top-k under cosine; ties broken by ascending item id."""
    if k <= 0:
        raise DataError(f"k must be positive, got {k}")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.dimension,):
        raise DimensionMismatchError(
            f"query dimension {query.shape} does not match index dimension {index.dimension}"
        )
    scores = index.matrix @ query
    # Primary key: score descending; secondary: lexicographic id rank ascending.
    order = np.lexsort((index._tie_rank, -scores))
    take = min(k, len(index))
    hits = tuple((index.ids[i], float(scores[i])) for i in order[:take])
    return Neighborhood(query_id_or_text=query_label, hits=hits, k_requested=k)


def save_index(index: VectorIndex, path: str | Path) -> None:
    """Line-delimited JSON: a versioned header line, then one {id, vector} per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "format_version": INDEX_FORMAT_VERSION,
            "kind": "vector_index",
            "dimension": index.dimension,
            "count": len(index),
        }
        fh.write(dump_json(header) + "\n")
        for item_id, row in zip(index.ids, index.matrix):
            fh.write(dump_json({"id": item_id, "vector": [float(x) for x in row]}) + "\n")


def load_index(path: str | Path) -> VectorIndex:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise DataError(f"{path}: empty index file")
        header = json.loads(header_line)
        if header.get("kind") != "vector_index":
            raise DataError(f"{path}: not a vector index file")
        if header.get("format_version") != INDEX_FORMAT_VERSION:
            raise DataError(
                f"{path}: unsupported index format version {header.get('format_version')}"
            )
        items = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            items.append((rec["id"], np.asarray(rec["vector"], dtype=np.float64)))
    index = build_index(items)
    if len(index) != header.get("count"):
        raise DataError(f"{path}: header count {header.get('count')} != {len(index)} records")
    return index
