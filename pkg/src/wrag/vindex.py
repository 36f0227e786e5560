"""Exact (flat) nearest-neighbor index per data source, with persistence.

The index stores unit vectors as float32 and scans all of them on every
search; distances are computed in float64 as squared L2. On unit vectors
this equals 2 - 2*cos and ranks identically to cosine distance. Sealed
indices are read-only and safe for unlimited concurrent searches.

File format (little-endian): magic "WRAG", format version u32, dim u32,
count u64, metric tag u8, then count records of [id_len u16, id bytes,
dim x f32], trailing CRC32 of all preceding bytes.
"""

from __future__ import annotations

import io
import struct
import time
import zlib
from pathlib import Path

import numpy as np

from .errors import (
    BatchItemError,
    CorruptIndexError,
    DimensionMismatchError,
    DuplicateChunkError,
)
from .model import Chunk

MAGIC = b"WRAG"
FORMAT_VERSION = 1
METRIC_L2_NORMALIZED = 1

_HEADER = struct.Struct("<4sIIQB")
_ID_LEN = struct.Struct("<H")


class FlatIndex:
    """Immutable per-source exact nearest-neighbor index."""

    def __init__(self, source: str, dim: int, ids: list[str], matrix: np.ndarray,
                 build_timestamp: float | None = None):
        if matrix.shape != (len(ids), dim):
            raise DimensionMismatchError(
                f"matrix shape {matrix.shape} does not match ({len(ids)}, {dim})"
            )
        if len(set(ids)) != len(ids):
            raise DuplicateChunkError(f"duplicate chunk ids in index for {source!r}")
        self.source = source
        self.dim = dim
        self._ids = list(ids)
        self._id_array = np.asarray(ids, dtype=np.str_) if ids else np.empty(0, dtype=np.str_)
        self._matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        self._matrix.setflags(write=False)
        self.build_timestamp = time.time() if build_timestamp is None else build_timestamp

    def count(self) -> int:
        return len(self._ids)

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def __eq__(self, other) -> bool:
        # Equality ignores the build timestamp: same ids, same order,
        # bit-identical vectors.
        if not isinstance(other, FlatIndex):
            return NotImplemented
        return (
            self.source == other.source
            and self.dim == other.dim
            and self._ids == other._ids
            and self._matrix.shape == other._matrix.shape
            and bool(np.all(self._matrix.view(np.uint32) == other._matrix.view(np.uint32)))
        )

    def search(self, query_vec: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Top-k entries by squared-L2 distance, canonical tie-break.

        Returns at most min(k, count) (chunk_id, raw_distance) pairs sorted
        ascending by distance, ties broken by chunk_id lexicographically.
        """
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        query = np.asarray(query_vec, dtype=np.float64)
        if query.shape != (self.dim,):
            raise DimensionMismatchError(
                f"query dimension {query.shape} does not match index dim {self.dim}"
            )
        n = self.count()
        if n == 0:
            return []
        dots = self._matrix.astype(np.float64) @ query
        q_sq = float(query @ query)
        v_sq = np.einsum(
            "ij,ij->i", self._matrix.astype(np.float64), self._matrix.astype(np.float64)
        )
        dists = np.maximum(q_sq + v_sq - 2.0 * dots, 0.0)
        order = np.lexsort((self._id_array, dists))[: min(k, n)]
        return [(self._ids[i], float(dists[i])) for i in order]


def build_index(source: str, chunks: list[Chunk], embedder) -> FlatIndex:
    """Embed chunks in ingestion order and seal them into a FlatIndex."""
    seen = set()
    for c in chunks:
        if c.source != source:
            raise DimensionMismatchError(
                f"chunk {c.chunk_id!r} belongs to source {c.source!r}, not {source!r}"
            )
        if c.chunk_id in seen:
            raise DuplicateChunkError(f"duplicate chunk_id {c.chunk_id!r}")
        seen.add(c.chunk_id)
    dim = embedder.dim
    if not chunks:
        return FlatIndex(source, dim, [], np.empty((0, dim), dtype=np.float32))
    vectors = np.empty((len(chunks), dim), dtype=np.float32)
    for i, chunk in enumerate(chunks):
        try:
            vectors[i] = embedder.embed(chunk.text)
        except Exception as exc:
            raise BatchItemError(i, exc) from exc
    return FlatIndex(source, dim, [c.chunk_id for c in chunks], vectors)


def save_index(index: FlatIndex, path: str | Path) -> None:
    buf = io.BytesIO()
    buf.write(
        _HEADER.pack(MAGIC, FORMAT_VERSION, index.dim, index.count(), METRIC_L2_NORMALIZED)
    )
    matrix = index.matrix
    for i, chunk_id in enumerate(index.ids):
        raw_id = chunk_id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise CorruptIndexError(f"chunk id too long to persist: {chunk_id[:40]!r}...")
        buf.write(_ID_LEN.pack(len(raw_id)))
        buf.write(raw_id)
        buf.write(matrix[i].tobytes())
    payload = buf.getvalue()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(payload + struct.pack("<I", crc))


def load_index(path: str | Path) -> FlatIndex:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size + 4:
        raise CorruptIndexError(f"{path}: file too short to be an index")
    payload, trailer = data[:-4], data[-4:]
    (stored_crc,) = struct.unpack("<I", trailer)
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
        raise CorruptIndexError(f"{path}: checksum mismatch")
    magic, version, dim, count, metric = _HEADER.unpack_from(payload, 0)
    if magic != MAGIC:
        raise CorruptIndexError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptIndexError(f"{path}: unsupported format version {version}")
    if metric != METRIC_L2_NORMALIZED:
        raise CorruptIndexError(f"{path}: unknown metric tag {metric}")
    offset = _HEADER.size
    vec_bytes = dim * 4
    ids: list[str] = []
    matrix = np.empty((count, dim), dtype=np.float32)
    for i in range(count):
        if offset + _ID_LEN.size > len(payload):
            raise CorruptIndexError(f"{path}: truncated at record {i}")
        (id_len,) = _ID_LEN.unpack_from(payload, offset)
        offset += _ID_LEN.size
        if offset + id_len + vec_bytes > len(payload):
            raise CorruptIndexError(f"{path}: truncated at record {i}")
        ids.append(payload[offset : offset + id_len].decode("utf-8"))
        offset += id_len
        matrix[i] = np.frombuffer(payload, dtype="<f4", count=dim, offset=offset)
        offset += vec_bytes
    if offset != len(payload):
        raise CorruptIndexError(f"{path}: {len(payload) - offset} trailing bytes")
    source = path.stem.split(".")[0]
    return FlatIndex(source, dim, ids, matrix, build_timestamp=path.stat().st_mtime)
