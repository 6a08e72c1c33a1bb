"""Embedding index: build, persist, and query top-k similar shapes.

Index file layout (little-endian):

    bytes 0..7   magic b"RCIDX001"
    uint16       embedder id length, followed by that many UTF-8 bytes
    uint32       embedding dimension D
    uint32       record count
    records      fixed width: shape_id (64 bytes, NUL padded)
                 + source path (192 bytes, NUL padded)
                 + D float64 values

The corpus manifest is one record per line:
    shape_id <TAB or spaces> relative_path [category]
Blank lines and '#' comments are skipped. Paths resolve against the
manifest's directory.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import cloudio
from .descriptor import DIM, EMBEDDER_ID, embed_geometric
from .geometry import ContractError, fps

MAGIC = b"RCIDX001"
_ID_WIDTH = 64
_PATH_WIDTH = 192


class IndexError_(ValueError):
    pass


@dataclass
class EmbeddingRecord:
    shape_id: str
    embedding: np.ndarray
    path: str


@dataclass
class RetrievalIndex:
    embedder_id: str
    dim: int
    records: list[EmbeddingRecord]
    root: str = "."
    warnings: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def query_topk(self, q: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Exact top-k by cosine similarity; ties by shape_id lexicographic."""
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ContractError(f"query dim {q.shape} != index dim ({self.dim},)")
        if k > len(self.records):
            raise ContractError(f"k={k} exceeds record count {len(self.records)}")
        cosines = np.array([float(r.embedding @ q) for r in self.records])
        order = sorted(range(len(self.records)),
                       key=lambda i: (-cosines[i], self.records[i].shape_id))
        return [(self.records[i].shape_id, float(cosines[i])) for i in order[:k]]

    def record_for(self, shape_id: str) -> EmbeddingRecord:
        for r in self.records:
            if r.shape_id == shape_id:
                return r
        raise KeyError(shape_id)

    def save(self, path):
        with open(path, "wb") as f:
            f.write(MAGIC)
            ident = self.embedder_id.encode("utf-8")
            f.write(struct.pack("<H", len(ident)))
            f.write(ident)
            f.write(struct.pack("<II", self.dim, len(self.records)))
            for r in self.records:
                f.write(_fixed(r.shape_id, _ID_WIDTH))
                f.write(_fixed(r.path, _PATH_WIDTH))
                f.write(np.ascontiguousarray(r.embedding, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "RetrievalIndex":
        with open(path, "rb") as f:
            if f.read(8) != MAGIC:
                raise IndexError_(f"{path}: not an index file (bad magic)")
            (idlen,) = struct.unpack("<H", f.read(2))
            embedder_id = f.read(idlen).decode("utf-8")
            dim, count = struct.unpack("<II", f.read(8))
            records = []
            for _ in range(count):
                shape_id = f.read(_ID_WIDTH).rstrip(b"\x00").decode("utf-8")
                src = f.read(_PATH_WIDTH).rstrip(b"\x00").decode("utf-8")
                vec = np.frombuffer(f.read(8 * dim), dtype="<f8").astype(np.float64)
                records.append(EmbeddingRecord(shape_id, vec, src))
        return cls(embedder_id, dim, records, root=os.path.dirname(os.path.abspath(path)))


def _fixed(text: str, width: int) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > width:
        raise IndexError_(f"field {text!r} exceeds fixed width {width}")
    return raw + b"\x00" * (width - len(raw))


def read_manifest(path) -> list[tuple[str, str, str]]:
    """Parse (shape_id, relative_path, category) triples; category may be ''."""
    entries = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) < 2:
                raise IndexError_(f"{path}:{lineno}: need 'shape_id path [category]'")
            entries.append((parts[0], parts[1], parts[2] if len(parts) > 2 else ""))
    if not entries:
        raise ContractError(f"{path}: manifest lists no shapes")
    seen = set()
    for shape_id, _, _ in entries:
        if shape_id in seen:
            raise IndexError_(f"{path}: duplicate shape_id {shape_id!r}")
        seen.add(shape_id)
    return entries


def build_index(manifest_path, embeddings: dict[str, np.ndarray] | None = None) -> RetrievalIndex:
    """Embed every readable corpus shape; unreadable files are skipped with a warning.

    `embeddings` optionally supplies externally computed vectors keyed by
    shape_id (see `read_embedding_table`), bypassing the geometric embedder.
    """
    root = os.path.dirname(os.path.abspath(manifest_path))
    entries = read_manifest(manifest_path)
    records = []
    warnings = []
    if embeddings is None:
        embedder_id, dim = EMBEDDER_ID, DIM
    else:
        embedder_id = "external"
        dim = len(next(iter(embeddings.values())))
    for shape_id, rel, _category in entries:
        full = os.path.join(root, rel)
        if embeddings is not None:
            if shape_id not in embeddings:
                warnings.append(f"{shape_id}: no embedding in table, skipped")
                continue
            vec = embeddings[shape_id]
            records.append(EmbeddingRecord(shape_id, vec, rel))
            continue
        try:
            cloud = cloudio.read_cloud(full)
        except (OSError, cloudio.ParseError, cloudio.UnsupportedFeatureError) as exc:
            warnings.append(f"{shape_id}: {exc}")
            continue
        records.append(EmbeddingRecord(shape_id, embed_geometric(cloud), rel))
    if not records:
        raise ContractError(f"{manifest_path}: no readable shapes in corpus")
    return RetrievalIndex(embedder_id, dim, records, root=root, warnings=warnings)


def read_embedding_table(path) -> dict[str, np.ndarray]:
    """External embeddings: 'shape_id v1 v2 ... vD' per line, l2-normalized on load."""
    table: dict[str, np.ndarray] = {}
    dim = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise IndexError_(f"{path}:{lineno}: dimension {vec.size} != {dim}")
            norm = np.linalg.norm(vec)
            if norm == 0:
                raise IndexError_(f"{path}:{lineno}: zero vector cannot be normalized")
            table[parts[0]] = vec / norm
    if not table:
        raise IndexError_(f"{path}: empty embedding table")
    return table


def retrieve_reference(index: RetrievalIndex, partial: np.ndarray, k: int = 1,
                       n_points: int = 2048) -> list[tuple[str, np.ndarray]]:
    """Top-k reference clouds for a partial input, FPS-resampled to `n_points`."""
    if len(index.records) == 0:
        raise ContractError("retrieve_reference: index is empty")
    q = embed_geometric(partial)
    out = []
    for shape_id, _cos in index.query_topk(q, k):
        rec = index.record_for(shape_id)
        full = os.path.join(index.root, rec.path)
        try:
            cloud = cloudio.read_cloud(full)
        except OSError as exc:
            raise OSError(f"shape {shape_id!r}: cannot read {full}: {exc}") from None
        out.append((shape_id, resample(cloud, n_points)))
    return out


def resample(cloud: np.ndarray, n: int) -> np.ndarray:
    """FPS down to n points, or deterministic tiling up when the cloud is smaller."""
    if cloud.shape[0] >= n:
        return cloud[fps(cloud, n, start=0)]
    reps = int(np.ceil(n / cloud.shape[0]))
    return np.tile(cloud, (reps, 1))[:n]
