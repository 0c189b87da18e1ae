"""
Collective KD - Binary Formats and Hashing

Embedding file (little-endian):
    [magic "CRNK"(4)][version u32][dim u32][count u64]
    per entry: [id u64][token_count u32][token_count x dim float32, row-major]

Checkpoint file (little-endian):
    [magic "CRWT"(4)][version u32][dim_out u32][dim_in u32][dim_out x dim_in float32]
"""

import json
import struct
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .constants import (
    CHECKPOINT_HEADER, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
    EMBEDDING_ENTRY_HEADER, EMBEDDING_HEADER, EMBEDDING_MAGIC, EMBEDDING_VERSION,
    FLOAT_DTYPE, META_SUFFIX,
)
from .errors import DimensionMismatchError, FormatError, ValidationError
from .models import RawEmbeddingMatrix

try:
    from Crypto.Hash import SHA256
    HAS_CRYPTO = True
except ImportError:
    HAS_CRYPTO = False


_HEADER_SIZE = struct.calcsize(EMBEDDING_HEADER)
_ENTRY_SIZE = struct.calcsize(EMBEDDING_ENTRY_HEADER)
_CHECKPOINT_SIZE = struct.calcsize(CHECKPOINT_HEADER)
_FLOAT_SIZE = np.dtype(FLOAT_DTYPE).itemsize


# ═══════════════════════════════════════════════════════════════════════════════
# HASHING
# ═══════════════════════════════════════════════════════════════════════════════

def is_crypto_available() -> bool:
    """Check if hashing is available"""
    return HAS_CRYPTO


def sha256_digest(data: bytes) -> bytes:
    """
    SHA-256 of `data`

    Raises:
        RuntimeError: If pycryptodome not installed
    """
    if not HAS_CRYPTO:
        raise RuntimeError(
            "PyCryptodome not installed. "
            "Install with: pip install pycryptodome"
        )
    return SHA256.new(data).digest()


def token_seed(seed: int, surface: str) -> int:
    """
    Generator seed for a token's base vector

    First 8 bytes (little-endian) of SHA-256(seed as i64 || surface utf-8).
    Depends only on the surface, never on interning order.
    """
    digest = sha256_digest(struct.pack("<q", seed) + surface.encode("utf-8"))
    return int.from_bytes(digest[:8], "little")


def canonical_json(obj) -> str:
    """Sorted-key, whitespace-free JSON used for hashing"""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(obj) -> str:
    """Hex SHA-256 of the canonical JSON rendering of `obj`"""
    return sha256_digest(canonical_json(obj).encode("utf-8")).hex()


# ═══════════════════════════════════════════════════════════════════════════════
# EMBEDDING FILE
# ═══════════════════════════════════════════════════════════════════════════════

def build_embedding_file(entries: Sequence[Tuple[int, RawEmbeddingMatrix]], dim: Optional[int] = None) -> bytes:
    """
    Serialize (id, matrix) entries

    Args:
        entries: Entries in file order; ids must be unique
        dim: Header dimension; taken from the first entry if None (0 when empty)

    Returns:
        File contents
    """
    if dim is None:
        dim = entries[0][1].dim_in if entries else 0

    seen = set()
    chunks = [struct.pack(EMBEDDING_HEADER, EMBEDDING_MAGIC, EMBEDDING_VERSION, dim, len(entries))]
    for record_id, matrix in entries:
        if record_id in seen:
            raise ValidationError(f"duplicate id {record_id} in embedding file")
        if record_id < 0:
            raise ValidationError(f"embedding ids must be non-negative, got {record_id}")
        seen.add(record_id)
        if matrix.dim_in != dim:
            raise DimensionMismatchError(f"entry {record_id} has dim {matrix.dim_in}, header says {dim}")
        chunks.append(struct.pack(EMBEDDING_ENTRY_HEADER, record_id, matrix.token_count))
        chunks.append(np.ascontiguousarray(matrix.values, dtype=FLOAT_DTYPE).tobytes())
    return b"".join(chunks)


def parse_embedding_file(data: bytes) -> Tuple[int, List[Tuple[int, RawEmbeddingMatrix]]]:
    """
    Parse embedding file contents

    Returns:
        (dim, entries) with entries in file order

    Raises:
        FormatError: bad magic, unsupported version or truncated payload
    """
    if len(data) < _HEADER_SIZE:
        raise FormatError(f"truncated header: {len(data)} of {_HEADER_SIZE} bytes")

    magic, version, dim, count = struct.unpack_from(EMBEDDING_HEADER, data, 0)
    if magic != EMBEDDING_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {EMBEDDING_MAGIC!r}")
    if version != EMBEDDING_VERSION:
        raise FormatError(f"unsupported embedding file version {version}")

    entries = []
    offset = _HEADER_SIZE
    for _ in range(count):
        if offset + _ENTRY_SIZE > len(data):
            raise FormatError(f"truncated entry header at byte offset {offset}")
        record_id, token_count = struct.unpack_from(EMBEDDING_ENTRY_HEADER, data, offset)
        offset += _ENTRY_SIZE

        payload = token_count * dim * _FLOAT_SIZE
        if offset + payload > len(data):
            raise FormatError(f"truncated payload for id {record_id} at byte offset {offset}")
        if token_count == 0 or dim == 0:
            raise FormatError(f"empty matrix for id {record_id} at byte offset {offset}")

        values = np.frombuffer(data, dtype=FLOAT_DTYPE, count=token_count * dim, offset=offset)
        entries.append((record_id, RawEmbeddingMatrix(values.reshape(token_count, dim))))
        offset += payload

    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes at byte offset {offset}")
    return dim, entries


def write_embedding_file(entries: Sequence[Tuple[int, RawEmbeddingMatrix]], path, dim: Optional[int] = None):
    Path(path).write_bytes(build_embedding_file(list(entries), dim))


def read_embedding_file(path) -> List[Tuple[int, RawEmbeddingMatrix]]:
    _, entries = parse_embedding_file(Path(path).read_bytes())
    return entries


def read_embedding_dim(path) -> int:
    """Header dimension of an embedding file, without parsing entries"""
    with open(path, "rb") as handle:
        head = handle.read(_HEADER_SIZE)
    if len(head) < _HEADER_SIZE:
        raise FormatError(f"truncated header: {len(head)} of {_HEADER_SIZE} bytes")
    magic, version, dim, _ = struct.unpack(EMBEDDING_HEADER, head)
    if magic != EMBEDDING_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {EMBEDDING_MAGIC!r}")
    if version != EMBEDDING_VERSION:
        raise FormatError(f"unsupported embedding file version {version}")
    return dim


# ═══════════════════════════════════════════════════════════════════════════════
# CHECKPOINT FILE
# ═══════════════════════════════════════════════════════════════════════════════

def build_checkpoint(weights: np.ndarray) -> bytes:
    dim_out, dim_in = weights.shape
    header = struct.pack(CHECKPOINT_HEADER, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, dim_out, dim_in)
    return header + np.ascontiguousarray(weights, dtype=FLOAT_DTYPE).tobytes()


def parse_checkpoint(data: bytes) -> np.ndarray:
    """Returns W as a float64 (dim_out, dim_in) matrix"""
    if len(data) < _CHECKPOINT_SIZE:
        raise FormatError(f"truncated checkpoint header: {len(data)} of {_CHECKPOINT_SIZE} bytes")
    magic, version, dim_out, dim_in = struct.unpack_from(CHECKPOINT_HEADER, data, 0)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")

    expected = _CHECKPOINT_SIZE + dim_out * dim_in * _FLOAT_SIZE
    if len(data) != expected:
        raise FormatError(f"checkpoint size {len(data)} does not match header (expected {expected})")
    values = np.frombuffer(data, dtype=FLOAT_DTYPE, offset=_CHECKPOINT_SIZE)
    return values.reshape(dim_out, dim_in).astype(np.float64)


# ═══════════════════════════════════════════════════════════════════════════════
# PROVENANCE
# ═══════════════════════════════════════════════════════════════════════════════

def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + META_SUFFIX)


def write_sidecar(path, meta: dict):
    """Write `<path>.meta.json` next to a binary artifact or run file"""
    sidecar_path(path).write_text(json.dumps(meta, sort_keys=True, indent=2, default=str) + "\n", encoding="utf-8")


def read_sidecar(path) -> dict:
    target = sidecar_path(path)
    if not target.exists():
        return {}
    return json.loads(target.read_text(encoding="utf-8"))


def provenance_line(meta: dict) -> str:
    """`# key=value ...` comment line for TSV artifacts"""
    return "# " + " ".join(f"{key}={meta[key]}" for key in sorted(meta))


def strip_provenance(lines: Iterable[str]) -> Iterable[Tuple[int, str]]:
    """Yield (line_number, line) for non-comment, non-blank lines"""
    for number, line in enumerate(lines, 1):
        stripped = line.rstrip("\n")
        if not stripped.strip() or stripped.startswith("#"):
            continue
        yield number, stripped
