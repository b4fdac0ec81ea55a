"""Loading pretrained word vectors and assembling the frozen lookup matrix."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus import OOV_INDEX, PAD_INDEX, Vocabulary
from .errors import DataError

MISSING_INIT_SCALE = 0.05  # uniform range for OOV / unseen-token rows


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Frozen |V| x D lookup table; row i is the vector for vocabulary
    index i. The padding row is all zeros."""

    matrix: np.ndarray
    dim: int
    coverage: float

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[1] != self.dim:
            raise ValueError("matrix shape does not match dim")
        if not np.isfinite(self.matrix).all():
            raise ValueError("embedding matrix contains non-finite values")
        if self.matrix.shape[0] > PAD_INDEX and self.matrix[PAD_INDEX].any():
            raise ValueError("padding row must be zero")
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError("coverage must be in [0, 1]")

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    def checksum(self) -> str:
        """SHA-256 over the row-major little-endian float32 bytes."""
        canonical = np.ascontiguousarray(self.matrix, dtype="<f4")
        return hashlib.sha256(canonical.tobytes()).hexdigest()


def load_vectors(path: str | Path, dim: int) -> tuple[dict[str, np.ndarray], int]:
    """Parse a text vector file: optional `count dim` header, then one
    `token v1 .. vD` line per word.

    Returns (token -> float32 vector, number of skipped malformed lines).
    """
    vectors: dict[str, np.ndarray] = {}
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 0 and len(parts) == 2 and _all_ints(parts):
                continue  # header
            if len(parts) != dim + 1:
                skipped += 1
                continue
            try:
                vec = np.asarray([float(v) for v in parts[1:]], dtype=np.float32)
            except ValueError:
                skipped += 1
                continue
            vectors[parts[0]] = vec
    if not vectors:
        raise DataError(f"{path}: no parseable vector lines")
    return vectors, skipped


def _all_ints(parts: list[str]) -> bool:
    try:
        [int(p) for p in parts]
    except ValueError:
        return False
    return True


def sniff_dim(path: str | Path) -> int:
    """Infer the vector dimensionality from the first data line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            parts = line.split()
            if not parts:
                continue
            if lineno == 0 and len(parts) == 2 and _all_ints(parts):
                return int(parts[1])
            return len(parts) - 1
    raise DataError(f"{path}: empty vector file")


def build_matrix(
    vocab: Vocabulary,
    vectors: Mapping[str, np.ndarray],
    seed: int,
    dim: int | None = None,
) -> EmbeddingMatrix:
    """Assemble the lookup matrix for a vocabulary.

    Found tokens copy their file vector verbatim; the OOV row and rows for
    missing tokens are drawn uniformly from [-0.05, 0.05] by the seeded RNG.
    The padding row is zero. `dim` is only needed when `vectors` is empty.
    """
    if vectors:
        dims = {len(v) for v in vectors.values()}
        if len(dims) != 1:
            raise DataError(f"inconsistent vector dimensions: {sorted(dims)}")
        file_dim = dims.pop()
        if dim is not None and dim != file_dim:
            raise DataError(f"requested dim {dim} but vectors have dim {file_dim}")
        dim = file_dim
    elif dim is None:
        raise DataError("empty vector map and no dim given")

    rng = np.random.default_rng(seed)
    matrix = np.zeros((vocab.size, dim), dtype=np.float32)
    matrix[OOV_INDEX] = rng.uniform(-MISSING_INIT_SCALE, MISSING_INIT_SCALE, dim)
    found = 0
    for i, tok in enumerate(vocab.real_tokens, start=2):
        vec = vectors.get(tok)
        if vec is None:
            matrix[i] = rng.uniform(-MISSING_INIT_SCALE, MISSING_INIT_SCALE, dim)
        else:
            matrix[i] = vec
            found += 1
    n_real = len(vocab.real_tokens)
    coverage = found / n_real if n_real else 0.0
    return EmbeddingMatrix(matrix=matrix, dim=dim, coverage=coverage)
