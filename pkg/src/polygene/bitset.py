"""Packed genome storage: one row of uint64 words per genome, locus ``i`` in bit ``i % 64`` of word ``i // 64``."""

from __future__ import annotations

import numpy as np


def n_words(L: int) -> int:
    return (L + 63) // 64


def pack(bits: np.ndarray) -> np.ndarray:
    """Pack an ``(n, L)`` boolean matrix into ``(n, n_words(L))`` uint64."""
    bits = np.asarray(bits, dtype=bool)
    n, L = bits.shape
    W = n_words(L)
    padded = np.zeros((n, W * 64), dtype=bool)
    padded[:, :L] = bits
    by = np.packbits(padded, axis=1, bitorder="little")
    return np.ascontiguousarray(by).view("<u8").astype(np.uint64, copy=False)


def unpack(words: np.ndarray, L: int) -> np.ndarray:
    """Inverse of :func:`pack`."""
    words = np.ascontiguousarray(words, dtype="<u8")
    by = words.view(np.uint8).reshape(words.shape[0], -1)
    return np.unpackbits(by, axis=1, bitorder="little", count=L).astype(bool)


def popcount(words: np.ndarray) -> np.ndarray:
    """Number of set bits in each row."""
    return np.bitwise_count(words).sum(axis=1, dtype=np.int64)


def valid_mask(L: int) -> np.ndarray:
    """Word mask with exactly the first ``L`` bits set."""
    out = np.zeros(n_words(L), dtype=np.uint64)
    full, rem = divmod(L, 64)
    out[:full] = np.uint64(0xFFFFFFFFFFFFFFFF)
    if rem:
        out[full] = np.uint64((1 << rem) - 1)
    return out


def prefix_table(L: int) -> np.ndarray:
    """Row ``k`` holds the mask of the first ``k`` loci, ``k = 0..L``."""
    tri = np.tri(L + 1, L, -1, dtype=bool)
    return pack(tri)
