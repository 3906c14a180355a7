"""Packed row-set bitsets.

Rule coverage over n rows is stored as packed uint8 arrays (np.packbits
layout), so unions and overlap counts over thousands of candidate rules
reduce to vectorized bitwise ops plus np.bitwise_count.

Padding bits beyond n are always zero; every helper preserves that.
"""

from __future__ import annotations

import numpy as np


def pack(mask: np.ndarray) -> np.ndarray:
    """Pack a boolean row mask into uint8 words."""
    return np.packbits(np.asarray(mask, dtype=bool))


def unpack(bits: np.ndarray, n: int) -> np.ndarray:
    """Unpack to a boolean mask of length n."""
    return np.unpackbits(bits, count=n).astype(bool)


def pack_matrix(masks: np.ndarray) -> np.ndarray:
    """Pack a (k, n) boolean matrix row-wise into a (k, ceil(n/8)) uint8 matrix."""
    return np.packbits(np.asarray(masks, dtype=bool), axis=1)


def zeros(n: int) -> np.ndarray:
    return np.zeros((n + 7) // 8, dtype=np.uint8)


def popcount(bits: np.ndarray) -> int:
    return int(np.bitwise_count(bits).sum())


def popcount_rows(bits: np.ndarray) -> np.ndarray:
    """Per-row popcount of a (k, w) packed matrix."""
    return np.bitwise_count(bits).sum(axis=1)


def union(rows: np.ndarray) -> np.ndarray:
    """OR-reduce a (k, w) packed matrix; k = 0 yields the empty set."""
    if rows.shape[0] == 0:
        return np.zeros(rows.shape[1], dtype=np.uint8)
    return np.bitwise_or.reduce(rows, axis=0)


def intersect_count(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.bitwise_count(a & b).sum())
