"""Run-length encoding of binary masks over row-major voxel order.

A mask serializes to a flat list [start, length, start, length, ...] of
its foreground runs, starts ascending. Compact enough for the JSON API
and trivially decodable in the browser.
"""

from __future__ import annotations

import numpy as np


def encode_mask(mask: np.ndarray) -> list[int]:
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    if flat.size == 0:
        return []
    edges = np.diff(flat.astype(np.int8))
    starts = np.flatnonzero(edges == 1) + 1
    ends = np.flatnonzero(edges == -1) + 1
    if flat[0]:
        starts = np.concatenate([[0], starts])
    if flat[-1]:
        ends = np.concatenate([ends, [flat.size]])
    out: list[int] = []
    for s, e in zip(starts, ends):
        out.extend((int(s), int(e - s)))
    return out


def decode_mask(runs: list[int], size: int) -> np.ndarray:
    """Inverse of :func:`encode_mask`; validates structure and bounds."""
    if len(runs) % 2:
        raise ValueError("rle must hold (start, length) pairs")
    flat = np.zeros(size, dtype=bool)
    prev_end = 0
    for i in range(0, len(runs), 2):
        start, length = int(runs[i]), int(runs[i + 1])
        if length <= 0 or start < prev_end:
            raise ValueError(f"invalid run (start={start}, len={length}) at pair {i // 2}")
        if start + length > size:
            raise ValueError(f"run (start={start}, len={length}) exceeds mask size {size}")
        flat[start : start + length] = True
        prev_end = start + length
    return flat
