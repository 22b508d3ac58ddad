"""Pure-Python reference implementations of the hot kernels.

These mirror ``_kernels.pyx`` exactly and are used whenever the compiled
extension is unavailable or ``FGFUZZ_PURE_PYTHON`` is set.
"""

from __future__ import annotations

from typing import Sequence


def min_cover(n_leaves: int, requirements: Sequence[int], target: int) -> int:
    """Smallest number of leaves whose compromise reaches ``target``.

    Indices ``0..n_leaves-1`` are leaves.  ``requirements[j]`` is the bit mask
    of protectors of internal node ``n_leaves + j``; internal nodes are given
    in topological order and are compromised once every protector is.
    Subsets are visited by increasing size, so the first hit is minimal.
    Returns -1 when no subset reaches the target.
    """
    target_bit = 1 << target
    full = (1 << n_leaves) - 1
    for size in range(n_leaves + 1):
        if size == 0:
            subset = 0
        else:
            subset = (1 << size) - 1
        while subset <= full:
            closure = subset
            bit = 1 << n_leaves
            for req in requirements:
                if req & ~closure == 0:
                    closure |= bit
                bit <<= 1
            if closure & target_bit:
                return size
            if size == 0:
                break
            # next subset of the same popcount (Gosper's hack)
            low = subset & -subset
            ripple = subset + low
            subset = (((ripple ^ subset) >> 2) // low) | ripple
    return -1


def pack_fields(values: Sequence[int], widths: Sequence[int]) -> int:
    """Concatenate field values most-significant-first into one integer."""
    acc = 0
    for v, w in zip(values, widths):
        acc = (acc << w) | v
    return acc


def unpack_fields(bits: int, widths: Sequence[int]) -> list[int]:
    """Inverse of :func:`pack_fields`."""
    out = [0] * len(widths)
    for i in range(len(widths) - 1, -1, -1):
        w = widths[i]
        out[i] = bits & ((1 << w) - 1)
        bits >>= w
    return out
