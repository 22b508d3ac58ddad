# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled hot kernels; behaviour is identical to ``_kernels_py``."""

from libc.stdint cimport uint64_t


def min_cover(int n_leaves, requirements, int target):
    """Smallest number of leaves whose compromise reaches ``target``.

    Uses 64-bit masks; callers fall back to the Python kernel for wider
    index spaces.
    """
    cdef Py_ssize_t m = len(requirements)
    if n_leaves + m > 64:
        from ._kernels_py import min_cover as py_min_cover
        return py_min_cover(n_leaves, requirements, target)
    cdef uint64_t[64] reqs
    cdef Py_ssize_t j
    for j in range(m):
        reqs[j] = <uint64_t>requirements[j]
    cdef uint64_t target_bit = (<uint64_t>1) << target
    cdef uint64_t full = ((<uint64_t>1) << n_leaves) - 1 if n_leaves < 64 else <uint64_t>0xFFFFFFFFFFFFFFFF
    cdef uint64_t subset, closure, bit, low, ripple
    cdef int size
    for size in range(n_leaves + 1):
        subset = 0 if size == 0 else ((<uint64_t>1) << size) - 1
        while subset <= full:
            closure = subset
            bit = (<uint64_t>1) << n_leaves
            for j in range(m):
                if reqs[j] & ~closure == 0:
                    closure |= bit
                bit <<= 1
            if closure & target_bit:
                return size
            if size == 0:
                break
            low = subset & (~subset + 1)
            ripple = subset + low
            if ripple == 0:
                break
            subset = (((ripple ^ subset) >> 2) // low) | ripple
    return -1


def pack_fields(values, widths):
    """Concatenate field values most-significant-first into one integer."""
    cdef Py_ssize_t i, n = len(widths)
    acc = 0
    for i in range(n):
        acc = (acc << <int>widths[i]) | values[i]
    return acc


def unpack_fields(bits, widths):
    """Inverse of ``pack_fields``."""
    cdef Py_ssize_t i, n = len(widths)
    cdef int w
    cdef object one = 1
    out = [0] * n
    for i in range(n - 1, -1, -1):
        w = widths[i]
        if w <= 62 and bits.bit_length() <= 62:
            out[i] = <long long>bits & (((<long long>1) << w) - 1)
        else:
            # Python integers: a C shift would overflow for wide fields
            out[i] = bits & ((one << w) - 1)
        bits = bits >> w
    return out
