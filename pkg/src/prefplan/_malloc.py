"""Tune glibc malloc for large-array churn.

Training steps allocate and free many multi-megabyte activation buffers.
With the default mmap threshold every one round-trips through mmap/munmap
and the kernel re-zeroes pages, which dominates step time and degrades
further under memory compaction. Raising the thresholds keeps the blocks
on the heap where they are reused. No-op off glibc/Linux.
"""

import ctypes
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def tune() -> bool:
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL("libc.so.6")
        ok = libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30)
        ok &= libc.mallopt(_M_TRIM_THRESHOLD, 1 << 30)
        return bool(ok)
    except OSError:
        return False
