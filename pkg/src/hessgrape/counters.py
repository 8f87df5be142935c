"""Instrumentation for counting dense matrix products.

The objective and propagation code route their matrix-matrix products
through :func:`matmul` so that cost-scaling claims can be checked by
counting rather than by timing.  A product of two stacked arrays of shape
``(B, d, d)`` counts as ``B`` products.
"""

from __future__ import annotations

import contextlib
import threading
from collections import Counter
from typing import Iterator

import numpy as np

_lock = threading.Lock()
_counts: Counter[str] = Counter()
_active = 0


def _batch_size(a: np.ndarray, b: np.ndarray) -> int:
    shape = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    return int(np.prod(shape)) if shape else 1


def tally(kind: str, n: int) -> None:
    """Add ``n`` operations of type ``kind`` while a counting block is open."""
    if _active:
        with _lock:
            _counts[kind] += n


def matmul(a: np.ndarray, b: np.ndarray, kind: str = "matmul") -> np.ndarray:
    tally(kind, _batch_size(a, b))
    return a @ b


@contextlib.contextmanager
def counting() -> Iterator[Counter[str]]:
    """Count products issued inside the block.

    Yields a ``Counter`` that is filled in when the block exits.

        with counting() as c:
            gradient(cache, system)
        c["matmul"]
    """
    global _active
    result: Counter[str] = Counter()
    with _lock:
        _counts.clear()
        _active += 1
    try:
        yield result
    finally:
        with _lock:
            _active -= 1
            result.update(_counts)
            _counts.clear()
