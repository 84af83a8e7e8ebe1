"""Multiplication counter instrumented into the dense kernels.

Counts multiply-accumulates at the actual GEMM call sites: every matmul of an
(m, k) by (k, n) operand pair adds m*n*k, batched matmuls add the batch-fold.
Elementwise work (activations, masks, normalization) adds nothing, matching the
MAC convention used by the profiler. The counter is off unless a `counting`
context is active, so the hot path pays a single attribute check.
"""

from contextlib import contextmanager


class MultCounter:
    def __init__(self):
        self.total = 0
        self.by_label = {}

    def add(self, n, label):
        self.total += n
        if label in self.by_label:
            self.by_label[label] += n
        else:
            self.by_label[label] = n


_active = None


def record(n, label="gemm"):
    if _active is not None:
        _active.add(int(n), label)


def enabled():
    return _active is not None


@contextmanager
def counting():
    """Collect multiply counts for the enclosed computation."""
    global _active
    prev = _active
    counter = MultCounter()
    _active = counter
    try:
        yield counter
    finally:
        _active = prev
