"""Allocation accounting hook for memory-complexity assertions.

numpy registers its buffer allocations with tracemalloc, so the peak
traced delta inside the context is a faithful upper bound on auxiliary
array memory.  Used by tests to prove the linearized attention path
never materializes a T x T buffer.
"""

from __future__ import annotations

import tracemalloc
from contextlib import contextmanager
from dataclasses import dataclass


@dataclass
class AllocationReport:
    peak_bytes: int = 0


@contextmanager
def trace_peak_allocations():
    """Yield a report whose peak_bytes is filled in when the block exits.

    Measures peak traced memory above the level at entry.  Nesting or
    concurrent use is not supported (tracemalloc is process-global).
    """
    report = AllocationReport()
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    tracemalloc.reset_peak()
    baseline, _ = tracemalloc.get_traced_memory()
    try:
        yield report
    finally:
        _, peak = tracemalloc.get_traced_memory()
        report.peak_bytes = max(0, peak - baseline)
        if not was_tracing:
            tracemalloc.stop()
