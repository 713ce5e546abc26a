"""Locality-biased linear attention: library, Conformer block, benchmark.

Submodules are imported lazily so that the benchmark CLI can pin BLAS
thread counts before numpy first loads.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = ("numeric", "linear_attention", "attention", "conformer",
               "serialization", "bench", "cli", "errors", "memtrack")


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
