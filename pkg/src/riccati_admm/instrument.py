"""Counting hooks for dense factorizations and inversions.

While :func:`count_factorizations` is active, the listed ``numpy.linalg`` and
``scipy.linalg`` routines are wrapped so that every call made from inside a
region marked with :func:`online_region` (the solver loop) is counted.
"""
from __future__ import annotations

import contextlib
import functools
import threading

import numpy.linalg
import scipy.linalg

_NUMPY_NAMES = ("inv", "pinv", "solve", "lstsq", "cholesky", "qr", "svd", "eig", "eigh",
                "eigvals", "eigvalsh", "det", "slogdet", "matrix_rank", "tensorinv", "tensorsolve")
_SCIPY_NAMES = ("inv", "pinv", "pinvh", "solve", "lstsq", "cholesky", "cho_factor", "cho_solve",
                "lu", "lu_factor", "lu_solve", "ldl", "qr", "svd", "eig", "eigh", "eigvals",
                "eigvalsh", "det", "solve_triangular", "solve_banded", "solveh_banded",
                "solve_discrete_are", "solve_continuous_are", "expm")

_state = threading.local()


class FactorizationCounter:
    def __init__(self):
        self.count = 0
        self.calls: dict[str, int] = {}
        self.regions = 0

    def _hit(self, name: str):
        self.count += 1
        self.calls[name] = self.calls.get(name, 0) + 1


_active: list[FactorizationCounter] = []


def _depth() -> int:
    return getattr(_state, "depth", 0)


@contextlib.contextmanager
def online_region():
    """Mark the enclosed code as online solver work."""
    _state.depth = _depth() + 1
    for c in _active:
        c.regions += 1
    try:
        yield
    finally:
        _state.depth -= 1


def _wrap(module_name: str, name: str, fn):
    @functools.wraps(fn)
    def counted(*args, **kwargs):
        if _depth() > 0:
            for c in _active:
                c._hit(f"{module_name}.{name}")
        return fn(*args, **kwargs)
    return counted


@contextlib.contextmanager
def count_factorizations():
    """Yield a :class:`FactorizationCounter` tallying online factorizations."""
    counter = FactorizationCounter()
    patched = []
    if not _active:
        for mod, label, names in ((numpy.linalg, "numpy.linalg", _NUMPY_NAMES),
                                  (scipy.linalg, "scipy.linalg", _SCIPY_NAMES)):
            for name in names:
                fn = getattr(mod, name, None)
                if fn is None:
                    continue
                patched.append((mod, name, fn))
                setattr(mod, name, _wrap(label, name, fn))
    _active.append(counter)
    try:
        yield counter
    finally:
        _active.remove(counter)
        for mod, name, fn in patched:
            setattr(mod, name, fn)
