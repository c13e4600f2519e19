"""Scalar math that dispatches on the numeric mode of its argument.

Model equations call these instead of :mod:`math` so one implementation
serves plain floats, :class:`~gridwave.dual.Dual` numbers (Jacobians) and
mpmath numbers (high-precision finite-difference checks).
"""
import contextlib
import math

from . import dual
from .dual import Dual

_probe = False


@contextlib.contextmanager
def structure_probe():
    """Make limiters pass derivatives through, for sparsity detection."""
    global _probe
    old, _probe = _probe, True
    try:
        yield
    finally:
        _probe = old


def _mp():
    import mpmath
    return mpmath


def sin(x):
    if isinstance(x, (float, int)):
        return math.sin(x)
    if isinstance(x, Dual):
        return dual.sin(x)
    return _mp().sin(x)


def cos(x):
    if isinstance(x, (float, int)):
        return math.cos(x)
    if isinstance(x, Dual):
        return dual.cos(x)
    return _mp().cos(x)


def sqrt(x):
    if isinstance(x, (float, int)):
        return math.sqrt(x)
    if isinstance(x, Dual):
        return dual.sqrt(x)
    return _mp().sqrt(x)


def exp(x):
    if isinstance(x, (float, int)):
        return math.exp(x)
    if isinstance(x, Dual):
        return dual.exp(x)
    return _mp().exp(x)


def atan2(y, x):
    if isinstance(y, Dual) or isinstance(x, Dual):
        return dual.atan2(y, x)
    if isinstance(y, (float, int)) and isinstance(x, (float, int)):
        return math.atan2(y, x)
    return _mp().atan2(y, x)


def value(x):
    """Plain float behind any supported scalar."""
    if isinstance(x, Dual):
        return x.val
    return float(x)


def clamp(x, lo, hi):
    if _probe:
        return x
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


def floor_magnitude(m, floor):
    """max(m, floor), with the derivative cut below the floor."""
    if _probe or m >= floor:
        return m
    return floor


def antiwindup(x, dx, lo, hi):
    """Zero an integrator derivative that pushes a limited state outward."""
    if _probe:
        return dx
    if x >= hi and dx > 0:
        return 0.0
    if x <= lo and dx < 0:
        return 0.0
    return dx
