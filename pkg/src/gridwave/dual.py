"""Forward-mode dual numbers carrying a vector of tangents.

A ``Dual`` holds a value and a numpy array of partial derivatives, one per
seed direction. The model code in this package is written against plain
arithmetic plus :mod:`gridwave.numeric`, so the same functions evaluate on
floats, duals or mpmath numbers.
"""
import math

import numpy as np


class Dual:
    __slots__ = ("val", "der")

    def __init__(self, val, der):
        self.val = val
        self.der = der

    def __repr__(self):
        return f"Dual({self.val!r}, {self.der!r})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.der + other.der)
        return Dual(self.val + other, self.der)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.der - other.der)
        return Dual(self.val - other, self.der)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.der)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val,
                        self.der * other.val + other.der * self.val)
        return Dual(self.val * other, self.der * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            val = self.val * inv
            return Dual(val, (self.der - other.der * val) * inv)
        return Dual(self.val / other, self.der / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        val = other * inv
        return Dual(val, self.der * (-val * inv))

    def __neg__(self):
        return Dual(-self.val, -self.der)

    def __pos__(self):
        return self

    def __abs__(self):
        return self if self.val >= 0 else -self

    def __pow__(self, p):
        if isinstance(p, Dual):
            return exp(p * log(self))
        if p == 0:
            return Dual(1.0, self.der * 0.0)
        return Dual(self.val ** p, self.der * (p * self.val ** (p - 1)))

    def __rpow__(self, base):
        val = base ** self.val
        return Dual(val, self.der * (val * math.log(base)))

    # comparisons act on the value --------------------------------------
    def _v(self, other):
        return other.val if isinstance(other, Dual) else other

    def __lt__(self, other):
        return self.val < self._v(other)

    def __le__(self, other):
        return self.val <= self._v(other)

    def __gt__(self, other):
        return self.val > self._v(other)

    def __ge__(self, other):
        return self.val >= self._v(other)

    def __eq__(self, other):
        return self.val == self._v(other)

    def __ne__(self, other):
        return self.val != self._v(other)

    __hash__ = None

    def __float__(self):
        return float(self.val)


def sin(x):
    return Dual(math.sin(x.val), x.der * math.cos(x.val))


def cos(x):
    return Dual(math.cos(x.val), x.der * (-math.sin(x.val)))


def sqrt(x):
    s = math.sqrt(x.val)
    return Dual(s, x.der * (0.5 / s))


def exp(x):
    e = math.exp(x.val)
    return Dual(e, x.der * e)


def log(x):
    return Dual(math.log(x.val), x.der / x.val)


def atan2(y, x):
    yv = y.val if isinstance(y, Dual) else y
    xv = x.val if isinstance(x, Dual) else x
    r2 = xv * xv + yv * yv
    der = 0.0
    if isinstance(y, Dual):
        der = y.der * (xv / r2)
    if isinstance(x, Dual):
        der = der + x.der * (-yv / r2)
    return Dual(math.atan2(yv, xv), der)


def seed(values, colors, k):
    """Duals for ``values`` where entry j is seeded in direction ``colors[j]``."""
    eye = np.eye(k)
    return [Dual(float(v), eye[c].copy()) for v, c in zip(values, colors)]
