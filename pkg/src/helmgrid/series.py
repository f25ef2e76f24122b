"""Truncated power series in the embedding parameter."""

from __future__ import annotations

import numpy as np


class PowerSeries:
    """Complex coefficients ``c[0..n-1]`` of ``sum c[k] a**k``; arithmetic truncates to the shorter operand."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        c = np.atleast_1d(np.asarray(coeffs, dtype=complex)).copy()
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coefficients must be a non-empty 1-d sequence")
        c.flags.writeable = False
        self.coeffs = c

    @property
    def n_terms(self) -> int:
        return self.coeffs.size

    def __len__(self):
        return self.coeffs.size

    def __getitem__(self, k):
        return self.coeffs[k]

    def __repr__(self):
        return f"PowerSeries({self.coeffs!r})"

    def truncate(self, n: int) -> PowerSeries:
        return PowerSeries(self.coeffs[:n])

    def _pair(self, other):
        if isinstance(other, PowerSeries):
            n = min(self.n_terms, other.n_terms)
            return self.coeffs[:n], other.coeffs[:n]
        c = np.zeros_like(self.coeffs)
        c[0] = other
        return self.coeffs, c

    def __add__(self, other):
        a, b = self._pair(other)
        return PowerSeries(a + b)

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self._pair(other)
        return PowerSeries(a - b)

    def __rsub__(self, other):
        a, b = self._pair(other)
        return PowerSeries(b - a)

    def __neg__(self):
        return PowerSeries(-self.coeffs)

    def __mul__(self, other):
        if not isinstance(other, PowerSeries):
            return PowerSeries(self.coeffs * other)
        a, b = self._pair(other)
        return PowerSeries(np.convolve(a, b)[: a.size])

    __rmul__ = __mul__

    def reciprocal(self) -> PowerSeries:
        """Series of ``1/f`` by the usual lower-triangular recursion."""
        c = self.coeffs
        if c[0] == 0:
            raise ZeroDivisionError("reciprocal of a series with zero constant term")
        r = np.zeros_like(c)
        r[0] = 1.0 / c[0]
        for k in range(1, c.size):
            r[k] = -np.dot(c[1 : k + 1], r[k - 1 :: -1]) * r[0]
        return PowerSeries(r)

    def reflect(self) -> PowerSeries:
        """Series of ``conj(f(conj(a)))``, i.e. the conjugated coefficients."""
        return PowerSeries(self.coeffs.conj())

    def shift_down(self) -> PowerSeries:
        """``(f(a) - f(0)) / a``; one term shorter."""
        return PowerSeries(self.coeffs[1:]) if self.n_terms > 1 else PowerSeries([0.0])

    def __call__(self, alpha):
        """Direct truncated summation (Horner)."""
        return np.polyval(self.coeffs[::-1], alpha)

    def derivative_at_zero(self) -> complex:
        return self.coeffs[1] if self.n_terms > 1 else 0.0
