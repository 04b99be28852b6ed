"""Exact low-order polynomials of (x, y, z).

Trap and drive potentials are polynomials with a handful of terms, so
derivatives are computed symbolically from the monomial table rather than
numerically: curvatures entering coupling strengths must be exact.
"""
from __future__ import annotations

from collections.abc import Iterable, Mapping

import numpy as np

Monomial = tuple[int, int, int]


class Polynomial3D:
    """Real polynomial sum_c c[(i,j,k)] * x^i y^j z^k."""

    def __init__(self, coefficients: Mapping[Monomial, float]):
        coeffs: dict[Monomial, float] = {}
        for mono, c in coefficients.items():
            i, j, k = (int(p) for p in mono)
            if min(i, j, k) < 0:
                raise ValueError(f"negative exponent in monomial {mono}")
            if c != 0.0:
                coeffs[(i, j, k)] = float(c)
        self.coefficients = coeffs

    @property
    def degree(self) -> int:
        if not self.coefficients:
            return 0
        return max(sum(m) for m in self.coefficients)

    def __call__(self, point: Iterable[float]) -> float:
        x, y, z = point
        return sum(
            c * x**i * y**j * z**k for (i, j, k), c in self.coefficients.items()
        )

    def derivative(self, axis: int) -> "Polynomial3D":
        """Exact partial derivative along axis 0/1/2."""
        out: dict[Monomial, float] = {}
        for mono, c in self.coefficients.items():
            p = mono[axis]
            if p == 0:
                continue
            new = list(mono)
            new[axis] = p - 1
            key = (new[0], new[1], new[2])
            out[key] = out.get(key, 0.0) + c * p
        return Polynomial3D(out)

    def gradient(self, point: Iterable[float]) -> np.ndarray:
        return np.array([self.derivative(i)(point) for i in range(3)])

    def hessian(self, point: Iterable[float]) -> np.ndarray:
        h = np.empty((3, 3))
        for i in range(3):
            di = self.derivative(i)
            for j in range(i, 3):
                h[i, j] = h[j, i] = di.derivative(j)(point)
        return h

    def second_partial(self, axis_a: int, axis_b: int, point: Iterable[float]) -> float:
        return self.derivative(axis_a).derivative(axis_b)(point)

    def scaled(self, factor: float) -> "Polynomial3D":
        return Polynomial3D({m: c * factor for m, c in self.coefficients.items()})
