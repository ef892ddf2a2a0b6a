"""Chebyshev contour grids and Clenshaw-Curtis integration.

A grid of ``n`` segments on ``[a, b]`` places its nodes at
``(a+b)/2 - (b-a)/2 * cos(j pi / n)``, clustering towards both ends.
Sampled values are converted to cosine-series coefficients by direct
cosine sums (a type-I DCT with half-weighted endpoints, evaluated as a
matrix product).  From the coefficients the grid provides

- the full integral over ``[a, b]`` (classic Clenshaw-Curtis weights), and
- cumulative integrals from ``a`` to every node, via the Chebyshev
  antiderivative series.

Both are exact for polynomials of degree up to ``n`` and spectrally
accurate for smooth integrands.  The weight vector and the cumulative
matrix are precomputed once per grid.
"""

from __future__ import annotations

import numpy as np


class ChebyshevGrid:
    """Chebyshev (Gauss-Lobatto) nodes with spectral integration."""

    def __init__(self, a: float, b: float, n: int):
        if n < 1:
            raise ValueError("need at least one segment")
        if not b > a:
            raise ValueError("empty interval")
        self.a = float(a)
        self.b = float(b)
        self.n = int(n)
        j = np.arange(n + 1)
        self.theta = j * np.pi / n
        half = 0.5 * (b - a)
        self.nodes = 0.5 * (a + b) - half * np.cos(self.theta)
        self.nodes[0] = a
        self.nodes[-1] = b
        self.steps = np.diff(self.nodes)

        # coefficient matrix: a_k = (2/n) sum''_j g_j cos(k theta_j)
        k = j[:, None]
        ct = np.cos(k * self.theta[None, :])
        fold = np.ones(n + 1)
        fold[0] = fold[-1] = 0.5
        self._coef_mat = (2.0 / n) * ct * fold[None, :]

        # full-integral weights from the even-coefficient formula
        v = np.zeros(n + 1)
        v[0] = 1.0
        for kk in range(2, n, 2):
            v[kk] = 2.0 / (1.0 - kk * kk)
        if n % 2 == 0 and n >= 2:
            v[n] = 1.0 / (1.0 - n * n)
        self.weights = half * (v @ self._coef_mat)

        # cumulative matrix: values samples -> integral from a to each node
        # through the antiderivative of the Chebyshev series in t = -cos th
        sign = (-1.0) ** j
        c_from_a = sign * fold          # series coeffs in T_k(t)
        anti = np.zeros((n + 2, n + 1))
        for kk in range(1, n + 2):
            if kk - 1 <= n:
                # the constant term integrates to T_1 with weight one
                anti[kk, kk - 1] += 1.0 if kk == 1 else 1.0 / (2.0 * kk)
            if kk + 1 <= n:
                anti[kk, kk + 1] -= 1.0 / (2.0 * kk)
        d_of_a = anti * c_from_a[None, :] @ self._coef_mat  # (n+2, n+1)
        # T_k(t_j) = (-1)^k cos(k theta_j); fix the constant so G(a) = 0
        kk = np.arange(n + 2)
        tk = ((-1.0) ** kk)[None, :] * np.cos(self.theta[:, None]
                                              * kk[None, :])
        signs = (-1.0) ** kk
        d_of_a[0] = -(signs[1:] @ d_of_a[1:])
        self.cumulative_matrix = half * (tk @ d_of_a)

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        """Cosine-series coefficients of node samples (along axis 0)."""
        return np.tensordot(self._coef_mat, np.asarray(values), axes=(1, 0))

    def integrate(self, values: np.ndarray):
        """Integral over [a, b] of the interpolant of node samples."""
        return np.tensordot(self.weights, np.asarray(values), axes=(1 - 1, 0))

    def cumulative(self, values: np.ndarray) -> np.ndarray:
        """Integrals from ``a`` to every node; first entry is zero."""
        return np.tensordot(self.cumulative_matrix, np.asarray(values),
                            axes=(1, 0))


def fourth_order_weights(n: int, step: float) -> np.ndarray:
    """Composite fourth-order quadrature weights on a uniform grid.

    Uses the end-corrected (alternative extended Simpson) weights
    ``(3/8, 7/6, 23/24, 1, ..., 1, 23/24, 7/6, 3/8) h`` when at least 8
    nodes are available, otherwise plain composite Simpson (n even).
    """
    if n < 2:
        raise ValueError("need at least two segments")
    m = n + 1
    if m >= 8:
        w = np.ones(m)
        w[[0, -1]] = 3.0 / 8.0
        w[[1, -2]] = 7.0 / 6.0
        w[[2, -3]] = 23.0 / 24.0
        return w * step
    if n % 2:
        raise ValueError("composite Simpson needs an even segment count")
    w = np.ones(m)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * step / 3.0
