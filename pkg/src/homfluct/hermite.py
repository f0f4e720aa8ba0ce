"""Probabilists' Hermite series and the number-operator resolvent on them.

He_n are orthogonal under the standard Gaussian with E[He_m He_n] = n! d_mn,
and the Ornstein-Uhlenbeck number operator acts as multiplication by n on the
n-th coefficient.  That makes (1 + N)^{-1} exact on functionals of one or two
independent Gaussian coordinates once their series are known, which is the
carrier for all closed-form resolvent pairings in the package.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import hermite_e
from scipy.special import roots_hermite

from .errors import DegreeError

__all__ = [
    "HermiteSeries",
    "gauss_expect",
    "hermite_coeffs",
    "resolvent_1d_pair",
    "resolvent_two_edge_pair",
]


@lru_cache(maxsize=32)
def _hermegauss(order: int):
    # physicists' rule transformed to the standard Gaussian weight; stable at
    # high order where numpy's hermegauss overflows
    x, w = roots_hermite(order)
    return x * np.sqrt(2.0), w / np.sqrt(np.pi)


def gauss_expect(f, order: int = 160) -> float:
    """E[f(Z)] for Z standard normal, by Gauss-Hermite quadrature."""
    x, w = _hermegauss(order)
    return float(np.dot(w, f(x)))


@dataclass(frozen=True)
class HermiteSeries:
    """Coefficients h_0..h_N of a function in He_n."""

    coeffs: np.ndarray

    def __post_init__(self):
        arr = np.array(self.coeffs, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, z):
        return hermite_e.hermeval(z, self.coeffs)

    def l2_norm_sq(self) -> float:
        """E[(sum h_n He_n)^2] = sum n! h_n^2."""
        n = np.arange(len(self.coeffs))
        return float(np.sum(_factorials(self.degree) * self.coeffs**2))

    def derivative(self) -> "HermiteSeries":
        """Series of f'; uses He_n' = n He_{n-1}."""
        n = np.arange(1, len(self.coeffs))
        return HermiteSeries(self.coeffs[1:] * n)


@lru_cache(maxsize=16)
def _factorials(n_max: int) -> np.ndarray:
    out = np.ones(n_max + 1)
    for n in range(1, n_max + 1):
        out[n] = out[n - 1] * n
    return out


def hermite_coeffs(f, degree: int, quad_order: int | None = None,
                   tail_tol: float = 1e-10) -> HermiteSeries:
    """Expand f in He_n up to ``degree``: h_n = E[f He_n] / n!.

    Raises DegreeError when the L2 reconstruction error exceeds ``tail_tol``,
    recommending a larger degree.
    """
    if quad_order is None:
        quad_order = max(2 * degree, 64)
    if quad_order < 2 * degree:
        raise DegreeError(f"quadrature order {quad_order} below 2 * degree = {2 * degree}")
    x, w = _hermegauss(quad_order)
    fx = f(x)
    fact = _factorials(degree)
    # He_n at the quadrature nodes, rows n = 0..degree
    he = np.empty((degree + 1, len(x)))
    he[0] = 1.0
    if degree >= 1:
        he[1] = x
    for n in range(2, degree + 1):
        he[n] = x * he[n - 1] - (n - 1) * he[n - 2]
    coeffs = (he * (w * fx)).sum(axis=1) / fact
    series = HermiteSeries(coeffs)
    tail = float(np.dot(w, fx**2)) - series.l2_norm_sq()
    if tail > tail_tol:
        raise DegreeError(
            f"L2 tail mass {tail:.3e} above {tail_tol:.1e}; increase the degree "
            f"beyond {degree}"
        )
    return series


def _padded(f: HermiteSeries, g: HermiteSeries):
    n = max(len(f.coeffs), len(g.coeffs))
    a = np.zeros(n)
    b = np.zeros(n)
    a[: len(f.coeffs)] = f.coeffs
    b[: len(g.coeffs)] = g.coeffs
    return a, b


def resolvent_1d_pair(f: HermiteSeries, g: HermiteSeries) -> float:
    """<f(z) (1 + N)^{-1} g(z)> = sum_n n! f_n g_n / (1 + n)."""
    a, b = _padded(f, g)
    n = np.arange(len(a))
    return float(np.sum(_factorials(len(a) - 1) * a * b / (1.0 + n)))


def resolvent_two_edge_pair(p: HermiteSeries, q: HermiteSeries) -> float:
    """<p(z1) q(z2) (1 + N)^{-1} p(z1) q(z2)> for independent z1, z2.

    Product chaos of independent coordinates: the eigenvalue of the number
    operator adds across coordinates, so the value is
    sum_{m,n} m! n! p_m^2 q_n^2 / (1 + m + n).
    """
    pc, qc = p.coeffs, q.coeffs
    m = np.arange(len(pc))
    n = np.arange(len(qc))
    fm = _factorials(len(pc) - 1) * pc**2
    fn = _factorials(len(qc) - 1) * qc**2
    denom = 1.0 + m[:, None] + n[None, :]
    return float(np.sum(fm[:, None] * fn[None, :] / denom))
