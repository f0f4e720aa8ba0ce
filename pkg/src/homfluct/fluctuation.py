"""Effective fluctuation tensor: Monte Carlo estimator and small-contrast expansion.

The tensor entry is

    [Q_xi]_ij = tau^2 sum_k < w_i(e_k) w_xi(e_k) b'(e_k)
                             (1 + N)^{-1} [ b'(e_k) w_j(e_k) w_xi(e_k) ] >

with w_eta = eta + grad phi_eta evaluated at the origin edges (stationarity)
and N the Ornstein-Uhlenbeck number operator over the edge Gaussians.  Two
independent routes are implemented:

* ``q_tensor_mc`` samples environments, synthesises the correctors through
  the contraction series (exact to a controlled tau^{K+1} tail since the
  projection-times-b operator has norm at most one), and applies the
  resolvent through the Mehler semigroup: (1 + N)^{-1} = int_0^1 P_{-ln u} du,
  discretised with Gauss-Legendre nodes in u, which integrates every chaos
  component of degree < 2 * t_nodes exactly.  Each inner resample perturbs
  the whole environment and therefore re-solves the correctors; that is the
  dominant, documented cost.

* ``c0``/``c2_offdiag`` evaluate the low orders of the expansion in closed
  form from Hermite series and lattice Green function sums.

For off-diagonal entries the order tau^4 coefficient receives equal
contributions from two slot pairings per bracket (left-left mirrored by
right-right, and the two crossed pairings), hence the factor two in
``c2_offdiag``; the Monte Carlo route is the arbiter and the tests pin the
agreement.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import green as green_mod
from . import hermite
from .corrector import ProfileB
from .errors import DomainError, FitError
from .lattice import TorusGrid, _grad_symbol, _sin2_symbol
from .rng import gaussian_stream

__all__ = [
    "QEstimate",
    "ExpansionFit",
    "resolvent_mc",
    "q_tensor_mc",
    "q_tensor_tau_sweep",
    "c0",
    "c1_check",
    "c2_offdiag",
    "q_term",
    "hessian_l2_torus",
]


# ---------------------------------------------------------------------------
# Mehler resolvent

@lru_cache(maxsize=16)
def _u_nodes(n_nodes: int):
    """Gauss-Legendre nodes/weights for int_0^1 h(u) du with u = e^{-t}.

    On the n-th chaos the semigroup acts as u^n, a polynomial in u, so the
    rule is exact through chaos degree 2 * n_nodes - 1.
    """
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    return 0.5 * (x + 1.0), 0.5 * w


def resolvent_mc(F, zeta: np.ndarray, t_nodes: int = 16, inner: int = 8,
                 seed: int = 0, stream: tuple[int, ...] = ()):
    """(1 + N)^{-1} F evaluated at the environment ``zeta`` by Mehler sampling.

    F maps an environment array (same shape as zeta) to a float.  ``inner``
    counts resamples per quadrature node; they are drawn in antithetic pairs.
    Returns (value, stderr) with the stderr taken over the pair estimates.
    """
    if inner < 2:
        raise DomainError("inner sample count must be >= 2 (antithetic pairs)")
    zeta = np.asarray(zeta, dtype=np.float64)
    us, ws = _u_nodes(t_nodes)
    n_pairs = inner // 2
    pair_vals = np.zeros(n_pairs)
    for i, (u, w) in enumerate(zip(us, ws)):
        c = np.sqrt(1.0 - u * u)
        for p in range(n_pairs):
            zp = gaussian_stream(seed, zeta.size, stream=stream + (1, i, p)
                                 ).reshape(zeta.shape)
            pair_vals[p] += w * 0.5 * (F(u * zeta + c * zp) + F(u * zeta - c * zp))
    value = float(pair_vals.mean())
    stderr = float(pair_vals.std(ddof=1) / np.sqrt(n_pairs)) if n_pairs > 1 else np.inf
    return value, stderr


# ---------------------------------------------------------------------------
# batched spectral helpers (leading batch axis, then direction, then sites)

def _div_adj_batch(F: np.ndarray) -> np.ndarray:
    d = F.shape[1]
    out = np.zeros(F.shape[:1] + F.shape[2:])
    for i in range(d):
        out += np.roll(F[:, i], 1, axis=1 + i) - F[:, i]
    return out


def _grad_batch(f: np.ndarray, d: int) -> np.ndarray:
    return np.stack([np.roll(f, -1, axis=1 + i) - f for i in range(d)], axis=1)


def _helmholtz_batch(F: np.ndarray, lam: float) -> np.ndarray:
    d = F.shape[1]
    L = F.shape[2]
    rhs = _div_adj_batch(F)
    axes = tuple(range(1, 1 + d))
    sym = lam + _sin2_symbol(d, L)
    rhat = np.fft.fftn(rhs, axes=axes)
    if lam == 0.0:
        sym = sym.copy()
        sym[(0,) * d] = 1.0
        rhat[(slice(None),) + (0,) * d] = 0.0
    u = np.real(np.fft.ifftn(rhat / sym, axes=axes))
    return _grad_batch(u, d)


def _origin_neumann_weights(zeta: np.ndarray, profile: ProfileB, lam: float, K: int):
    """Contraction-series weights at the origin edge star.

    Returns (W, db0) with W[m, i, k] = ((P_lam b)^m e_i)(e_k) times (-1)^m,
    i.e. the m-th series term of e_i + grad phi_{e_i} at the origin edge in
    direction k, and db0[k] = b'(zeta at origin edge k).
    """
    d = zeta.shape[0]
    b = profile.b(zeta)
    origin = (slice(None), slice(None)) + (0,) * d
    W = np.empty((K + 1, d, d))
    W[0] = np.eye(d)
    X = np.zeros((d,) + zeta.shape)
    for i in range(d):
        X[i, i] = 1.0
    for m in range(1, K + 1):
        X = -_helmholtz_batch(b[None] * X, lam)
        W[m] = X[origin]
    db0 = profile.db(zeta[(slice(None),) + (0,) * d])
    return W, db0


def _series_order(tau_max: float, tol: float = 1e-10) -> int:
    if tau_max <= 0:
        return 0
    return max(2, int(np.ceil(np.log(tol * (1.0 - tau_max)) / np.log(tau_max))))


def _w_matrix(W: np.ndarray, tau: float) -> np.ndarray:
    """w[i, k] = (e_i + grad phi_{e_i})(e_k) from the series weights."""
    taupow = tau ** np.arange(W.shape[0])
    return np.tensordot(taupow, W, axes=(0, 0))


# ---------------------------------------------------------------------------
# Q tensor Monte Carlo

@dataclass(frozen=True)
class QEstimate:
    """d x d matrix estimate with per-entry Monte Carlo standard errors."""

    matrix: np.ndarray
    stderr: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if not np.allclose(m, m.T, atol=1e-12 * max(1.0, np.abs(m).max())):
            raise DomainError("Q estimate must be symmetric")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "stderr", np.asarray(self.stderr, dtype=np.float64))

    @property
    def underpowered(self) -> bool:
        return bool(np.any(self.stderr > np.abs(self.matrix) + 1e-300))


def _q_env_all_tau(zeta, profile, lam, taus, xi, K, t_nodes, n_pairs, seed, env_idx):
    """Per-environment Q matrices for every tau (common random numbers)."""
    d = zeta.shape[0]
    W0, db0 = _origin_neumann_weights(zeta, profile, lam, K)
    us, ws = _u_nodes(t_nodes)

    def inner_fields(psi):
        Wp, dbp = _origin_neumann_weights(psi, profile, lam, K)
        out = np.empty((len(taus), d, d))
        for t, tau in enumerate(taus):
            wt = _w_matrix(Wp, tau)
            wxi = xi @ wt
            out[t] = dbp[None, :] * wt * wxi[None, :]
        return out

    R = np.zeros((len(taus), d, d))
    for i, (u, w) in enumerate(zip(us, ws)):
        c = np.sqrt(1.0 - u * u)
        for p in range(n_pairs):
            zp = gaussian_stream(seed, zeta.size, stream=(env_idx, 1, i, p)
                                 ).reshape(zeta.shape)
            R += (w / n_pairs) * 0.5 * (
                inner_fields(u * zeta + c * zp) + inner_fields(u * zeta - c * zp)
            )

    Q = np.empty((len(taus), d, d))
    for t, tau in enumerate(taus):
        wt = _w_matrix(W0, tau)
        wxi = xi @ wt
        A = db0[None, :] * wt * wxi[None, :]
        M = A @ R[t].T
        Q[t] = tau**2 * 0.5 * (M + M.T)
    return Q


def q_tensor_tau_sweep(grid: TorusGrid, profile: ProfileB, taus, xi,
                       lam: float | None = None, n_env: int = 100,
                       t_nodes: int = 16, inner: int = 2, seed: int = 0) -> np.ndarray:
    """Per-environment Q estimates on a tau grid with common random numbers.

    Returns an array of shape (n_env, len(taus), d, d).  The same base
    environment and the same inner resamples serve every tau, so each
    per-environment curve is a smooth function of tau.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=np.float64))
    if np.any(taus < 0) or np.any(taus >= 1):
        raise DomainError("tau grid must lie in [0, 1)")
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (grid.d,):
        raise DomainError(f"xi must have {grid.d} components")
    if lam is None:
        lam = 4.0 / grid.L**2
    if inner < 2:
        raise DomainError("inner sample count must be >= 2 (antithetic pairs)")
    K = _series_order(float(taus.max()))
    n_pairs = inner // 2
    out = np.empty((n_env, len(taus), grid.d, grid.d))
    for s in range(n_env):
        zeta = gaussian_stream(seed, grid.n_edges, stream=(s, 0)).reshape(grid.edge_shape)
        out[s] = _q_env_all_tau(zeta, profile, lam, taus, xi, K, t_nodes,
                                n_pairs, seed, s)
    return out


def q_tensor_mc(grid: TorusGrid, profile: ProfileB, tau: float, xi,
                lam: float | None = None, n_env: int = 100, t_nodes: int = 16,
                inner: int = 2, seed: int = 0) -> QEstimate:
    """Monte Carlo estimate of Q_xi at a single contrast."""
    if lam is None:
        lam = 4.0 / grid.L**2
    sweep = q_tensor_tau_sweep(grid, profile, [tau], xi, lam=lam, n_env=n_env,
                               t_nodes=t_nodes, inner=inner, seed=seed)
    samples = sweep[:, 0]
    matrix = samples.mean(axis=0)
    stderr = samples.std(axis=0, ddof=1) / np.sqrt(n_env)
    meta = {
        "tau": float(tau), "xi": list(map(float, np.atleast_1d(xi))),
        "lam": float(lam), "L": grid.L, "d": grid.d, "profile": profile.name,
        "n_samples": int(n_env), "seed": int(seed), "t_nodes": t_nodes,
        "inner": int(inner),
    }
    est = QEstimate(matrix, stderr, meta)
    meta["underpowered"] = est.underpowered
    return est


# ---------------------------------------------------------------------------
# expansion coefficients

def c0(profile: ProfileB, xi) -> np.ndarray:
    """Leading coefficient: diag(xi_i^2 <b^2>)."""
    xi = np.asarray(xi, dtype=np.float64)
    return np.diag(xi**2 * profile.second_moment())


def hessian_l2_torus(grid: TorusGrid, lam: float, i: int, j: int) -> float:
    """sum over the torus of squared Hessian entries of the periodic G_lam.

    Finite-volume counterpart of ``green.hessian_l2_sum``; quantifies the
    finite-L bias of the Monte Carlo route.
    """
    if lam <= 0:
        raise DomainError("torus Green function needs lam > 0")
    d, L = grid.d, grid.L
    sym = lam + _sin2_symbol(d, L)
    g = np.real(np.fft.ifftn(1.0 / sym))
    h = (
        np.roll(g, (-1, 1), axis=(i, j)) - np.roll(g, -1, axis=i)
        - np.roll(g, 1, axis=j) + g
    )
    return float(np.sum(h * h))


def c2_offdiag(profile: ProfileB, xi, i: int, j: int,
               table: green_mod.GreenTable | None = None, R: int = 24,
               quad_order: int = 8) -> tuple[float, dict]:
    """Order tau^4 off-diagonal coefficient of [Q_xi]_ij, i != j.

    xi_i xi_j * 2 * S_ij * [ <b^2> <b'(1+N)^{-1}b'> + <b b'(1+N)^{-1} b' b> ]

    with S_ij the whole-space Hessian L2 sum.  The two brackets come with
    slot-pairing multiplicity two each (left and right pairs, and the two
    crossed pairs).  Returns (value, report) where the report carries the
    Green-sum tail estimate and the bracket values.
    """
    if i == j:
        raise DomainError("the closed form covers off-diagonal entries only")
    xi = np.asarray(xi, dtype=np.float64)
    S, tail = green_mod.hessian_l2_sum(i, j, 0.0, R, d=len(xi),
                                       quad_order=quad_order, table=table)
    db_series = profile.db_series()
    b_series = profile.b_series()
    bracket1 = profile.second_moment() * hermite.resolvent_1d_pair(db_series, db_series)
    bracket2 = hermite.resolvent_two_edge_pair(b_series, db_series)
    value = float(xi[i] * xi[j] * 2.0 * S * (bracket1 + bracket2))
    report = {
        "S": S, "S_tail": tail, "bracket_var": bracket1, "bracket_cross": bracket2,
        "multiplicity": 2,
    }
    return value, report


@dataclass(frozen=True)
class ExpansionFit:
    """Polynomial fit of [Q]_ij / tau^2 in tau, with per-coefficient stderr."""

    coeffs: np.ndarray           # a_0 .. a_degree, mean over environments
    stderr: np.ndarray
    taus: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def intercept(self) -> tuple[float, float]:
        return float(self.coeffs[0]), float(self.stderr[0])

    @property
    def linear(self) -> tuple[float, float]:
        return float(self.coeffs[1]), float(self.stderr[1])

    @property
    def quadratic(self) -> tuple[float, float]:
        return float(self.coeffs[2]), float(self.stderr[2])


def fit_expansion(sweep: np.ndarray, taus, i: int, j: int, degree: int = 3,
                  meta: dict | None = None) -> ExpansionFit:
    """Fit per-environment [Q]_ij / tau^2 curves to a polynomial in tau.

    Common random numbers make each curve smooth, so the fit is applied per
    environment and the coefficients averaged; stderr is over environments.
    """
    taus = np.asarray(taus, dtype=np.float64)
    if len(taus) < degree + 1:
        raise FitError(f"need at least {degree + 1} tau points for degree {degree}")
    if np.any(taus <= 0):
        raise FitError("tau grid must be strictly positive to divide out tau^2")
    y = sweep[:, :, i, j] / taus[None, :] ** 2   # (n_env, n_tau)
    V = np.vander(taus, degree + 1, increasing=True)
    cond = np.linalg.cond(V.T @ V)
    if not np.isfinite(cond) or cond > 1e14:
        raise FitError(f"tau grid is ill-conditioned for degree {degree} (cond {cond:.2e})")
    coeffs, *_ = np.linalg.lstsq(V, y.T, rcond=None)  # (degree+1, n_env)
    mean = coeffs.mean(axis=1)
    stderr = coeffs.std(axis=1, ddof=1) / np.sqrt(coeffs.shape[1])
    return ExpansionFit(mean, stderr, taus, meta or {})


def c1_check(profile: ProfileB, xi, i: int, j: int, grid: TorusGrid,
             taus=(0.04, 0.08, 0.12, 0.16, 0.20), lam: float | None = None,
             n_env: int = 100, t_nodes: int = 16, inner: int = 2,
             seed: int = 0, degree: int = 3) -> ExpansionFit:
    """Fit [Q]_ij / tau^2 to a cubic over a common-random-number tau grid.

    The linear coefficient estimates the order tau^3 term of [Q]_ij, which
    vanishes off the diagonal.
    """
    if i == j:
        raise DomainError("c1 vanishing is an off-diagonal statement")
    sweep = q_tensor_tau_sweep(grid, profile, taus, xi, lam=lam, n_env=n_env,
                               t_nodes=t_nodes, inner=inner, seed=seed)
    meta = {"xi": list(map(float, np.atleast_1d(xi))), "i": i, "j": j,
            "L": grid.L, "profile": profile.name, "n_env": n_env, "seed": seed,
            "lam": float(lam if lam is not None else 4.0 / grid.L**2)}
    return fit_expansion(sweep, taus, i, j, degree=degree, meta=meta)


# ---------------------------------------------------------------------------
# individual expansion terms

def q_term(orders, i: int, j: int, xi, grid: TorusGrid, profile: ProfileB,
           lam: float | None = None, n_env: int = 100, t_nodes: int = 16,
           inner: int = 2, seed: int = 0) -> tuple[float, float]:
    """One term Q^lam_{n1 n2 n3 n4}(i, j, xi) of the expansion, with stderr.

    Exact shortcuts (stderr 0): the all-zero term reduces to the single-edge
    resolvent pairing; off-diagonal terms whose e_i and e_j slots are both at
    order zero carry a Kronecker clash; off-diagonal terms of total order one
    on an e slot vanish by independence and the zero mean of b.  Everything
    else is estimated by Monte Carlo over environments.
    """
    n1, n2, n3, n4 = (int(n) for n in orders)
    if min(n1, n2, n3, n4) < 0:
        raise DomainError("orders must be non-negative integers")
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (grid.d,):
        raise DomainError(f"xi must have {grid.d} components")
    if not (0 <= i < grid.d and 0 <= j < grid.d):
        raise DomainError("directions out of range")

    total = n1 + n2 + n3 + n4
    if total == 0:
        if i != j:
            return 0.0, 0.0
        db = profile.db_series()
        return float(xi[i] * xi[j] * hermite.resolvent_1d_pair(db, db)), 0.0
    if i != j and n1 == 0 and n3 == 0:
        # the order-zero e_i and e_j slots force k = i and k = j simultaneously
        return 0.0, 0.0
    if i != j and total == 1 and (n1 == 1 or n3 == 1):
        # single propagator chain on an e slot: every surviving term carries
        # one mean-zero b factor independent of the rest
        return 0.0, 0.0

    if lam is None:
        lam = 4.0 / grid.L**2
    if inner < 2:
        raise DomainError("inner sample count must be >= 2 (antithetic pairs)")
    K = max(n1, n2, n3, n4)
    n_pairs = inner // 2
    d = grid.d
    vals = np.empty(n_env)
    for s in range(n_env):
        zeta = gaussian_stream(seed, grid.n_edges, stream=(s, 0)).reshape(grid.edge_shape)
        W0, db0 = _origin_neumann_weights(zeta, profile, lam, K)
        left = W0[n1, i] * (xi @ W0[n2]) * db0          # (d,) over k

        def inner_fields(psi):
            Wp, dbp = _origin_neumann_weights(psi, profile, lam, K)
            return dbp * Wp[n3, j] * (xi @ Wp[n4])

        us, ws = _u_nodes(t_nodes)
        R = np.zeros(d)
        for idx, (u, w) in enumerate(zip(us, ws)):
            c = np.sqrt(1.0 - u * u)
            for p in range(n_pairs):
                zp = gaussian_stream(seed, zeta.size, stream=(s, 1, idx, p)
                                     ).reshape(zeta.shape)
                R += (w / n_pairs) * 0.5 * (
                    inner_fields(u * zeta + c * zp) + inner_fields(u * zeta - c * zp)
                )
        vals[s] = float(left @ R)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_env))
