"""Gaussian-driven conductances and the corrector equation on the torus.

The disorder is a(e) = 1 + tau * b(zeta_e) with i.i.d. standard Gaussian
drivers zeta_e and a registered profile b (mean zero, |b| <= 1, bounded
derivatives).  The corrector in direction eta solves

    lam * phi + div_adj(a (grad phi + eta)) = 0

by conjugate gradient preconditioned with the exact spectral inverse of
(lam - Laplace); for lam = 0 the solve lives in the mean-zero subspace, where
the operator kernel is exactly the constants.  The contraction series

    eta + grad phi = sum_k X_k,   X_k = [-tau grad (lam - Laplace)^{-1} div_adj b]^k eta

converges for every tau < 1 because the Helmholtz projection has norm one and
|b| <= 1; the solver and the series cross-validate each other in the tests.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import hermite
from .errors import DomainError, EllipticityError, SolverError
from .lattice import (
    ConductanceField,
    EdgeField,
    SiteField,
    TorusGrid,
    div_adj_raw,
    grad_raw,
    helmholtz_project_raw,
    poisson_solve_raw,
)
from .rng import gaussian_stream

__all__ = [
    "ProfileB",
    "CorrectorSolution",
    "get_profile",
    "register_profile",
    "sample_conductance",
    "solve_corrector",
    "neumann_term",
    "homogenized_estimate",
    "projection_field",
]


@dataclass(frozen=True)
class ProfileB:
    """Scalar profile applied to the Gaussian drivers.

    Requirements checked at registration: |b| <= 1, mean zero under the
    standard Gaussian (quadrature), bounded derivative.
    """

    name: str
    b: Callable[[np.ndarray], np.ndarray]
    db: Callable[[np.ndarray], np.ndarray]
    hermite_degree: int = 40
    tail_tol: float = 1e-7

    def validate(self):
        zs = np.linspace(-10.0, 10.0, 4001)
        if np.max(np.abs(self.b(zs))) > 1.0 + 1e-12:
            raise DomainError(f"profile {self.name}: |b| exceeds 1")
        if not np.all(np.isfinite(self.db(zs))):
            raise DomainError(f"profile {self.name}: derivative unbounded")
        mean = hermite.gauss_expect(self.b)
        if abs(mean) > 1e-10:
            raise DomainError(f"profile {self.name}: Gaussian mean {mean:.2e} not zero")

    def b_series(self) -> hermite.HermiteSeries:
        return hermite.hermite_coeffs(self.b, self.hermite_degree, tail_tol=self.tail_tol)

    def db_series(self) -> hermite.HermiteSeries:
        return hermite.hermite_coeffs(self.db, self.hermite_degree, tail_tol=np.inf)

    def second_moment(self) -> float:
        """<b(zeta)^2> by Gauss-Hermite quadrature."""
        return hermite.gauss_expect(lambda z: self.b(z) ** 2)


_PROFILES: dict[str, ProfileB] = {}


def register_profile(profile: ProfileB):
    profile.validate()
    _PROFILES[profile.name] = profile


def get_profile(name: str) -> ProfileB:
    try:
        return _PROFILES[name]
    except KeyError:
        raise DomainError(f"unknown profile {name!r}; registered: {sorted(_PROFILES)}")


register_profile(ProfileB("tanh", np.tanh, lambda z: 1.0 / np.cosh(z) ** 2))
# odd Gaussian-windowed profile, |b| = 1 attained at z = +-1
register_profile(
    ProfileB(
        "zgauss",
        lambda z: z * np.exp((1.0 - z * z) / 2.0),
        lambda z: (1.0 - z * z) * np.exp((1.0 - z * z) / 2.0),
        tail_tol=1e-10,
    )
)


def conductance_from_zeta(grid: TorusGrid, profile: ProfileB, tau: float,
                          zeta: np.ndarray) -> ConductanceField:
    """Build a ConductanceField from explicit Gaussian drivers."""
    if not 0.0 <= tau < 1.0:
        raise EllipticityError(f"contrast tau must lie in [0, 1), got {tau}")
    zeta = np.asarray(zeta, dtype=np.float64).reshape(grid.edge_shape)
    b_vals = profile.b(zeta)
    return ConductanceField(
        grid=grid,
        values=1.0 + tau * b_vals,
        zeta=zeta,
        b_values=b_vals,
        tau=tau,
        profile=profile.name,
    )


def sample_conductance(grid: TorusGrid, profile: ProfileB, tau: float,
                       seed: int) -> ConductanceField:
    """i.i.d. Gaussian drivers from the counter-based stream keyed by the seed.

    Edge e always consumes position e of the (seed,) stream, so the field is
    bit-for-bit reproducible given (seed, grid, profile, tau).
    """
    if not 0.0 <= tau < 1.0:
        raise EllipticityError(f"contrast tau must lie in [0, 1), got {tau}")
    zeta = gaussian_stream(seed, grid.n_edges).reshape(grid.edge_shape)
    return conductance_from_zeta(grid, profile, tau, zeta)


@dataclass(frozen=True)
class CorrectorSolution:
    phi: SiteField
    eta: np.ndarray
    lam: float
    residual: float
    iterations: int

    @property
    def gradient(self) -> EdgeField:
        return EdgeField(self.phi.grid, grad_raw(self.phi.values))


def _pcg(apply_op, rhs, precond, tol, max_iter):
    x = np.zeros_like(rhs)
    r = rhs.copy()
    rhs_norm = np.linalg.norm(rhs)
    history = []
    z = precond(r)
    p = z.copy()
    rz = np.vdot(r, z).real
    for it in range(1, max_iter + 1):
        Ap = apply_op(p)
        alpha = rz / np.vdot(p, Ap).real
        x += alpha * p
        r -= alpha * Ap
        rel = np.linalg.norm(r) / rhs_norm
        history.append(rel)
        if rel <= tol:
            return x, it, history
        z = precond(r)
        rz_new = np.vdot(r, z).real
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"PCG did not reach tol={tol:g} in {max_iter} iterations "
        f"(last residual {history[-1]:.3e})",
        residual_history=history,
    )


def solve_corrector(a: ConductanceField, eta, lam: float = 0.0,
                    tol: float = 1e-10, max_iter: int | None = None) -> CorrectorSolution:
    """Solve lam*phi + div_adj(a (grad phi + eta)) = 0 on the torus.

    For lam = 0 the solution is the exact mean-zero representative.  The
    residual reported is relative to ||div_adj(a eta)||.
    """
    grid = a.grid
    eta = np.asarray(eta, dtype=np.float64)
    if eta.shape != (grid.d,):
        raise DomainError(f"direction must have {grid.d} components")
    if lam < 0:
        raise DomainError(f"mass must be >= 0, got {lam}")
    if max_iter is None:
        max_iter = 10 * grid.L

    eta_field = np.broadcast_to(eta.reshape((grid.d,) + (1,) * grid.d), grid.edge_shape)
    rhs = -div_adj_raw(a.values * eta_field)
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return CorrectorSolution(SiteField.constant(grid), eta, lam, 0.0, 0)
    if lam == 0.0:
        rhs = rhs - rhs.mean()

    def apply_op(u):
        return lam * u + div_adj_raw(a.values * grad_raw(u))

    def precond(r):
        return poisson_solve_raw(r, lam)

    phi, iters, history = _pcg(apply_op, rhs, precond, tol, max_iter)
    if lam == 0.0:
        phi = phi - phi.mean()
    resid = np.linalg.norm(lam * phi + div_adj_raw(a.values * (grad_raw(phi) + eta_field)))
    return CorrectorSolution(SiteField(grid, phi), eta, lam, float(resid / rhs_norm), iters)


def neumann_term(k: int, eta, a: ConductanceField, lam: float = 0.0) -> EdgeField:
    """X_k = [-tau grad (lam - Laplace)^{-1} div_adj b]^k eta as an edge field.

    X_0 is the constant field eta; each application projects out the zero
    mode through the spectral inverse.
    """
    if k < 0:
        raise DomainError("order k must be >= 0")
    grid = a.grid
    eta = np.asarray(eta, dtype=np.float64)
    if eta.shape != (grid.d,):
        raise DomainError(f"direction must have {grid.d} components")
    X = np.broadcast_to(eta.reshape((grid.d,) + (1,) * grid.d), grid.edge_shape).copy()
    for _ in range(k):
        X = -a.tau * helmholtz_project_raw(a.b_values * X, lam)
    return EdgeField(grid, X)


@dataclass(frozen=True)
class HomogenizedEstimate:
    matrix: np.ndarray
    stderr: np.ndarray
    n_samples: int


def homogenized_estimate(samples: Sequence[tuple[ConductanceField, Sequence[CorrectorSolution]]]
                         ) -> HomogenizedEstimate:
    """Estimate abar from per-sample corrector solutions in e_1..e_d.

    abar[i][j] = site average of a_i(x) (delta_ij + grad_i phi_{e_j}(x)),
    averaged over samples and symmetrised; stderr entries are batch means
    over the samples.
    """
    if len(samples) < 2:
        raise DomainError("need at least 2 independent samples")
    mats = []
    for a, sols in samples:
        d = a.grid.d
        if len(sols) != d:
            raise DomainError(f"expected {d} corrector solutions per sample")
        m = np.empty((d, d))
        for j, sol in enumerate(sols):
            flux = a.values * (grad_raw(sol.phi.values)
                               + np.eye(d)[j].reshape((d,) + (1,) * d))
            m[:, j] = flux.reshape(d, -1).mean(axis=1)
        mats.append(0.5 * (m + m.T))
    mats = np.asarray(mats)
    mean = mats.mean(axis=0)
    stderr = mats.std(axis=0, ddof=1) / np.sqrt(len(mats))
    return HomogenizedEstimate(mean, stderr, len(mats))


def projection_field(F: EdgeField, lam: float = 0.0) -> EdgeField:
    """Psi = grad (lam - Laplace)^{-1} div_adj F.

    Torus analogue of the probability-space projection: Psi has zero mean per
    component, is discrete curl-free, matches the divergence of F when
    lam = 0, and contracts the L2 norm.
    """
    if lam < 0:
        raise DomainError(f"mass must be >= 0, got {lam}")
    return EdgeField(F.grid, helmholtz_project_raw(F.values, lam))
