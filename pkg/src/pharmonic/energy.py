"""Energy functionals of the penalized p-harmonic problem and their derivatives.

Fields are node-major arrays of shape ``(N_v, n)``; flat vectors of length
``N_v * n`` are accepted wherever a field is expected. Gradient terms are
integrated exactly (P1 gradients are elementwise constant); zero-order terms
use the quadrature degree from the configuration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .config import SolverConfig
from .mesh import TriMesh, as_nodal, quadrature_rule


def penalty_density(v) -> np.ndarray:
    """Ginzburg-Landau density (|v|^2 - 1)^2 / 4, over the last axis."""
    v = np.asarray(v, dtype=float)
    return 0.25 * (np.sum(v * v, axis=-1) - 1.0) ** 2


def regularized_gradient_norm(G, config: SolverConfig) -> np.ndarray:
    """sqrt(|G|^2 + a_p(eps)^2) with the Frobenius norm over the last two axes."""
    G = np.asarray(G, dtype=float)
    return np.sqrt(np.sum(G * G, axis=(-2, -1)) + config.a_p**2)


@dataclass(frozen=True)
class ConvexSplitting:
    """F = W_plus - W_minus with both parts convex.

    W_plus is treated implicitly, W_minus explicitly. Each callable acts on
    arrays of shape ``(..., n)``; ``plus_hess`` returns ``(..., n, n)``.
    """

    plus: Callable
    plus_grad: Callable
    plus_hess: Callable
    minus: Callable
    minus_grad: Callable
    name: str = "custom"


def _sq(v):
    return np.sum(v * v, axis=-1)


def _quartic_hess(v):
    n = v.shape[-1]
    return _sq(v)[..., None, None] * np.eye(n) + 2.0 * v[..., :, None] * v[..., None, :]


DEFAULT_SPLITTING = ConvexSplitting(
    plus=lambda v: 0.25 * _sq(v) ** 2,
    plus_grad=lambda v: _sq(v)[..., None] * v,
    plus_hess=_quartic_hess,
    minus=lambda v: 0.5 * _sq(v) - 0.25,
    minus_grad=lambda v: np.array(v, dtype=float),
    name="quartic",
)


@dataclass(frozen=True)
class EnergyBreakdown:
    diffusion: float
    p_term: float
    penalty: float
    fidelity: float

    @property
    def total(self) -> float:
        return self.diffusion + self.p_term + self.penalty + self.fidelity


def _check_pair(mesh, u, other):
    u = as_nodal(mesh, u)
    o = as_nodal(mesh, other)
    if o.shape != u.shape:
        raise ValueError(f"field shapes differ: {u.shape} vs {o.shape}")
    return u, o


def _at_quadrature(mesh: TriMesh, values: np.ndarray, rule) -> np.ndarray:
    """Values of the P1 interpolant at the quadrature points, (N_e, Q, n)."""
    return np.matmul(rule.points, values[mesh.elements])


def _integrate(mesh: TriMesh, density_q: np.ndarray, rule) -> float:
    """Integrate (N_e, Q) point values with element-area-scaled weights."""
    per_elem = density_q @ rule.weights
    return float(np.dot(mesh.areas, per_elem))


def _gradient_terms(mesh, u, config):
    G = mesh.gradients(u)
    g2 = np.sum(G * G, axis=(1, 2))
    s = g2 + config.a_p**2
    return G, g2, s


def total_energy(mesh: TriMesh, u, g, config: SolverConfig) -> EnergyBreakdown:
    """The four parts of the regularized, penalized objective at ``u``."""
    u, g = _check_pair(mesh, u, g)
    rule = quadrature_rule(config.quad_degree_zero_order)
    _, g2, s = _gradient_terms(mesh, u, config)
    diffusion = 0.5 * config.b_p * float(np.dot(mesh.areas, g2))
    p_term = float(np.dot(mesh.areas, s ** (0.5 * config.p))) / config.p
    uq = _at_quadrature(mesh, u, rule)
    penalty = _integrate(mesh, penalty_density(uq), rule) / config.delta
    if config.lam == 0.0:
        fidelity = 0.0
    else:
        diff = uq - _at_quadrature(mesh, g, rule)
        fidelity = 0.5 * config.lam * _integrate(mesh, _sq(diff), rule)
    return EnergyBreakdown(diffusion, p_term, penalty, fidelity)


def total_energy_unregularized(mesh: TriMesh, u, g, config: SolverConfig) -> float:
    """E_p(u) + (lam/2)||u - g||^2 with no regularization and no penalty.

    For p = 1 this is the total-variation objective on the discrete space.
    """
    u, g = _check_pair(mesh, u, g)
    rule = quadrature_rule(config.quad_degree_zero_order)
    G = mesh.gradients(u)
    norm = np.sqrt(np.sum(G * G, axis=(1, 2)))
    energy = float(np.dot(mesh.areas, norm**config.p)) / config.p
    if config.lam:
        diff = _at_quadrature(mesh, u, rule) - _at_quadrature(mesh, g, rule)
        energy += 0.5 * config.lam * _integrate(mesh, _sq(diff), rule)
    return energy


def gk_value(mesh: TriMesh, u, u_prev, g, config: SolverConfig,
             splitting: ConvexSplitting = DEFAULT_SPLITTING) -> float:
    """Convex per-step functional whose minimizer is the next time level."""
    u, u_prev = _check_pair(mesh, u, u_prev)
    _, g = _check_pair(mesh, u, g)
    rule = quadrature_rule(config.quad_degree_zero_order)
    _, g2, s = _gradient_terms(mesh, u, config)
    grad_part = float(np.dot(mesh.areas, 0.5 * config.b_p * g2 + s ** (0.5 * config.p) / config.p))

    uq = _at_quadrature(mesh, u, rule)
    pq = _at_quadrature(mesh, u_prev, rule)
    density = _sq(uq - pq) / (2.0 * config.tau)
    density = density + (splitting.plus(uq) - np.sum(splitting.minus_grad(pq) * uq, axis=-1)) / config.delta
    if config.lam:
        density = density + 0.5 * config.lam * _sq(uq - _at_quadrature(mesh, g, rule))
    return grad_part + _integrate(mesh, density, rule)


def _p_coefficients(s, config):
    """First and second derivative weights of (1/p) s^(p/2) with s = |G|^2 + a^2."""
    p = config.p
    c1 = s ** (0.5 * p - 1.0) if p != 2 else np.ones_like(s)
    if p == 2:
        c2 = np.zeros_like(s)
    else:
        c2 = np.zeros_like(s)
        pos = s > 0
        c2[pos] = (p - 2.0) * s[pos] ** (0.5 * p - 2.0)
    return c1, c2


def gk_gradient(mesh: TriMesh, u, u_prev, g, config: SolverConfig,
                splitting: ConvexSplitting = DEFAULT_SPLITTING) -> np.ndarray:
    """Derivative of :func:`gk_value` w.r.t. every nodal coefficient, shape (N_v, n).

    This is the residual of the implicit scheme tested against each hat function.
    """
    u, u_prev = _check_pair(mesh, u, u_prev)
    _, g = _check_pair(mesh, u, g)
    n = u.shape[1]
    rule = quadrature_rule(config.quad_degree_zero_order)
    G, _, s = _gradient_terms(mesh, u, config)
    c1, _ = _p_coefficients(s, config)
    flux = (config.b_p + c1)[:, None, None] * G  # (N_e, n, 2)
    local = np.einsum("enk,eak->ean", flux, mesh.shape_gradients) * mesh.areas[:, None, None]

    uq = _at_quadrature(mesh, u, rule)
    pq = _at_quadrature(mesh, u_prev, rule)
    r = (uq - pq) / config.tau + (splitting.plus_grad(uq) - splitting.minus_grad(pq)) / config.delta
    if config.lam:
        r = r + config.lam * (uq - _at_quadrature(mesh, g, rule))
    wr = r * rule.weights[None, :, None]
    local = local + np.einsum("qa,eqn->ean", rule.points, wr) * mesh.areas[:, None, None]
    return _scatter(mesh, local, n)


def _scatter(mesh, local, n):
    """Sum (N_e, 3, n) element contributions into nodes in element order."""
    idx = mesh.elements.ravel()
    flat = local.reshape(-1, n)
    out = np.empty((mesh.n_nodes, n))
    for i in range(n):
        out[:, i] = np.bincount(idx, weights=flat[:, i], minlength=mesh.n_nodes)
    return out


_PATTERNS: dict = {}


def _block_pattern(mesh: TriMesh, n: int):
    """CSR structure of the assembled matrix and the scatter map of element entries."""
    key = (id(mesh), n)
    hit = _PATTERNS.get(key)
    if hit is not None and hit[0] is mesh:
        return hit[1]
    dofs = (mesh.elements[:, :, None] * n + np.arange(n)).reshape(mesh.n_elements, 3 * n)
    rows = np.repeat(dofs, 3 * n, axis=1).ravel()
    cols = np.tile(dofs, (1, 3 * n)).ravel()
    ndof = mesh.n_nodes * n
    keys, inverse = np.unique(rows * ndof + cols, return_inverse=True)
    indptr = np.searchsorted(keys // ndof, np.arange(ndof + 1))
    pattern = (inverse, keys % ndof, indptr, ndof)
    if len(_PATTERNS) > 16:
        _PATTERNS.clear()
    _PATTERNS[key] = (mesh, pattern)
    return pattern


def gk_hessian(mesh: TriMesh, u, u_prev, g, config: SolverConfig,
               splitting: ConvexSplitting = DEFAULT_SPLITTING) -> sp.csr_matrix:
    """Second derivative of :func:`gk_value`; sparse, symmetric positive definite.

    Rows and columns are node-major dofs ``node * n + component``.
    """
    u, u_prev = _check_pair(mesh, u, u_prev)
    n = u.shape[1]
    rule = quadrature_rule(config.quad_degree_zero_order)
    G, _, s = _gradient_terms(mesh, u, config)
    c1, c2 = _p_coefficients(s, config)
    dphi = mesh.shape_gradients
    areas = mesh.areas
    eye = np.eye(n)

    stiff = np.einsum("eak,ebk->eab", dphi, dphi)  # (N_e, 3, 3)
    K = np.einsum("e,eab,ij->eaibj", areas * (config.b_p + c1), stiff, eye)
    GdotPhi = np.einsum("eik,eak->eai", G, dphi)  # (N_e, 3, n)
    K += np.einsum("e,eai,ebj->eaibj", areas * c2, GdotPhi, GdotPhi)

    uq = _at_quadrature(mesh, u, rule)
    M = splitting.plus_hess(uq) / config.delta + (1.0 / config.tau + config.lam) * eye
    wab = np.einsum("q,qa,qb->qab", rule.weights, rule.points, rule.points)
    K += np.einsum("qab,eqij->eaibj", wab, M, optimize=True) * areas[:, None, None, None, None]

    K = 0.5 * (K + K.transpose(0, 3, 4, 1, 2))  # bitwise symmetric element blocks
    inverse, indices, indptr, ndof = _block_pattern(mesh, n)
    # bincount accumulates in element order, so H[i, j] and H[j, i] match bitwise
    data = np.bincount(inverse, weights=K.ravel(), minlength=len(indices))
    return sp.csr_matrix((data, indices, indptr), shape=(ndof, ndof))
