"""Sphere-valued field utilities and constraint diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import TriMesh, as_nodal, quadrature_rule

DEGENERATE_MODULUS = 1e-12


def project_to_sphere(u, fallback) -> tuple[np.ndarray, int]:
    """Normalize every row of ``u``; rows shorter than 1e-12 get ``fallback``.

    Returns the projected array and the number of fallback substitutions.
    """
    u = np.asarray(u, dtype=float)
    fallback = np.asarray(fallback, dtype=float)
    if fallback.shape != u.shape[-1:]:
        raise ValueError(f"fallback must have {u.shape[-1]} components")
    if not math.isclose(float(np.linalg.norm(fallback)), 1.0, abs_tol=1e-12):
        raise ValueError("fallback must be a unit vector")
    mod = np.linalg.norm(u, axis=-1, keepdims=True)
    bad = mod[..., 0] < DEGENERATE_MODULUS
    with np.errstate(invalid="ignore", divide="ignore"):
        out = u / mod
    out[bad] = fallback
    return out, int(bad.sum())


@dataclass(frozen=True)
class ConstraintReport:
    l2_violation: float
    linf_nodal_violation: float
    delta: float

    @property
    def scaled_violation(self) -> float:
        return self.l2_violation / math.sqrt(self.delta)


def _quad_values(mesh, u, rule):
    return np.einsum("qa,ean->eqn", rule.points, u[mesh.elements])


def constraint_violation_l2(mesh: TriMesh, u) -> float:
    """|| |u|^2 - 1 ||_{L^2} of the P1 interpolant (exact with the degree-4 rule)."""
    u = as_nodal(mesh, u)
    rule = quadrature_rule(4)
    uq = _quad_values(mesh, u, rule)
    d = np.sum(uq * uq, axis=-1) - 1.0
    return math.sqrt(float(np.dot(mesh.areas, (d * d) @ rule.weights)))


def constraint_report(mesh: TriMesh, u, delta: float) -> ConstraintReport:
    if not delta > 0:
        raise ValueError("delta must be positive")
    u = as_nodal(mesh, u)
    linf = float(np.max(np.abs(np.linalg.norm(u, axis=1) - 1.0)))
    return ConstraintReport(constraint_violation_l2(mesh, u), linf, float(delta))


def wedge(a, b):
    """Antisymmetric product: cross product for n = 3, a1*b2 - a2*b1 for n = 2."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError("wedge operands must have equal length")
    n = a.shape[-1]
    if n == 3:
        return np.cross(a, b)
    if n == 2:
        return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    raise ValueError(f"wedge is only defined here for n in (2, 3), got n={n}")


def orthogonality_defect(mesh: TriMesh, u, u_prev, tau: float) -> float:
    """Integral of ((u - u_prev)/tau . u)^2, zero for flows tangent to the sphere."""
    u = as_nodal(mesh, u)
    u_prev = as_nodal(mesh, u_prev)
    if u.shape != u_prev.shape:
        raise ValueError(f"field shapes differ: {u.shape} vs {u_prev.shape}")
    rule = quadrature_rule(4)
    uq = _quad_values(mesh, u, rule)
    dq = _quad_values(mesh, u - u_prev, rule) / tau
    d = np.sum(dq * uq, axis=-1)
    return float(np.dot(mesh.areas, (d * d) @ rule.weights))
