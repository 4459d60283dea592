"""Implicit time stepping of the penalized p-harmonic heat flow.

Each step minimizes the strictly convex functional :func:`gk_value` by a
damped Newton method. The explicit half of the convex splitting makes the
scheme energy stable for any step size, and :class:`FlowTrace` records the
quantities needed to audit that.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .config import SolverConfig
from .energy import (DEFAULT_SPLITTING, ConvexSplitting, EnergyBreakdown, gk_gradient,
                     gk_hessian, gk_value, total_energy)
from .mesh import TriMesh, as_nodal, quadrature_rule
from .sphere import constraint_violation_l2, orthogonality_defect

log = logging.getLogger(__name__)

ARMIJO = 1e-4
MIN_STEP = 2.0**-40


class NonConvergence(RuntimeError):
    """Newton iteration did not reach the residual tolerance."""

    def __init__(self, message, step=None, residual=None):
        super().__init__(message)
        self.step = step
        self.residual = residual


class LinearSolveFailure(RuntimeError):
    """The SPD Newton system could not be solved (indicates an assembly defect)."""


@dataclass
class StepResult:
    field: np.ndarray
    newton_iterations: int
    final_residual_norm: float
    gk_decrease: float


def _solve(H: sp.csr_matrix, rhs: np.ndarray, method: str) -> np.ndarray:
    if method == "direct":
        x = spla.splu(H.tocsc(), permc_spec="MMD_AT_PLUS_A").solve(rhs)
    else:
        d = H.diagonal()
        if np.any(d <= 0):
            raise LinearSolveFailure("nonpositive Hessian diagonal")
        M = sp.diags(1.0 / d)
        x, info = spla.cg(H, rhs, rtol=1e-13, atol=0.0, maxiter=10 * len(rhs), M=M)
        if info != 0:
            raise LinearSolveFailure(f"conjugate gradients stopped with info={info}")
    if not np.all(np.isfinite(x)):
        raise LinearSolveFailure("non-finite Newton direction")
    return x


def implicit_step(mesh: TriMesh, u_prev, g, config: SolverConfig,
                  splitting: ConvexSplitting = DEFAULT_SPLITTING) -> StepResult:
    """Advance one time step: minimize G_k starting from ``u_prev``."""
    u_prev = as_nodal(mesh, u_prev)
    if not np.all(np.isfinite(u_prev)):
        raise ValueError("u_prev contains non-finite values")
    g = as_nodal(mesh, g, u_prev.shape[1])
    shape = u_prev.shape

    def value(v):
        return gk_value(mesh, v, u_prev, g, config, splitting)

    def residual(v):
        return gk_gradient(mesh, v, u_prev, g, config, splitting).ravel()

    u = u_prev.ravel().copy()
    f_start = f = value(u)
    r = residual(u)
    rnorm = float(np.linalg.norm(r))
    it = 0
    while rnorm > config.newton_tol:
        if it >= config.newton_max_iter:
            raise NonConvergence(
                f"Newton stopped after {it} iterations with residual {rnorm:.3e} "
                f"> tol {config.newton_tol:.1e}", residual=rnorm)
        H = gk_hessian(mesh, u.reshape(shape), u_prev, g, config, splitting)
        d = _solve(H, -r, config.linear_solver)
        slope = float(np.dot(r, d))
        if not slope < 0:
            raise LinearSolveFailure(f"Newton direction is not a descent direction (slope={slope:.3e})")

        step = 1.0
        while True:
            trial = u + step * d
            f_trial = value(trial)
            if f_trial <= f + ARMIJO * step * slope:
                break
            # Near the minimizer the predicted decrease drops below the rounding
            # level of G_k; take the full step if it is not an ascent in floating point.
            if step == 1.0 and -slope <= 64 * np.finfo(float).eps * max(1.0, abs(f)):
                r_trial = residual(trial)
                if f_trial <= f + 8 * np.finfo(float).eps * max(1.0, abs(f)) and \
                        np.linalg.norm(r_trial) < rnorm:
                    break
            step *= 0.5
            if step < MIN_STEP:
                raise NonConvergence(f"line search failed at Newton iteration {it} "
                                     f"(residual {rnorm:.3e})", residual=rnorm)
        u, f = trial, f_trial
        r = residual(u)
        rnorm = float(np.linalg.norm(r))
        it += 1

    return StepResult(u.reshape(shape), it, rnorm, f_start - f)


@dataclass(frozen=True)
class TraceRow:
    step: int
    time: float
    energy: EnergyBreakdown
    dt_norm_sq: float
    cum_dissipation: float
    constraint_l2: float
    max_modulus: float
    orth_defect: float
    newton_iters: int
    gk_decrease: float = 0.0


CSV_COLUMNS = ("step", "time", "e_diffusion", "e_pterm", "e_penalty", "e_fidelity", "e_total",
               "dt_norm_sq", "cum_dissipation", "constraint_l2", "max_modulus", "orth_defect",
               "newton_iters")


@dataclass
class FlowTrace:
    """Per-step record of a run; row 0 is the initial state."""

    tau: float
    rows: list[TraceRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        if name.startswith("e_"):
            attr = {"e_pterm": "p_term"}.get(name, name[2:])
            return np.array([getattr(r.energy, attr) for r in self.rows])
        return np.array([getattr(r, name) for r in self.rows])

    def energy_estimate_excess(self) -> np.ndarray:
        """J(u^l) + dissipation up to l - J(u^0); nonpositive for an exact scheme."""
        tot = self.column("e_total")
        return tot + self.column("cum_dissipation") - tot[0]

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            e = r.energy
            w.writerow([r.step, repr(r.time), repr(e.diffusion), repr(e.p_term), repr(e.penalty),
                        repr(e.fidelity), repr(e.total), repr(r.dt_norm_sq), repr(r.cum_dissipation),
                        repr(r.constraint_l2), repr(r.max_modulus), repr(r.orth_defect),
                        r.newton_iters])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


@dataclass
class FlowResult:
    trace: FlowTrace
    field: np.ndarray
    fields: list[np.ndarray] | None = None
    stopped_early: bool = False


def _l2_sq(mesh: TriMesh, v: np.ndarray, degree: int) -> float:
    rule = quadrature_rule(degree)
    vq = np.einsum("qa,ean->eqn", rule.points, v[mesh.elements])
    return float(np.dot(mesh.areas, np.sum(vq * vq, axis=-1) @ rule.weights))


def _row(mesh, k, t, u, u_prev, g, config, dt_sq, cum, iters, dec):
    return TraceRow(
        step=k, time=t, energy=total_energy(mesh, u, g, config), dt_norm_sq=dt_sq,
        cum_dissipation=cum, constraint_l2=constraint_violation_l2(mesh, u),
        max_modulus=float(np.max(np.linalg.norm(u, axis=1))),
        orth_defect=orthogonality_defect(mesh, u, u_prev, config.tau) if k else 0.0,
        newton_iters=iters, gk_decrease=dec)


def run_flow(mesh: TriMesh, u0, g, config: SolverConfig,
             splitting: ConvexSplitting = DEFAULT_SPLITTING, *,
             stop_tol: float = 0.0, keep_fields: bool = False, callback=None) -> FlowResult:
    """Run ``config.n_steps`` implicit steps from ``u0``.

    With ``stop_tol > 0`` the run ends once :func:`stationarity_check` holds.
    ``callback(k, u)`` is invoked after every accepted step.
    """
    u = as_nodal(mesh, u0).copy()
    g = as_nodal(mesh, g, u.shape[1])
    L = config.n_steps
    tau = config.tau
    trace = FlowTrace(tau)
    trace.rows.append(_row(mesh, 0, 0.0, u, u, g, config, 0.0, 0.0, 0, 0.0))
    fields = [u.copy()] if keep_fields else None
    cum = 0.0
    stopped = False
    for k in range(1, L + 1):
        try:
            res = implicit_step(mesh, u, g, config, splitting)
        except NonConvergence as exc:
            raise NonConvergence(f"step {k}: {exc}", step=k, residual=exc.residual) from exc
        except LinearSolveFailure as exc:
            raise LinearSolveFailure(f"step {k}: {exc}") from exc
        u_new = res.field
        dt_sq = _l2_sq(mesh, u_new - u, config.quad_degree_zero_order) / tau**2
        cum += 0.5 * tau * dt_sq
        trace.rows.append(_row(mesh, k, k * tau, u_new, u, g, config, dt_sq, cum,
                               res.newton_iterations, res.gk_decrease))
        if keep_fields:
            fields.append(u_new.copy())
        if callback is not None:
            callback(k, u_new)
        done = stop_tol > 0 and stationarity_check(mesh, u_new, u, tau, stop_tol)
        u = u_new
        if done:
            log.info("stationary at step %d (t=%g)", k, k * tau)
            stopped = True
            break
    return FlowResult(trace, u, fields, stopped)


def time_interpolant(fields, tau: float, t: float) -> np.ndarray:
    """Piecewise linear in time interpolation through ``fields[k]`` at ``k * tau``."""
    L = len(fields) - 1
    if L < 1:
        raise ValueError("need at least two time levels")
    if not 0.0 <= t <= L * tau:
        raise ValueError(f"t={t} outside [0, {L * tau}]")
    k = min(max(int(math.ceil(t / tau)), 1), L)
    t_prev, t_k = (k - 1) * tau, k * tau
    if t == t_k:
        return np.array(fields[k], dtype=float)
    if t == t_prev:
        return np.array(fields[k - 1], dtype=float)
    a = (t - t_prev) / tau
    b = (t_k - t) / tau
    return a * np.asarray(fields[k], dtype=float) + b * np.asarray(fields[k - 1], dtype=float)


def stationarity_check(mesh: TriMesh, u, u_prev, tau: float, threshold: float) -> bool:
    """True iff ||u - u_prev||_{L^2} / tau <= threshold."""
    u = as_nodal(mesh, u)
    u_prev = as_nodal(mesh, u_prev)
    if u.shape != u_prev.shape:
        raise ValueError("field shapes differ")
    return math.sqrt(_l2_sq(mesh, u - u_prev, 4)) / tau <= threshold
