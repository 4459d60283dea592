"""Numerical self-test suites run by ``pharmonic check``."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import energy
from .config import SolverConfig
from .energy import DEFAULT_SPLITTING, gk_hessian, gk_value, penalty_density
from .flow import implicit_step
from .mesh import build_rect_mesh, quadrature_rule

P_VALUES = (1.0, 1.3, 2.0, 3.7)


class CheckFailure(AssertionError):
    pass


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _random_config(rng, p):
    return SolverConfig(p=p, eps=float(rng.uniform(0.05, 1.0)), alpha=float(rng.uniform(1, 3)),
                        delta=float(rng.uniform(0.1, 2.0)), lam=float(rng.uniform(0, 2)),
                        tau=float(rng.uniform(0.05, 1.0)))


def check_quadrature():
    for degree in (1, 2, 4):
        rule = quadrature_rule(degree)
        if abs(rule.weights.sum() - 1.0) > 1e-14:
            raise CheckFailure(f"degree {degree}: weights sum to {rule.weights.sum()!r}")
        for a in range(degree + 1):
            for b in range(degree + 1 - a):
                # reference triangle (0,0),(1,0),(0,1): x = l1, y = l2
                approx = 0.5 * np.dot(rule.weights, rule.points[:, 1] ** a * rule.points[:, 2] ** b)
                exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
                if abs(approx - exact) > 1e-15:
                    raise CheckFailure(f"degree {degree}: x^{a} y^{b} gives {approx!r}, exact {exact!r}")
    return "rules of degree 1, 2, 4 exact on all monomials"


def check_mesh():
    mesh = build_rect_mesh(5, 3, 2.0, 1.5)
    if abs(mesh.domain_area - 3.0) > 1e-12 * 3.0:
        raise CheckFailure("element areas do not sum to the domain area")
    counts = mesh.edges()
    for (a, b), c in counts.items():
        expected = 1 if _edge_on_boundary(mesh, a, b) else 2
        if c != expected:
            raise CheckFailure(f"edge {(a, b)} is shared by {c} elements")
    return f"{len(counts)} edges conforming"


def _edge_on_boundary(mesh, a, b):
    lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)
    pa, pb = mesh.nodes[a], mesh.nodes[b]
    for k in range(2):
        for side in (lo[k], hi[k]):
            if pa[k] == side and pb[k] == side:
                return True
    return False


def check_splitting():
    rng = np.random.default_rng(11)
    s = DEFAULT_SPLITTING
    v = rng.normal(scale=1.5, size=(10_000, 3))
    err = np.max(np.abs(s.plus(v) - s.minus(v) - penalty_density(v)))
    if err > 1e-12:
        raise CheckFailure(f"W+ - W- differs from F by {err:.3e}")
    a, b = v[:5000], v[5000:]
    for W in (s.plus, s.minus):
        if np.any(W(0.5 * (a + b)) > 0.5 * (W(a) + W(b)) + 1e-12):
            raise CheckFailure("midpoint convexity violated")
    return "W+ - W- = F on 1e4 samples, both parts midpoint convex"


def check_gradient(gradient=None):
    gradient = gradient or energy.gk_gradient
    rng = np.random.default_rng(1)
    mesh = build_rect_mesh(2, 1)
    worst = 0.0
    for trial in range(100):
        p = P_VALUES[trial % len(P_VALUES)]
        cfg = _random_config(rng, p)
        u, up, g = (rng.normal(size=(mesh.n_nodes, 3)) for _ in range(3))
        an = gradient(mesh, u, up, g, cfg).ravel()
        h = 1e-6
        fd = np.empty(u.size)
        for i in range(u.size):
            e = np.zeros(u.size)
            e[i] = h
            fd[i] = (gk_value(mesh, u + e.reshape(u.shape), up, g, cfg)
                     - gk_value(mesh, u - e.reshape(u.shape), up, g, cfg)) / (2 * h)
        rel = np.linalg.norm(an - fd) / max(np.linalg.norm(fd), 1e-300)
        worst = max(worst, rel)
        if rel > 1e-6:
            raise CheckFailure(f"trial {trial}, p={p}: relative gradient error {rel:.3e}")
    return f"100 draws, worst relative error {worst:.1e}"


def check_hessian(gradient=None):
    gradient = gradient or energy.gk_gradient
    rng = np.random.default_rng(2)
    mesh = build_rect_mesh(2, 2)
    worst = 0.0
    for trial in range(40):
        p = P_VALUES[trial % len(P_VALUES)]
        cfg = _random_config(rng, p)
        u, up, g = (rng.normal(size=(mesh.n_nodes, 3)) for _ in range(3))
        H = gk_hessian(mesh, u, up, g, cfg)
        if (H != H.T).nnz:
            raise CheckFailure("Hessian is not exactly symmetric")
        w = rng.normal(size=u.size).reshape(u.shape)
        h = 1e-6
        fd = (gradient(mesh, u + h * w, up, g, cfg) - gradient(mesh, u - h * w, up, g, cfg)).ravel() / (2 * h)
        hv = H @ w.ravel()
        rel = np.linalg.norm(hv - fd) / max(np.linalg.norm(fd), 1e-300)
        worst = max(worst, rel)
        if rel > 1e-5:
            raise CheckFailure(f"trial {trial}, p={p}: Hessian-vector error {rel:.3e}")
        if np.linalg.eigvalsh(H.toarray()).min() <= 0:
            raise CheckFailure(f"trial {trial}: Hessian not positive definite")
    return f"40 draws, worst relative error {worst:.1e}, all SPD"


def check_stationary():
    mesh = build_rect_mesh(4, 4)
    c = np.tile([0.0, 0.6, 0.8], (mesh.n_nodes, 1))
    for p in P_VALUES:
        res = implicit_step(mesh, c, c, SolverConfig(p=p))
        if res.newton_iterations != 0 or not np.array_equal(res.field, c):
            raise CheckFailure(f"p={p}: constant unit field moved")
    return "constant unit field fixed for all p"


def run_checks(perturb_gradient: bool = False, out=print) -> bool:
    """Run every suite; print one verdict line each; stop at the first failure."""
    gradient = None
    if perturb_gradient:
        def gradient(*args, **kw):
            return energy.gk_gradient(*args, **kw) + 1e-3
    suites = [
        ("quadrature", check_quadrature),
        ("mesh", check_mesh),
        ("splitting", check_splitting),
        ("gradient", lambda: check_gradient(gradient)),
        ("hessian", lambda: check_hessian(gradient)),
        ("stationary", check_stationary),
    ]
    for name, fn in suites:
        t0 = time.perf_counter()
        try:
            detail = fn()
        except CheckFailure as exc:
            out(f"FAIL {name}: {exc}")
            return False
        out(f"PASS {name}: {detail} ({time.perf_counter() - t0:.2f}s)")
    return True
