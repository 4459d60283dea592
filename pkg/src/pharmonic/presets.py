"""Synthetic initial data for flow runs."""

from __future__ import annotations

import numpy as np

from .mesh import TriMesh


def constant(mesh: TriMesh, n: int) -> np.ndarray:
    u = np.zeros((mesh.n_nodes, n))
    u[:, -1] = 1.0
    return u


def smoothed_vortex(mesh: TriMesh, n: int, radius: float = 0.1) -> np.ndarray:
    """Degree-one planar vortex at the domain center with core radius ``radius``.

    u = (x - c) / sqrt(|x - c|^2 + radius^2) in the first two components, zero
    elsewhere, so |u| < 1 everywhere and |u| -> 1 away from the core.
    """
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    x = mesh.nodes - 0.5 * (lo + hi)
    planar = x / np.sqrt(np.sum(x * x, axis=1) + radius**2)[:, None]
    u = np.zeros((mesh.n_nodes, n))
    u[:, :2] = planar
    return u


def random_unit(mesh: TriMesh, n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((mesh.n_nodes, n))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def initial_data(mesh: TriMesh, name: str, n: int, *, seed: int = 0, radius: float = 0.1) -> np.ndarray:
    if name == "constant":
        return constant(mesh, n)
    if name == "smoothed-vortex":
        return smoothed_vortex(mesh, n, radius)
    if name == "random-unit":
        return random_unit(mesh, n, seed)
    raise ValueError(f"unknown preset {name!r}")
