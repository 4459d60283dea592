"""Triangulations of rectangles, P1 element data and quadrature rules."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference triangle in barycentric coordinates.

    Weights sum to one; multiply by the element area when integrating.
    """

    degree: int
    points: np.ndarray  # (Q, 3) barycentric
    weights: np.ndarray  # (Q,)


_A1 = 0.44594849091596488632
_A2 = 0.091576213509770743460
_W1 = 0.22338158967801146570
_W2 = 0.10995174365532186764


def quadrature_rule(degree: int) -> QuadratureRule:
    """Return the 1-, 3- or 6-point rule exact for polynomials of ``degree``."""
    if degree == 1:
        pts = np.array([[1.0, 1.0, 1.0]]) / 3.0
        wts = np.array([1.0])
    elif degree == 2:
        pts = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
        wts = np.full(3, 1.0 / 3.0)
    elif degree == 4:
        b1 = 1.0 - 2.0 * _A1
        b2 = 1.0 - 2.0 * _A2
        pts = np.array([
            [b1, _A1, _A1], [_A1, b1, _A1], [_A1, _A1, b1],
            [b2, _A2, _A2], [_A2, b2, _A2], [_A2, _A2, b2],
        ])
        wts = np.array([_W1, _W1, _W1, _W2, _W2, _W2])
    else:
        raise ValueError(f"unsupported quadrature degree {degree}; use 1, 2 or 4")
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(degree, pts, wts)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming P1 triangulation.

    ``nodes`` is (N_v, 2), ``elements`` is (N_e, 3) with counter-clockwise
    orientation. Per-element areas and shape-function gradients are cached.
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_nodes: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        elems = np.ascontiguousarray(self.elements, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise ValueError("nodes must have shape (N_v, 2)")
        if elems.ndim != 2 or elems.shape[1] != 3:
            raise ValueError("elements must have shape (N_e, 3)")
        if elems.size and (elems.min() < 0 or elems.max() >= len(nodes)):
            raise ValueError("element references a node that does not exist")
        nodes.setflags(write=False)
        elems.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elems)
        if np.any(self.signed_areas <= 0.0):
            raise ValueError("elements must be counter-clockwise with positive area")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        a = np.abs(self.signed_areas)
        a.setflags(write=False)
        return a

    @cached_property
    def shape_gradients(self) -> np.ndarray:
        """(N_e, 3, 2) constant gradients of the three local hat functions."""
        p = self.nodes[self.elements]
        # grad(phi_a) = rot90(opposite edge) / (2|K|)
        x, y = p[..., 0], p[..., 1]
        gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        twice = 2.0 * self.signed_areas[:, None]
        g = np.stack([gx / twice, gy / twice], axis=2)
        g.setflags(write=False)
        return g

    @cached_property
    def diameters(self) -> np.ndarray:
        p = self.nodes[self.elements]
        edges = p[:, [1, 2, 0]] - p[:, [0, 1, 2]]
        return np.sqrt((edges**2).sum(axis=2)).max(axis=1)

    @property
    def h(self) -> float:
        """Mesh size, the largest element diameter."""
        return float(self.diameters.max())

    @property
    def domain_area(self) -> float:
        return float(self.areas.sum())

    def edges(self) -> dict[tuple[int, int], int]:
        """Map each undirected edge to the number of elements containing it."""
        counts: dict[tuple[int, int], int] = {}
        for tri in self.elements.tolist():
            for a, b in ((0, 1), (1, 2), (2, 0)):
                key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
                counts[key] = counts.get(key, 0) + 1
        return counts

    def gradients(self, values: np.ndarray) -> np.ndarray:
        """Elementwise gradients of a nodal field of shape (N_v, n) -> (N_e, n, 2)."""
        return np.einsum("ean,eak->enk", values[self.elements], self.shape_gradients)

    def describe(self) -> str:
        return f"TriMesh(N_v={self.n_nodes}, N_e={self.n_elements}, h={self.h:.6g})"


def build_rect_mesh(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0,
                    x0: float = 0.0, y0: float = 0.0) -> TriMesh:
    """Uniform triangulation of ``[x0, x0+lx] x [y0, y0+ly]``.

    Each of the ``nx * ny`` cells is cut along its lower-left to upper-right
    diagonal. Nodes are numbered row by row, x fastest.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"nx and ny must be positive integers, got {nx}, {ny}")
    if not (lx > 0 and ly > 0):
        raise ValueError(f"side lengths must be positive, got {lx}, {ly}")
    nx, ny = int(nx), int(ny)
    xs = x0 + lx * np.arange(nx + 1) / nx
    ys = y0 + ly * np.arange(ny + 1) / ny
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    ll = j * (nx + 1) + i
    lr = ll + 1
    ul = ll + nx + 1
    ur = ul + 1
    lower = np.column_stack([ll, lr, ur])
    upper = np.column_stack([ll, ur, ul])
    elements = np.empty((2 * nx * ny, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper

    on_bnd = (
        np.isin(np.arange(nx + 1), [0, nx])[None, :]
        | np.isin(np.arange(ny + 1), [0, ny])[:, None]
    ).ravel()
    return TriMesh(nodes, elements, frozenset(np.flatnonzero(on_bnd).tolist()))


def p1_gradient_on_element(mesh: TriMesh, element_index: int, field: np.ndarray) -> np.ndarray:
    """Constant gradient (n x 2) of the P1 interpolant of ``field`` on one element."""
    if not 0 <= element_index < mesh.n_elements:
        raise IndexError(f"element index {element_index} out of range [0, {mesh.n_elements})")
    values = as_nodal(mesh, field)
    tri = mesh.elements[element_index]
    return values[tri].T @ mesh.shape_gradients[element_index]


def as_nodal(mesh: TriMesh, field: np.ndarray, n_components: int | None = None) -> np.ndarray:
    """View a node-major field (flat or (N_v, n)) as an (N_v, n) array."""
    arr = np.asarray(field, dtype=float)
    if arr.ndim == 1:
        if arr.size == 0 or arr.size % mesh.n_nodes:
            raise ValueError(f"field of length {arr.size} does not fit {mesh.n_nodes} nodes")
        arr = arr.reshape(mesh.n_nodes, -1)
    if arr.ndim != 2 or arr.shape[0] != mesh.n_nodes:
        raise ValueError(f"field shape {np.shape(field)} does not match mesh with {mesh.n_nodes} nodes")
    if n_components is not None and arr.shape[1] != n_components:
        raise ValueError(f"expected {n_components} components, got {arr.shape[1]}")
    return arr


def write_vtk(path, mesh: TriMesh, point_vectors: dict[str, np.ndarray] | None = None,
              title: str = "pharmonic") -> None:
    """Write a legacy ASCII VTK UNSTRUCTURED_GRID file.

    Vector fields with two components are padded with a zero third
    component, as legacy VTK ``VECTORS`` are always 3-D.
    """
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_nodes} double"]
    lines += [f"{x!r} {y!r} 0.0" for x, y in mesh.nodes.tolist()]
    lines.append(f"CELLS {mesh.n_elements} {4 * mesh.n_elements}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.elements.tolist()]
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    lines += ["5"] * mesh.n_elements
    if point_vectors:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        for name, vals in point_vectors.items():
            v = as_nodal(mesh, vals)
            if v.shape[1] > 3:
                raise ValueError("VTK vectors support at most 3 components")
            v = np.pad(v, ((0, 0), (0, 3 - v.shape[1])))
            lines.append(f"VECTORS {name} double")
            lines += [" ".join(repr(c) for c in row) for row in v.tolist()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
