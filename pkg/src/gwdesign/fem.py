"""P1 finite elements for steady confined groundwater flow on a rectangle.

The mesh is a structured grid of ``nx * ny`` cells, each split along the
bottom-left to top-right diagonal. Nodes are numbered row by row starting at
the bottom-left corner, so node ``(i, j)`` has index ``j * (nx + 1) + i``.

Conductivity is stored at nodes. Inside an element it is represented by the
arithmetic mean of the three vertex values, which is the quadrature used for
assembly, for element fluxes and for the adjoint sensitivities.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded
from scipy.sparse.linalg import splu

from .errors import InvalidArgumentError, NumericalFailureError, OutOfDomainError

SIDES = ("left", "right", "bottom", "top")

# Reference P1 mass matrix scaled by element area.
_LOCAL_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


@dataclass(frozen=True, eq=False)
class Mesh:
    """Structured triangular mesh of ``[0, width] x [0, height]``."""

    nodes: np.ndarray
    elements: np.ndarray
    boundary_tags: dict
    nx: int
    ny: int
    width: float
    height: float

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @functools.cached_property
    def areas(self):
        p = self.nodes[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @functools.cached_property
    def shape_gradients(self):
        """Constant gradients of the three barycentric functions, shape (E, 3, 2)."""
        p = self.nodes[self.elements]
        grads = np.empty((self.n_elements, 3, 2))
        two_area = 2.0 * self.areas
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            grads[:, a, 0] = (p[:, b, 1] - p[:, c, 1]) / two_area
            grads[:, a, 1] = (p[:, c, 0] - p[:, b, 0]) / two_area
        return grads

    @functools.cached_property
    def local_stiffness(self):
        """Unit-conductivity element matrices ``area * G G^T``, shape (E, 3, 3)."""
        g = self.shape_gradients
        return self.areas[:, None, None] * np.einsum("eak,ebk->eab", g, g)

    @functools.cached_property
    def element_mean(self):
        """Sparse (E, M) operator giving the vertex mean of a nodal field."""
        e = self.n_elements
        rows = np.repeat(np.arange(e), 3)
        return sp.csr_matrix(
            (np.full(3 * e, 1.0 / 3.0), (rows, self.elements.ravel())),
            shape=(e, self.n_nodes),
        )

    @functools.cached_property
    def nodal_area_weights(self):
        """Sparse (M, E) operator averaging element values onto nodes by area."""
        e = self.n_elements
        cols = np.repeat(np.arange(e), 3)
        w = sp.csr_matrix(
            (np.repeat(self.areas, 3), (self.elements.ravel(), cols)),
            shape=(self.n_nodes, e),
        )
        total = np.asarray(w.sum(axis=1)).ravel()
        return sp.diags(1.0 / total) @ w

    @functools.cached_property
    def mass(self):
        rows = np.repeat(self.elements, 3, axis=1).ravel()
        cols = np.tile(self.elements, (1, 3)).ravel()
        vals = (self.areas[:, None, None] * _LOCAL_MASS).ravel()
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_nodes,) * 2)

    def node_tags(self, index):
        return {name for name, idx in self.boundary_tags.items() if index in set(idx.tolist())}

    def locate(self, x):
        """Return ``(element, barycentric weights)`` of the element containing ``x``.

        Points on shared edges resolve deterministically: the cell is chosen by
        flooring (clamped to the last cell) and the lower triangle wins on the
        cell diagonal.
        """
        px, py = float(x[0]), float(x[1])
        tol = 1e-12 * max(self.width, self.height)
        if not (-tol <= px <= self.width + tol and -tol <= py <= self.height + tol):
            raise OutOfDomainError(f"point ({px}, {py}) lies outside the mesh domain")
        sx = min(max(px, 0.0), self.width) * self.nx / self.width
        sy = min(max(py, 0.0), self.height) * self.ny / self.height
        i = min(int(math.floor(sx)), self.nx - 1)
        j = min(int(math.floor(sy)), self.ny - 1)
        lower = (sx - i) >= (sy - j)
        elem = 2 * (j * self.nx + i) + (0 if lower else 1)
        v0 = self.nodes[self.elements[elem, 0]]
        bary = self.shape_gradients[elem] @ (np.array([px, py]) - v0)
        bary[0] += 1.0
        return elem, bary

    def nearest_node(self, x):
        d2 = np.sum((self.nodes - np.asarray(x, dtype=float)) ** 2, axis=1)
        return int(np.argmin(d2))


def build_rect_mesh(width, height, nx, ny):
    """Uniform-diagonal triangulation of a ``width x height`` rectangle."""
    if not (width > 0 and height > 0):
        raise InvalidArgumentError("domain dimensions must be positive")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidArgumentError("nx and ny must be integers >= 1")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    nodes = np.column_stack([gx.ravel(), gy.ravel()])

    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    bl = (jj * (nx + 1) + ii).ravel()
    br, tl = bl + 1, bl + nx + 1
    tr = tl + 1
    elements = np.empty((2 * nx * ny, 3), dtype=np.int64)
    elements[0::2] = np.column_stack([bl, br, tr])
    elements[1::2] = np.column_stack([bl, tr, tl])

    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    tags = {
        "left": idx[:, 0].copy(),
        "right": idx[:, -1].copy(),
        "bottom": idx[0, :].copy(),
        "top": idx[-1, :].copy(),
    }
    return Mesh(nodes, elements, tags, nx, ny, float(width), float(height))


@dataclass(frozen=True)
class BoundaryConditions:
    """Dirichlet heads by node index and prescribed outward normal flux by side."""

    dirichlet: dict
    neumann_flux: dict = field(default_factory=dict)

    @classmethod
    def from_sides(cls, mesh, heads, neumann_flux=None):
        """Fixed heads on whole sides; corners shared with Neumann sides stay Dirichlet."""
        dirichlet = {}
        for side, value in heads.items():
            if side not in mesh.boundary_tags:
                raise InvalidArgumentError(f"unknown boundary {side!r}")
            for n in mesh.boundary_tags[side]:
                dirichlet[int(n)] = float(value)
        neumann = dict(neumann_flux or {})
        for side in neumann:
            if side not in mesh.boundary_tags:
                raise InvalidArgumentError(f"unknown boundary {side!r}")
            if side in heads:
                raise InvalidArgumentError(f"side {side!r} is both Dirichlet and Neumann")
        return cls(dirichlet, neumann)

    @property
    def nodes(self):
        return np.array(sorted(self.dirichlet), dtype=np.int64)

    @property
    def values(self):
        return np.array([self.dirichlet[n] for n in sorted(self.dirichlet)])


@dataclass(frozen=True, eq=False)
class FemSystem:
    """Pre-BC stiffness and load plus the Dirichlet constraints to apply."""

    mesh: Mesh
    stiffness: sp.csr_matrix
    load: np.ndarray
    constrained_dofs: np.ndarray
    constrained_values: np.ndarray

    @property
    def free_dofs(self):
        mask = np.ones(self.mesh.n_nodes, dtype=bool)
        mask[self.constrained_dofs] = False
        return np.flatnonzero(mask)

    def condensed(self):
        """Free-DOF block and right-hand side after symmetric elimination."""
        free, fixed = self.free_dofs, self.constrained_dofs
        a = self.stiffness.tocsr()
        a_ff = a[free][:, free]
        rhs = self.load[free] - a[free][:, fixed] @ self.constrained_values
        return a_ff, rhs


@dataclass(frozen=True, eq=False)
class HeadField:
    mesh: Mesh
    nodal_values: np.ndarray


def _check_nodal(mesh, values, name, positive=False):
    arr = np.asarray(values, dtype=float)
    if arr.shape != (mesh.n_nodes,):
        raise InvalidArgumentError(f"{name} has shape {arr.shape}, expected ({mesh.n_nodes},)")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    if positive and np.any(arr <= 0):
        raise InvalidArgumentError(f"{name} must be strictly positive")
    return arr


def element_conductivity(mesh, k_nodal):
    return mesh.element_mean @ k_nodal


def stiffness_matrix(mesh, k_nodal):
    """Pre-BC global stiffness for nodal conductivity ``k_nodal``."""
    k = _check_nodal(mesh, k_nodal, "k_nodal", positive=True)
    k_e = element_conductivity(mesh, k)
    rows = np.repeat(mesh.elements, 3, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 3)).ravel()
    vals = (k_e[:, None, None] * mesh.local_stiffness).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_nodes,) * 2)


def neumann_load(mesh, neumann_flux):
    b = np.zeros(mesh.n_nodes)
    for side, q_n in neumann_flux.items():
        nodes = mesh.boundary_tags[side]
        axis = 1 if side in ("left", "right") else 0
        nodes = nodes[np.argsort(mesh.nodes[nodes, axis])]
        lengths = np.linalg.norm(np.diff(mesh.nodes[nodes], axis=0), axis=1)
        np.add.at(b, nodes[:-1], -0.5 * q_n * lengths)
        np.add.at(b, nodes[1:], -0.5 * q_n * lengths)
    return b


def assemble_system(mesh, k_nodal, bc, source=None):
    """Assemble ``A(theta) u = b`` before boundary conditions are applied."""
    a = stiffness_matrix(mesh, k_nodal)
    b = neumann_load(mesh, bc.neumann_flux)
    if source is not None:
        b += mesh.mass @ _check_nodal(mesh, source, "source")
    return FemSystem(mesh, a, b, bc.nodes, bc.values)


def _check_residual(a_ff, x, rhs, tol=1e-10):
    r = a_ff @ x - rhs
    scale = max(np.linalg.norm(rhs), np.linalg.norm(a_ff @ x), 1e-300)
    rel = np.linalg.norm(r) / scale
    if not np.isfinite(rel) or rel > tol:
        raise NumericalFailureError(f"linear solve residual {rel:.3e} exceeds {tol:g}", residual=rel)
    return rel


def solve(system):
    """Direct sparse solve on the free DOFs with Dirichlet values imposed exactly."""
    mesh = system.mesh
    u = np.zeros(mesh.n_nodes)
    u[system.constrained_dofs] = system.constrained_values
    free = system.free_dofs
    if free.size:
        a_ff, rhs = system.condensed()
        try:
            x = splu(a_ff.tocsc()).solve(rhs)
        except RuntimeError as exc:
            raise NumericalFailureError(f"sparse factorization failed: {exc}") from exc
        _check_residual(a_ff, x, rhs)
        u[free] = x
    return HeadField(mesh, u)


def interpolate_head(field, x):
    elem, bary = field.mesh.locate(x)
    return float(bary @ field.nodal_values[field.mesh.elements[elem]])


def interpolation_matrix(mesh, points):
    """Sparse (P, M) matrix evaluating P1 nodal fields at ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    rows = np.repeat(np.arange(len(points)), 3)
    cols = np.empty(3 * len(points), dtype=np.int64)
    vals = np.empty(3 * len(points))
    for p, x in enumerate(points):
        elem, bary = mesh.locate(x)
        cols[3 * p:3 * p + 3] = mesh.elements[elem]
        vals[3 * p:3 * p + 3] = bary
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(points), mesh.n_nodes))


def element_gradients(mesh, nodal):
    """Constant P1 gradient of a nodal field on every element, shape (E, 2)."""
    return np.einsum("eak,ea->ek", mesh.shape_gradients, nodal[mesh.elements])


def flux_at(field, k_nodal, x):
    """Darcy flux ``-k grad u`` at ``x``; ``k`` is P1-interpolated at the point."""
    mesh = field.mesh
    elem, bary = mesh.locate(x)
    verts = mesh.elements[elem]
    k = bary @ np.asarray(k_nodal, dtype=float)[verts]
    grad = mesh.shape_gradients[elem].T @ field.nodal_values[verts]
    return -k * grad


def element_fluxes(mesh, u, k_nodal):
    return -(mesh.element_mean @ k_nodal)[:, None] * element_gradients(mesh, u)


def nodal_flux_norm(field, k_nodal):
    """Per-node ``||q||_2`` of the area-weighted average of adjacent element fluxes."""
    mesh = field.mesh
    k = _check_nodal(mesh, k_nodal, "k_nodal", positive=True)
    q = mesh.nodal_area_weights @ element_fluxes(mesh, field.nodal_values, k)
    return np.linalg.norm(q, axis=1)


def boundary_flux_qoi(field, k_nodal, boundary, source=None):
    """Outward Darcy flux through a tagged boundary.

    Uses the variationally consistent (residual) flux: the contributions of
    the elements touching the boundary are summed through ``A u - M g`` at its
    nodes. This is exactly conservative, so inflow and outflow balance and the
    value equals the adjoint-weighted domain integral.
    """
    mesh = field.mesh
    if boundary not in mesh.boundary_tags:
        raise InvalidArgumentError(f"unknown boundary {boundary!r}")
    r = stiffness_matrix(mesh, k_nodal) @ field.nodal_values
    if source is not None:
        r -= mesh.mass @ _check_nodal(mesh, source, "source")
    return float(-r[mesh.boundary_tags[boundary]].sum())


class _Scatter:
    """Linear map from element conductivities to a fixed CSR/CSC pattern."""

    def __init__(self, rows, cols, vals, elems, shape, n_elements):
        lin = rows.astype(np.int64) * shape[1] + cols
        uniq, inv = np.unique(lin, return_inverse=True)
        r = uniq // shape[1]
        self.indices = (uniq % shape[1]).astype(np.int32)
        self.indptr = np.searchsorted(r, np.arange(shape[0] + 1)).astype(np.int32)
        self.map = sp.csr_matrix((vals, (inv, elems)), shape=(uniq.size, n_elements))
        self.shape = shape

    def csr(self, k_elem):
        return sp.csr_matrix((self.map @ k_elem, self.indices, self.indptr), shape=self.shape)


class FlowOperator:
    """Precomputed assembly maps for one mesh and one set of Dirichlet nodes.

    Every forward solve in a sampler shares the mesh and the constrained node
    set, so the band structure of the condensed system is built once and each
    new conductivity only costs a sparse mat-vec and a banded Cholesky
    factorization. The same factors serve the primal and the adjoint solve.
    Free nodes are ordered along the shorter grid axis first to keep the
    bandwidth at ``min(nx, ny) + 1``.
    """

    def __init__(self, mesh, constrained_dofs):
        self.mesh = mesh
        self.fixed = np.asarray(constrained_dofs, dtype=np.int64)
        mask = np.ones(mesh.n_nodes, dtype=bool)
        mask[self.fixed] = False
        free = np.flatnonzero(mask)
        ii, jj = free % (mesh.nx + 1), free // (mesh.nx + 1)
        order = np.lexsort((jj, ii)) if mesh.ny < mesh.nx else np.lexsort((ii, jj))
        self.free = free[order]
        free_pos = np.full(mesh.n_nodes, -1)
        free_pos[self.free] = np.arange(self.free.size)
        fixed_pos = np.full(mesh.n_nodes, -1)
        fixed_pos[self.fixed] = np.arange(self.fixed.size)

        e = mesh.n_elements
        rows = np.repeat(mesh.elements, 3, axis=1).ravel()
        cols = np.tile(mesh.elements, (1, 3)).ravel()
        vals = mesh.local_stiffness.ravel()
        elems = np.repeat(np.arange(e), 9)
        fr, fc = free_pos[rows], free_pos[cols]
        ff = (fr >= 0) & (fc >= 0)
        fd = (fr >= 0) & (fixed_pos[cols] >= 0)
        nf, nd = self.free.size, self.fixed.size
        self._ff = _Scatter(fr[ff], fc[ff], vals[ff], elems[ff], (nf, nf), e)
        self._fd = _Scatter(fr[fd], fixed_pos[cols[fd]], vals[fd], elems[fd], (nf, nd), e)

        # upper band storage: ab[bw + i - j, j] = A[i, j] for i <= j
        upper = ff & (fr <= fc)
        self.bandwidth = int(np.max(fc[upper] - fr[upper])) if upper.any() else 0
        flat = (self.bandwidth + fr[upper] - fc[upper]) * nf + fc[upper]
        self._band = sp.csr_matrix(
            (vals[upper], (flat, elems[upper])), shape=((self.bandwidth + 1) * nf, e)
        )

    def factorize(self, k_nodal):
        k_elem = self.mesh.element_mean @ k_nodal
        return FactorizedFlow(self, k_elem)


class FactorizedFlow:
    """Cholesky factors of the condensed stiffness for one conductivity field."""

    def __init__(self, op, k_elem):
        self.op = op
        self.k_elem = k_elem
        n = op.free.size
        ab = (op._band @ k_elem).reshape(op.bandwidth + 1, n)
        try:
            self.factor = cholesky_banded(ab, check_finite=False)
        except (LinAlgError, ValueError) as exc:
            raise NumericalFailureError(f"banded Cholesky failed: {exc}") from exc
        self.a_fd = op._fd.csr(k_elem)

    @functools.cached_property
    def a_ff(self):
        return self.op._ff.csr(self.k_elem)

    def solve(self, fixed_values, load=None, check=True):
        """Full nodal solution for Dirichlet data ``fixed_values`` (ordered as ``op.fixed``)."""
        op = self.op
        rhs = -(self.a_fd @ fixed_values)
        if load is not None:
            rhs = rhs + load[op.free]
        x = cho_solve_banded((self.factor, False), rhs, check_finite=False)
        if check:
            _check_residual(self.a_ff, x, rhs)
        u = np.empty(op.mesh.n_nodes)
        u[op.fixed] = fixed_values
        u[op.free] = x
        return u
