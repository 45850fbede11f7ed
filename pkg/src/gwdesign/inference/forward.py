"""Forward model: KL coefficients to well predictions and nodal fields."""

from __future__ import annotations

import functools

import numpy as np

from ..adjoint import solve_influence
from ..errors import InvalidArgumentError
from ..fem import BoundaryConditions, FlowOperator, HeadField, boundary_flux_qoi, interpolation_matrix, nodal_flux_norm
from ..random_field import kl_realize


class ForwardResult:
    """Fine-model output for one parameter vector; nodal fields are computed on demand."""

    def __init__(self, model, theta, k, u, predictions, factorized):
        self.model = model
        self.theta = theta
        self.conductivity = k
        self.head = u
        self.predictions = predictions
        self._factorized = factorized

    @functools.cached_property
    def head_field(self):
        return HeadField(self.model.mesh, self.head)

    @functools.cached_property
    def flux_norm(self):
        return nodal_flux_norm(self.head_field, self.conductivity)

    @functools.cached_property
    def influence(self):
        m = self.model
        return solve_influence(m.mesh, self.conductivity, m.qoi_boundary, tuple(m.heads),
                               factorized=self._factorized).nodal_values

    @functools.cached_property
    def qoi(self):
        return boundary_flux_qoi(self.head_field, self.conductivity, self.model.qoi_boundary)

    def fields(self):
        return {
            "head": self.head,
            "flux_norm": self.flux_norm,
            "influence": self.influence,
            "conductivity": self.conductivity,
        }


class ForwardModel:
    """Maps ``theta`` to heads then flux norms at the wells.

    Flux norms at a well use the P1 gradient of the element containing it
    (see :meth:`gwdesign.fem.Mesh.locate` for points on shared edges) and the
    conductivity interpolated at the well.
    """

    def __init__(self, mesh, basis, heads=None, wells=None, qoi_boundary="right"):
        if basis.n_nodes != mesh.n_nodes:
            raise InvalidArgumentError("KL basis and mesh have different node counts")
        self.mesh = mesh
        self.basis = basis
        self.heads = dict(heads or {"left": 1.0, "right": 0.0})
        self.qoi_boundary = qoi_boundary
        self.bc = BoundaryConditions.from_sides(mesh, self.heads)
        self.op = FlowOperator(mesh, self.bc.nodes)
        self._fixed_values = np.array([self.bc.dirichlet[int(n)] for n in self.op.fixed])
        self._set_wells(np.zeros((0, 2)) if wells is None else wells)

    @property
    def n_params(self):
        return self.basis.n_kl

    def _set_wells(self, wells):
        wells = np.asarray(wells, dtype=float).reshape(-1, 2)
        self.wells = wells
        self._interp = interpolation_matrix(self.mesh, wells)
        elems = np.array([self.mesh.locate(x)[0] for x in wells], dtype=np.int64)
        self._well_verts = self.mesh.elements[elems]
        self._well_grads = self.mesh.shape_gradients[elems]

    def with_wells(self, wells):
        """Copy sharing the mesh, basis and precomputed operator but observing ``wells``."""
        clone = object.__new__(ForwardModel)
        clone.__dict__.update(self.__dict__)
        clone._set_wells(wells)
        return clone

    def _solve(self, theta):
        k = kl_realize(self.basis, theta)
        fact = self.op.factorize(k)
        u = fact.solve(self._fixed_values)
        return k, u, fact

    def predictions_from(self, k, u):
        """Well predictions for given nodal conductivity and head on this mesh."""
        heads = self._interp @ u
        k_well = self._interp @ k
        grad = np.einsum("pak,pa->pk", self._well_grads, u[self._well_verts])
        flux = k_well * np.linalg.norm(grad, axis=1)
        return np.concatenate([heads, flux])

    def predict(self, theta):
        k, u, _ = self._solve(theta)
        return self.predictions_from(k, u)

    def evaluate(self, theta):
        k, u, fact = self._solve(theta)
        return ForwardResult(self, np.array(theta, dtype=float), k, u, self.predictions_from(k, u), fact)
