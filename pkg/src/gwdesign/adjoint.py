"""Influence function for the boundary-flux QoI and its parameter sensitivities.

The flow operator is self-adjoint, so the adjoint problem reuses the primal
stiffness matrix. Only the Dirichlet data change: one on the target boundary,
zero on the remaining fixed-head sides, no-flow elsewhere.

For a domain-integral objective ``Q = int f dx`` with ``f`` independent of the
head, the same sensitivity formula applies with the adjoint solved against a
unit source and homogeneous Dirichlet data; that variant is only exercised in
the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .fem import (
    BoundaryConditions,
    Mesh,
    assemble_system,
    element_gradients,
    solve,
    stiffness_matrix,
)
from .random_field import kl_realize


@dataclass(frozen=True, eq=False)
class InfluenceField:
    mesh: Mesh
    nodal_values: np.ndarray
    target_boundary: str


def influence_conditions(mesh, target_boundary, dirichlet_sides=("left", "right")):
    if target_boundary not in dirichlet_sides:
        raise InvalidArgumentError(f"{target_boundary!r} is not a Dirichlet boundary of the primal problem")
    heads = {side: 0.0 for side in dirichlet_sides if side != target_boundary}
    heads[target_boundary] = 1.0
    return BoundaryConditions.from_sides(mesh, heads)


def solve_influence(mesh, k_nodal, target_boundary, dirichlet_sides=("left", "right"), factorized=None):
    """Solve the adjoint state problem for the outward flux through ``target_boundary``.

    ``factorized`` may carry the primal factorization (a
    :class:`~gwdesign.fem.FactorizedFlow` for the same Dirichlet node set),
    in which case no new assembly happens.
    """
    bc = influence_conditions(mesh, target_boundary, dirichlet_sides)
    if factorized is not None:
        fixed_values = np.array([bc.dirichlet[int(n)] for n in factorized.op.fixed])
        values = factorized.solve(fixed_values)
    else:
        values = solve(assemble_system(mesh, k_nodal, bc)).nodal_values
    return InfluenceField(mesh, values, target_boundary)


def _weighted_gradient_products(u, omega):
    mesh = u.mesh
    return mesh.areas * np.einsum(
        "ek,ek->e", element_gradients(mesh, omega.nodal_values), element_gradients(mesh, u.nodal_values)
    )


def qoi_gradient(u, omega, basis, theta):
    """``dQ/dtheta`` for every KL mode at once."""
    k = kl_realize(basis, theta)
    dk_elem = u.mesh.element_mean @ (k[:, None] * basis.modes)
    return -(dk_elem.T @ _weighted_gradient_products(u, omega))


def adjoint_sensitivity(u, omega, basis, theta, j):
    """Derivative of the boundary-flux QoI with respect to KL coefficient ``j``.

    Evaluates ``int [omega dg/dtheta_j - grad(omega) . dk/dtheta_j grad(u)] dx``
    with ``g = 0`` and ``dk/dtheta_j = k sigma sqrt(lambda_j) psi_j`` averaged
    over element vertices, i.e. the same quadrature as assembly.
    """
    if not 0 <= j < basis.n_kl:
        raise InvalidArgumentError(f"mode index {j} out of range for {basis.n_kl} modes")
    k = kl_realize(basis, theta)
    dk_elem = u.mesh.element_mean @ (k * basis.modes[:, j])
    return float(-(dk_elem @ _weighted_gradient_products(u, omega)))


def variational_qoi(u, omega, k_nodal, source=None):
    """QoI as the adjoint-weighted energy pairing ``-(omega^T A u - omega^T M g)``."""
    mesh = u.mesh
    value = omega.nodal_values @ (stiffness_matrix(mesh, k_nodal) @ u.nodal_values)
    if source is not None:
        value -= omega.nodal_values @ (mesh.mass @ source)
    return float(-value)
