"""Matern-3/2 log-Gaussian conductivity prior via a truncated KL expansion."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from .errors import InvalidArgumentError, NumericalFailureError
from .fem import interpolation_matrix

SQRT3 = math.sqrt(3.0)


def matern32(x, y, l):
    """Matern 3/2 correlation between points ``x`` and ``y`` for length scale ``l``."""
    if not l > 0:
        raise InvalidArgumentError("length scale must be positive")
    r = math.dist(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    s = SQRT3 * r / l
    return (1.0 + s) * math.exp(-s)


def build_cov_matrix(points, l):
    """Dense Matern 3/2 covariance between every pair of nodes.

    ``points`` is an (M, 2) array or a :class:`~gwdesign.fem.Mesh`.
    """
    if not l > 0:
        raise InvalidArgumentError("length scale must be positive")
    pts = getattr(points, "nodes", points)
    s = SQRT3 * cdist(pts, pts) / l
    c = (1.0 + s) * np.exp(-s)
    np.fill_diagonal(c, 1.0)
    return c


def truncated_eig(c, n_kl):
    """Largest ``n_kl`` eigenpairs of a symmetric matrix, in descending order.

    Round-off negatives are clamped to zero and each eigenvector is flipped so
    that its largest-magnitude entry is positive.
    """
    c = np.asarray(c, dtype=float)
    m = c.shape[0]
    if not 1 <= n_kl <= m:
        raise InvalidArgumentError(f"n_kl must lie in [1, {m}], got {n_kl}")
    try:
        vals, vecs = scipy.linalg.eigh(c, subset_by_index=[m - n_kl, m - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailureError(f"eigensolver failed: {exc}") from exc
    vals, vecs = vals[::-1].copy(), vecs[:, ::-1].copy()
    vals[vals < 0] = 0.0
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(n_kl)])
    signs[signs == 0] = 1.0
    return vals, vecs * signs


@dataclass(frozen=True, eq=False)
class KLBasis:
    """Truncated KL basis of the log-conductivity on a set of nodes."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    mu: float
    sigma: float
    length_scale: float
    nodes: np.ndarray
    trace: float = float("nan")

    @property
    def n_kl(self):
        return self.eigenvalues.size

    @property
    def n_nodes(self):
        return self.eigenvectors.shape[0]

    @functools.cached_property
    def modes(self):
        """Columns ``sigma * sqrt(lambda_j) * psi_j``; ``log k = mu + modes @ theta``."""
        return self.sigma * self.eigenvectors * np.sqrt(self.eigenvalues)

    def captured_energy(self):
        return float(self.eigenvalues.sum() / self.trace)

    def log_conductivity(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_kl,):
            raise InvalidArgumentError(f"theta has shape {theta.shape}, expected ({self.n_kl},)")
        return self.mu + self.modes @ theta

    def truncate(self, n_kl):
        """Leading ``n_kl`` modes of the same basis."""
        if not 1 <= n_kl <= self.n_kl:
            raise InvalidArgumentError(f"cannot truncate {self.n_kl} modes to {n_kl}")
        return KLBasis(
            self.eigenvalues[:n_kl].copy(),
            self.eigenvectors[:, :n_kl].copy(),
            self.mu, self.sigma, self.length_scale, self.nodes, self.trace,
        )

    def transfer(self, source_mesh, target_mesh):
        """Interpolate the eigenvectors onto another mesh with P1 shape functions.

        No re-orthonormalisation is done, so a given ``theta`` describes the
        same field on both meshes up to interpolation error.
        """
        if self.n_nodes != source_mesh.n_nodes:
            raise InvalidArgumentError("basis does not live on source_mesh")
        vecs = interpolation_matrix(source_mesh, target_mesh.nodes) @ self.eigenvectors
        return KLBasis(
            self.eigenvalues.copy(), vecs, self.mu, self.sigma, self.length_scale,
            target_mesh.nodes.copy(), self.trace,
        )

    def save(self, path):
        np.savez(
            path,
            eigenvalues=self.eigenvalues,
            eigenvectors=self.eigenvectors,
            nodes=self.nodes,
            hyper=np.array([self.mu, self.sigma, self.length_scale, self.trace]),
        )

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            mu, sigma, l, tr = z["hyper"]
            return cls(z["eigenvalues"], z["eigenvectors"], float(mu), float(sigma), float(l),
                       z["nodes"], float(tr))


def build_kl_basis(mesh, n_kl, length_scale=0.1, mu=-2.0, sigma=1.0):
    c = build_cov_matrix(mesh, length_scale)
    vals, vecs = truncated_eig(c, n_kl)
    return KLBasis(vals, vecs, float(mu), float(sigma), float(length_scale),
                   mesh.nodes.copy(), float(np.trace(c)))


def kl_realize(basis, theta):
    """Nodal conductivities ``exp(mu + sigma * Psi Lambda^(1/2) theta)``."""
    return np.exp(basis.log_conductivity(theta))


def sample_prior(rng, n_kl):
    if n_kl < 1:
        raise InvalidArgumentError("n_kl must be >= 1")
    return rng.standard_normal(n_kl)
