import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gwdesign.errors import InvalidArgumentError
from gwdesign.fem import build_rect_mesh
from gwdesign.random_field import (
    KLBasis,
    build_cov_matrix,
    build_kl_basis,
    kl_realize,
    matern32,
    sample_prior,
    truncated_eig,
)


@pytest.fixture(scope="module")
def coarse_basis():
    mesh = build_rect_mesh(2, 1, 24, 12)
    return mesh, build_kl_basis(mesh, 40)


class TestMatern:
    def test_zero_distance(self):
        assert matern32((0.3, 0.4), (0.3, 0.4), 0.1) == 1.0

    def test_at_length_scale(self):
        s = mpmath.sqrt(3)
        expected = float((1 + s) * mpmath.exp(-s))
        assert matern32((0, 0), (0.1, 0), 0.1) == pytest.approx(expected, rel=1e-14)
        assert expected == pytest.approx(0.48335, abs=1e-5)

    def test_far_and_monotone(self):
        assert matern32((0, 0), (10.0, 0), 0.1) < 1e-60
        r = np.linspace(0, 2, 200)
        vals = [matern32((0, 0), (x, 0), 0.1) for x in r]
        assert np.all(np.diff(vals) < 0)

    @pytest.mark.parametrize("l", [0.0, -0.1])
    def test_invalid_length_scale(self, l):
        with pytest.raises(InvalidArgumentError):
            matern32((0, 0), (1, 0), l)
        with pytest.raises(InvalidArgumentError):
            build_cov_matrix(np.zeros((2, 2)), l)


class TestCovariance:
    def test_unit_diagonal_and_symmetry(self):
        c = build_cov_matrix(build_rect_mesh(2, 1, 10, 5), 0.1)
        assert np.all(np.diag(c) == 1.0)
        np.testing.assert_array_equal(c, c.T)

    def test_two_points(self):
        pts = np.array([[0.0, 0.0], [0.05, 0.02]])
        c = build_cov_matrix(pts, 0.1)
        assert c[0, 1] == pytest.approx(matern32(pts[0], pts[1], 0.1), rel=1e-14)

    def test_unit_cell_matches_loop(self):
        mesh = build_rect_mesh(1, 1, 1, 1)
        c = build_cov_matrix(mesh, 0.1)
        for i in range(4):
            for j in range(4):
                assert c[i, j] == pytest.approx(matern32(mesh.nodes[i], mesh.nodes[j], 0.1), rel=1e-13, abs=1e-300)


class TestEig:
    def test_identity(self):
        vals, vecs = truncated_eig(np.eye(5), 3)
        np.testing.assert_allclose(vals, 1.0)
        np.testing.assert_allclose(vecs.T @ vecs, np.eye(3), atol=1e-12)

    def test_rank_one(self):
        v = np.array([1.0, -2.0, 0.5, 3.0])
        vals, vecs = truncated_eig(np.outer(v, v), 2)
        assert vals[0] == pytest.approx(v @ v, rel=1e-12)
        assert vals[1] == pytest.approx(0.0, abs=1e-12)
        assert vals[1] >= 0.0

    def test_residuals_matern(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 1, (10, 2))
        c = build_cov_matrix(pts, 0.3)
        vals, vecs = truncated_eig(c, 10)
        for j in range(10):
            assert np.linalg.norm(c @ vecs[:, j] - vals[j] * vecs[:, j]) <= 1e-8 * vals[0]

    def test_sign_convention(self):
        c = build_cov_matrix(build_rect_mesh(1, 1, 6, 6), 0.2)
        _, vecs = truncated_eig(c, 8)
        _, vecs2 = truncated_eig(c.copy(), 8)
        np.testing.assert_array_equal(vecs, vecs2)
        for j in range(8):
            assert vecs[np.argmax(np.abs(vecs[:, j])), j] > 0

    @pytest.mark.parametrize("n", [0, 6])
    def test_bad_count(self, n):
        with pytest.raises(InvalidArgumentError):
            truncated_eig(np.eye(5), n)


class TestBasis:
    def test_invariants(self, coarse_basis):
        mesh, basis = coarse_basis
        lam, psi = basis.eigenvalues, basis.eigenvectors
        assert np.all(np.diff(lam) <= 0) and np.all(lam >= 0)
        np.testing.assert_allclose(psi.T @ psi, np.eye(basis.n_kl), atol=1e-8)
        c = build_cov_matrix(mesh, 0.1)
        res = np.linalg.norm(c @ psi - psi * lam, axis=0)
        assert np.all(res <= 1e-8 * lam[0])

    def test_captured_energy_increases(self):
        mesh = build_rect_mesh(2, 1, 16, 8)
        full = build_kl_basis(mesh, 60)
        fractions = [full.truncate(n).captured_energy() for n in (5, 20, 40, 60)]
        assert np.all(np.diff(fractions) > 0)
        assert full.eigenvalues.sum() <= mesh.n_nodes
        assert fractions[-1] < 1.0

    def test_realize_prior_mean(self, coarse_basis):
        _, basis = coarse_basis
        np.testing.assert_allclose(kl_realize(basis, np.zeros(basis.n_kl)), math.exp(-2.0), rtol=1e-15)
        assert math.exp(-2.0) == pytest.approx(0.13534, abs=1e-5)

    def test_zero_sigma(self, coarse_basis):
        mesh, b = coarse_basis
        flat = KLBasis(b.eigenvalues, b.eigenvectors, -2.0, 0.0, 0.1, b.nodes)
        theta = np.random.default_rng(0).standard_normal(b.n_kl)
        np.testing.assert_allclose(kl_realize(flat, theta), math.exp(-2.0), rtol=1e-15)

    def test_dimension_mismatch(self, coarse_basis):
        _, basis = coarse_basis
        with pytest.raises(InvalidArgumentError):
            kl_realize(basis, np.zeros(basis.n_kl + 1))

    @given(st.integers(0, 2**31))
    @settings(max_examples=20, deadline=None)
    def test_log_linear_in_theta(self, seed):
        basis = build_kl_basis(build_rect_mesh(1, 1, 5, 5), 6)
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((2, 6))
        mu = basis.mu
        lhs = np.log(kl_realize(basis, a + b)) - mu
        rhs = (np.log(kl_realize(basis, a)) - mu) + (np.log(kl_realize(basis, b)) - mu)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_monte_carlo_moments(self, coarse_basis):
        _, basis = coarse_basis
        rng = np.random.default_rng(11)
        n = 5000
        logk = np.log(np.array([kl_realize(basis, sample_prior(rng, basis.n_kl)) for _ in range(n)]))
        var_kl = np.sum(basis.modes ** 2, axis=1)
        cov_kl = basis.modes @ basis.modes.T
        nodes = rng.choice(basis.n_nodes, 10, replace=False)
        for i in nodes:
            se = math.sqrt(var_kl[i] / n)
            assert abs(logk[:, i].mean() + 2.0) <= 3 * se
            assert abs(logk[:, i].var(ddof=1) / var_kl[i] - 1) <= 0.10
        pairs = rng.choice(basis.n_nodes, (10, 2))
        emp = np.cov(logk, rowvar=False)
        for i, j in pairs:
            # Relative error for well-correlated pairs, absolute for nearly independent ones.
            assert abs(emp[i, j] - cov_kl[i, j]) <= 0.10 * max(abs(cov_kl[i, j]), math.sqrt(var_kl[i] * var_kl[j]))

    def test_transfer_keeps_field(self, coarse_basis):
        fine, basis = coarse_basis
        coarse = build_rect_mesh(2, 1, 12, 6)
        moved = basis.transfer(fine, coarse)
        assert moved.n_nodes == coarse.n_nodes
        # Coarse nodes coincide with fine nodes, so values carry over exactly.
        idx = [fine.nearest_node(x) for x in coarse.nodes]
        np.testing.assert_allclose(moved.eigenvectors, basis.eigenvectors[idx], atol=1e-14)

    def test_save_load_roundtrip(self, coarse_basis, tmp_path):
        _, basis = coarse_basis
        path = tmp_path / "basis.npz"
        basis.save(path)
        back = KLBasis.load(path)
        np.testing.assert_array_equal(back.eigenvectors, basis.eigenvectors)
        np.testing.assert_array_equal(back.eigenvalues, basis.eigenvalues)
        assert (back.mu, back.sigma, back.length_scale) == (basis.mu, basis.sigma, basis.length_scale)


class TestSamplePrior:
    def test_reproducible(self):
        a = sample_prior(np.random.default_rng(5), 7)
        b = sample_prior(np.random.default_rng(5), 7)
        np.testing.assert_array_equal(a, b)

    def test_moments(self):
        rng = np.random.default_rng(3)
        draws = np.array([sample_prior(rng, 4) for _ in range(100_000)])
        assert np.all(np.abs(draws.mean(axis=0)) <= 3 / math.sqrt(1e5))
        assert np.all(np.abs(draws.var(axis=0, ddof=1) - 1) <= 0.05)

    def test_invalid(self):
        with pytest.raises(InvalidArgumentError):
            sample_prior(np.random.default_rng(0), 0)
