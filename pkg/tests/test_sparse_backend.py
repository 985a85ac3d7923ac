import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from steklov import sparse_backend as sb
from steklov.errors import (ConfigError, NumericallySingularError,
                            OracleCapExceededError, StructurallySingularError)
from steklov.geometry import DomainBox, MeshConfig, build_discretization
from steklov.local_ops import laplace_field


def random_sparse(rng, n, density):
    """Well-conditioned random instance: sparse noise plus dominant diagonal."""
    m = sp.random(n, n, density=density, random_state=np.random.RandomState(
        rng.integers(2**31)), data_rvs=lambda k: rng.standard_normal(k))
    m = sp.csr_matrix(m)
    dominance = np.abs(m).sum(axis=1).A1 + 1.0
    return sp.csr_matrix(m + sp.diags(dominance))


def test_identity_factorization_no_fill():
    f = sb.analyze_and_factor(sp.identity(5, format="csr"))
    assert f.factor_nnz == 10  # L and U each hold the unit diagonal
    x = sb.solve(f, np.arange(5.0))
    assert np.array_equal(x, np.arange(5.0))


def test_antidiagonal_needs_pivoting():
    m = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    f = sb.analyze_and_factor(m)
    assert np.allclose(sb.solve(f, np.array([1.0, 2.0])), [2.0, 1.0])


def test_zero_diagonal_full_rank_matrix():
    n = 12
    m = np.zeros((n, n))
    for i in range(n):
        m[i, (i + 1) % n] = 2.0 + i
        m[i, (i + 3) % n] = -1.0
    f = sb.analyze_and_factor(sp.csr_matrix(m))
    rng = np.random.default_rng(5)
    b = rng.standard_normal(n)
    assert np.allclose(m @ sb.solve(f, b), b, atol=1e-12)


def test_seeded_random_matrices_match_dense_oracle():
    rng = np.random.default_rng(42)
    count = 0
    for n in (10, 50, 200):
        for density in (0.05, 0.2):
            trials = {10: 20, 50: 20, 200: 10}[n]
            for _ in range(trials):
                m = random_sparse(rng, n, density)
                b = rng.standard_normal(n)
                f = sb.analyze_and_factor(m)
                x = sb.solve(f, b)
                x_dense = scipy.linalg.solve(m.toarray(), b)
                scale = np.linalg.norm(x_dense)
                assert np.linalg.norm(x - x_dense) <= 1e-12 * max(scale, 1.0)
                count += 1
    assert count == 100


def test_factor_backward_error_bound():
    rng = np.random.default_rng(7)
    for n in (10, 50):
        m = random_sparse(rng, n, 0.2)
        f = sb.analyze_and_factor(m)
        x = rng.standard_normal((n, 3))
        b = m @ x
        x_hat = sb.solve(f, b)
        res = np.linalg.norm(m @ x_hat - b, axis=0)
        bound = 1e3 * np.finfo(float).eps * (
            sp.linalg.norm(m) * np.linalg.norm(x_hat, axis=0)
            + np.linalg.norm(b, axis=0))
        assert (res <= bound).all()


def test_multi_rhs_linearity():
    rng = np.random.default_rng(3)
    m = random_sparse(rng, 30, 0.2)
    f = sb.analyze_and_factor(m)
    b = rng.standard_normal(30)
    out = sb.solve(f, np.column_stack([b, 2.0 * b]))
    assert np.allclose(out[:, 1], 2.0 * out[:, 0], atol=1e-13)


def test_zero_rhs_gives_zero():
    m = sp.identity(4, format="csr") * 2.0
    f = sb.analyze_and_factor(m)
    assert np.array_equal(sb.solve(f, np.zeros(4)), np.zeros(4))


def test_factorization_reuse_identical_results():
    rng = np.random.default_rng(11)
    m = random_sparse(rng, 40, 0.15)
    b1, b2 = rng.standard_normal(40), rng.standard_normal(40)
    f = sb.analyze_and_factor(m)
    x1, x2 = sb.solve(f, b1), sb.solve(f, b2)
    g = sb.analyze_and_factor(m)
    y1 = sb.solve(g, b1)
    h = sb.analyze_and_factor(m)
    y2 = sb.solve(h, b2)
    assert np.array_equal(x1, y1)
    assert np.array_equal(x2, y2)


def test_structural_singularity_reported():
    m = sp.csr_matrix(np.array([[1.0, 0.0, 2.0], [0.0, 0.0, 0.0], [3.0, 0.0, 1.0]]))
    with pytest.raises(StructurallySingularError):
        sb.analyze_and_factor(m)


def test_numerically_singular_reported():
    m = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(NumericallySingularError):
        sb.analyze_and_factor(m)


def test_empty_system():
    f = sb.analyze_and_factor(sp.csr_matrix((0, 0)))
    out = sb.solve(f, np.zeros(0))
    assert out.shape == (0,)


def test_shape_mismatch_rejected():
    f = sb.analyze_and_factor(sp.identity(3, format="csr"))
    with pytest.raises(ConfigError):
        sb.solve(f, np.zeros(4))


def test_fill_reducing_beats_natural_on_3d_interface_pattern():
    prob_coeffs = laplace_field(3)
    disc = build_discretization(DomainBox((0, 0, 0), (1, 1, 1)),
                                MeshConfig((3, 3, 3), 5))
    from steklov.condensation import build
    sys = build(disc, prob_coeffs)
    f_fill = sb.analyze_and_factor(sys.t, ordering=sb.FILL_REDUCING)
    f_nat = sb.analyze_and_factor(sys.t, ordering=sb.NATURAL)
    assert f_fill.factor_nnz < f_nat.factor_nnz


def test_pivot_statistics_and_factor_reconstruction():
    rng = np.random.default_rng(21)
    n = 25
    m = random_sparse(rng, n, 0.3)
    f = sb.analyze_and_factor(m)
    assert f.smallest_pivot > 0.0
    assert f.growth_factor > 0.0
    assert f.perm_r is not None and f.perm_c is not None
    L, U = f._lu.L.toarray(), f._lu.U.toarray()
    Pr = np.zeros((n, n)); Pr[f.perm_r, np.arange(n)] = 1.0
    Pc = np.zeros((n, n)); Pc[np.arange(n), f.perm_c] = 1.0
    recon = Pr.T @ (L @ U) @ Pc.T
    err = np.abs(recon - m.toarray()).max()
    assert err <= 100 * n * np.finfo(float).eps * np.abs(m.toarray()).max()


def test_sparse_matrix_accumulator_sums_duplicates():
    sm = sb.SparseMatrix(3)
    sm.add([0, 0, 1], [1, 1, 2], [2.0, 3.0, 1.0])
    csr = sm.finalize()
    assert csr[0, 1] == 5.0
    assert csr.nnz == 2


def test_sparse_matrix_rejects_out_of_range():
    sm = sb.SparseMatrix(2)
    with pytest.raises(ConfigError):
        sm.add([2], [0], [1.0])


def test_dump_coo_round_trip():
    m = sp.csr_matrix(np.array([[1.5, 0.0], [0.0, -2.25e-13]]))
    text = sb.dump_coo(m)
    rows = [line.split() for line in text.strip().splitlines()]
    recon = sp.coo_matrix(
        ([float(v) for _, _, v in rows],
         ([int(r) for r, _, _ in rows], [int(c) for _, c, _ in rows])),
        shape=m.shape).tocsr()
    assert (recon != m).nnz == 0


class TestDenseOracle:
    def test_single_leaf_polynomial_exact(self):
        disc = build_discretization(DomainBox((0, 0), (1, 1)), MeshConfig((1, 1), 7))

        def exact(x):
            return x[:, 0] ** 3 - 3 * x[:, 0] * x[:, 1] ** 2

        u = sb.dense_full_system_oracle(
            disc, laplace_field(2), lambda x: np.zeros(x.shape[0]), exact)
        rel = np.linalg.norm(u - exact(disc.nodes)) / np.linalg.norm(exact(disc.nodes))
        assert rel <= 1e-11

    def test_constant_boundary_data_gives_constant(self):
        disc = build_discretization(DomainBox((0, 0), (1, 1)), MeshConfig((2, 2), 5))
        u = sb.dense_full_system_oracle(
            disc, laplace_field(2), lambda x: np.zeros(x.shape[0]),
            lambda x: np.full(x.shape[0], 4.2))
        assert np.abs(u - 4.2).max() <= 1e-11

    def test_cap_enforced(self):
        disc = build_discretization(DomainBox((0, 0), (1, 1)), MeshConfig((2, 2), 6))
        with pytest.raises(OracleCapExceededError):
            sb.dense_full_system_oracle(
                disc, laplace_field(2), lambda x: np.zeros(x.shape[0]),
                lambda x: np.zeros(x.shape[0]), cap=10)
