import numpy as np
import pytest

from hessvar import symmat


def random_sym(rng, count, n, scale=1.0):
    A = rng.standard_normal((count, n, n)) * scale
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def test_pack_unpack_roundtrip():
    rng = np.random.default_rng(0)
    for n in (2, 3):
        M = random_sym(rng, 7, n)
        assert np.array_equal(symmat.unpack(symmat.pack(M), n), M)


def test_packed_norm_matches_full_norm():
    rng = np.random.default_rng(1)
    for n in (2, 3):
        M = random_sym(rng, 5, n)
        np.testing.assert_allclose(
            symmat.hs_norm_packed(symmat.pack(M)), symmat.hs_norm(M), rtol=1e-14
        )


@pytest.mark.parametrize("n", [2, 3])
def test_eigenvalues_match_lapack(n):
    rng = np.random.default_rng(2)
    M = random_sym(rng, 200, n, scale=3.0)
    w = symmat.sym_eigvals(M)
    w_ref = np.linalg.eigvalsh(M)
    np.testing.assert_allclose(w, w_ref, atol=1e-12 * 3.0)


@pytest.mark.parametrize("n", [2, 3])
def test_eigendecomposition_reconstructs(n):
    rng = np.random.default_rng(3)
    M = random_sym(rng, 100, n)
    w, V = symmat.sym_eig(M)
    R = np.einsum("bij,bj,bkj->bik", V, w, V)
    np.testing.assert_allclose(R, M, atol=1e-13)
    I = np.einsum("bij,bkj->bik", V, V)
    np.testing.assert_allclose(I, np.broadcast_to(np.eye(n), I.shape), atol=1e-13)


def test_eigen_handles_repeated_eigenvalues():
    M = np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, -1.0]])
    w, V = symmat.sym_eig(M)
    np.testing.assert_allclose(w, [-1.0, 2.0, 2.0], atol=1e-14)
    np.testing.assert_allclose(V @ np.diag(w) @ V.T, M, atol=1e-13)


@pytest.mark.parametrize("n", [2, 3])
def test_det_and_inverse_against_lapack(n):
    rng = np.random.default_rng(4)
    M = random_sym(rng, 50, n) + 4.0 * np.eye(n)
    np.testing.assert_allclose(symmat.det_sym(M), np.linalg.det(M), rtol=1e-12)
    np.testing.assert_allclose(symmat.inv_sym(M), np.linalg.inv(M), rtol=1e-11, atol=1e-13)


def test_op_norm_is_max_abs_eigenvalue():
    rng = np.random.default_rng(5)
    for n in (2, 3):
        M = random_sym(rng, 40, n, scale=2.0)
        ref = np.abs(np.linalg.eigvalsh(M)).max(axis=-1)
        np.testing.assert_allclose(symmat.op_norm(M), ref, rtol=1e-12)


def test_haar_rotations_are_orthogonal():
    rng = np.random.default_rng(6)
    for n in (2, 3):
        Q = symmat.haar_rotations(rng, 30, n)
        I = np.einsum("bij,bkj->bik", Q, Q)
        np.testing.assert_allclose(I, np.broadcast_to(np.eye(n), I.shape), atol=1e-12)
        np.testing.assert_allclose(np.linalg.det(Q), 1.0, atol=1e-12)


def test_opnorm_ball_sampling_respects_radius():
    rng = np.random.default_rng(7)
    for n in (2, 3):
        M = symmat.random_sym_opnorm_ball(rng, 500, n, radius=0.7)
        assert symmat.op_norm(M).max() <= 0.7 + 1e-12
        # symmetric by construction
        np.testing.assert_allclose(M, np.swapaxes(M, -1, -2), atol=1e-15)


def test_check_symmetric_rejects_bad_input():
    with pytest.raises(ValueError):
        symmat.check_symmetric(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        symmat.check_symmetric(np.array([[np.inf, 0.0], [0.0, 1.0]]))
