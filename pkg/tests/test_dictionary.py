import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import subspace_angles

from hsinpaint.dictionary import (Dictionary, admm_sparse_code, ista_sparse_code, lasso_objective, load_dictionary,
                                  online_dictionary_learn, save_dictionary, soft_threshold, spectral_norm_sq)
from hsinpaint.errors import CubeFormatError, ShapeMismatchError


def random_instance(seed, m=8, k=12):
    r = np.random.default_rng(seed)
    phi = r.standard_normal((m, k))
    phi /= np.linalg.norm(phi, axis=0)
    return phi, r.standard_normal(m)


def test_soft_threshold_examples():
    assert soft_threshold(np.array([1.2]), 0.5)[0] == pytest.approx(0.7)
    assert soft_threshold(np.array([-0.3]), 0.5)[0] == 0.0
    np.testing.assert_array_equal(soft_threshold(np.array([-2.0, 0.0, 2.0]), 1.0), [-1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        soft_threshold(np.ones(2), -1.0)


@given(seed=st.integers(0, 10_000), tau=st.floats(0, 3))
def test_soft_threshold_non_expansive_and_zero_identity(seed, tau):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal(10), r.standard_normal(10)
    assert np.linalg.norm(soft_threshold(a, tau) - soft_threshold(b, tau)) <= np.linalg.norm(a - b) + 1e-12
    np.testing.assert_array_equal(soft_threshold(a, 0.0), a)


def test_dictionary_invariants():
    with pytest.raises(ValueError):
        Dictionary(np.ones((3, 2)))
    with pytest.raises(ValueError):
        Dictionary(np.full((2, 1), np.nan))
    d = Dictionary.from_matrix(np.arange(1.0, 7.0).reshape(3, 2))
    np.testing.assert_allclose(np.linalg.norm(d.atoms, axis=0), 1.0, atol=1e-12)
    assert (d.atom_len, d.n_atoms) == (3, 2)


def test_dictionary_file_round_trip(tmp_path):
    phi, _ = random_instance(0)
    d = Dictionary.from_matrix(phi)
    save_dictionary(d, tmp_path / "d")
    back = load_dictionary(tmp_path / "d")
    np.testing.assert_allclose(back.atoms, d.atoms, atol=1e-6)
    np.testing.assert_allclose(np.linalg.norm(back.atoms, axis=0), 1.0, atol=1e-12)
    raw = np.frombuffer((tmp_path / "d.bin").read_bytes(), dtype="<f4")
    np.testing.assert_allclose(raw[:8], d.atoms[:, 0], atol=1e-7)  # column-major
    (tmp_path / "d.bin").write_bytes(b"\x00" * 8)
    with pytest.raises(CubeFormatError):
        load_dictionary(tmp_path / "d")


def test_ista_orthonormal_closed_form():
    alpha = ista_sparse_code(np.eye(2), np.array([1.2, -0.3]), w_s=0.5, iters=50)
    np.testing.assert_allclose(alpha, [0.7, 0.0], atol=1e-12)
    alpha = ista_sparse_code(np.eye(2), np.array([1.2, -0.3]), w_s=1.0, mu1=2.0, iters=50)
    np.testing.assert_allclose(alpha, [0.7, 0.0], atol=1e-12)


def test_ista_least_squares_limit(rng):
    phi = rng.standard_normal((5, 5)) + 3 * np.eye(5)
    z = rng.standard_normal(5)
    alpha = ista_sparse_code(phi, z, 0.0, iters=20_000)
    np.testing.assert_allclose(alpha, np.linalg.solve(phi, z), atol=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_ista_reaches_long_run_reference(seed):
    phi, z = random_instance(seed)
    ref = ista_sparse_code(phi, z, 0.1, iters=100_000)
    alpha, trace = ista_sparse_code(phi, z, 0.1, iters=5000, full_output=True)
    assert lasso_objective(phi, z, alpha, 0.1) - lasso_objective(phi, z, ref, 0.1) <= 1e-8
    assert np.all(np.diff(trace) <= 1e-12)


def test_ista_errors():
    with pytest.raises(ShapeMismatchError):
        ista_sparse_code(np.eye(3), np.ones(2), 0.1)
    with pytest.raises(ValueError):
        ista_sparse_code(np.eye(2), np.ones(2), 0.1, step=0.0)
    with pytest.warns(RuntimeWarning):
        ista_sparse_code(np.eye(2), np.ones(2), 0.1, step=5.0, iters=2)


def test_admm_closed_form_and_least_squares(rng):
    np.testing.assert_allclose(admm_sparse_code(np.eye(2), np.array([1.2, -0.3]), 0.5), [0.7, 0.0], atol=1e-6)
    phi = rng.standard_normal((6, 4))
    z = rng.standard_normal(6)
    ls = np.linalg.lstsq(phi, z, rcond=None)[0]
    np.testing.assert_allclose(admm_sparse_code(phi, z, 0.0, iters=2000), ls, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_admm_matches_ista_objective(seed):
    phi, z = random_instance(seed)
    a1 = ista_sparse_code(phi, z, 0.2, iters=20_000)
    a2, res = admm_sparse_code(phi, z, 0.2, iters=5000, full_output=True)
    assert abs(lasso_objective(phi, z, a1, 0.2) - lasso_objective(phi, z, a2, 0.2)) <= 1e-6
    assert res[-1] < 1e-8


def check_lasso_kkt(phi, z, alpha, w_s, mu1):
    g = mu1 * phi.T @ (z - phi @ alpha)
    assert np.all(np.abs(g) <= w_s + 1e-4)
    on = np.abs(alpha) > 1e-8
    np.testing.assert_allclose(g[on], w_s * np.sign(alpha[on]), atol=1e-4)


# ISTA is sublinear on these rank-deficient instances, hence the long runs and fewer examples
@settings(max_examples=10)
@given(seed=st.integers(0, 1000), w_s=st.floats(0.01, 1.0), mu1=st.floats(0.5, 2.0))
def test_ista_satisfies_optimality_conditions(seed, w_s, mu1):
    phi, z = random_instance(seed)
    check_lasso_kkt(phi, z, ista_sparse_code(phi, z, w_s, iters=100_000, mu1=mu1), w_s, mu1)


@given(seed=st.integers(0, 1000), w_s=st.floats(0.01, 1.0), mu1=st.floats(0.5, 2.0))
def test_admm_satisfies_optimality_conditions(seed, w_s, mu1):
    phi, z = random_instance(seed)
    check_lasso_kkt(phi, z, admm_sparse_code(phi, z, w_s, iters=20_000, mu1=mu1), w_s, mu1)


def test_spectral_norm_sq_matches_svd(rng):
    phi = rng.standard_normal((7, 9))
    assert spectral_norm_sq(phi) == pytest.approx(np.linalg.svd(phi, compute_uv=False)[0] ** 2, rel=1e-10)


def test_dictionary_learning_rank_one_data():
    v = np.array([3.0, -1.0, 2.0])
    d = online_dictionary_learn(np.tile(v, (20, 1)), 1, 0.01, epochs=3, seed=0)
    assert abs(abs(d.atoms[:, 0] @ v) / np.linalg.norm(v) - 1) < 1e-10


def test_dictionary_learning_recovers_subspace():
    r = np.random.default_rng(5)
    basis = np.linalg.qr(r.standard_normal((6, 3)))[0]
    patches = (basis @ r.standard_normal((3, 300))).T
    d = online_dictionary_learn(patches, 3, 1e-4, epochs=15, seed=1)
    assert np.max(subspace_angles(d.atoms, basis)) < 1e-3


def test_dictionary_learning_monotone_and_deterministic(rng):
    patches = rng.standard_normal((150, 8))
    d1, hist = online_dictionary_learn(patches, 12, 0.1, epochs=6, seed=3, full_output=True)
    d2 = online_dictionary_learn(patches, 12, 0.1, epochs=6, seed=3)
    np.testing.assert_array_equal(d1.atoms, d2.atoms)
    assert np.all(np.diff(hist) <= 1e-6)
    np.testing.assert_allclose(np.linalg.norm(d1.atoms, axis=0), 1.0, atol=1e-8)
    with pytest.raises(ValueError):
        online_dictionary_learn(np.zeros((0, 4)), 2, 0.1)
