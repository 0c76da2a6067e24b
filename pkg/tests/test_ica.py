import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relayfd.ica import (DemixingModel, WhiteningResult, center, fastica, gaussian_reference, ica,
                         negentropy_approx, separate, whiten)


def match_correlations(est, truth):
    """Greedy max-|corr| assignment of estimated rows to true rows."""
    c = np.abs(np.corrcoef(np.vstack([est, truth]))[:len(est), len(est):])
    out = []
    for _ in range(len(truth)):
        i, j = np.unravel_index(np.argmax(c), c.shape)
        out.append(c[i, j])
        c[i, :] = -1
        c[:, j] = -1
    return np.array(out)


def mixture(n, seed, t=2000):
    rng = np.random.default_rng(seed)
    tt = np.arange(t)
    pool = [np.sin(2 * np.pi * tt / 37.0), rng.uniform(-1, 1, t), rng.laplace(size=t),
            np.sign(np.sin(2 * np.pi * tt / 91.0))]
    s = np.vstack(pool[:n])
    a = rng.uniform(-1, 1, (n, n))
    while np.linalg.cond(a) > 10:
        a = rng.uniform(-1, 1, (n, n))
    return s, a


def test_center_examples():
    x = np.array([[1.0, -1.0, 0.0], [2.0, 2.0, 2.0]])
    xc, mean = center(x)
    np.testing.assert_array_equal(xc[0], x[0])
    np.testing.assert_array_equal(xc[1], 0.0)
    np.testing.assert_array_equal(mean, [0.0, 2.0])
    r = np.random.default_rng(1).normal(5, 3, (4, 100))
    assert np.abs(center(r)[0].mean(axis=1)).max() < 1e-12


def test_whiten_identity_covariance_stays_identity():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((3, 500))
    z = whiten(z).whitened
    res = whiten(z)
    q = res.whitening_matrix
    np.testing.assert_allclose(q @ q.T, np.eye(3), atol=1e-8)
    np.testing.assert_allclose(res.whitened @ res.whitened.T / 500, np.eye(3), atol=1e-8)


def test_whiten_diagonal_covariance():
    rng = np.random.default_rng(3)
    z = whiten(rng.standard_normal((2, 1000))).whitened
    x = np.vstack([2 * z[0], z[1]])
    v = whiten(x).whitening_matrix
    np.testing.assert_allclose(np.sort(np.abs(v).max(axis=1)), [0.5, 1.0], atol=1e-10)
    np.testing.assert_allclose(np.sort(np.abs(v).min(axis=1)), [0.0, 0.0], atol=1e-10)


def test_whiten_rank_one():
    r = np.random.default_rng(4).standard_normal(200)
    assert whiten(np.vstack([r, 2 * r])).retained_dims == 1


def test_whiten_rejects_constant():
    with pytest.raises(ValueError):
        whiten(np.ones((2, 10)))


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 6), seed=st.integers(0, 10_000))
def test_whitening_contract(m, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (m, m)) @ rng.laplace(size=(m, 10 * m + 50)) + 3.0
    res = whiten(x, eig_cutoff_ratio=0.0)
    if res.retained_dims == m:
        cov = res.whitened @ res.whitened.T / x.shape[1]
        assert np.abs(cov - np.eye(m)).max() < 1e-8


def test_negentropy_gaussian_is_near_zero():
    y = np.random.default_rng(0).standard_normal(1_000_000)
    assert negentropy_approx(y) < 1e-4


def test_negentropy_laplace_and_uniform():
    rng = np.random.default_rng(1)
    base = negentropy_approx(rng.standard_normal(1_000_000))
    assert negentropy_approx(rng.laplace(size=1_000_000)) > base
    u = [negentropy_approx(np.random.default_rng(s).uniform(-1, 1, 1_000_000)) for s in range(3)]
    assert min(u) > 0
    assert (max(u) - min(u)) / np.mean(u) < 0.10


def test_gaussian_reference_value():
    # E log cosh(nu) for a standard normal, cross-checked by Monte Carlo
    nu = np.random.default_rng(9).standard_normal(2_000_000)
    assert gaussian_reference() == pytest.approx(np.mean(np.log(np.cosh(nu))), abs=1e-3)


def test_negentropy_rejects_constant_and_unknown():
    with pytest.raises(ValueError):
        negentropy_approx(np.ones(10))
    with pytest.raises(ValueError):
        negentropy_approx(np.arange(10.0), "quartic")


def test_independent_rows_give_signed_permutation():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, (3, 20000))
    xc = x - x.mean(axis=1, keepdims=True)
    # symmetric whitening keeps the original axes, unlike the PCA rotation
    evals, evecs = np.linalg.eigh(xc @ xc.T / xc.shape[1])
    z = evecs @ np.diag(evals ** -0.5) @ evecs.T @ xc
    white = WhiteningResult(np.zeros(3), np.eye(3), z, 3, np.ones(3))
    model = fastica(white, 3, seed=1)
    w = np.abs(model.w_matrix)
    np.testing.assert_allclose(np.sort(w, axis=1)[:, -1], 1.0, atol=0.05)
    assert np.all(np.sort(w, axis=1)[:, :-1] < 0.05)


def test_two_source_recovery():
    t = np.arange(3000)
    s = np.vstack([np.sin(2 * np.pi * t / 50), np.random.default_rng(6).uniform(-1, 1, t.size)])
    x = np.array([[1.0, 0.5], [0.5, 1.0]]) @ s
    model = ica(x, 2, seed=0)
    assert model.converged
    assert match_correlations(model.sources, s).min() >= 0.99


def test_gaussian_sources_do_not_crash():
    rng = np.random.default_rng(7)
    x = np.array([[1.0, 0.5], [0.5, 1.0]]) @ rng.standard_normal((2, 2000))
    model = ica(x, 2, seed=0, max_iter=50)
    assert model.sources.shape == (2, 2000)
    assert isinstance(model.converged, bool)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 4), seed=st.integers(0, 10_000))
def test_rows_orthonormal_and_recovery(n, seed):
    s, a = mixture(n, seed)
    model = ica(a @ s, n, seed=seed)
    np.testing.assert_allclose(model.w_matrix @ model.w_matrix.T, np.eye(n), atol=1e-8)
    assert match_correlations(model.sources, s).min() >= 0.99


@pytest.mark.parametrize("seed", range(5))
def test_channel_permutation_equivalence(seed):
    s, a = mixture(3, seed)
    x = a @ s
    perm = np.random.default_rng(seed).permutation(3)
    m1 = ica(x, 3, seed=seed)
    m2 = ica(x[perm], 3, seed=seed)
    assert match_correlations(m1.sources, m2.sources).min() >= 0.99


def test_determinism():
    s, a = mixture(3, 2)
    m1, m2 = ica(a @ s, 3, seed=4), ica(a @ s, 3, seed=4)
    np.testing.assert_array_equal(m1.w_matrix, m2.w_matrix)
    np.testing.assert_array_equal(m1.sources, m2.sources)


def test_separate_training_matrix_bit_exact():
    s, a = mixture(2, 3)
    x = a @ s
    model = ica(x, 2, seed=0)
    np.testing.assert_array_equal(separate(model, x), model.sources)


def test_separate_identity_model():
    x = np.random.default_rng(0).standard_normal((3, 5))
    white = WhiteningResult(np.zeros(3), np.eye(3), x, 3, np.ones(3))
    model = DemixingModel(np.eye(3), white, x, 0, (True,) * 3)
    np.testing.assert_array_equal(separate(model, x), x)


def test_separate_new_data_from_same_mixing():
    s, a = mixture(2, 8, t=4000)
    model = ica(a @ s[:, :2000], 2, seed=0)
    assert match_correlations(separate(model, a @ s[:, 2000:]), s[:, 2000:]).min() >= 0.99


def test_input_validation():
    with pytest.raises(ValueError):
        fastica(whiten(np.random.default_rng(0).standard_normal((2, 50))), 3)
    with pytest.raises(ValueError):
        center(np.array([[1.0, np.inf]]))
    model = ica(np.random.default_rng(0).laplace(size=(2, 50)), 2)
    with pytest.raises(ValueError):
        separate(model, np.zeros((3, 4)))
