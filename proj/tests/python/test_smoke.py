import numpy as np
import pytest

import totr


def gaussian_data(n, seed=0, sd=0.1):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, n))
    b = np.outer([1.0, 0.5, -0.5], [1.0, 2.0, -1.0, 0.5])
    y = np.einsum("ji,jn->in", b, x) + sd * rng.standard_normal((4, n))
    return x, y, b


def test_param_counts():
    assert totr.param_count("op", [4, 5], [6, 7]) == 58
    assert totr.param_count("cp", [4, 5], [6, 7], [2]) == 38
    assert totr.param_count("tr", [4, 5], [6, 7], [2, 2, 2, 2]) == 85


def test_cp_fit_recovers_coefficient():
    x, y, b = gaussian_data(400)
    f = totr.fit(totr.Spec("cp", [1], intercept=False, seed=3), x, y)
    assert f.converged
    assert f.coefficient.shape == (3, 4)
    assert np.abs(f.coefficient - b).max() < 0.05
    assert f.predict(x).shape == y.shape
    assert np.allclose(f.residuals(x, y), y - f.predict(x))
    assert f.bic()["k"] >= f.param_count


def test_rank_search_prefers_true_rank():
    x, y, _ = gaussian_data(300, seed=1)
    best, table, fit = totr.rank_search(totr.Spec("cp", intercept=False, seed=1), [[1], [2]], x, y)
    assert len(table) == 2
    assert table[best]["ranks"] == [1]
    assert fit.ranks == [1]


def test_standardize_shape_and_variances():
    x, y, _ = gaussian_data(200, seed=2)
    y = y.reshape(2, 2, -1, order="F")
    f = totr.fit(totr.Spec("tucker", [3, 2, 2], intercept=False), x, y)
    v = totr.marginal_variances(f, x)
    assert v.shape == (3, 2, 2) and np.all(v > 0)
    z = totr.standardize(f, x)
    assert np.allclose(z, f.coefficient / np.sqrt(v))


def test_wilks_detects_group_effect():
    rng = np.random.default_rng(4)
    labels = [[i % 2] for i in range(80)]
    means = np.array([[0.0, 0.0, 0.0], [1.0, -1.0, 0.5]])
    y = np.stack([means[l[0]] for l in labels], axis=1) + 0.3 * rng.standard_normal((3, 80))
    lam = totr.wilks_test(totr.Spec("tucker", [2, 2], intercept=False), [2], labels, y)
    assert 0.0 < lam < 0.5
    assert totr.tanova_design([2], labels).shape == (2, 80)


def test_tensor_round_trip(tmp_path):
    a = np.arange(24.0).reshape(2, 3, 4)
    totr.write_tensor(tmp_path / "a.dten", a)
    assert np.array_equal(totr.read_tensor(tmp_path / "a.dten"), a)


def test_errors_are_mapped():
    x, y, _ = gaussian_data(20)
    with pytest.raises(totr.TotrError):
        totr.fit(totr.Spec("cp", [1]), x, y[:, :10])
    with pytest.raises(totr.TotrError):
        totr.Spec("banana")
    assert totr.sample_quantile([1.0, 2.0, 3.0, 4.0], 0.5) == 2.5
