import numpy as np
import pytest

from apmsqueeze.exceptions import ConfigError, DimensionError
from apmsqueeze.harness.verify import central_difference_error
from apmsqueeze.problems import (
    LeastSquaresProblem,
    LogisticProblem,
    TinyMLPProblem,
    averaged_gradient_variance,
    full_gradient_and_loss,
    load_csv,
    make_least_squares,
    make_logistic,
    make_tiny_mlp,
    measure_variance,
    sample_gradient,
)


def test_shards_partition_rows():
    prob = make_logistic(103, 5, 4, seed=0)
    rows = np.concatenate(prob.shards)
    assert sorted(rows.tolist()) == list(range(103))
    assert [len(s) for s in prob.shards] == [26, 26, 26, 25]


def test_full_batch_is_exact_shard_gradient():
    prob = make_least_squares(60, 4, 3, batch_size=None, seed=1)
    x = np.array([0.5, -1.0, 2.0, 0.0])
    for i, shard in enumerate(prob.shards):
        a, b = prob.features[shard], prob.targets[shard]
        sample = sample_gradient(prob, i, x, np.random.default_rng(0))
        np.testing.assert_allclose(sample.gradient, a.T @ (a @ x - b) / len(shard), rtol=1e-13)
        np.testing.assert_array_equal(sample.batch_indices, shard)


def test_least_squares_identity_design():
    n = 5
    prob = LeastSquaresProblem(np.eye(n), np.zeros(n), 1)
    x = np.arange(1.0, n + 1)
    grad, loss = full_gradient_and_loss(prob, x)
    np.testing.assert_allclose(grad, x / n, rtol=1e-15)
    assert loss == pytest.approx(0.5 * (x @ x) / n, rel=1e-15)


def test_logistic_gradient_at_zero():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(8, 3))
    y = np.array([0, 1] * 4, dtype=float)
    prob = LogisticProblem(a, y, 1)
    grad, loss = prob.full_gradient_and_loss(np.zeros(3))
    closed = -np.mean((y - 0.5)[:, None] * a, axis=0)
    np.testing.assert_allclose(grad, closed, rtol=1e-14)
    assert loss == pytest.approx(np.log(2.0), rel=1e-15)
    assert central_difference_error(prob, np.zeros(3)) < 1e-8


@pytest.mark.parametrize(
    "prob",
    [make_least_squares(100, 6, 2, seed=4), make_logistic(120, 7, 3, l2=0.1, seed=4), make_tiny_mlp(80, 4, 5, 2, seed=4)],
    ids=["least_squares", "logistic", "tiny_mlp"],
)
def test_finite_differences(prob):
    x = np.random.default_rng(7).normal(size=prob.dim)
    assert central_difference_error(prob, x, h=1e-5) <= 1e-5


def test_per_sample_matches_batch():
    for prob in (make_least_squares(30, 4, 1), make_logistic(30, 4, 1, l2=0.3), make_tiny_mlp(30, 3, 4, 1)):
        x = np.random.default_rng(1).normal(size=prob.dim)
        rows = np.array([0, 3, 3, 7])
        losses, grads = prob.per_sample(x, rows)
        loss, grad = prob.batch(x, rows)
        assert loss == pytest.approx(losses.mean(), rel=1e-13)
        np.testing.assert_allclose(grad, grads.mean(axis=0), rtol=1e-12, atol=1e-15)


def test_least_squares_optimum():
    prob = make_least_squares(300, 8, 3, seed=5)
    grad, loss = prob.full_gradient_and_loss(prob.solve())
    assert np.linalg.norm(grad) <= 1e-8
    assert loss == pytest.approx(prob.known_optimum)


@pytest.mark.parametrize("maker", [lambda: make_least_squares(40, 3, 2, batch_size=2, seed=1),
                                   lambda: make_logistic(40, 3, 2, batch_size=2, seed=1)])
def test_sample_gradient_unbiased(maker):
    prob = maker()
    x = np.array([0.3, -0.2, 0.1])
    rng = np.random.default_rng(0)
    draws = 100_000
    g = np.stack([prob.sample_gradient(1, x, rng).gradient for _ in range(draws)])
    se = g.std(axis=0, ddof=1) / np.sqrt(draws)
    assert np.all(np.abs(g.mean(axis=0) - prob.shard_gradient(1, x)) <= 3 * se)


def test_batch_gradients_unbiased():
    prob = make_logistic(60, 4, 2, batch_size=3, seed=3)
    x = np.full(4, 0.2)
    g = prob.batch_gradients(0, x, 100_000, np.random.default_rng(1))
    se = g.std(axis=0, ddof=1) / np.sqrt(len(g))
    assert np.all(np.abs(g.mean(axis=0) - prob.shard_gradient(0, x)) <= 3 * se)


def test_variance_full_shard_is_zero():
    prob = make_logistic(40, 3, 2, batch_size=None, seed=0)
    est = measure_variance(prob, np.ones(3), draws=10)
    np.testing.assert_array_equal(est.sigma2, 0.0)


def test_variance_identical_samples_is_zero():
    prob = LeastSquaresProblem(np.array([[1.0, 2.0], [1.0, 2.0]]), np.array([3.0, 3.0]), 1, batch_size=1)
    est = measure_variance(prob, np.array([0.5, 0.5]), draws=50)
    assert est.sigma2[0] == pytest.approx(0.0, abs=1e-28)


def test_variance_two_point_shard():
    a = np.array([[1.0, 0.0], [0.0, 2.0]])
    b = np.array([1.0, -1.0])
    prob = LeastSquaresProblem(a, b, 1, batch_size=1)
    x = np.array([0.3, 0.7])
    _, grads = prob.per_sample(x, np.arange(2))
    u, v = grads
    est = measure_variance(prob, x, draws=20_000, seed=3)
    exact = np.sum((u - v) ** 2) / 4
    assert abs(est.sigma2[0] - exact) <= 3 * est.stderr[0] + 1e-12


def test_variance_needs_two_draws():
    with pytest.raises(ConfigError):
        measure_variance(make_logistic(10, 2, 1), np.zeros(2), draws=1)


@pytest.mark.parametrize("n", [2, 4, 8])
def test_averaged_variance_scales_inverse_n(n):
    prob = make_logistic(2000, 10, n, batch_size=4, seed=n)
    var_avg, var_one = averaged_gradient_variance(prob, np.full(10, 0.1), draws=5000)
    assert 0.8 / n <= var_avg / var_one <= 1.2 / n


def test_tiny_mlp_finite_at_extreme_parameters():
    prob = make_tiny_mlp(50, 4, 8, 2, seed=1)
    x = np.full(prob.dim, 1e6)
    x[::2] = -1e6
    grad, loss = prob.full_gradient_and_loss(x)
    assert np.isfinite(loss) and np.all(np.isfinite(grad))


def test_tiny_mlp_limits():
    with pytest.raises(ConfigError):
        TinyMLPProblem(np.zeros((4, 2)), np.zeros(4), 1, hidden=65)
    with pytest.raises(ConfigError):
        TinyMLPProblem(np.zeros((4, 100)), np.zeros(4), 1, hidden=64)


def test_tiny_mlp_parameter_layout():
    prob = make_tiny_mlp(20, 3, 4, 1)
    assert prob.dim == 4 * 3 + 4 + 4 + 1
    w1, b1, w2, b2 = prob.unpack(np.arange(prob.dim, dtype=float))
    assert w1.shape == (4, 3) and b1.tolist() == [12, 13, 14, 15] and w2.tolist() == [16, 17, 18, 19] and b2 == 20


def test_errors():
    prob = make_logistic(10, 2, 2)
    with pytest.raises(ConfigError):
        prob.sample_gradient(2, np.zeros(2), np.random.default_rng(0))
    with pytest.raises(DimensionError):
        prob.full_gradient_and_loss(np.zeros(3))
    with pytest.raises(ConfigError):
        LogisticProblem(np.zeros((2, 1)), [0, 2], 1)
    empty = LeastSquaresProblem(np.ones((1, 1)), [1.0], 2)
    with pytest.raises(ConfigError):
        empty.sample_gradient(1, np.zeros(1), np.random.default_rng(0))


def test_deterministic_generation():
    a, b = make_logistic(50, 4, 2, seed=9), make_logistic(50, 4, 2, seed=9)
    assert a.features.tobytes() == b.features.tobytes() and a.targets.tobytes() == b.targets.tobytes()
    assert make_logistic(50, 4, 2, seed=10).features.tobytes() != a.features.tobytes()


def test_load_csv(tmp_path):
    path = tmp_path / "data.csv"
    rows = ["f1,f2,label"] + [f"{i},{-i * 0.5},{i % 2}" for i in range(10)]
    path.write_text("\n".join(rows) + "\n")
    prob = load_csv(path, "logistic", n_workers=3, batch_size=2, seed=1)
    assert prob.n_samples == 10 and prob.dim == 2
    assert sorted(np.concatenate(prob.shards).tolist()) == list(range(10))
    np.testing.assert_array_equal(prob.targets, [i % 2 for i in range(10)])

    bare = tmp_path / "bare.csv"
    bare.write_text("\n".join(rows[1:]) + "\n")
    assert load_csv(bare, "least_squares").n_samples == 10

    with pytest.raises(ConfigError):
        load_csv(bare, "svm")
