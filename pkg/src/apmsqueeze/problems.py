"""Desk-scale objectives split across worker shards.

Each problem stores a feature matrix and targets, a partition of the rows into
one shard per worker, and knows how to evaluate per-sample losses and
gradients. Three objectives are available:

* ``LeastSquaresProblem``  ``f(x) = 1/(2N) * ||A x - b||^2``
* ``LogisticProblem``      mean logistic loss with labels in {0, 1}, optional l2 term
* ``TinyMLPProblem``       one tanh hidden layer feeding a logistic output, with
                           hand-written backprop
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .exceptions import ConfigError, DimensionError


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class GradientSample:
    gradient: np.ndarray
    loss: float
    batch_indices: np.ndarray


@dataclass
class VarianceEstimate:
    """Per-worker estimate of ``E ||g - grad f_i(x)||^2`` and its standard error."""

    sigma2: np.ndarray
    stderr: np.ndarray

    @property
    def max_sigma2(self) -> float:
        return float(np.max(self.sigma2))


class Problem:
    """Base class. Subclasses implement :meth:`per_sample` and :attr:`dim`."""

    kind = "abstract"

    def __init__(self, features, targets, n_workers: int, batch_size: int | None = None, shuffle_seed=None):
        features = np.asarray(features, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64).ravel()
        if features.ndim != 2 or features.shape[0] != targets.shape[0]:
            raise DimensionError("features must be (N, p) with one target per row")
        if n_workers < 1:
            raise ConfigError("n_workers must be at least 1")
        if batch_size is not None and batch_size < 1:
            raise ConfigError("batch_size must be positive")
        self.features = features
        self.targets = targets
        self.n_workers = int(n_workers)
        self.batch_size = batch_size
        order = np.arange(features.shape[0])
        if shuffle_seed is not None:
            order = rngmod.stream(shuffle_seed, rngmod.DATA, 1).permutation(order)
        self.shards = [np.sort(s) for s in np.array_split(order, n_workers)]
        self.known_optimum: float | None = None

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def initial_point(self) -> np.ndarray:
        return np.zeros(self.dim)

    def per_sample(self, x, rows) -> tuple[np.ndarray, np.ndarray]:
        """Losses ``(B,)`` and gradients ``(B, dim)`` for the given row indices."""
        raise NotImplementedError

    def batch(self, x, rows) -> tuple[float, np.ndarray]:
        """Mean loss and mean gradient over ``rows``."""
        losses, grads = self.per_sample(x, rows)
        return float(losses.mean()), grads.mean(axis=0)

    def _check_x(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise DimensionError(f"parameter vector must have length {self.dim}, got {x.shape}")
        return x

    def _shard(self, worker: int) -> np.ndarray:
        if not 0 <= worker < self.n_workers:
            raise ConfigError(f"worker {worker} out of range for {self.n_workers} workers")
        shard = self.shards[worker]
        if shard.size == 0:
            raise ConfigError(f"shard {worker} is empty")
        return shard

    def _full_batch(self, shard) -> bool:
        return self.batch_size is None or self.batch_size >= shard.size

    def sample_gradient(self, worker: int, x, rng: np.random.Generator) -> GradientSample:
        """Mean gradient over a minibatch drawn uniformly with replacement from ``worker``'s shard.

        When the batch size covers the whole shard the full shard is used and
        no randomness is consumed.
        """
        x = self._check_x(x)
        shard = self._shard(worker)
        if self._full_batch(shard):
            rows = shard
        else:
            rows = shard[rng.integers(0, shard.size, size=self.batch_size)]
        loss, grad = self.batch(x, rows)
        return GradientSample(grad, loss, rows)

    def shard_gradient(self, worker: int, x) -> np.ndarray:
        x = self._check_x(x)
        return self.batch(x, self._shard(worker))[1]

    def full_gradient_and_loss(self, x) -> tuple[np.ndarray, float]:
        x = self._check_x(x)
        loss, grad = self.batch(x, slice(None))
        return grad, loss

    def loss(self, x) -> float:
        return self.full_gradient_and_loss(x)[1]

    def batch_gradients(self, worker: int, x, draws: int, rng: np.random.Generator) -> np.ndarray:
        """``draws`` independent minibatch gradients from one shard, shape ``(draws, dim)``.

        Row multiplicities are drawn as a count matrix so the per-sample
        gradients of the shard are evaluated only once.
        """
        x = self._check_x(x)
        shard = self._shard(worker)
        if self._full_batch(shard):
            return np.repeat(self.batch(x, shard)[1][None, :], draws, axis=0)
        _, grads = self.per_sample(x, shard)
        picks = rng.integers(0, shard.size, size=(draws, self.batch_size))
        counts = np.zeros((draws, shard.size))
        np.add.at(counts, (np.repeat(np.arange(draws), self.batch_size), picks.ravel()), 1.0)
        return counts @ grads / self.batch_size


def sample_gradient(problem: Problem, worker: int, x, rng: np.random.Generator) -> GradientSample:
    return problem.sample_gradient(worker, x, rng)


def full_gradient_and_loss(problem: Problem, x) -> tuple[np.ndarray, float]:
    return problem.full_gradient_and_loss(x)


def measure_variance(problem: Problem, x, draws: int, seed: int = 0) -> VarianceEstimate:
    """Monte-Carlo estimate of each worker's stochastic-gradient variance at ``x``."""
    if draws < 2:
        raise ConfigError("draws must be at least 2")
    sigma2 = np.empty(problem.n_workers)
    stderr = np.empty(problem.n_workers)
    for i in range(problem.n_workers):
        g = problem.batch_gradients(i, x, draws, rngmod.stream(seed, rngmod.PROBE, i))
        sq = np.sum((g - problem.shard_gradient(i, x)) ** 2, axis=1)
        sigma2[i] = sq.mean()
        stderr[i] = sq.std(ddof=1) / np.sqrt(draws)
    return VarianceEstimate(sigma2, stderr)


def averaged_gradient_variance(problem: Problem, x, draws: int, seed: int = 0) -> tuple[float, float]:
    """Empirical ``Var[mean_i g_i]`` and ``Var[g_0]`` at ``x`` (total variance, summed over coordinates)."""
    if draws < 2:
        raise ConfigError("draws must be at least 2")
    per_worker = [
        problem.batch_gradients(i, x, draws, rngmod.stream(seed, rngmod.PROBE, i)) for i in range(problem.n_workers)
    ]
    avg = sum(per_worker) / problem.n_workers

    def total_var(samples):
        return float(np.sum(np.var(samples, axis=0, ddof=1)))

    return total_var(avg), total_var(per_worker[0])


class LeastSquaresProblem(Problem):
    kind = "least_squares"

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def per_sample(self, x, rows):
        a = self.features[rows]
        r = a @ x - self.targets[rows]
        return 0.5 * r**2, r[:, None] * a

    def batch(self, x, rows):
        a = self.features[rows]
        r = a @ x - self.targets[rows]
        return float(0.5 * (r @ r) / a.shape[0]), a.T @ r / a.shape[0]

    def solve(self) -> np.ndarray:
        """Minimiser via the normal equations."""
        a, b = self.features, self.targets
        return np.linalg.solve(a.T @ a, a.T @ b)

    def smoothness(self) -> float:
        return float(np.linalg.eigvalsh(self.features.T @ self.features / self.n_samples)[-1])


class LogisticProblem(Problem):
    kind = "logistic"

    def __init__(self, features, targets, n_workers, batch_size=None, l2: float = 0.0, shuffle_seed=None):
        super().__init__(features, targets, n_workers, batch_size, shuffle_seed)
        if not np.all((self.targets == 0) | (self.targets == 1)):
            raise ConfigError("logistic targets must be 0 or 1")
        self.l2 = float(l2)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def per_sample(self, x, rows):
        a = self.features[rows]
        y = self.targets[rows]
        z = a @ x
        losses = np.logaddexp(0.0, z) - y * z
        grads = (_sigmoid(z) - y)[:, None] * a
        if self.l2:
            losses = losses + 0.5 * self.l2 * (x @ x)
            grads = grads + self.l2 * x
        return losses, grads

    def batch(self, x, rows):
        a = self.features[rows]
        y = self.targets[rows]
        z = a @ x
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        grad = a.T @ (_sigmoid(z) - y) / a.shape[0]
        if self.l2:
            loss += 0.5 * self.l2 * float(x @ x)
            grad = grad + self.l2 * x
        return loss, grad

    def smoothness(self) -> float:
        """Upper bound on the gradient's Lipschitz constant."""
        top = np.linalg.eigvalsh(self.features.T @ self.features / self.n_samples)[-1]
        return float(top / 4.0 + self.l2)


class TinyMLPProblem(Problem):
    """Binary classifier ``sigmoid(w2 . tanh(W1 a + b1) + b2)``.

    Parameters are flattened as ``[W1 (hidden x p) row-major, b1, w2, b2]``.
    """

    kind = "tiny_mlp"

    def __init__(self, features, targets, n_workers, hidden: int = 16, batch_size=None, init_seed: int = 0,
                 shuffle_seed=None):
        super().__init__(features, targets, n_workers, batch_size, shuffle_seed)
        if not np.all((self.targets == 0) | (self.targets == 1)):
            raise ConfigError("classifier targets must be 0 or 1")
        if not 1 <= hidden <= 64:
            raise ConfigError("hidden must be between 1 and 64")
        self.hidden = int(hidden)
        self.init_seed = init_seed
        if self.dim > 5000:
            raise ConfigError(f"tiny MLP has {self.dim} parameters, limit is 5000")

    @property
    def n_inputs(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        h, p = self.hidden, self.n_inputs
        return h * p + 2 * h + 1

    def unpack(self, x):
        h, p = self.hidden, self.n_inputs
        w1 = x[: h * p].reshape(h, p)
        b1 = x[h * p : h * p + h]
        w2 = x[h * p + h : h * p + 2 * h]
        b2 = x[-1]
        return w1, b1, w2, b2

    def initial_point(self) -> np.ndarray:
        g = rngmod.stream(self.init_seed, rngmod.DATA, 2)
        x = np.zeros(self.dim)
        h, p = self.hidden, self.n_inputs
        x[: h * p] = g.normal(0.0, 1.0 / np.sqrt(p), size=h * p)
        x[h * p + h : h * p + 2 * h] = g.normal(0.0, 1.0 / np.sqrt(h), size=h)
        return x

    def per_sample(self, x, rows):
        w1, b1, w2, b2 = self.unpack(x)
        a = self.features[rows]
        y = self.targets[rows]
        hid = np.tanh(a @ w1.T + b1)
        z = hid @ w2 + b2
        losses = np.logaddexp(0.0, z) - y * z
        r = _sigmoid(z) - y
        pre = (r[:, None] * w2[None, :]) * (1.0 - hid**2)
        grads = np.concatenate(
            [
                (pre[:, :, None] * a[:, None, :]).reshape(a.shape[0], -1),
                pre,
                r[:, None] * hid,
                r[:, None],
            ],
            axis=1,
        )
        return losses, grads


# -- synthetic generators -----------------------------------------------------


def make_least_squares(n_samples=1000, dim=20, n_workers=4, batch_size=None, noise=0.1, seed=0):
    g = rngmod.stream(seed, rngmod.DATA, 0)
    a = g.normal(size=(n_samples, dim))
    w = g.normal(size=dim)
    b = a @ w + noise * g.normal(size=n_samples)
    prob = LeastSquaresProblem(a, b, n_workers, batch_size)
    prob.known_optimum = prob.loss(prob.solve())
    return prob


def make_logistic(n_samples=4000, dim=200, n_workers=8, batch_size=None, label_noise=0.0, margin=2.0, l2=0.0,
                  seed=0):
    """Gaussian features, labels drawn from a planted logistic model.

    ``margin`` is the standard deviation of the planted logits; ``label_noise``
    additionally flips each label with that probability.
    """
    g = rngmod.stream(seed, rngmod.DATA, 0)
    a = g.normal(size=(n_samples, dim))
    w = g.normal(size=dim) * (margin / np.sqrt(dim))
    y = (g.random(n_samples) < _sigmoid(a @ w)).astype(np.float64)
    if label_noise:
        flip = g.random(n_samples) < label_noise
        y[flip] = 1.0 - y[flip]
    return LogisticProblem(a, y, n_workers, batch_size, l2=l2)


def make_tiny_mlp(n_samples=2000, n_inputs=10, hidden=16, n_workers=4, batch_size=None, seed=0):
    """Labels from a random teacher network of the same shape."""
    g = rngmod.stream(seed, rngmod.DATA, 0)
    a = g.normal(size=(n_samples, n_inputs))
    teacher = g.normal(size=(hidden, n_inputs)) / np.sqrt(n_inputs)
    out = g.normal(size=hidden)
    y = (np.tanh(a @ teacher.T) @ out > 0).astype(np.float64)
    return TinyMLPProblem(a, y, n_workers, hidden=hidden, batch_size=batch_size, init_seed=seed)


def load_csv(path, kind="logistic", n_workers=1, batch_size=None, seed=0, **kwargs) -> Problem:
    """Load a numeric CSV (one row per sample, label in the last column).

    A non-numeric first line is treated as a header. Rows are shuffled with
    ``seed`` before sharding so that sorted files still give mixed shards.
    """
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError:
        data = np.loadtxt(path, delimiter=",", ndmin=2, skiprows=1)
    if data.shape[1] < 2:
        raise ConfigError("CSV needs at least one feature column and a label column")
    x, y = data[:, :-1], data[:, -1]
    classes = {
        "least_squares": LeastSquaresProblem,
        "logistic": LogisticProblem,
        "tiny_mlp": TinyMLPProblem,
    }
    try:
        cls = classes[kind]
    except KeyError:
        raise ConfigError(f"unknown problem kind {kind!r}") from None
    return cls(x, y, n_workers, batch_size=batch_size, shuffle_seed=seed, **kwargs)
