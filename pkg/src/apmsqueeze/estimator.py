"""scikit-learn estimators trained with the simulated compressed optimizer.

The rows of ``X`` are split across ``n_workers`` simulated workers; each fit
runs Adam warmup followed by compressed momentum steps. The per-step metrics
of the run are kept in ``history_``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_random_state, check_X_y

from .compression import CompressorSpec
from .optimizer import OptimizerConfig, run
from .problems import LeastSquaresProblem, LogisticProblem, TinyMLPProblem


class _APMSqueezeMixin:
    def _optimizer_config(self):
        if self.max_iter <= self.warmup_steps:
            raise ValueError(f"max_iter={self.max_iter} must exceed warmup_steps={self.warmup_steps}")
        spec = CompressorSpec(self.compressor, k_percent=self.k_percent, levels=self.levels)
        return OptimizerConfig(
            lr=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            eta=self.eta,
            t_warmup=self.warmup_steps,
            t_total=self.max_iter,
            compressor=spec,
            freeze_bias_corrected=self.freeze_bias_corrected,
        )

    def _seed(self):
        if isinstance(self.random_state, (int, np.integer)):
            return int(self.random_state)
        return int(check_random_state(self.random_state).randint(0, 2**31 - 1))

    def _design(self, X):
        if self.fit_intercept:
            return np.hstack([X, np.ones((X.shape[0], 1))])
        return X

    def _fit_problem(self, problem):
        result = run(self._optimizer_config(), problem, seed=self._seed())
        self.history_ = result.records
        self.bits_sent_ = result.total_bits
        self.n_iter_ = len(result.records)
        self.final_loss_ = result.final_loss
        return result.state.x

    def _split_linear(self, w):
        if self.fit_intercept:
            self.coef_, self.intercept_ = w[:-1].copy(), float(w[-1])
        else:
            self.coef_, self.intercept_ = w.copy(), 0.0


class APMSqueezeClassifier(_APMSqueezeMixin, ClassifierMixin, BaseEstimator):
    """Binary classifier: logistic regression, or a one-hidden-layer tanh network.

    Parameters
    ----------
    n_workers : int
        Number of simulated workers the samples are sharded over.
    compressor : {"onebit", "topk", "stochastic_quant", "identity"}
    hidden_units : int or None
        ``None`` fits a linear logistic model; an integer (at most 64) fits a
        tiny MLP with that many hidden units.
    batch_size : int or None
        Per-worker minibatch size; ``None`` uses whole shards.
    """

    def __init__(self, n_workers=4, compressor="onebit", k_percent=10.0, levels=4, learning_rate=1e-2,
                 beta1=0.9, beta2=0.999, eta=1e-8, warmup_steps=100, max_iter=1000, batch_size=32,
                 hidden_units=None, fit_intercept=True, l2=0.0, freeze_bias_corrected=False, random_state=0):
        self.n_workers = n_workers
        self.compressor = compressor
        self.k_percent = k_percent
        self.levels = levels
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eta = eta
        self.warmup_steps = warmup_steps
        self.max_iter = max_iter
        self.batch_size = batch_size
        self.hidden_units = hidden_units
        self.fit_intercept = fit_intercept
        self.l2 = l2
        self.freeze_bias_corrected = freeze_bias_corrected
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, y01 = np.unique(y, return_inverse=True)
        if len(self.classes_) != 2:
            raise ValueError(f"only binary targets are supported, got {len(self.classes_)} classes")
        self.n_features_in_ = X.shape[1]
        seed = self._seed()
        if self.hidden_units is None:
            problem = LogisticProblem(self._design(X), y01, self.n_workers, self.batch_size, l2=self.l2,
                                      shuffle_seed=seed)
            self._split_linear(self._fit_problem(problem))
        else:
            problem = TinyMLPProblem(X, y01, self.n_workers, hidden=self.hidden_units, batch_size=self.batch_size,
                                     init_seed=seed, shuffle_seed=seed)
            self._mlp = problem
            self.coef_ = self._fit_problem(problem)
            self.intercept_ = 0.0
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        if self.hidden_units is None:
            return X @ self.coef_ + self.intercept_
        w1, b1, w2, b2 = self._mlp.unpack(self.coef_)
        return np.tanh(X @ w1.T + b1) @ w2 + b2

    def predict_proba(self, X):
        p = 0.5 * (1.0 + np.tanh(0.5 * self.decision_function(X)))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        check_is_fitted(self, "classes_")
        return self.classes_[(self.decision_function(X) > 0).astype(int)]


class APMSqueezeRegressor(_APMSqueezeMixin, RegressorMixin, BaseEstimator):
    """Linear least-squares regression fitted with the compressed optimizer."""

    def __init__(self, n_workers=4, compressor="onebit", k_percent=10.0, levels=4, learning_rate=1e-2,
                 beta1=0.9, beta2=0.999, eta=1e-8, warmup_steps=100, max_iter=1000, batch_size=32,
                 fit_intercept=True, freeze_bias_corrected=False, random_state=0):
        self.n_workers = n_workers
        self.compressor = compressor
        self.k_percent = k_percent
        self.levels = levels
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eta = eta
        self.warmup_steps = warmup_steps
        self.max_iter = max_iter
        self.batch_size = batch_size
        self.fit_intercept = fit_intercept
        self.freeze_bias_corrected = freeze_bias_corrected
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        problem = LeastSquaresProblem(self._design(X), y, self.n_workers, self.batch_size,
                                      shuffle_seed=self._seed())
        self._split_linear(self._fit_problem(problem))
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_ + self.intercept_
