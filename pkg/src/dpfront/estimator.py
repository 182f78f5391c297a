"""scikit-learn style wrapper around the training schemes."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .problems import make_problem
from .schemes import SchemeConfig, evaluate_policy, policy_control, train


class DPPSolver(BaseEstimator):
    """Learn the value ``v(0, .)`` and feedback controls of a benchmark problem.

    Training draws its own samples from the problem's box, so ``fit`` takes no
    data; ``X`` is accepted for pipeline compatibility and ignored.

    Examples
    --------
    >>> est = DPPSolver(problem="rotation", scheme="L", N=2, p=1, M=64, sg_iters=5)
    >>> est.fit().predict([[1.0, 0.0]]).shape
    (1,)
    """

    def __init__(self, problem: str = "rotation", d: int = 2, scheme: str = "L", N: int = 5,
                 p: int = 5, tableau: str = "heun", M: int = 1000, sg_iters: int = 1000,
                 layers: int = 3, neurons: int = 40, activation: str = "relu", lr: float = 1e-3,
                 warm_start: bool = True, random_state: int = 0):
        self.problem = problem
        self.d = d
        self.scheme = scheme
        self.N = N
        self.p = p
        self.tableau = tableau
        self.M = M
        self.sg_iters = sg_iters
        self.layers = layers
        self.neurons = neurons
        self.activation = activation
        self.lr = lr
        self.warm_start = warm_start
        self.random_state = random_state

    def _config(self) -> SchemeConfig:
        return SchemeConfig(scheme=self.scheme, N=self.N, p=self.p, tableau=self.tableau,
                            M=self.M, sg_iters=self.sg_iters, layers=self.layers,
                            neurons=self.neurons, activation=self.activation, lr=self.lr,
                            warm_start=self.warm_start, seed=int(self.random_state))

    def fit(self, X=None, y=None):
        self.problem_ = make_problem(self.problem, self.d)
        self.policy_ = train(self.problem_, self._config())
        self.n_features_in_ = self.problem_.d
        return self

    def _check_X(self, X) -> np.ndarray:
        check_is_fitted(self, "policy_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def value(self, X, n: int = 0) -> np.ndarray:
        """Approximate ``v(t_n, x)`` for each row."""
        X = self._check_X(X)
        return evaluate_policy(self.policy_, self.problem_, n, X)

    def predict(self, X) -> np.ndarray:
        return self.value(X, 0)

    def control(self, X, n: int = 0) -> np.ndarray:
        """Feedback control of step ``n`` at each row."""
        X = self._check_X(X)
        return policy_control(self.policy_, n, X)

    def score(self, X, y=None) -> float:
        """Negative mean absolute error against ``y`` (or the exact value)."""
        X = self._check_X(X)
        target = self.problem_.value(0.0, X) if y is None else np.asarray(y, dtype=np.float64)
        return -float(np.mean(np.abs(self.predict(X) - target)))
