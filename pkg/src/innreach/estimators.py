"""scikit-learn style wrappers around training, certification and reachability."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_random_state, check_X_y

from .certification import certify_batch
from .fixed_point import SolverConfig, certificate_from_weight, wellposedness_certificate
from .networks import FeedforwardNetwork, ImplicitNetwork, WeightTiedNetwork
from .reachability import IntervalVector, point_output, reach
from .training import TrainConfig, init_implicit_network, scaled_warmup, train


class ImplicitNetworkClassifier(ClassifierMixin, BaseEstimator):
    """Implicit network classifier trained under the well-posedness constraint.

    ``kappa_nom = 0`` gives plain nominal training; larger values mix in the
    certified-margin loss at radius ``epsilon``.  ``warmup=None`` uses the
    proportional schedule (a quarter of the epochs flat, a quarter ramping).
    """

    def __init__(self, hidden_dim=8, activation="relu", epsilon=0.1, kappa_nom=0.75,
                 gamma=0.0, epochs=40, learning_rate=0.1, warmup=None, batch_size=None,
                 tol=1e-8, random_state=0):
        self.hidden_dim = hidden_dim
        self.activation = activation
        self.epsilon = epsilon
        self.kappa_nom = kappa_nom
        self.gamma = gamma
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.warmup = warmup
        self.batch_size = batch_size
        self.tol = tol
        self.random_state = random_state

    def _train_config(self, seed):
        warmup = scaled_warmup(self.epochs) if self.warmup is None else self.warmup
        return TrainConfig(
            epsilon_test=self.epsilon, kappa_nom=self.kappa_nom, gamma=self.gamma,
            epochs=self.epochs, learning_rate=self.learning_rate, warmup=warmup,
            seed=seed, batch_size=self.batch_size, solver=SolverConfig(tol=self.tol),
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        y_idx = np.searchsorted(self.classes_, y)
        rng = check_random_state(self.random_state)
        seed = int(rng.randint(0, 2**31 - 1))
        net0 = init_implicit_network(self.hidden_dim, X.shape[1], len(self.classes_),
                                     self.activation, seed=seed)
        net, history, eta = train(net0, X, y_idx, self._train_config(seed))
        self.network_ = net
        self.eta_ = eta
        self.history_ = history
        self.n_features_in_ = X.shape[1]
        return self

    def _check(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    @property
    def certificate_(self):
        check_is_fitted(self, "network_")
        return certificate_from_weight(self.network_.W, self.eta_)

    def decision_function(self, X):
        X = self._check(X)
        return point_output(self.network_, X, SolverConfig(tol=self.tol), self.certificate_)

    def predict_proba(self, X):
        logits = self.decision_function(X)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def certify(self, X, y, epsilon=None):
        """Per-sample ``(min_margin, certified)`` at radius ``epsilon``."""
        X = self._check(X)
        y_idx = np.searchsorted(self.classes_, np.asarray(y))
        eps = self.epsilon if epsilon is None else epsilon
        _, margin, ok = certify_batch(self.network_, X, y_idx, eps, self.certificate_,
                                      SolverConfig(tol=self.tol))
        return margin, ok

    def certified_score(self, X, y, epsilon=None):
        return float(np.mean(self.certify(X, y, epsilon)[1]))


class IntervalReachTransformer(TransformerMixin, BaseEstimator):
    """Map each input row to the output box of its l-infinity ball.

    ``transform`` returns ``[lo, hi]`` stacked horizontally, shape ``(m, 2 q)``.
    The network is fixed; ``fit`` only validates it against ``X``.
    """

    def __init__(self, network=None, epsilon=0.1, method="mm", tol=1e-10):
        self.network = network
        self.epsilon = epsilon
        self.method = method
        self.tol = tol

    def fit(self, X, y=None):
        if not isinstance(self.network, (ImplicitNetwork, WeightTiedNetwork, FeedforwardNetwork)):
            raise TypeError("network must be an implicit, weight-tied or feedforward network")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.network.r:
            raise ValueError(f"X has {X.shape[1]} features, network expects {self.network.r}")
        self.cert_ = wellposedness_certificate(self.network) if isinstance(self.network, ImplicitNetwork) else None
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        box = IntervalVector(X - self.epsilon, X + self.epsilon)
        cert = self.cert_ if self.method == "mm" else None
        out = reach(self.network, box, self.method, SolverConfig(tol=self.tol), cert).output
        return np.hstack([np.atleast_2d(out.lo), np.atleast_2d(out.hi)])
