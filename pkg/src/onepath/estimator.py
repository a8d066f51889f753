"""scikit-learn style estimator facade.

`PrivateTreeClassifier.fit` trains a CART tree, quantizes it, pads it to a
complete binary shape and stands up the whole encrypted deployment (key
center, provider, two servers, user).  `predict` runs one encrypted
traversal per row; nothing about the model or the row travels in plaintext
between the simulated entities.
"""

from __future__ import annotations

import random

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .errors import OracleMismatch
from .params import derive_params, keygen
from .system import ProtocolSystem
from .tree import Quantizer, complete_pad, plaintext_infer, quantize, train_cart


class PrivateTreeClassifier(BaseEstimator, ClassifierMixin):
    """Decision tree classifier whose inference runs under encryption.

    Parameters
    ----------
    max_depth : int
        Depth of the complete (padded) tree; shallower trained trees are
        filled with dummy nodes so every query walks exactly this many
        levels.
    feature_bits : int
        Quantization width for features and thresholds.
    ring_bits : int
        Width of the additive-share ring.
    security_bits : int
        Discrete-log group strength (112 or 128).
    slope_max : int or None
        Cap for the random slope in the threshold encoding; None derives the
        largest sound value from (ring_bits, feature_bits).
    validate_oracle : bool
        If True, every encrypted prediction is checked against the plaintext
        oracle and a mismatch raises OracleMismatch.
    random_state : int or None
        Seed for all protocol randomness (keys, shuffles, shares, nonces).
    """

    def __init__(
        self,
        max_depth=3,
        feature_bits=10,
        ring_bits=16,
        security_bits=112,
        slope_max=None,
        validate_oracle=False,
        random_state=None,
    ):
        self.max_depth = max_depth
        self.feature_bits = feature_bits
        self.ring_bits = ring_bits
        self.security_bits = security_bits
        self.slope_max = slope_max
        self.validate_oracle = validate_oracle
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype="numeric")
        self.classes_ = np.unique(y)
        self.n_features_in_ = X.shape[1]
        self._label_map = {str(c): c for c in self.classes_}

        rng = random.Random(self.random_state)
        params = derive_params(
            security_bits=self.security_bits,
            ring_bits=self.ring_bits,
            feature_bits=self.feature_bits,
            slope_max=self.slope_max,
        )
        self.quantizer_ = Quantizer.fit(X, self.feature_bits)
        plain = train_cart(X, [str(v) for v in y], self.max_depth)
        self.tree_ = complete_pad(quantize(plain, self.quantizer_), self.max_depth)

        keys = keygen(params, rng)
        self.system_ = ProtocolSystem(keys, rng=rng)
        self.system_.prepare(self.tree_)
        return self

    def _quantize_rows(self, X):
        X = check_array(X, dtype="numeric")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        return [self.quantizer_.apply_vector(row) for row in X]

    def predict(self, X):
        check_is_fitted(self, "system_")
        out = []
        for row in self._quantize_rows(X):
            result = self.system_.query(row)
            if self.validate_oracle:
                expect, _ = plaintext_infer(self.tree_, row)
                if result.label != expect:
                    raise OracleMismatch(
                        f"encrypted label {result.label!r} != oracle {expect!r}"
                    )
            out.append(self._label_map[result.label])
        return np.asarray(out)

    def plaintext_predict(self, X):
        """Oracle-only predictions (no protocol run); used for cross-checks."""
        check_is_fitted(self, "system_")
        return np.asarray(
            [
                self._label_map[plaintext_infer(self.tree_, row)[0]]
                for row in self._quantize_rows(X)
            ]
        )

    @property
    def transcript_(self):
        check_is_fitted(self, "system_")
        return self.system_.transcript
