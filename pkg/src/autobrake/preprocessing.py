"""Fixed feature scaling between the simulator and the networks."""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive, check_state_batch
from .env import N_FEATURES


class StateScaler(TransformerMixin, BaseEstimator):
    """Divide positions and velocities in a flattened observation history by fixed scales.

    Each observation is ``(rel_x, rel_y, rel_vx, rel_vy)``; the history is a
    concatenation of such blocks. Scales are constants rather than fitted
    statistics so the mapping is identical across runs and checkpoints.
    """

    def __init__(self, position_scale=60.0, velocity_scale=30.0):
        self.position_scale = position_scale
        self.velocity_scale = velocity_scale

    def fit(self, X=None, y=None):
        check_positive(self.position_scale, "position_scale")
        check_positive(self.velocity_scale, "velocity_scale")
        n = 40 if X is None else np.asarray(X).shape[-1]
        if n % N_FEATURES:
            raise ValueError(f"feature count {n} is not a multiple of {N_FEATURES}")
        self.n_features_in_ = n
        block = np.array([1 / self.position_scale, 1 / self.position_scale,
                          1 / self.velocity_scale, 1 / self.velocity_scale])
        self.scale_ = np.tile(block, n // N_FEATURES)
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        one = np.ndim(X) == 1
        X = check_state_batch(X, self.n_features_in_)
        out = X * self.scale_
        return out[0] if one else out

    def inverse_transform(self, X):
        check_is_fitted(self, "scale_")
        return np.asarray(X, dtype=np.float64) / self.scale_
