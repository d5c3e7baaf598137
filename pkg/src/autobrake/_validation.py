"""Input validation helpers shared by the estimator and the lower-level modules."""
import numbers

import numpy as np

from .exceptions import ConfigurationError


def check_vector(x, size, name="input"):
    """Return ``x`` as a float64 array whose last axis has ``size`` entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim not in (1, 2) or arr.shape[-1] != size:
        raise ConfigurationError(
            f"{name} has shape {arr.shape}, expected (..., {size})")
    return arr


def check_state_batch(X, n_features=40):
    """Validate a batch of flattened state vectors, promoting 1-D input to one row."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n_features:
        raise ConfigurationError(
            f"expected state vectors of length {n_features}, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ConfigurationError("state vectors contain non-finite values")
    return X


def check_positive(value, name, integer=False):
    if integer:
        if not isinstance(value, numbers.Integral) or isinstance(value, bool):
            raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    if not value > 0:
        raise ConfigurationError(f"{name} must be positive, got {value!r}")
    return value


def check_range(pair, name, allow_zero=False):
    lo, hi = (float(v) for v in pair)
    if lo > hi or lo < 0 or (not allow_zero and lo <= 0):
        raise ConfigurationError(f"{name} must be an ordered non-negative range, got {pair!r}")
    return lo, hi


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``.

    Generators are passed through untouched so callers can share one stream.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, numbers.Integral):
        return np.random.default_rng(seed)
    raise ConfigurationError(f"cannot build a Generator from {seed!r}")
