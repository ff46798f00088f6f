"""Input validation helpers shared by the estimators and functional API."""

import math
import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import InvalidInputError


def check_positive(value, name, allow_zero=False):
    """Return ``value`` as float, raising if it is not finite and positive."""
    try:
        value = float(value)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{name} must be a real number, got {value!r}") from exc
    if not math.isfinite(value):
        raise InvalidInputError(f"{name} must be finite, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise InvalidInputError(f"{name} must be {bound}, got {value!r}")
    return value


def check_int(value, name, minimum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise InvalidInputError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise InvalidInputError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_vector(x, name, min_length=1):
    """Validate a 1-D finite float array."""
    try:
        arr = check_array(
            np.asarray(x, dtype=float).reshape(-1, 1),
            ensure_all_finite=True,
            ensure_min_samples=min_length,
            input_name=name,
        )
    except ValueError as exc:
        raise InvalidInputError(f"{name}: {exc}") from exc
    return arr.ravel()


def check_matrix(x, name, square=False):
    try:
        arr = check_array(x, ensure_all_finite=True, input_name=name)
    except ValueError as exc:
        raise InvalidInputError(f"{name}: {exc}") from exc
    if square and arr.shape[0] != arr.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {arr.shape}")
    return arr


def check_sigma(sigma, assets=None):
    """Volatility as a float (scalar) or a square float matrix.

    A scalar volatility is accepted for any asset count and means ``sigma * I``.
    """
    if np.ndim(sigma) == 0:
        return check_positive(sigma, "sigma", allow_zero=True)
    mat = check_matrix(np.atleast_2d(np.asarray(sigma, dtype=float)), "sigma", square=True)
    if assets is not None and mat.shape[0] != assets:
        raise InvalidInputError(
            f"sigma matrix is {mat.shape[0]}x{mat.shape[0]} but the strategy has {assets} assets"
        )
    return mat
