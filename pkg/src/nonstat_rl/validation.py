"""Small input-checking helpers shared by the estimators and solvers."""

import numbers

import numpy as np

PROB_ATOL = 1e-12
RENORMALIZE_ATOL = 1e-9


def check_scalar(x, name, *, lo=None, hi=None, lo_open=False, hi_open=False, integer=False):
    """Validate a scalar against an interval and return it as float or int."""
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(x, bool) or not isinstance(x, kind):
        raise TypeError(f"{name} must be {'an integer' if integer else 'a real number'}, got {x!r}")
    if not integer and not np.isfinite(x):
        raise ValueError(f"{name} must be finite, got {x!r}")
    if lo is not None and (x <= lo if lo_open else x < lo):
        raise ValueError(f"{name}={x!r} must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and (x >= hi if hi_open else x > hi):
        raise ValueError(f"{name}={x!r} must be {'<' if hi_open else '<='} {hi}")
    return int(x) if integer else float(x)


def check_index(i, n, name):
    if isinstance(i, bool) or not isinstance(i, numbers.Integral) or not 0 <= i < n:
        raise ValueError(f"{name} must be an integer in [0, {n}), got {i!r}")
    return int(i)


def as_float_array(x, name, ndim=None, shape=None):
    arr = np.array(x, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    return arr


def frozen(arr):
    """Return ``arr`` with its write flag cleared."""
    arr.setflags(write=False)
    return arr


def check_random_state(seed):
    """Turn ``None``, an int, a SeedSequence or a Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
