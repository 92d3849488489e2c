"""Argument checks shared across modules."""

import numpy as np

from .data import Dataset
from .exceptions import InputError


def check_dataset(dataset):
    if not isinstance(dataset, Dataset):
        raise InputError(f"expected a Dataset, got {type(dataset).__name__}")
    return dataset


def check_arm(dataset, arm):
    if arm not in (0, 1):
        raise InputError(f"arm must be 0 or 1, got {arm!r}")
    if dataset.arm_counts[arm] == 0:
        raise InputError(f"arm {arm} is empty")
    return int(arm)


def check_horizon(dataset, horizon_index):
    """Resolve ``None`` to ``K`` and range-check an interval index."""
    if horizon_index is None:
        return dataset.K
    k = int(horizon_index)
    if k != horizon_index or not 1 <= k <= dataset.K:
        raise InputError(f"horizon index {horizon_index!r} outside 1..{dataset.K}")
    return k


def check_multiplicity(dataset, sample_weight):
    """Per-subject nonnegative multiplicities (bootstrap counts); ``None`` means all ones."""
    if sample_weight is None:
        return None
    w = np.asarray(sample_weight, dtype=float)
    if w.shape != (dataset.n,) or (w < 0).any() or not np.isfinite(w).all():
        raise InputError("sample_weight must be a nonnegative vector with one entry per subject")
    return w


def check_truncation(bounds):
    lo, hi = (float(b) for b in bounds)
    if not 0 < lo <= 1 <= hi:
        raise InputError(f"truncation bounds must satisfy 0 < low <= 1 <= high, got {bounds!r}")
    return lo, hi
