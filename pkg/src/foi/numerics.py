"""Small shared array helpers."""

from __future__ import annotations

import numpy as np


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Rescale an array to [0, 1]; a constant input collapses to all zeros.

    A constant map carries no localization signal, so the degenerate case
    maps to empty rather than full.
    """
    values = np.asarray(values, dtype=float)
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=axis, keepdims=True)


def nearest_resize(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize of a 2-D array; binary inputs stay binary."""
    in_h, in_w = values.shape
    rows = (np.arange(out_h) * in_h) // out_h
    cols = (np.arange(out_w) * in_w) // out_w
    return values[np.ix_(rows, cols)]
