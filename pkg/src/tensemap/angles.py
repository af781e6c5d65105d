"""Angle helpers shared by the descriptor and the archive."""
import numpy as np


def wrap_angle(deg):
    """Equivalent angle in the half-open interval [-180, 180).

    Accepts scalars or arrays; scalars come back as ``float``.
    """
    a = np.asarray(deg, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("wrap_angle needs finite input")
    w = np.mod(a + 180.0, 360.0) - 180.0
    # np.mod can return exactly 360 for tiny negative inputs
    w = np.where(w >= 180.0, w - 360.0, w)
    # leave in-range values bit-identical
    w = np.where((a >= -180.0) & (a < 180.0), a, w)
    if w.ndim == 0:
        return float(w)
    return w
