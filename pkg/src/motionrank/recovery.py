"""Recover the final frame of a window from its dynamic image.

Approximate rank pooling is linear in the frames, so given the dynamic image
of a window and its first ``T - 1`` frames the last frame follows by
solving for it. Window-local indexing is used throughout: the frames of a
window are numbered 1..T and ``alpha_T`` weights the last one.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateWindowError, InvalidShapeError
from .rankpool import coefficients


def recovery_scale(T: int) -> float:
    """Slope of the recovered frame with respect to the dynamic image."""
    if T < 2:
        raise DegenerateWindowError(f"cannot recover a frame from a window of length {T}")
    return 1.0 / coefficients(T)[-1]


def recover_last_frame(D, leading_frames, T: int) -> np.ndarray:
    """Solve the pooling sum for the window's final frame (unclamped).

    ``D`` may be one image ``(C, H, W)`` or a batch ``(N, C, H, W)``; the
    leading frames then carry a matching ``(N, T-1, C, H, W)`` layout.
    """
    if T < 2:
        raise DegenerateWindowError(f"cannot recover a frame from a window of length {T}")
    D = np.asarray(D, dtype=np.float64)
    leading = np.asarray(leading_frames, dtype=np.float64)
    expected = D.shape[:-3] + (T - 1,) + D.shape[-3:]
    if D.ndim < 3 or leading.shape != expected:
        raise InvalidShapeError(f"expected leading frames of shape {expected}, "
                                f"got {leading.shape}")
    alpha = coefficients(T)
    pooled = np.tensordot(np.moveaxis(leading, -4, -1), alpha[:-1], axes=1)
    return (D - pooled) / alpha[-1]


def clamp_to_frame(x) -> np.ndarray:
    return np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
