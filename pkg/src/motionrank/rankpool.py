"""Dynamic images via approximate rank pooling, plus an exact RankSVM solver.

A dynamic image is the parameter vector of a linear function that ranks the
frames of a window chronologically. ``approximate_rank_pool`` computes the
closed-form weighted sum of frames; ``exact_rank_pool`` solves the pairwise
hinge-loss objective directly and is used to check the approximation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from .errors import InvalidArgumentError, InvalidShapeError


@dataclass
class FrameSequence:
    """Ordered frames stacked as ``(n, C, H, W)`` with values in [0, 1]."""

    frames: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4 or len(self.frames) == 0:
            raise InvalidShapeError(f"frames must be a non-empty (n, C, H, W) stack, "
                                    f"got {self.frames.shape}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_shape(self):
        return self.frames.shape[1:]

    def truncate(self, n: int) -> "FrameSequence":
        return FrameSequence(self.frames[:n], self.label)


@dataclass
class RankPoolSolution:
    d: np.ndarray
    objective: float
    pair_accuracy: float


FramesLike = Union[FrameSequence, np.ndarray, Sequence[np.ndarray]]


def _frames(x: FramesLike) -> np.ndarray:
    if isinstance(x, FrameSequence):
        return x.frames
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        raise InvalidShapeError("expected a sequence of frames")
    return arr


def harmonic(t: int) -> float:
    if t < 0:
        raise InvalidArgumentError(f"harmonic number undefined for t={t}")
    return float(sum(1.0 / i for i in range(1, t + 1)))


@lru_cache(maxsize=None)
def _coefficients(T: int) -> tuple:
    # H[t] for t = 0..T
    H = np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, T + 1))])
    t = np.arange(1, T + 1)
    alpha = 2.0 * (T - t + 1) - (T + 1) * (H[T] - H[t - 1])
    return tuple(alpha)


def coefficients(T: int) -> np.ndarray:
    """Approximate rank pooling weights ``alpha_1 .. alpha_T``."""
    if T < 1:
        raise InvalidArgumentError(f"window length must be >= 1, got {T}")
    return np.array(_coefficients(int(T)))


def approximate_rank_pool(window: FramesLike) -> np.ndarray:
    frames = _frames(window)
    if len(frames) == 0:
        raise InvalidArgumentError("cannot pool an empty window")
    return np.tensordot(coefficients(len(frames)), frames, axes=1)


def window_offsets(n: int, T: int, stride: int) -> List[tuple]:
    """``(start, stop)`` index pairs of the windows over ``n`` frames.

    Full windows start at 0, stride, 2*stride, ... A trailing partial window
    covers whatever frames the last full window left unconsumed. A video
    shorter than ``T`` yields one window over all of its frames.
    """
    if T < 1 or stride < 1:
        raise InvalidArgumentError(f"T and stride must be >= 1, got T={T}, stride={stride}")
    if n < 1:
        raise InvalidArgumentError("empty video")
    if n <= T:
        return [(0, n)]
    spans = [(s, s + T) for s in range(0, n - T + 1, stride)]
    nxt = spans[-1][0] + stride
    if spans[-1][1] < n and nxt < n:
        spans.append((nxt, n))
    return spans


def dynamic_image_sequence(video: FramesLike, T: int = 10, stride: int = 1) -> List[np.ndarray]:
    frames = _frames(video)
    return [approximate_rank_pool(frames[a:b]) for a, b in window_offsets(len(frames), T, stride)]


def _time_averages(features: Sequence) -> np.ndarray:
    X = np.asarray([np.ravel(f) for f in features], dtype=np.float64)
    return np.cumsum(X, axis=0) / np.arange(1, len(X) + 1)[:, None]


def rank_scores(d, features: Sequence) -> np.ndarray:
    """Ranking scores ``<d, V_t>`` where ``V_t`` is the running mean of features."""
    V = _time_averages(features)
    d = np.ravel(np.asarray(d, dtype=np.float64))
    if d.shape[0] != V.shape[1]:
        raise InvalidShapeError(f"d has dimension {d.shape[0]}, features {V.shape[1]}")
    return V @ d


def pair_accuracy(scores) -> float:
    """Fraction of pairs q > t with score[q] strictly above score[t]."""
    s = np.asarray(scores, dtype=np.float64)
    q, t = np.triu_indices(len(s), k=1)
    if len(q) == 0:
        return 0.0
    return float(np.mean(s[t] > s[q]))


def rank_objective(d, V: np.ndarray, lam: float) -> float:
    T = len(V)
    s = V @ d
    later, earlier = np.triu_indices(T, k=1)[::-1]
    hinge = np.maximum(0.0, 1.0 - s[later] + s[earlier])
    return float(0.5 * lam * d @ d + 2.0 / (T * (T - 1)) * hinge.sum())


def exact_rank_pool(features: Sequence, lam: float = 0.01, iterations: int = 2000,
                    step_size: float = 0.1,
                    psi: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> RankPoolSolution:
    """Minimise the RankSVM objective by subgradient descent from ``d = 0``.

    The step at iteration k is ``step_size / sqrt(k)``. The best iterate seen
    is returned, so the reported objective never exceeds ``E(0) = 1``.
    """
    if psi is not None:
        features = [psi(f) for f in features]
    T = len(features)
    if T < 2:
        raise InvalidArgumentError("rank pooling needs at least two frames")
    if lam <= 0:
        raise InvalidArgumentError("lambda must be positive")
    V = _time_averages(features)
    t_idx, q_idx = np.triu_indices(T, k=1)
    diffs = V[q_idx] - V[t_idx]
    scale = 2.0 / (T * (T - 1))

    d = np.zeros(V.shape[1])
    best_d, best_obj = d.copy(), rank_objective(d, V, lam)
    for k in range(1, iterations + 1):
        active = (1.0 - diffs @ d) > 0
        grad = lam * d - scale * diffs[active].sum(axis=0)
        if not np.any(grad):
            break
        d = d - step_size / np.sqrt(k) * grad
        obj = rank_objective(d, V, lam)
        if obj < best_obj:
            best_d, best_obj = d.copy(), obj
    return RankPoolSolution(best_d, best_obj, pair_accuracy(V @ best_d))
