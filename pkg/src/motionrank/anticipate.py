"""Recursive future generation, three-stream score fusion and evaluation.

At inference the observed prefix is turned into dynamic images, the last one
is pushed through the generator ``K`` times, and three streams of class
scores (static frames, observed dynamic images, generated dynamic images)
are averaged over time within each stream, summed, and renormalised.

Models may be ``ModelParams`` or plain callables mapping a batch of images
to probability rows, which keeps test doubles trivial.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .data import observed_length
from .errors import InvalidArgumentError
from .models import ModelParams, classifier_forward, generator_forward
from .rankpool import FrameSequence, dynamic_image_sequence

logger = logging.getLogger(__name__)

Model = Union[ModelParams, Callable[[np.ndarray], np.ndarray]]
DEFAULT_FRACTIONS = tuple(round(0.1 * i, 1) for i in range(1, 11))


@dataclass
class AnticipationModels:
    static: Optional[Model]
    dynamic: Optional[Model]
    generator: Optional[Model] = None


@dataclass
class AnticipationResult:
    predicted: int
    fused: np.ndarray
    stream_means: Dict[str, Optional[np.ndarray]]
    K: int
    fraction: Optional[float] = None


@dataclass
class AnticipationCurve:
    points: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def fractions(self) -> List[float]:
        return [p for p, _ in self.points]

    @property
    def accuracies(self) -> List[float]:
        return [a for _, a in self.points]


def _apply(model: Model, batch: np.ndarray, kind: str) -> np.ndarray:
    if isinstance(model, ModelParams):
        if kind == "generator":
            return generator_forward(model, batch)
        return classifier_forward(model, batch)
    return np.asarray(model(batch), dtype=np.float64)


def generate_future(generator: Model, D_last, K: int) -> List[np.ndarray]:
    """``K`` dynamic images generated recursively from ``D_last``."""
    if K < 0:
        raise InvalidArgumentError(f"K must be >= 0, got {K}")
    out, current = [], np.asarray(D_last, dtype=np.float64)
    for _ in range(K):
        current = _apply(generator, current[None], "generator")[0]
        out.append(current)
    return out


def _stream_mean(scores) -> Optional[np.ndarray]:
    if scores is None or len(scores) == 0:
        return None
    return np.mean(np.asarray(scores, dtype=np.float64), axis=0)


def fuse_scores(static_scores, dynamic_scores, generated_scores) -> Tuple[np.ndarray, int]:
    """Average each stream over time, sum the stream means, renormalise."""
    means = [m for m in map(_stream_mean, (static_scores, dynamic_scores, generated_scores))
             if m is not None]
    if not means:
        raise InvalidArgumentError("all score streams are empty")
    if len({m.shape for m in means}) != 1:
        raise InvalidArgumentError("score vectors differ in length across streams")
    total = np.sum(means, axis=0)
    fused = total / total.sum()
    return fused, int(np.argmax(fused))


@dataclass
class _VideoScores:
    static: Optional[np.ndarray]
    dynamic: Optional[np.ndarray]
    generated: np.ndarray


def _score_prefix(prefix: FrameSequence, models: AnticipationModels, T: int, K: int,
                  stride: int, static_every: int) -> _VideoScores:
    if len(prefix) == 0:
        raise InvalidArgumentError("empty video prefix")
    static = None
    if models.static is not None:
        static = _apply(models.static, prefix.frames[::static_every], "classifier")
    dyn_images = dynamic_image_sequence(prefix, T, stride)
    dynamic = None
    generated = np.empty((0,))
    if models.dynamic is not None:
        dynamic = _apply(models.dynamic, np.stack(dyn_images), "classifier")
        if K > 0:
            if models.generator is None:
                raise InvalidArgumentError("K > 0 requires a generator")
            future = generate_future(models.generator, dyn_images[-1], K)
            generated = _apply(models.dynamic, np.stack(future), "classifier")
    return _VideoScores(static, dynamic, generated)


def _result_from_scores(scores: _VideoScores, K: int, fraction=None) -> AnticipationResult:
    gen = scores.generated[:K] if K > 0 else None
    fused, cls = fuse_scores(scores.static, scores.dynamic, gen)
    means = {"static": _stream_mean(scores.static), "dynamic": _stream_mean(scores.dynamic),
             "generated": _stream_mean(gen)}
    return AnticipationResult(cls, fused, means, K, fraction)


def anticipate(video_prefix: FrameSequence, static_model: Optional[Model], dynamic_model: Optional[Model],
               generator: Optional[Model], T: int = 10, K: int = 0, stride: int = 1,
               static_every: int = 1, fraction: Optional[float] = None) -> AnticipationResult:
    """Predict the action of a partially observed video."""
    models = AnticipationModels(static_model, dynamic_model, generator)
    scores = _score_prefix(video_prefix, models, T, K, stride, static_every)
    return _result_from_scores(scores, K, fraction)


# --------------------------------------------------------------------------
# evaluation protocol


def _check_dataset(videos) -> None:
    if not videos:
        raise InvalidArgumentError("empty evaluation dataset")


def _predictions_for_video(args) -> List[int]:
    video, models, T, Ks, fraction, stride, static_every = args
    prefix = video.truncate(observed_length(len(video), fraction))
    scores = _score_prefix(prefix, models, T, max(Ks), stride, static_every)
    return [_result_from_scores(scores, k, fraction).predicted for k in Ks]


def _accuracies(videos, models, T, Ks, fraction, stride=1, static_every=1, jobs=1) -> List[float]:
    """Accuracy for every K in ``Ks`` at one observed fraction.

    Generated images for smaller K are prefixes of the largest K's sequence,
    so one recursive rollout per video serves the whole list.
    """
    tasks = [(v, models, T, list(Ks), fraction, stride, static_every) for v in videos]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            preds = list(pool.map(_predictions_for_video, tasks))
    else:
        preds = [_predictions_for_video(t) for t in tasks]
    labels = np.array([v.label for v in videos])
    preds = np.asarray(preds)
    return [float(np.mean(preds[:, i] == labels)) for i in range(len(Ks))]


def evaluate_curve(videos: Sequence[FrameSequence], models: AnticipationModels, T: int = 10,
                   K: int = 0, fractions: Sequence[float] = DEFAULT_FRACTIONS, stride: int = 1,
                   static_every: int = 1, jobs: int = 1) -> AnticipationCurve:
    _check_dataset(videos)
    fractions = list(fractions)
    if not fractions or any(not 0 < p <= 1 for p in fractions):
        raise InvalidArgumentError(f"fractions must lie in (0, 1], got {fractions}")
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise InvalidArgumentError("fractions must be strictly increasing")
    points = [(p, _accuracies(videos, models, T, [K], p, stride, static_every, jobs)[0])
              for p in fractions]
    return AnticipationCurve(points)


def earliest_latest(videos: Sequence[FrameSequence], models: AnticipationModels, T: int = 10,
                    K: int = 0, earliest_fraction: float = 0.2, stride: int = 1,
                    jobs: int = 1) -> Tuple[float, float]:
    if not 0 < earliest_fraction < 1:
        raise InvalidArgumentError(f"earliest fraction must be in (0, 1), got {earliest_fraction}")
    curve = evaluate_curve(videos, models, T, K, [earliest_fraction, 1.0], stride, jobs=jobs)
    return curve.points[0][1], curve.points[1][1]


def k_sweep(videos: Sequence[FrameSequence], models: AnticipationModels, T: int = 10,
            K_max: int = 10, fraction: float = 0.2, stride: int = 1,
            jobs: int = 1) -> List[Tuple[int, float]]:
    if K_max < 0:
        raise InvalidArgumentError("K_max must be >= 0")
    _check_dataset(videos)
    Ks = list(range(K_max + 1))
    return list(zip(Ks, _accuracies(videos, models, T, Ks, fraction, stride, jobs=jobs)))


def generated_di_accuracy(videos: Sequence[FrameSequence], generator: Model, teacher: Model,
                          T: int = 10, stride: int = 1) -> Tuple[float, float]:
    """Teacher accuracy on real dynamic images and on their one-step predictions.

    Every real dynamic image except the last of each video is fed to the
    generator, so both figures cover the same number of images.
    """
    _check_dataset(videos)
    real_hits = gen_hits = total = 0
    for video in videos:
        dis = np.stack(dynamic_image_sequence(video, T, stride))
        inputs = dis[:-1] if len(dis) > 1 else dis
        targets = dis[1:] if len(dis) > 1 else dis
        generated = _apply(generator, inputs, "generator")
        real_hits += int(np.sum(np.argmax(_apply(teacher, targets, "classifier"), -1) == video.label))
        gen_hits += int(np.sum(np.argmax(_apply(teacher, generated, "classifier"), -1) == video.label))
        total += len(inputs)
    return real_hits / total, gen_hits / total


# --------------------------------------------------------------------------
# CSV output


def write_curve_csv(path, curve: AnticipationCurve, k: int, seed: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["fraction", "accuracy", "k", "seed"])
        for p, acc in curve.points:
            writer.writerow([f"{p:g}", f"{acc:.6f}", k, seed])


def write_sweep_csv(path, sweep: Sequence[Tuple[int, float]], fraction: float, seed: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["k", "accuracy", "fraction", "seed"])
        for k, acc in sweep:
            writer.writerow([k, f"{acc:.6f}", f"{fraction:g}", seed])
