"""Generator losses, batch-split multitask training and teacher training."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import numerics as nx
from .errors import InvalidArgumentError, InvalidConfigError, InvalidShapeError, NumericError
from .models import (ClassifierConfig, GeneratorConfig, ModelParams, classifier_backward,
                     classifier_logits, generator_backward, generator_forward,
                     init_classifier, init_generator, predict)
from .rankpool import FrameSequence, dynamic_image_sequence
from .recovery import recover_last_frame, recovery_scale
from .data import GenSample

logger = logging.getLogger(__name__)

LOSSES = ("dl", "sl", "cl")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 0.1
    epochs: int = 30
    losses_enabled: Tuple[str, ...] = LOSSES
    seed: int = 0
    # "joint": one Adam step on the summed sub-batch gradients; "separate": one step per loss
    update: str = "joint"
    loss_weights: Optional[Tuple[float, float, float]] = None
    augment: Tuple[str, ...] = ()
    max_shift: Tuple[int, int] = (4, 4)
    hflip_labels: Optional[Tuple[int, ...]] = None

    def validate(self, generator: bool = True) -> None:
        if self.batch_size < 1 or self.epochs < 0 or self.lr <= 0:
            raise InvalidConfigError(f"bad optimisation settings in {self}")
        if generator:
            if not self.losses_enabled:
                raise InvalidConfigError("at least one loss must be enabled")
            unknown = set(self.losses_enabled) - set(LOSSES)
            if unknown:
                raise InvalidConfigError(f"unknown losses {sorted(unknown)}")
            if self.batch_size < len(self.losses_enabled):
                raise InvalidConfigError("batch_size must be >= number of enabled losses")
            if self.update not in ("joint", "separate"):
                raise InvalidConfigError(f"unknown update mode {self.update!r}")
        if set(self.augment) - {"hflip", "shift"}:
            raise InvalidConfigError(f"unknown augmentation in {self.augment}")


# --------------------------------------------------------------------------
# losses


def _mse(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def dynamic_loss(D_hat, D_true) -> Tuple[float, np.ndarray]:
    """Mean squared error between predicted and true next dynamic image."""
    D_hat, D_true = nx.as_tensor(D_hat), nx.as_tensor(D_true)
    if D_hat.shape != D_true.shape:
        raise InvalidShapeError(f"shape mismatch {D_hat.shape} vs {D_true.shape}")
    return _mse(D_hat, D_true)


def static_loss(D_hat, leading_future_frames, final_future_frame, T: int) -> Tuple[float, np.ndarray]:
    """MSE between the frame recovered from ``D_hat`` and the true final frame."""
    recovered = recover_last_frame(D_hat, leading_future_frames, T)
    final = nx.as_tensor(final_future_frame)
    if recovered.shape != final.shape:
        raise InvalidShapeError(f"shape mismatch {recovered.shape} vs {final.shape}")
    loss, grad = _mse(recovered, final)
    return loss, grad * recovery_scale(T)


def _check_teacher(teacher, shape) -> None:
    if not isinstance(teacher, ModelParams) or not isinstance(teacher.config, ClassifierConfig):
        raise InvalidArgumentError("classification loss needs a trained classifier teacher")
    if tuple(teacher.config.input_shape) != tuple(shape):
        raise InvalidArgumentError(f"teacher expects {teacher.config.input_shape}, "
                                   f"generator produces {tuple(shape)}")


def classification_loss(D_hat, label, teacher: ModelParams) -> Tuple[float, np.ndarray]:
    """Cross-entropy of the frozen teacher on ``D_hat``; gradient w.r.t. ``D_hat`` only."""
    D_hat = nx.as_tensor(D_hat)
    _check_teacher(teacher, D_hat.shape[-3:])
    logits, cache = classifier_logits(teacher, D_hat, return_cache=True)
    loss, dlogits = nx.softmax_cross_entropy(logits, label)
    grad, _ = classifier_backward(teacher, cache, dlogits)
    return loss, grad


# --------------------------------------------------------------------------
# augmentation


def augment(sample, hflip: bool = False, shift: Tuple[int, int] = (0, 0)):
    """Apply one horizontal flip and/or integer shift to every frame alike.

    Works on a ``FrameSequence`` or any array whose last two axes are H, W.
    ``shift = (dx, dy)`` moves content right/down; vacated pixels become 0.
    """
    frames = sample.frames if isinstance(sample, FrameSequence) else nx.as_tensor(sample)
    h, w = frames.shape[-2:]
    dx, dy = shift
    if abs(dx) >= w or abs(dy) >= h:
        raise InvalidArgumentError(f"shift {shift} too large for {h}x{w} frames")
    out = frames[..., ::-1] if hflip else frames
    if dx or dy:
        shifted = np.zeros_like(out)
        src_y = slice(max(0, -dy), h - max(0, dy))
        dst_y = slice(max(0, dy), h - max(0, -dy))
        src_x = slice(max(0, -dx), w - max(0, dx))
        dst_x = slice(max(0, dx), w - max(0, -dx))
        shifted[..., dst_y, dst_x] = out[..., src_y, src_x]
        out = shifted
    elif hflip:
        out = out.copy()
    if isinstance(sample, FrameSequence):
        return FrameSequence(out, sample.label)
    return out


def _draw_augmentation(rng: np.random.Generator, config: TrainConfig):
    hflip = "hflip" in config.augment and bool(rng.integers(2))
    shift = (0, 0)
    if "shift" in config.augment:
        mx, my = config.max_shift
        shift = (int(rng.integers(-mx, mx + 1)), int(rng.integers(-my, my + 1)))
    return hflip, shift


def _flip_label(label: int, hflip: bool, config: TrainConfig) -> int:
    if hflip and config.hflip_labels is not None:
        return int(config.hflip_labels[label])
    return int(label)


# --------------------------------------------------------------------------
# multitask generator training


def split_batch(batch: Sequence, enabled: Sequence[str], seed) -> Dict[str, list]:
    """Shuffle ``batch`` and partition it into one sub-batch per enabled loss."""
    if not enabled:
        raise InvalidArgumentError("no losses enabled")
    if len(batch) < len(enabled):
        raise InvalidArgumentError(f"batch of {len(batch)} cannot feed {len(enabled)} losses")
    perm = np.random.default_rng(seed).permutation(len(batch))
    parts = np.array_split(perm, len(enabled))
    return {name: [batch[i] for i in part] for name, part in zip(enabled, parts)}


def _stack_samples(samples: Sequence[GenSample], config: TrainConfig,
                   rng: Optional[np.random.Generator]):
    Dt, Dn, lead, final, labels = [], [], [], [], []
    for s in samples:
        arrays = (s.D_t, s.D_next, s.leading_future_frames, s.final_future_frame)
        label = s.label
        if config.augment and rng is not None:
            hflip, shift = _draw_augmentation(rng, config)
            arrays = tuple(augment(a, hflip, shift) for a in arrays)
            label = _flip_label(label, hflip, config)
        Dt.append(arrays[0])
        Dn.append(arrays[1])
        lead.append(arrays[2])
        final.append(arrays[3])
        labels.append(label)
    return (np.stack(Dt), np.stack(Dn), np.stack(lead), np.stack(final),
            np.asarray(labels, dtype=np.int64))


def _loss_on_subbatch(name: str, generator: ModelParams, stacked, teacher, T: int):
    Dt, Dn, lead, final, labels = stacked
    D_hat, cache = generator_forward(generator, Dt, return_cache=True)
    if name == "dl":
        loss, g = dynamic_loss(D_hat, Dn)
    elif name == "sl":
        loss, g = static_loss(D_hat, lead, final, T)
    else:
        loss, g = classification_loss(D_hat, labels, teacher)
    _, grads = generator_backward(generator, cache, g)
    return loss, grads, D_hat


def generator_objective(generator: ModelParams, samples: Sequence[GenSample], losses: Sequence[str],
                        teacher: Optional[ModelParams] = None, T: int = 10,
                        config: TrainConfig = TrainConfig()) -> Tuple[float, Dict[str, np.ndarray]]:
    """Sum of the enabled losses on ``samples`` with summed parameter gradients."""
    stacked = _stack_samples(samples, config, None)
    total, grads = 0.0, {}
    for name in losses:
        loss, g, _ = _loss_on_subbatch(name, generator, stacked, teacher, T)
        total += loss
        for k, v in g.items():
            grads[k] = grads[k] + v if k in grads else v
    return total, grads


def train_generator(dataset: Sequence[GenSample], teacher: Optional[ModelParams],
                    config: TrainConfig = TrainConfig(), T: int = 10,
                    generator_config: Optional[GeneratorConfig] = None,
                    init: Optional[ModelParams] = None) -> Tuple[ModelParams, List[dict]]:
    """Train the generator; returns params and one log row per epoch.

    Each batch is split into one sub-batch per enabled loss. Under the
    default ``update="joint"`` the sub-batch gradients are summed into a
    single Adam step.
    """
    config.validate(generator=True)
    if not dataset:
        raise InvalidArgumentError("empty generator dataset")
    if "cl" in config.losses_enabled and teacher is None:
        raise InvalidArgumentError("classification loss enabled without a teacher")
    if "sl" in config.losses_enabled and T < 2:
        raise InvalidArgumentError("static loss needs T >= 2")
    shape = dataset[0].D_t.shape
    if init is not None:
        gen = init.copy()
    else:
        gen = init_generator(generator_config or GeneratorConfig(input_shape=shape), config.seed)
    if teacher is not None:
        _check_teacher(teacher, gen.config.input_shape)
    weights = dict(zip(LOSSES, config.loss_weights)) if config.loss_weights else {}
    state = nx.adam_init(gen.tensors)
    enabled = list(config.losses_enabled)
    log = []
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(dataset))
        sums = {k: 0.0 for k in enabled}
        counts = {k: 0 for k in enabled}
        correct = seen = 0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [dataset[i] for i in order[start:start + config.batch_size]]
            if len(batch) < len(enabled):
                continue
            parts = split_batch(batch, enabled, [config.seed, epoch, b])
            total_grads: Dict[str, np.ndarray] = {}
            for name in enabled:
                stacked = _stack_samples(parts[name], config, rng)
                loss, grads, D_hat = _loss_on_subbatch(name, gen, stacked, teacher, T)
                if not np.isfinite(loss):
                    raise NumericError(f"non-finite {name} loss at epoch {epoch}, batch {b}")
                sums[name] += loss * len(parts[name])
                counts[name] += len(parts[name])
                if teacher is not None:
                    pred = predict(classifier_logits(teacher, D_hat))
                    correct += int(np.sum(pred == stacked[4]))
                    seen += len(pred)
                w = weights.get(name, 1.0)
                if config.update == "separate":
                    gen, state = _adam(gen, {k: w * v for k, v in grads.items()}, state, config)
                else:
                    for k, v in grads.items():
                        total_grads[k] = total_grads[k] + w * v if k in total_grads else w * v
            if config.update == "joint":
                gen, state = _adam(gen, total_grads, state, config)
        row = {"epoch": epoch, "teacher_acc": correct / seen if seen else None}
        for name in LOSSES:
            row[f"loss_{name}"] = sums[name] / counts[name] if counts.get(name) else None
        log.append(row)
        logger.info("generator epoch %d %s", epoch, row)
    return gen, log


def _adam(params: ModelParams, grads, state, config: TrainConfig):
    tensors, state = nx.adam_step(params.tensors, grads, state, config.lr,
                                  config.beta1, config.beta2, config.eps)
    return params.with_tensors(tensors), state


# --------------------------------------------------------------------------
# teachers


def teacher_inputs(videos: Sequence[FrameSequence], kind: str, T: int = 10,
                   stride: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Training images and labels: every frame (static) or every dynamic image."""
    if kind not in ("static", "dynamic"):
        raise InvalidArgumentError(f"teacher kind must be static or dynamic, got {kind!r}")
    images, labels = [], []
    for video in videos:
        items = video.frames if kind == "static" else dynamic_image_sequence(video, T, stride)
        images.extend(items)
        labels.extend([video.label] * len(items))
    return np.stack(images), np.asarray(labels, dtype=np.int64)


def frame_accuracy(params: ModelParams, images, labels, batch_size: int = 256) -> float:
    labels = np.asarray(labels)
    correct = 0
    for start in range(0, len(labels), batch_size):
        logits = classifier_logits(params, images[start:start + batch_size])
        correct += int(np.sum(predict(logits) == labels[start:start + batch_size]))
    return correct / len(labels)


def train_teacher(videos: Sequence[FrameSequence], kind: str, config: TrainConfig = TrainConfig(),
                  val_videos: Optional[Sequence[FrameSequence]] = None, T: int = 10,
                  stride: int = 1, classifier_config: Optional[ClassifierConfig] = None
                  ) -> Tuple[ModelParams, List[dict]]:
    """Train a static (raw frames) or dynamic (standardised dynamic images) CNN.

    The log holds per-epoch training loss and frame-level accuracy on the
    training and, when given, held-out videos.
    """
    config.validate(generator=False)
    images, labels = teacher_inputs(videos, kind, T, stride)
    n_classes = len(set(labels.tolist()))
    if n_classes < 2:
        raise InvalidArgumentError("teacher training needs at least two classes")
    if classifier_config is None:
        classifier_config = ClassifierConfig(input_shape=images.shape[1:],
                                             n_classes=int(labels.max()) + 1,
                                             standardize=(kind == "dynamic"))
    params = init_classifier(classifier_config, config.seed)
    val = teacher_inputs(val_videos, kind, T, stride) if val_videos else None
    state = nx.adam_init(params.tensors)
    log = []
    for epoch in range(1, config.epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(labels))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            x, y = images[idx], labels[idx]
            if config.augment:
                xs, ys = [], []
                for img, lab in zip(x, y):
                    hflip, shift = _draw_augmentation(rng, config)
                    xs.append(augment(img, hflip, shift))
                    ys.append(_flip_label(lab, hflip, config))
                x, y = np.stack(xs), np.asarray(ys)
            logits, cache = classifier_logits(params, x, return_cache=True)
            loss, dlogits = nx.softmax_cross_entropy(logits, y)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite teacher loss at epoch {epoch}")
            _, grads = classifier_backward(params, cache, dlogits)
            params, state = _adam(params, grads, state, config)
            total += loss * len(idx)
        row = {"epoch": epoch, "loss": total / len(labels),
               "train_acc": frame_accuracy(params, images, labels),
               "val_acc": frame_accuracy(params, *val) if val else None}
        log.append(row)
        logger.info("%s teacher epoch %d %s", kind, epoch, row)
    return params, log


# --------------------------------------------------------------------------
# logs


def write_loss_csv(path, rows: Sequence[Mapping]) -> None:
    """``epoch,loss_dl,loss_sl,loss_cl,teacher_acc``; blank cells for missing values."""
    def cell(v):
        return "" if v is None else f"{v:.6f}"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss_dl", "loss_sl", "loss_cl", "teacher_acc"])
        for r in rows:
            writer.writerow([r["epoch"], cell(r.get("loss_dl")), cell(r.get("loss_sl")),
                             cell(r.get("loss_cl")), cell(r.get("teacher_acc"))])
