"""Synthetic motion videos, frame-directory ingestion and dataset assembly.

Six classes share one appearance (a bright shape on a dark background) and
differ only in how it moves: translating left/right/up/down or growing and
shrinking. Static frames therefore carry little class information while
dynamic images carry a lot.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import DecodeError, InvalidArgumentError, InvalidShapeError, MissingFrameError
from .formats import write_dimg
from .rankpool import FrameSequence, approximate_rank_pool

logger = logging.getLogger(__name__)

CLASSES = ("left", "right", "up", "down", "grow", "shrink")
# class index after a horizontal flip
HFLIP_LABELS = (1, 0, 2, 3, 4, 5)

FRAME_RE = re.compile(r"^frame_(\d+)\.(png|jpg|jpeg|bmp)$", re.IGNORECASE)


@dataclass(frozen=True)
class SynthConfig:
    frames_per_video: int = 40
    frame_shape: Tuple[int, int, int] = (1, 32, 32)
    shape: str = "square"
    speed_range: Tuple[float, float] = (0.15, 0.4)
    half_size_range: Tuple[float, float] = (3.0, 5.0)
    # frames the shape holds still before moving; with slow speeds a short
    # observed prefix then shows only faint motion, so anticipation is non-trivial
    onset_range: Tuple[int, int] = (0, 6)
    noise: float = 0.01
    background: float = 0.1
    foreground: float = 0.9
    seed: int = 0

    def validate(self, T: int = 10) -> None:
        if self.frames_per_video < 2 * T:
            raise InvalidArgumentError(f"frames_per_video must be >= 2*T = {2 * T}")
        if self.shape not in ("square", "disc"):
            raise InvalidArgumentError(f"unknown shape kind {self.shape!r}")
        c, h, w = self.frame_shape
        if c not in (1, 3) or h < 8 or w < 8:
            raise InvalidArgumentError(f"unsupported frame shape {self.frame_shape}")
        lo, hi = self.speed_range
        if not 0 <= lo <= hi:
            raise InvalidArgumentError(f"bad speed range {self.speed_range}")
        if not 0 <= self.onset_range[0] <= self.onset_range[1] < self.frames_per_video - 1:
            raise InvalidArgumentError(f"bad onset range {self.onset_range}")


@dataclass
class LabeledDataset:
    train: List[FrameSequence]
    val: List[FrameSequence]
    test: List[FrameSequence]
    config: Optional[SynthConfig] = None

    def splits(self) -> Dict[str, List[FrameSequence]]:
        return {"train": self.train, "val": self.val, "test": self.test}


@dataclass
class GenSample:
    D_t: np.ndarray
    D_next: np.ndarray
    leading_future_frames: np.ndarray
    final_future_frame: np.ndarray
    label: int


# --------------------------------------------------------------------------
# synthesis


def _render(shape: str, cx: np.ndarray, cy: np.ndarray, half: np.ndarray,
            h: int, w: int) -> np.ndarray:
    """Anti-aliased coverage maps for a batch of shape positions, ``(n, h, w)``.

    Pixel coordinates are measured from the image centre so that mirrored
    positions render to exactly mirrored images.
    """
    ys = (np.arange(h) - (h - 1) / 2.0)[None, :, None]
    xs = (np.arange(w) - (w - 1) / 2.0)[None, None, :]
    cx, cy, half = cx[:, None, None], cy[:, None, None], half[:, None, None]
    if shape == "square":
        cov_x = np.clip(half - np.abs(xs - cx) + 0.5, 0.0, 1.0)
        cov_y = np.clip(half - np.abs(ys - cy) + 0.5, 0.0, 1.0)
        return cov_x * cov_y
    dist = np.sqrt((xs - cx) ** 2 + (ys - cy) ** 2)
    return np.clip(half - dist + 0.5, 0.0, 1.0)


def synth_video(class_id: int, config: SynthConfig = SynthConfig(),
                instance_seed: int = 0) -> FrameSequence:
    """Render one video of class ``class_id``.

    Geometry draws depend only on ``(config.seed, instance_seed)``, so the
    same instance of "left" and "right" are exact mirror images when the
    noise is zero.
    """
    if not 0 <= class_id < len(CLASSES):
        raise InvalidArgumentError(f"class id {class_id} out of range")
    config.validate(T=1)
    c, h, w = config.frame_shape
    n = config.frames_per_video
    geo = np.random.default_rng([config.seed, instance_seed])
    speed = geo.uniform(*config.speed_range)
    half0 = geo.uniform(*config.half_size_range)
    u_start, u_perp = geo.uniform(size=2)
    onset = int(geo.integers(config.onset_range[0], config.onset_range[1] + 1))

    # motion time: 0 during the onset hold, then frames since onset
    t = np.maximum(np.arange(n) - onset, 0).astype(np.float64)
    t_end = float(n - 1 - onset)
    name = CLASSES[class_id]
    if name in ("left", "right", "up", "down"):
        extent = (w if name in ("left", "right") else h) / 2.0
        perp_extent = (h if name in ("left", "right") else w) / 2.0
        bound = extent - half0 - 1.0
        speed = min(speed, 2.0 * bound / max(t_end, 1.0))
        travel = speed * t_end
        pos = (-bound + u_start * (2.0 * bound - travel)) + speed * t
        if name in ("left", "up"):
            pos = -pos
        perp_bound = perp_extent - half0 - 1.0
        perp = np.full(n, -perp_bound + 2.0 * perp_bound * u_perp)
        cx, cy = (pos, perp) if name in ("left", "right") else (perp, pos)
        half = np.full(n, half0)
    else:
        max_half = min(h, w) / 2.0 - 2.0
        rate = min(0.5 * speed, (max_half - half0) / max(t_end, 1.0))
        half = half0 + rate * (t if name == "grow" else t_end - t)
        bx = w / 2.0 - max_half - 1.0
        by = h / 2.0 - max_half - 1.0
        cx = np.full(n, -bx + 2.0 * bx * u_start)
        cy = np.full(n, -by + 2.0 * by * u_perp)

    cov = _render(config.shape, cx, cy, half, h, w)
    frames = config.background + (config.foreground - config.background) * cov
    frames = np.repeat(frames[:, None], c, axis=1)
    if config.noise > 0:
        noise_rng = np.random.default_rng([config.seed, instance_seed, class_id, 1])
        frames = frames + noise_rng.normal(0.0, config.noise, frames.shape)
    return FrameSequence(np.clip(frames, 0.0, 1.0), label=class_id)


def make_dataset(config: SynthConfig = SynthConfig(), n_per_class: int = 10,
                 split_ratios: Sequence[float] = (0.6, 0.2, 0.2)) -> LabeledDataset:
    if n_per_class < 3:
        raise InvalidArgumentError("n_per_class must be >= 3 so every split gets a video")
    if len(split_ratios) != 3 or abs(sum(split_ratios) - 1.0) > 1e-9 or min(split_ratios) < 0:
        raise InvalidArgumentError(f"split ratios must be three non-negatives summing to 1, "
                                   f"got {split_ratios}")
    n_val = int(round(split_ratios[1] * n_per_class))
    n_test = int(round(split_ratios[2] * n_per_class))
    n_train = n_per_class - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise InvalidArgumentError(f"{n_per_class} videos per class cannot fill splits "
                                   f"{split_ratios}")
    splits = {"train": [], "val": [], "test": []}
    for class_id in range(len(CLASSES)):
        for i in range(n_per_class):
            video = synth_video(class_id, config, instance_seed=class_id * n_per_class + i)
            split = "train" if i < n_train else "val" if i < n_train + n_val else "test"
            splits[split].append(video)
    return LabeledDataset(splits["train"], splits["val"], splits["test"], config)


def build_gen_samples(videos: Sequence[FrameSequence], T: int = 10,
                      stride: int = 1) -> List[GenSample]:
    """Pairs of consecutive dynamic images with the frames of the later window."""
    samples, skipped = [], 0
    for video in videos:
        frames = video.frames
        n = len(frames)
        if n < T + stride:
            skipped += 1
            continue
        for s in range(0, n - T - stride + 1, stride):
            future = frames[s + stride:s + stride + T]
            samples.append(GenSample(
                D_t=approximate_rank_pool(frames[s:s + T]),
                D_next=approximate_rank_pool(future),
                leading_future_frames=future[:-1],
                final_future_frame=future[-1],
                label=int(video.label)))
    if skipped:
        logger.warning("skipped %d videos shorter than T + stride = %d frames", skipped, T + stride)
    return samples


# --------------------------------------------------------------------------
# disk I/O


def load_frames(directory, label: Optional[int] = None) -> FrameSequence:
    directory = Path(directory)
    indexed = {}
    for p in directory.iterdir():
        m = FRAME_RE.match(p.name)
        if m:
            indexed[int(m.group(1))] = p
    if not indexed:
        raise MissingFrameError(f"{directory}: no frame_NNNNNN images found")
    for expected in range(1, max(indexed) + 1):
        if expected not in indexed:
            raise MissingFrameError(f"{directory}: missing frame {expected} "
                                    f"(frame_{expected:06d})")
    frames = []
    for i in range(1, max(indexed) + 1):
        path = indexed[i]
        try:
            with Image.open(path) as img:
                if img.mode not in ("L", "RGB"):
                    img = img.convert("RGB" if "A" in img.mode or img.mode == "P" else "L")
                arr = np.asarray(img, dtype=np.float64) / 255.0
        except (OSError, ValueError) as exc:
            raise DecodeError(f"{path}: cannot decode image ({exc})") from exc
        arr = arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
        if frames and arr.shape != frames[0].shape:
            raise InvalidShapeError(f"{path}: shape {arr.shape} differs from {frames[0].shape}")
        frames.append(arr)
    return FrameSequence(np.stack(frames), label)


def _to_pil(img8: np.ndarray) -> Image.Image:
    if img8.shape[0] == 1:
        return Image.fromarray(img8[0], mode="L")
    return Image.fromarray(img8.transpose(1, 2, 0), mode="RGB")


def save_frames(video: FrameSequence, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(video.frames, start=1):
        img8 = np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
        _to_pil(img8).save(directory / f"frame_{i:06d}.png")


def export_dynamic_image(D, path, mode: str = "raw") -> None:
    """Write ``D`` as a raw DIMG file or as a min-max normalised 8-bit PNG."""
    D = np.asarray(D, dtype=np.float64)
    path = Path(path)
    try:
        if mode == "raw":
            write_dimg(D, path)
        elif mode == "png":
            lo, hi = D.min(), D.max()
            if hi - lo > 0:
                img8 = np.round((D - lo) / (hi - lo) * 255.0).astype(np.uint8)
            else:
                img8 = np.full(D.shape, 128, dtype=np.uint8)
            _to_pil(img8).save(path, format="PNG")
        else:
            raise InvalidArgumentError(f"unknown export mode {mode!r}")
    except OSError as exc:
        raise OSError(f"{path}: {exc}") from exc


def save_dataset(dataset: LabeledDataset, root) -> Path:
    """Persist every video as a frame directory plus a ``manifest.json``."""
    root = Path(root)
    entries = []
    for split, videos in dataset.splits().items():
        for i, video in enumerate(videos):
            rel = f"{split}/video_{i:04d}"
            save_frames(video, root / rel)
            entries.append({"path": rel, "label": int(video.label), "split": split})
    manifest = {"classes": list(CLASSES), "videos": entries,
                "config": asdict(dataset.config) if dataset.config else None}
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(root) -> LabeledDataset:
    root = Path(root)
    manifest_path = root / "manifest.json" if root.is_dir() else root
    manifest = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    splits = {"train": [], "val": [], "test": []}
    for entry in manifest["videos"]:
        splits[entry["split"]].append(load_frames(base / entry["path"], label=entry["label"]))
    cfg = manifest.get("config")
    config = None
    if cfg:
        config = SynthConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg.items()})
    return LabeledDataset(splits["train"], splits["val"], splits["test"], config)


def observed_length(n: int, fraction: float) -> int:
    """Frames seen after observing ``fraction`` of an ``n``-frame video."""
    if not 0.0 < fraction <= 1.0:
        raise InvalidArgumentError(f"fraction must be in (0, 1], got {fraction}")
    # tolerate float noise such as 0.3 * 40 == 12.000000000000002
    return max(1, min(n, math.ceil(fraction * n - 1e-9)))
