"""Desk-scale experiment protocol shared by ``scripts/`` and the acceptance suite.

One seed of the benchmark builds a synthetic dataset, trains a static and a
dynamic teacher, then trains one generator per requested loss combination.
Everything downstream (loss ablation, anticipation curves, K sweeps) reuses
those models.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .anticipate import AnticipationModels, evaluate_curve, generated_di_accuracy, k_sweep
from .data import CLASSES, LabeledDataset, SynthConfig, build_gen_samples, make_dataset
from .models import ClassifierConfig, GeneratorConfig, ModelParams
from .training import (TrainConfig, frame_accuracy, teacher_inputs, train_generator,
                       train_teacher)

logger = logging.getLogger(__name__)

FULL = ("dl", "sl", "cl")


@dataclass(frozen=True)
class BenchmarkConfig:
    synth: SynthConfig = SynthConfig()
    n_per_class: int = 20
    T: int = 10
    stride: int = 1
    teacher: TrainConfig = TrainConfig(lr=1e-2)
    generator: TrainConfig = TrainConfig(lr=3e-3)
    classifier_channels: Tuple[int, ...] = (8, 16)
    generator_maps: Tuple[int, ...] = (16, 32)


@dataclass
class SeedRun:
    seed: int
    dataset: LabeledDataset
    static: ModelParams
    dynamic: ModelParams
    teacher_logs: Dict[str, List[dict]]
    generators: Dict[Tuple[str, ...], ModelParams] = field(default_factory=dict)
    generator_logs: Dict[Tuple[str, ...], List[dict]] = field(default_factory=dict)
    seconds: float = 0.0

    def models(self, losses: Sequence[str] = FULL, with_static: bool = True) -> AnticipationModels:
        return AnticipationModels(self.static if with_static else None, self.dynamic,
                                  self.generators[tuple(losses)])


def _classifier(cfg: BenchmarkConfig, kind: str) -> ClassifierConfig:
    return ClassifierConfig(input_shape=cfg.synth.frame_shape,
                            conv_channels=cfg.classifier_channels,
                            n_classes=len(CLASSES), standardize=kind == "dynamic")


def train_seed(cfg: BenchmarkConfig, seed: int,
               loss_sets: Sequence[Sequence[str]] = (FULL,)) -> SeedRun:
    """Dataset, both teachers and one generator per loss set, all under ``seed``."""
    start = time.perf_counter()
    dataset = make_dataset(dataclasses.replace(cfg.synth, seed=seed), cfg.n_per_class)
    tc = dataclasses.replace(cfg.teacher, seed=seed)
    logs = {}
    teachers = {}
    for kind in ("dynamic", "static"):
        teachers[kind], logs[kind] = train_teacher(dataset.train, kind, tc, dataset.val, cfg.T,
                                                   cfg.stride, _classifier(cfg, kind))
    run = SeedRun(seed, dataset, teachers["static"], teachers["dynamic"], logs)
    samples = build_gen_samples(dataset.train, cfg.T, cfg.stride)
    gen_cfg = GeneratorConfig(input_shape=cfg.synth.frame_shape,
                              stage_feature_maps=cfg.generator_maps)
    for losses in loss_sets:
        gc = dataclasses.replace(cfg.generator, seed=seed, losses_enabled=tuple(losses))
        params, log = train_generator(samples, run.dynamic, gc, cfg.T, gen_cfg)
        run.generators[tuple(losses)] = params
        run.generator_logs[tuple(losses)] = log
    run.seconds = time.perf_counter() - start
    logger.info("seed %d trained in %.0fs", seed, run.seconds)
    return run


def teacher_accuracy(run: SeedRun, cfg: BenchmarkConfig, kind: str = "dynamic",
                     split: str = "test") -> float:
    """Frame-level accuracy of a trained teacher on a held-out split."""
    images, labels = teacher_inputs(run.dataset.splits()[split], kind, cfg.T, cfg.stride)
    return frame_accuracy(run.dynamic if kind == "dynamic" else run.static, images, labels)


def ablation(run: SeedRun, cfg: BenchmarkConfig, split: str = "test") -> Dict[Tuple[str, ...], Tuple[float, float]]:
    """(real, generated) dynamic-image accuracy of the dynamic teacher per loss set."""
    videos = run.dataset.splits()[split]
    return {losses: generated_di_accuracy(videos, gen, run.dynamic, cfg.T, cfg.stride)
            for losses, gen in run.generators.items()}


def sweep(run: SeedRun, cfg: BenchmarkConfig, K_max: int = 10, fraction: float = 0.2,
          losses: Sequence[str] = FULL, split: str = "test", jobs: int = 1) -> List[Tuple[int, float]]:
    return k_sweep(run.dataset.splits()[split], run.models(losses), cfg.T, K_max, fraction,
                   cfg.stride, jobs)


def curve(run: SeedRun, cfg: BenchmarkConfig, K: int, fractions: Sequence[float],
          losses: Sequence[str] = FULL, split: str = "test", jobs: int = 1):
    return evaluate_curve(run.dataset.splits()[split], run.models(losses), cfg.T, K, fractions,
                          cfg.stride, jobs=jobs)


def mean_sweep(sweeps: Sequence[Sequence[Tuple[int, float]]]) -> List[Tuple[int, float]]:
    ks = [k for k, _ in sweeps[0]]
    acc = np.mean([[a for _, a in s] for s in sweeps], axis=0)
    return list(zip(ks, acc.tolist()))
