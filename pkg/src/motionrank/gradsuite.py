"""Finite-difference checks for every layer and every generator loss.

ReLU-family activations are not differentiable at 0, and a central
difference straddling a kink is meaningless. Each case therefore draws its
random inputs from successive seeds until all pre-activations sit at least
``KINK_MARGIN`` away from zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from . import numerics as nx
from .models import (ClassifierConfig, GeneratorConfig, ModelParams, classifier_logits,
                     generator_backward, generator_forward, init_classifier, init_generator)
from .rankpool import approximate_rank_pool
from .training import classification_loss, dynamic_loss, static_loss

EPS = 1e-3
TOLERANCE = 1e-4
KINK_MARGIN = 5e-3
MAX_SEED_TRIES = 200

SUITE_GEN = GeneratorConfig(input_shape=(1, 8, 8), stage_feature_maps=(3, 4))
SUITE_TEACHER = ClassifierConfig(input_shape=(1, 8, 8), conv_channels=(3, 4), n_classes=6,
                                 standardize=True)


@dataclass
class CheckResult:
    name: str
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _min_preactivation(cache) -> float:
    return min(float(np.min(np.abs(z))) for _, z in cache)


def _layer_cases() -> Dict[str, Tuple[Callable, Dict[str, np.ndarray]]]:
    rng = np.random.default_rng(0)
    cases = {}

    def conv_fn(p):
        y = nx.conv2d_forward(p["x"], p["kernels"], p["bias"], 2, 2)
        w = np.sin(np.arange(y.size)).reshape(y.shape)
        lg = nx.conv2d_backward(p["x"], p["kernels"], 2, 2, w)
        return float(np.sum(y * w)), {"x": lg.input_grad, **lg.param_grads}
    cases["conv2d"] = (conv_fn, {"x": rng.normal(size=(2, 2, 8, 8)),
                                 "kernels": rng.normal(size=(3, 2, 5, 5)), "bias": rng.normal(size=3)})

    def convt_fn(p):
        y = nx.conv2d_transpose_forward(p["x"], p["kernels"], p["bias"], 2, 2, 1)
        w = np.cos(np.arange(y.size)).reshape(y.shape)
        lg = nx.conv2d_transpose_backward(p["x"], p["kernels"], 2, 2, 1, w)
        return float(np.sum(y * w)), {"x": lg.input_grad, **lg.param_grads}
    cases["conv2d_transpose"] = (convt_fn, {"x": rng.normal(size=(2, 3, 4, 4)),
                                            "kernels": rng.normal(size=(3, 2, 5, 5)),
                                            "bias": rng.normal(size=2)})

    for kind in nx.ACTIVATIONS:
        x = rng.normal(size=50)
        x = np.where(np.abs(x) < KINK_MARGIN, x + 4 * KINK_MARGIN * np.sign(x + 1e-12), x)

        def act_fn(p, kind=kind):
            w = np.linspace(-1, 1, p["x"].size)
            y = nx.activation_forward(p["x"], kind)
            return float(np.sum(w * y)), {"x": nx.activation_backward(p["x"], kind, w)}
        cases[f"activation[{kind}]"] = (act_fn, {"x": x})

    def dense_fn(p):
        y = nx.dense_forward(p["x"], p["W"], p["b"])
        w = np.sin(np.arange(y.size)).reshape(y.shape)
        lg = nx.dense_backward(p["x"], p["W"], w)
        return float(np.sum(w * y)), {"x": lg.input_grad, **lg.param_grads}
    cases["dense"] = (dense_fn, {"x": rng.normal(size=(4, 5)), "W": rng.normal(size=(3, 5)),
                                 "b": rng.normal(size=3)})

    def ce_fn(p):
        loss, g = nx.softmax_cross_entropy(p["z"], np.array([0, 2, 5]))
        return loss, {"z": g}
    cases["softmax_cross_entropy"] = (ce_fn, {"z": rng.normal(size=(3, 6))})
    return cases


def _kink_free_generator_inputs(teacher: ModelParams, T: int):
    for seed in range(MAX_SEED_TRIES):
        gen = init_generator(SUITE_GEN, seed)
        rng = np.random.default_rng(seed)
        window = rng.random((1, T + 1, 1, 8, 8))
        D_t = np.stack([approximate_rank_pool(w[:T]) for w in window])
        D_next = np.stack([approximate_rank_pool(w[1:]) for w in window])
        out, cache = generator_forward(gen, D_t, return_cache=True)
        _, tcache = classifier_logits(teacher, out, return_cache=True)
        margin = min(_min_preactivation(cache), _min_preactivation(tcache["conv"]))
        if margin > KINK_MARGIN:
            return gen, D_t, D_next, window[:, 1:]
    raise RuntimeError("no kink-free seed found for the generator gradient check")


def _generator_loss_cases(T: int = 4):
    teacher = init_classifier(SUITE_TEACHER, seed=0)
    gen, D_t, D_next, future = _kink_free_generator_inputs(teacher, T)
    labels = np.array([4])
    lead, final = future[:, :-1], future[:, -1]

    def make(loss_name):
        def fn(p):
            model = gen.with_tensors(p)
            out, cache = generator_forward(model, D_t, return_cache=True)
            if loss_name == "dynamic_loss":
                loss, g = dynamic_loss(out, D_next)
            elif loss_name == "static_loss":
                loss, g = static_loss(out, lead, final, T)
            else:
                loss, g = classification_loss(out, labels, teacher)
            _, grads = generator_backward(model, cache, g)
            return loss, grads
        return fn
    return {f"generator+{name}": (make(name), dict(gen.tensors))
            for name in ("dynamic_loss", "static_loss", "classification_loss")}


def run_suite(eps: float = EPS) -> List[CheckResult]:
    results = []
    for name, (fn, params) in {**_layer_cases(), **_generator_loss_cases()}.items():
        results.append(CheckResult(name, nx.gradcheck(fn, params, eps=eps)))
    return results
