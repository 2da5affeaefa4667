import numpy as np
import pytest

from motionrank import numerics as nx
from motionrank.errors import InvalidConfigError, InvalidShapeError
from motionrank.models import (ClassifierConfig, GeneratorConfig, classifier_backward,
                               classifier_forward, classifier_logits, generator_backward,
                               generator_forward, init_classifier, init_generator,
                               standardize_dynamic_image)

SMALL_GEN = GeneratorConfig(input_shape=(1, 8, 8), stage_feature_maps=(3, 4))
SMALL_CLS = ClassifierConfig(input_shape=(1, 8, 8), conv_channels=(3, 4), n_classes=4,
                             standardize=True)


class TestGenerator:
    @pytest.mark.parametrize("shape", [(1, 32, 32), (3, 64, 64)])
    def test_output_shape(self, shape):
        params = init_generator(GeneratorConfig(input_shape=shape), seed=0)
        assert generator_forward(params, np.zeros(shape)).shape == shape

    def test_zero_in_zero_out(self):
        params = init_generator(GeneratorConfig(), seed=1)
        assert not generator_forward(params, np.zeros((1, 32, 32))).any()

    def test_finite_output(self):
        params = init_generator(GeneratorConfig(), seed=2)
        x = np.random.default_rng(0).normal(size=(4, 1, 32, 32)) * 5
        assert np.all(np.isfinite(generator_forward(params, x)))

    def test_seeding(self):
        a, b = init_generator(GeneratorConfig(), 3), init_generator(GeneratorConfig(), 3)
        c = init_generator(GeneratorConfig(), 4)
        assert a.checksum() == b.checksum() != c.checksum()
        assert all(not v.any() for k, v in a.tensors.items() if k.endswith("bias"))

    def test_indivisible_input(self):
        with pytest.raises(InvalidConfigError):
            init_generator(GeneratorConfig(input_shape=(1, 30, 32)), 0)

    def test_full_scale_config_mirrors(self):
        cfg = GeneratorConfig.full_scale()
        cfg.validate()
        assert cfg.encoder_sizes()[-1] == (15, 20)
        assert cfg.out_adjusts() == [1, 1, 1, 1]

    def test_shape_mismatch(self):
        params = init_generator(SMALL_GEN, 0)
        with pytest.raises(InvalidShapeError):
            generator_forward(params, np.zeros((1, 16, 16)))

    def test_batch_matches_single(self):
        params = init_generator(SMALL_GEN, 5)
        x = np.random.default_rng(1).normal(size=(3, 1, 8, 8))
        batch = generator_forward(params, x)
        for i in range(3):
            np.testing.assert_allclose(batch[i], generator_forward(params, x[i]), atol=1e-12)

    def test_end_to_end_gradcheck(self):
        params = init_generator(SMALL_GEN, 6)
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 1, 8, 8))
        target = rng.normal(size=(2, 1, 8, 8))

        def loss_fn(p):
            gen = params.with_tensors({k: v for k, v in p.items() if k != "x"})
            out, cache = generator_forward(gen, p["x"], return_cache=True)
            diff = out - target
            dx, grads = generator_backward(gen, cache, diff)
            return 0.5 * float(np.sum(diff ** 2)), {**grads, "x": dx}
        err = nx.gradcheck(loss_fn, {**params.tensors, "x": x}, eps=1e-3, n_samples=20)
        assert err < 1e-4


class TestClassifier:
    def test_probability_vector(self):
        params = init_classifier(ClassifierConfig(), 0)
        p = classifier_forward(params, np.random.default_rng(0).normal(size=(1, 32, 32)))
        assert p.shape == (6,)
        assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12

    def test_zero_head_is_uniform(self):
        params = init_classifier(ClassifierConfig(), 1)
        params.tensors["head.W"][:] = 0
        p = classifier_forward(params, np.random.default_rng(1).normal(size=(1, 32, 32)))
        np.testing.assert_allclose(p, np.full(6, 1 / 6), atol=1e-15)

    def test_deterministic(self):
        params = init_classifier(ClassifierConfig(), 2)
        x = np.random.default_rng(2).normal(size=(1, 32, 32))
        assert classifier_forward(params, x).tobytes() == classifier_forward(params, x).tobytes()

    def test_needs_two_classes(self):
        with pytest.raises(InvalidConfigError):
            init_classifier(ClassifierConfig(n_classes=1), 0)

    @pytest.mark.parametrize("standardize", [False, True])
    def test_gradcheck_through_input(self, standardize):
        cfg = ClassifierConfig(input_shape=(1, 8, 8), conv_channels=(3, 4), n_classes=4,
                               standardize=standardize, activation="leaky_relu")
        # seed picked so no pre-activation lies within the finite-difference step of a kink
        params = init_classifier(cfg, 6)
        x = np.random.default_rng(6).normal(size=(3, 1, 8, 8))
        labels = np.array([0, 3, 1])

        def loss_fn(p):
            model = params.with_tensors({k: v for k, v in p.items() if k != "x"})
            logits, cache = classifier_logits(model, p["x"], return_cache=True)
            loss, dl = nx.softmax_cross_entropy(logits, labels)
            dx, grads = classifier_backward(model, cache, dl)
            return loss, {**grads, "x": dx}
        assert nx.gradcheck(loss_fn, {**params.tensors, "x": x}, eps=1e-3) < 1e-4


class TestStandardize:
    def test_constant(self):
        assert not standardize_dynamic_image(np.full((1, 4, 4), 3.0)).any()

    def test_moments(self):
        D = np.random.default_rng(4).normal(3, 7, size=(1, 6, 6))
        z = standardize_dynamic_image(D)
        assert abs(z.mean()) < 1e-9
        assert abs(z.std() - 1) < 1e-6

    def test_batch_is_per_image(self):
        D = np.random.default_rng(5).normal(size=(3, 1, 4, 4)) * np.array([1, 10, 100])[:, None, None, None]
        z = standardize_dynamic_image(D)
        for i in range(3):
            np.testing.assert_allclose(z[i], standardize_dynamic_image(D[i]))
