import dataclasses
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from motionrank.data import (CLASSES, SynthConfig, build_gen_samples, export_dynamic_image,
                             load_dataset, load_frames, make_dataset, observed_length,
                             save_dataset, save_frames, synth_video)
from motionrank.errors import DecodeError, InvalidArgumentError, MissingFrameError
from motionrank.formats import read_dimg
from motionrank.rankpool import FrameSequence, approximate_rank_pool

QUIET = SynthConfig(noise=0.0)


class TestSynthVideo:
    def test_shape_and_range(self):
        video = synth_video(0, SynthConfig(noise=0.3))
        assert video.frames.shape == (40, 1, 32, 32)
        assert video.frames.min() >= 0.0 and video.frames.max() <= 1.0

    @pytest.mark.parametrize("class_id", range(len(CLASSES)))
    def test_bit_identical_rerun(self, class_id):
        a = synth_video(class_id, SynthConfig(), 7)
        b = synth_video(class_id, SynthConfig(), 7)
        assert a.frames.tobytes() == b.frames.tobytes()
        assert a.label == class_id

    def test_instance_seeds_differ(self):
        a, b = synth_video(0, QUIET, 1), synth_video(0, QUIET, 2)
        assert not np.array_equal(a.frames[0], b.frames[0])

    def test_left_right_mirror(self):
        left, right = synth_video(0, QUIET, 3), synth_video(1, QUIET, 3)
        np.testing.assert_allclose(left.frames, right.frames[..., ::-1], atol=1e-12)

    def test_up_down_mirror(self):
        up, down = synth_video(2, QUIET, 4), synth_video(3, QUIET, 4)
        np.testing.assert_allclose(up.frames, down.frames[..., ::-1, :], atol=1e-12)

    def test_grow_shrink_reverse_time(self):
        # an onset hold sits at the start of both, so reversal needs no hold
        still = dataclasses.replace(QUIET, onset_range=(0, 0))
        grow, shrink = synth_video(4, still, 5), synth_video(5, still, 5)
        np.testing.assert_allclose(grow.frames, shrink.frames[::-1], atol=1e-12)

    def test_motion_not_appearance_separates_classes(self):
        left, right = synth_video(0, QUIET, 6), synth_video(1, QUIET, 6)
        D_l = approximate_rank_pool(left.frames[:10])
        D_r = approximate_rank_pool(right.frames[:10])
        assert np.linalg.norm(D_l - D_r) > 0
        # same mass, so a frame-level appearance statistic cannot tell them apart
        assert left.frames[5].sum() == pytest.approx(right.frames[5].sum())

    def test_onset_holds_still(self):
        cfg = SynthConfig(noise=0.0, onset_range=(6, 6))
        video = synth_video(0, cfg, 0)
        assert all(np.array_equal(video.frames[0], video.frames[t]) for t in range(7))
        assert not np.array_equal(video.frames[6], video.frames[7])

    def test_extreme_speed_is_clamped(self):
        cfg = SynthConfig(noise=0.0, speed_range=(50.0, 50.0))
        for class_id in range(4):
            video = synth_video(class_id, cfg, 0)
            # the shape stays fully inside the frame, so its mass is conserved
            mass = (video.frames - cfg.background).sum(axis=(1, 2, 3))
            np.testing.assert_allclose(mass, mass[0], rtol=1e-9)

    def test_window_rule(self):
        with pytest.raises(InvalidArgumentError):
            SynthConfig(frames_per_video=19).validate(T=10)
        SynthConfig(frames_per_video=20).validate(T=10)

    def test_disc_and_rgb(self):
        video = synth_video(4, SynthConfig(shape="disc", frame_shape=(3, 16, 16), noise=0.0), 0)
        assert video.frames.shape == (40, 3, 16, 16)
        assert np.array_equal(video.frames[:, 0], video.frames[:, 2])

    def test_invalid(self):
        with pytest.raises(InvalidArgumentError):
            synth_video(6)
        with pytest.raises(InvalidArgumentError):
            synth_video(0, SynthConfig(frames_per_video=1), 0)
        with pytest.raises(InvalidArgumentError):
            synth_video(0, SynthConfig(shape="star"))


class TestMakeDataset:
    def test_split_sizes(self):
        ds = make_dataset(SynthConfig(), 10)
        assert (len(ds.train), len(ds.val), len(ds.test)) == (36, 12, 12)

    def test_every_class_everywhere(self):
        ds = make_dataset(SynthConfig(), 5)
        for videos in ds.splits().values():
            assert {v.label for v in videos} == set(range(len(CLASSES)))

    def test_deterministic(self):
        a, b = make_dataset(SynthConfig(seed=3), 3), make_dataset(SynthConfig(seed=3), 3)
        for va, vb in zip(a.train + a.val + a.test, b.train + b.val + b.test):
            assert va.frames.tobytes() == vb.frames.tobytes()

    def test_seed_changes_data(self):
        a, b = make_dataset(SynthConfig(seed=0), 3), make_dataset(SynthConfig(seed=1), 3)
        assert a.train[0].frames.tobytes() != b.train[0].frames.tobytes()

    @pytest.mark.parametrize("n,ratios", [(2, (0.6, 0.2, 0.2)), (10, (0.5, 0.2, 0.2)),
                                          (3, (1.0, 0.0, 0.0))])
    def test_impossible(self, n, ratios):
        with pytest.raises(InvalidArgumentError):
            make_dataset(SynthConfig(), n, ratios)


class TestGenSamples:
    def test_two_windows_stride_T(self):
        video = FrameSequence(np.random.default_rng(0).random((20, 1, 4, 4)), 2)
        samples = build_gen_samples([video], T=10, stride=10)
        assert len(samples) == 1
        assert samples[0].label == 2

    def test_construction_identity(self):
        video = FrameSequence(np.random.default_rng(1).random((14, 1, 4, 4)), 3)
        for i, s in enumerate(build_gen_samples([video], T=5, stride=2)):
            window = np.concatenate([s.leading_future_frames, s.final_future_frame[None]])
            np.testing.assert_allclose(s.D_next, approximate_rank_pool(window), atol=1e-12)
            np.testing.assert_array_equal(window, video.frames[2 * i + 2:2 * i + 7])
            np.testing.assert_allclose(s.D_t, approximate_rank_pool(video.frames[2 * i:2 * i + 5]))

    def test_stride_one_count(self):
        video = FrameSequence(np.zeros((40, 1, 4, 4)), 0)
        assert len(build_gen_samples([video], T=10, stride=1)) == 30

    def test_short_videos_skipped_with_warning(self, caplog):
        short = FrameSequence(np.zeros((10, 1, 4, 4)), 0)
        ok = FrameSequence(np.zeros((11, 1, 4, 4)), 1)
        with caplog.at_level(logging.WARNING):
            samples = build_gen_samples([short, ok], T=10, stride=1)
        assert len(samples) == 1 and samples[0].label == 1
        assert "skipped 1" in caplog.text


class TestFrameIO:
    def test_round_trip(self, tmp_path):
        video = synth_video(2, SynthConfig(noise=0.0, frames_per_video=20), 0)
        save_frames(video, tmp_path)
        back = load_frames(tmp_path, label=2)
        assert len(back) == 20
        np.testing.assert_allclose(back.frames, video.frames, atol=0.5 / 255 + 1e-12)

    def test_three_frames_and_scaling(self, tmp_path):
        for i in range(1, 4):
            Image.fromarray(np.full((4, 5), 255 if i == 2 else 0, np.uint8)).save(
                tmp_path / f"frame_{i:06d}.png")
        video = load_frames(tmp_path)
        assert video.frames.shape == (3, 1, 4, 5)
        assert video.frames[1].max() == 1.0 and video.frames[0].max() == 0.0

    def test_rgb(self, tmp_path):
        Image.fromarray(np.zeros((4, 4, 3), np.uint8), mode="RGB").save(tmp_path / "frame_000001.png")
        assert load_frames(tmp_path).frames.shape == (1, 3, 4, 4)

    def test_numeric_order(self, tmp_path):
        for i in (1, 2, 10, 3, 4, 5, 6, 7, 8, 9):
            Image.fromarray(np.full((2, 2), i, np.uint8)).save(tmp_path / f"frame_{i:06d}.png")
        values = load_frames(tmp_path).frames[:, 0, 0, 0] * 255
        np.testing.assert_allclose(values, np.arange(1, 11))

    def test_gap(self, tmp_path):
        for i in (1, 3):
            Image.fromarray(np.zeros((2, 2), np.uint8)).save(tmp_path / f"frame_{i:06d}.png")
        with pytest.raises(MissingFrameError, match="frame_000002"):
            load_frames(tmp_path)

    def test_empty_dir(self, tmp_path):
        with pytest.raises(MissingFrameError):
            load_frames(tmp_path)

    def test_corrupt(self, tmp_path):
        (tmp_path / "frame_000001.png").write_bytes(b"not a png")
        with pytest.raises(DecodeError, match="frame_000001"):
            load_frames(tmp_path)


class TestExport:
    def test_raw(self, tmp_path):
        D = np.random.default_rng(0).normal(size=(1, 4, 4)).astype(np.float32).astype(np.float64)
        export_dynamic_image(D, tmp_path / "d.dimg")
        assert (tmp_path / "d.dimg").read_bytes()[:4] == b"DIMG"
        assert read_dimg(tmp_path / "d.dimg").tobytes() == D.tobytes()

    def test_constant_png_is_mid_gray(self, tmp_path):
        export_dynamic_image(np.full((1, 3, 3), -2.0), tmp_path / "c.png", mode="png")
        assert np.all(np.asarray(Image.open(tmp_path / "c.png")) == 128)

    def test_png_range(self, tmp_path):
        D = np.linspace(-1, 3, 16).reshape(1, 4, 4)
        export_dynamic_image(D, tmp_path / "r.png", mode="png")
        img = np.asarray(Image.open(tmp_path / "r.png"))
        assert img.min() == 0 and img.max() == 255

    def test_bad_mode(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            export_dynamic_image(np.zeros((1, 2, 2)), tmp_path / "x", mode="jpeg")

    def test_unwritable(self, tmp_path):
        with pytest.raises(OSError, match="missing"):
            export_dynamic_image(np.zeros((1, 2, 2)), tmp_path / "missing" / "x.dimg")


def test_dataset_round_trip(tmp_path):
    cfg = dataclasses.replace(SynthConfig(), frames_per_video=20, frame_shape=(1, 8, 8))
    ds = make_dataset(cfg, 3)
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.config == cfg
    for a, b in zip(ds.test, back.test):
        assert a.label == b.label
        np.testing.assert_allclose(a.frames, b.frames, atol=0.5 / 255 + 1e-12)


@pytest.mark.parametrize("n,p,expected", [(40, 0.2, 8), (40, 0.3, 12), (40, 0.1, 4),
                                          (40, 1.0, 40), (7, 0.5, 4), (3, 0.01, 1)])
def test_observed_length(n, p, expected):
    assert observed_length(n, p) == expected


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 500), i=st.integers(1, 10))
def test_observed_length_tenths(n, i):
    # exact rational ceiling of i*n/10
    assert observed_length(n, i / 10) == max(1, -(-i * n // 10))


def test_observed_length_invalid():
    with pytest.raises(InvalidArgumentError):
        observed_length(10, 0.0)
