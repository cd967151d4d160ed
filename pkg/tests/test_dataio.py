"""I/O and color conversion tests. The conversion matrix oracle values were
computed by hand from the BT.601 limited-range coefficients."""

from __future__ import annotations

import numpy as np
import pytest

from nvc.dataio import (DataIOError, Frame, VideoSequence, crop_to,
                        load_manifest, load_sequence, pad_to_multiple,
                        read_png_sequence, read_yuv420, rgb_to_yuv,
                        sample_training_clips, write_png_sequence, yuv_to_rgb)


def _gray_frame(h=8, w=8, value=0.5):
    return Frame(pixels=np.full((h, w, 3), value, dtype=np.float32))


def test_frame_rejects_bad_shapes_and_values():
    with pytest.raises(DataIOError):
        Frame(pixels=np.zeros((8, 8), dtype=np.float32))
    with pytest.raises(DataIOError):
        Frame(pixels=np.full((4, 4, 3), 1.5, dtype=np.float32))
    with pytest.raises(DataIOError):
        Frame(pixels=np.full((4, 4, 3), np.nan, dtype=np.float32))


def test_sequence_needs_two_matching_frames():
    f = _gray_frame()
    with pytest.raises(DataIOError):
        VideoSequence(frames=(f,))
    with pytest.raises(DataIOError):
        VideoSequence(frames=(f, _gray_frame(h=16)))
    assert VideoSequence(frames=(f, f)).dims == (8, 8)


def test_nominal_gray_yuv_maps_to_frozen_rgb_value():
    # Y=U=V=128/255: y=(128-16)/219, u=v=0 -> r=g=b=112/219
    yuv = Frame(pixels=np.full((4, 4, 3), 128.0 / 255.0, dtype=np.float32))
    rgb = yuv_to_rgb(yuv)
    assert np.allclose(rgb.pixels, 112.0 / 219.0, atol=1e-6)
    assert abs(float(rgb.pixels[0, 0, 0]) - 0.511416) < 1e-6


def test_limited_range_black_maps_to_zero():
    # Y=16/255 with neutral chroma is reference black
    yuv = np.full((4, 4, 3), 128.0 / 255.0, dtype=np.float32)
    yuv[..., 0] = 16.0 / 255.0
    rgb = yuv_to_rgb(Frame(pixels=yuv))
    assert np.allclose(rgb.pixels, 0.0, atol=1e-7)


def _smooth_frames(seed, n=5):
    from scipy.ndimage import gaussian_filter
    rng = np.random.default_rng(seed)
    for _ in range(n):
        coarse = rng.random((8, 8, 3)).astype(np.float32)
        up = np.repeat(np.repeat(coarse, 8, axis=0), 8, axis=1)
        smooth = gaussian_filter(up, sigma=(4, 4, 0)).astype(np.float32)
        yield Frame(pixels=np.clip(smooth, 0.05, 0.95))


def test_constant_chroma_round_trips_exactly():
    # Chroma subsampling is lossless on spatially constant chroma, so the
    # only residual is float32 matrix arithmetic. Values are kept inside the
    # RGB gamut; out-of-gamut triples are clipped and cannot round-trip.
    rng = np.random.default_rng(11)
    for _ in range(5):
        yuv = np.empty((16, 16, 3), dtype=np.float32)
        yuv[..., 0] = rng.uniform(0.35, 0.65, size=(16, 16)).astype(np.float32)
        yuv[..., 1] = rng.uniform(0.45, 0.55)
        yuv[..., 2] = rng.uniform(0.45, 0.55)
        rgb = yuv_to_rgb(Frame(pixels=yuv))
        back = rgb_to_yuv(rgb)
        assert np.max(np.abs(back.pixels - yuv)) <= 1e-5


def test_luma_survives_round_trip_unsubsampled():
    for f in _smooth_frames(12):
        fwd = rgb_to_yuv(f)
        back = yuv_to_rgb(fwd)
        y_direct = rgb_to_yuv(back).pixels[..., 0]
        assert np.max(np.abs(y_direct - fwd.pixels[..., 0])) <= 1e-5


def test_rgb_yuv_round_trip_on_smooth_frames():
    # The 4:2:0 resample is lossy wherever chroma varies; on band-limited
    # content the loss stays visually negligible. Gross matrix or offset
    # bugs land orders of magnitude above these bounds.
    for f in _smooth_frames(11):
        back = yuv_to_rgb(rgb_to_yuv(f))
        err = np.abs(back.pixels - f.pixels)
        assert np.max(err) <= 5.0 / 255.0
        assert np.mean(err) <= 1.0 / 255.0


def test_yuv420_reader_retains_native_planes(tmp_path):
    h, w, n = 16, 32, 3
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, size=n * (h * w * 3 // 2), dtype=np.uint8)
    p = tmp_path / "clip.yuv"
    p.write_bytes(raw.tobytes())
    seq = read_yuv420(p, w, h, n)
    assert len(seq.frames) == n and seq.dims == (h, w)
    f = seq.frames[1]
    assert f.color_space == "yuv420-sourced"
    y, u, v = f.planes
    assert y.shape == (h, w) and u.shape == (h // 2, w // 2)
    off = h * w * 3 // 2
    expect_y = raw[off: off + h * w].reshape(h, w).astype(np.float32) / 255.0
    assert np.array_equal(y, expect_y)


def test_yuv420_reader_errors(tmp_path):
    p = tmp_path / "short.yuv"
    p.write_bytes(b"\x00" * 100)
    with pytest.raises(DataIOError):
        read_yuv420(p, 16, 16, 1)
    with pytest.raises(DataIOError):
        read_yuv420(p, 15, 16, 1)


def test_pad_and_crop_round_trip():
    f = _gray_frame(h=10, w=13)
    padded, dims = pad_to_multiple(f, 8)
    assert dims == (10, 13)
    assert padded.height == 16 and padded.width == 16
    # replicate padding repeats the boundary row/column
    assert np.array_equal(padded.pixels[9], padded.pixels[15])
    back = crop_to(padded, dims)
    assert np.array_equal(back.pixels, f.pixels)
    with pytest.raises(DataIOError):
        crop_to(f, (11, 13))


def test_png_sequence_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    frames = [Frame(pixels=(rng.integers(0, 256, size=(8, 8, 3)) / 255.0
                            ).astype(np.float32)) for _ in range(3)]
    write_png_sequence(frames, tmp_path / "seq")
    seq = read_png_sequence(tmp_path / "seq")
    assert len(seq.frames) == 3
    for a, b in zip(frames, seq.frames):
        assert np.array_equal(a.pixels, b.pixels)  # 8-bit grid is lossless


def test_manifest_and_loader_errors(tmp_path):
    with pytest.raises(DataIOError):
        load_manifest(tmp_path)
    (tmp_path / "manifest.json").write_text("[]")
    with pytest.raises(DataIOError):
        load_manifest(tmp_path)
    with pytest.raises(DataIOError):
        load_sequence(tmp_path, {"type": "webm", "path": "x"})


def test_clip_sampler_is_seed_reproducible(toy_root):
    a = sample_training_clips(toy_root, clip_len=3, patch=32, seed=9)
    b = sample_training_clips(toy_root, clip_len=3, patch=32, seed=9)
    for _ in range(4):
        ca, cb = next(a), next(b)
        assert ca.shape == (3, 32, 32, 3)
        assert np.array_equal(ca, cb)
    c = sample_training_clips(toy_root, clip_len=3, patch=32, seed=10)
    assert not np.array_equal(next(a), next(c))


def test_clip_sampler_rejects_oversized_requests(toy_root):
    with pytest.raises(DataIOError):
        next(sample_training_clips(toy_root, clip_len=99, patch=32, seed=0))
