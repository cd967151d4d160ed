from __future__ import annotations

import json

import numpy as np
import pytest

from nvc.dataio import load_manifest, load_sequence
from nvc.toydata import make_toy_dataset, toy_clip, toy_sequence


def test_clip_shape_range_and_determinism():
    a = toy_clip(32, 48, 5, seed=3)
    b = toy_clip(32, 48, 5, seed=3)
    assert a.shape == (5, 32, 48, 3) and a.dtype == np.float32
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert np.array_equal(a, b)
    assert not np.array_equal(a, toy_clip(32, 48, 5, seed=4))


def test_static_motion_repeats_the_first_frame():
    c = toy_clip(32, 32, 4, seed=1, motion="static")
    for t in range(1, 4):
        assert np.array_equal(c[t], c[0])


def test_pan_actually_moves():
    c = toy_clip(32, 32, 4, seed=1, motion="pan")
    assert float(np.abs(c[1] - c[0]).mean()) > 1e-4


def test_unknown_motion_rejected():
    with pytest.raises(ValueError):
        toy_clip(8, 8, 2, seed=0, motion="zoom")


def test_sequence_wrapper_names_and_dims():
    seq = toy_sequence(16, 24, 3, seed=9, name="abc")
    assert seq.name == "abc" and seq.dims == (16, 24)
    assert len(seq.frames) == 3


def test_dataset_manifest_covers_both_storage_types(tmp_path):
    make_toy_dataset(tmp_path, 8, clip_len=5, height=32, width=32, seed=1,
                     yuv_fraction=0.25)
    entries = load_manifest(tmp_path)
    assert len(entries) == 8
    kinds = {e["type"] for e in entries}
    assert kinds == {"yuv", "png_dir"}
    for e in entries:
        seq = load_sequence(tmp_path, e)
        assert seq.dims == (32, 32) and len(seq.frames) == 5


def test_dataset_regeneration_is_stable(tmp_path):
    make_toy_dataset(tmp_path / "a", 3, clip_len=3, height=16, width=16, seed=5)
    make_toy_dataset(tmp_path / "b", 3, clip_len=3, height=16, width=16, seed=5)
    ma = json.loads(((tmp_path / "a") / "manifest.json").read_text())
    mb = json.loads(((tmp_path / "b") / "manifest.json").read_text())
    assert ma == mb
    for e in ma:
        sa = load_sequence(tmp_path / "a", e)
        sb = load_sequence(tmp_path / "b", e)
        for fa, fb in zip(sa.frames, sb.frames):
            assert np.array_equal(fa.pixels, fb.pixels)
