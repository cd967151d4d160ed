"""Synthetic video generation: band-limited moving content with known motion,
used for training smoke tests, codec round-trips, and CLI demos."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dataio import Frame, VideoSequence, write_png_sequence


def toy_clip(height: int, width: int, n_frames: int, seed: int,
             motion: str = "pan") -> np.ndarray:
    """(T, H, W, 3) float32 clip in [0, 1]: a smooth sinusoidal background
    panning at constant subpixel velocity plus soft-edged moving disks.
    motion: pan | static | mixed (disks move against a static background)."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    if motion == "pan":
        bg_v = rng.uniform(-2.0, 2.0, size=2)
        disk_v = rng.uniform(-2.0, 2.0, size=(2, 2))
    elif motion == "mixed":
        bg_v = np.zeros(2)
        disk_v = rng.uniform(-3.0, 3.0, size=(2, 2))
    elif motion == "static":
        bg_v = np.zeros(2)
        disk_v = np.zeros((2, 2))
    else:
        raise ValueError(f"unknown motion kind {motion!r}")

    waves = []
    for _ in range(3):
        freq = rng.uniform(0.5, 2.5, size=2) / max(height, width)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        amp = rng.uniform(0.08, 0.2, size=3)
        waves.append((freq, phase, amp))
    disk_p0 = rng.uniform(0.25, 0.75, size=(2, 2)) * (height, width)
    disk_r = rng.uniform(height / 8, height / 5, size=2)
    disk_color = rng.uniform(0.15, 0.85, size=(2, 3))

    frames = np.empty((n_frames, height, width, 3), dtype=np.float32)
    for t in range(n_frames):
        img = np.full((height, width, 3), 0.5)
        oy, ox = ys + t * bg_v[0], xs + t * bg_v[1]
        for freq, phase, amp in waves:
            arg = 2 * np.pi * (freq[0] * oy + freq[1] * ox)
            for c in range(3):
                img[..., c] += amp[c] * np.sin(arg + phase[c])
        for d in range(2):
            cy = disk_p0[d, 0] + t * disk_v[d, 0]
            cx = disk_p0[d, 1] + t * disk_v[d, 1]
            dist = np.sqrt((ys - cy) ** 2 + (xs - cx) ** 2)
            soft = 1.0 / (1.0 + np.exp((dist - disk_r[d]) / 1.5))
            img = img * (1 - soft[..., None]) + disk_color[d] * soft[..., None]
        frames[t] = np.clip(img, 0.02, 0.98)
    return frames


def toy_sequence(height: int, width: int, n_frames: int, seed: int,
                 motion: str = "pan", name: str = "") -> VideoSequence:
    clip = toy_clip(height, width, n_frames, seed, motion)
    frames = tuple(Frame(pixels=f) for f in clip)
    return VideoSequence(frames=frames, name=name or f"toy{seed}_{motion}")


def write_toy_yuv(path: str | Path, height: int, width: int, n_frames: int,
                  seed: int, motion: str = "pan") -> None:
    """Planar 8-bit YUV420 file with toy content (RGB converted and subsampled)."""
    from .dataio import rgb_to_yuv

    clip = toy_clip(height, width, n_frames, seed, motion)
    with open(path, "wb") as fh:
        for t in range(n_frames):
            yuv = rgb_to_yuv(Frame(pixels=clip[t]))
            for plane in yuv.planes:
                fh.write(np.clip(np.rint(plane * 255.0), 0, 255)
                         .astype(np.uint8).tobytes())


def make_toy_dataset(root: str | Path, n_clips: int, clip_len: int = 9,
                     height: int = 64, width: int = 64, seed: int = 0,
                     yuv_fraction: float = 0.0) -> Path:
    """Materialize a toy dataset with a manifest; a fraction of the clips are
    written as raw YUV420 files, the rest as PNG directories."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    kinds = ("pan", "mixed", "static")
    entries = []
    for i in range(n_clips):
        motion = kinds[i % len(kinds)]
        clip_seed = seed * 10_000 + i
        if i < int(n_clips * yuv_fraction):
            name = f"clip_{i:04d}.yuv"
            write_toy_yuv(root / name, height, width, clip_len, clip_seed, motion)
            entries.append({"name": f"clip_{i:04d}", "type": "yuv", "path": name,
                            "width": width, "height": height, "frames": clip_len,
                            "fps": 30.0})
        else:
            name = f"clip_{i:04d}"
            seq = toy_sequence(height, width, clip_len, clip_seed, motion, name)
            write_png_sequence(seq.frames, root / name)
            entries.append({"name": name, "type": "png_dir", "path": name,
                            "fps": 30.0})
    (root / "manifest.json").write_text(json.dumps(entries, indent=2) + "\n")
    return root
