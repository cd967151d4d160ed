"""Frame and sequence I/O: planar YUV420 files, PNG sequences, BT.601
limited-range color conversion, padding, and the seeded training-clip sampler."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

# BT.601 limited range: Y spans 16..235, chroma 16..240, all over 8-bit codes.
_KR, _KG, _KB = 0.299, 0.587, 0.114
_Y_SCALE, _Y_OFFSET = 219.0 / 255.0, 16.0 / 255.0
_C_SCALE, _C_OFFSET = 224.0 / 255.0, 128.0 / 255.0


class DataIOError(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    """One frame, values in [0, 1]. For yuv420-sourced frames the native Y and
    half-resolution U, V planes are retained losslessly; `pixels` then holds
    (Y, U, V) upsampled to a full-resolution working copy."""

    pixels: np.ndarray  # (H, W, 3) float32
    color_space: str = "rgb"  # rgb | yuv420-sourced
    planes: tuple | None = None  # (y, u_half, v_half) float32, yuv only
    bit_depth_origin: int = 8

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3:
            raise DataIOError(f"frame must be HxWx3, got {p.shape}")
        if not np.isfinite(p).all() or p.min() < 0.0 or p.max() > 1.0:
            raise DataIOError("frame values must be finite and in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class VideoSequence:
    frames: tuple
    fps: float = 30.0
    name: str = ""

    def __post_init__(self):
        if len(self.frames) < 2:
            raise DataIOError("a sequence needs at least 2 frames")
        h, w = self.frames[0].height, self.frames[0].width
        if any(f.height != h or f.width != w for f in self.frames):
            raise DataIOError("all frames must share one resolution")

    @property
    def dims(self) -> tuple[int, int]:
        return self.frames[0].height, self.frames[0].width


def _bilinear_up2(plane: np.ndarray) -> np.ndarray:
    """Factor-2 bilinear upsampling with half-pixel alignment."""
    import torch
    import torch.nn.functional as F
    t = torch.from_numpy(plane)[None, None]
    return F.interpolate(t, scale_factor=2, mode="bilinear",
                         align_corners=False)[0, 0].numpy()


def _box_down2(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def read_yuv420(path: str | Path, width: int, height: int,
                n_frames: int, fps: float = 30.0) -> VideoSequence:
    """Read planar 8-bit YUV420; retains native planes per frame."""
    if width % 2 or height % 2:
        raise DataIOError(f"odd-dimensions: {width}x{height}")
    frame_bytes = width * height * 3 // 2
    raw = Path(path).read_bytes()
    if len(raw) < n_frames * frame_bytes:
        raise DataIOError(
            f"truncated-file: {len(raw)} bytes < {n_frames} frames of {frame_bytes}")
    frames = []
    for i in range(n_frames):
        off = i * frame_bytes
        buf = np.frombuffer(raw, dtype=np.uint8, count=frame_bytes, offset=off)
        y = buf[: width * height].reshape(height, width)
        u = buf[width * height: width * height * 5 // 4].reshape(height // 2, width // 2)
        v = buf[width * height * 5 // 4:].reshape(height // 2, width // 2)
        y, u, v = (p.astype(np.float32) / 255.0 for p in (y, u, v))
        pixels = np.stack([y, _bilinear_up2(u), _bilinear_up2(v)], axis=-1)
        frames.append(Frame(pixels=np.clip(pixels, 0.0, 1.0),
                            color_space="yuv420-sourced", planes=(y, u, v)))
    return VideoSequence(frames=tuple(frames), fps=fps, name=Path(path).stem)


def yuv_to_rgb(frame: Frame) -> Frame:
    """BT.601 limited-range YUV -> RGB; output clipped into [0, 1]."""
    yuv = frame.pixels.astype(np.float64)
    y = (yuv[..., 0] - _Y_OFFSET) / _Y_SCALE
    u = (yuv[..., 1] - _C_OFFSET) / _C_SCALE
    v = (yuv[..., 2] - _C_OFFSET) / _C_SCALE
    r = y + 1.402 * v
    g = y - (1.402 * _KR / _KG) * v - (1.772 * _KB / _KG) * u
    b = y + 1.772 * u
    rgb = np.stack([r, g, b], axis=-1)
    return Frame(pixels=np.clip(rgb, 0.0, 1.0).astype(np.float32), color_space="rgb")


def rgb_to_yuv(frame: Frame) -> Frame:
    """RGB -> BT.601 limited-range YUV420; chroma box-downsampled to half res."""
    rgb = frame.pixels.astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = _KR * r + _KG * g + _KB * b
    u = (b - y) / 1.772
    v = (r - y) / 1.402
    y = y * _Y_SCALE + _Y_OFFSET
    u = u * _C_SCALE + _C_OFFSET
    v = v * _C_SCALE + _C_OFFSET
    y = np.clip(y, 0.0, 1.0).astype(np.float32)
    u_half = _box_down2(np.clip(u, 0.0, 1.0).astype(np.float32))
    v_half = _box_down2(np.clip(v, 0.0, 1.0).astype(np.float32))
    pixels = np.stack([y, _bilinear_up2(u_half), _bilinear_up2(v_half)], axis=-1)
    return Frame(pixels=np.clip(pixels, 0.0, 1.0),
                 color_space="yuv420-sourced", planes=(y, u_half, v_half))


def pad_to_multiple(frame: Frame, m: int) -> tuple[Frame, tuple[int, int]]:
    """Replicate-pad right/bottom so both dims are multiples of m."""
    if m < 1:
        raise DataIOError(f"pad multiple must be >= 1, got {m}")
    h, w = frame.height, frame.width
    ph = (m - h % m) % m
    pw = (m - w % m) % m
    if ph == 0 and pw == 0:
        return frame, (h, w)
    pixels = np.pad(frame.pixels, ((0, ph), (0, pw), (0, 0)), mode="edge")
    return Frame(pixels=pixels, color_space=frame.color_space), (h, w)


def crop_to(frame: Frame, dims: tuple[int, int]) -> Frame:
    h, w = dims
    if h > frame.height or w > frame.width:
        raise DataIOError(f"cannot crop {frame.height}x{frame.width} to {h}x{w}")
    if (h, w) == (frame.height, frame.width):
        return frame
    return Frame(pixels=frame.pixels[:h, :w].copy(), color_space=frame.color_space)


def read_png_sequence(directory: str | Path, fps: float = 30.0) -> VideoSequence:
    paths = sorted(Path(directory).glob("*.png"))
    if len(paths) < 2:
        raise DataIOError(f"empty-dataset: fewer than 2 PNGs in {directory}")
    frames = []
    for p in paths:
        arr = np.asarray(Image.open(p).convert("RGB"), dtype=np.float32) / 255.0
        frames.append(Frame(pixels=arr, color_space="rgb"))
    return VideoSequence(frames=tuple(frames), fps=fps, name=Path(directory).name)


def write_png_sequence(frames, directory: str | Path) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        arr = np.clip(np.rint(f.pixels * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(out / f"frame_{i:05d}.png")


def load_manifest(dataset_root: str | Path) -> list[dict]:
    """Dataset manifest: a JSON list of sequence entries with metadata."""
    mpath = Path(dataset_root) / "manifest.json"
    if not mpath.exists():
        raise DataIOError(f"empty-dataset: no manifest at {mpath}")
    entries = json.loads(mpath.read_text())
    if not entries:
        raise DataIOError("empty-dataset: manifest lists no sequences")
    return entries


def load_sequence(dataset_root: str | Path, entry: dict) -> VideoSequence:
    root = Path(dataset_root)
    if entry["type"] == "yuv":
        return read_yuv420(root / entry["path"], entry["width"], entry["height"],
                           entry["frames"], entry.get("fps", 30.0))
    if entry["type"] == "png_dir":
        return read_png_sequence(root / entry["path"], entry.get("fps", 30.0))
    raise DataIOError(f"unknown sequence type {entry['type']!r}")


def sample_training_clips(dataset_root: str | Path, clip_len: int, patch: int,
                          seed: int) -> Iterator[np.ndarray]:
    """Endless stream of (clip_len, patch, patch, 3) RGB crops, reproducible
    from the seed: same seed, same dataset -> identical crop stream."""
    entries = load_manifest(dataset_root)
    usable = []
    for e in entries:
        seq = load_sequence(dataset_root, e)
        h, w = seq.dims
        if len(seq.frames) >= clip_len and h >= patch and w >= patch:
            rgb = [f if f.color_space == "rgb" else yuv_to_rgb(f) for f in seq.frames]
            usable.append(np.stack([f.pixels for f in rgb]))
    if not usable:
        raise DataIOError(
            f"empty-dataset: no sequence supports clip_len={clip_len}, patch={patch}")
    rng = random.Random(seed)

    def stream():
        while True:
            clip = usable[rng.randrange(len(usable))]
            t0 = rng.randrange(clip.shape[0] - clip_len + 1)
            y0 = rng.randrange(clip.shape[1] - patch + 1)
            x0 = rng.randrange(clip.shape[2] - patch + 1)
            yield clip[t0:t0 + clip_len, y0:y0 + patch, x0:x0 + patch].copy()

    return stream()
