"""Quality metrics, rate-distortion curves, BD-rate, channel bitrate ratios."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

PSNR_CAP = 100.0  # lossless marker; keeps averages finite


class MetricsError(ValueError):
    pass


class NoOverlapError(MetricsError):
    pass


class DegenerateCurveError(MetricsError):
    pass


def _mse(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise MetricsError(f"dim-mismatch: {a.shape} vs {b.shape}")
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(d * d))


def psnr_from_mse(mse: float) -> float:
    if mse <= 0:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def _pixels(frame) -> np.ndarray:
    return frame.pixels if hasattr(frame, "pixels") else np.asarray(frame)


def psnr_rgb(a, b) -> float:
    """PSNR over all RGB samples in [0, 1]; 100 dB marks lossless."""
    return psnr_from_mse(_mse(_pixels(a), _pixels(b)))


def psnr_yuv_compound(a, b) -> float:
    """(6*Y + U + V) / 8 over native 4:2:0 planes. Frames that did not come
    from YUV input are converted (chroma box-downsampled) first."""
    from .dataio import Frame, rgb_to_yuv

    def planes(f):
        if hasattr(f, "planes") and f.planes is not None:
            return f.planes
        if not hasattr(f, "pixels"):
            f = Frame(pixels=np.asarray(f, dtype=np.float32))
        return rgb_to_yuv(f).planes

    pa, pb = planes(a), planes(b)
    p_y = psnr_from_mse(_mse(pa[0], pb[0]))
    p_u = psnr_from_mse(_mse(pa[1], pb[1]))
    p_v = psnr_from_mse(_mse(pa[2], pb[2]))
    return (6.0 * p_y + p_u + p_v) / 8.0


def bits_per_pixel(total_bytes: int, width: int, height: int) -> float:
    return 8.0 * total_bytes / (width * height)


@dataclass(frozen=True)
class RDPoint:
    bpp: float
    quality: float
    lambda_index: int
    lossless: bool = False

    def __post_init__(self):
        if self.bpp <= 0:
            raise MetricsError(f"bpp must be > 0, got {self.bpp}")
        if not math.isfinite(self.quality) and not self.lossless:
            raise MetricsError("quality must be finite unless flagged lossless")


@dataclass(frozen=True)
class RDCurve:
    points: tuple
    label: str = ""

    def __post_init__(self):
        if len(self.points) < 2:
            raise MetricsError("a curve needs at least 2 points")
        bpps = [p.bpp for p in self.points]
        if any(b2 <= b1 for b1, b2 in zip(bpps, bpps[1:])):
            raise MetricsError("points must be sorted by strictly increasing bpp")

    @staticmethod
    def from_points(points, label: str = "") -> "RDCurve":
        return RDCurve(tuple(sorted(points, key=lambda p: p.bpp)), label)

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points], dtype=np.float64)

    @property
    def log_rates(self) -> np.ndarray:
        return np.log10([p.bpp for p in self.points])


def _curve_interp(curve: RDCurve) -> PchipInterpolator:
    q = curve.qualities
    if np.any(np.diff(q) <= 0):
        raise DegenerateCurveError(
            f"curve {curve.label!r}: quality not strictly increasing with rate")
    return PchipInterpolator(q, curve.log_rates)


def bd_rate(anchor: RDCurve, test: RDCurve) -> float:
    """Average rate difference (%) at equal quality over the overlapping
    quality interval; negative means the test curve spends fewer bits.
    Monotone piecewise-cubic interpolation of log10(rate) against quality."""
    for c in (anchor, test):
        if len(c.points) < 4:
            warnings.warn(
                f"bd_rate on {len(c.points)} points (curve {c.label!r}); "
                "4 or more recommended", RuntimeWarning, stacklevel=2)
    fa = _curve_interp(anchor)
    ft = _curve_interp(test)
    lo = max(anchor.qualities.min(), test.qualities.min())
    hi = min(anchor.qualities.max(), test.qualities.max())
    if hi <= lo:
        raise NoOverlapError(
            f"no-overlap: anchor [{anchor.qualities.min()}, {anchor.qualities.max()}] "
            f"vs test [{test.qualities.min()}, {test.qualities.max()}]")
    ia = fa.antiderivative()
    it = ft.antiderivative()
    avg_diff = ((it(hi) - it(lo)) - (ia(hi) - ia(lo))) / (hi - lo)
    return float((10.0 ** avg_diff - 1.0) * 100.0)


@dataclass(frozen=True)
class ChannelBitrateReport:
    """Per-channel share of a latent stream's bits, sorted descending."""

    ratios: tuple
    channels: tuple  # original channel index of each ratio
    kind: str  # "contextual" | "motion"

    def __post_init__(self):
        if self.kind not in ("contextual", "motion"):
            raise MetricsError(f"unknown report kind: {self.kind}")
        if any(r < 0 for r in self.ratios):
            raise MetricsError("ratios must be >= 0")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise MetricsError(f"ratios sum to {sum(self.ratios)}, expected 1")
        if any(r2 > r1 for r1, r2 in zip(self.ratios, self.ratios[1:])):
            raise MetricsError("ratios must be sorted descending")

    def top(self, n: int = 100) -> list:
        """Leading-n (channel, ratio) pairs for plots; not renormalized."""
        return list(zip(self.channels[:n], self.ratios[:n]))


def channel_bitrate_ratio(bits, kind: str) -> ChannelBitrateReport:
    """bits: (T, C) or (C,) estimated bits per channel (summed over frames
    when 2-D). ratio_c = sum_t bits[t, c] / total."""
    arr = np.asarray(bits, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr.sum(axis=0)
    elif arr.ndim != 1:
        raise MetricsError(f"bits must be (T, C) or (C,), got shape {arr.shape}")
    if np.any(arr < 0):
        raise MetricsError("negative channel bits")
    total = float(arr.sum())
    if total <= 0:
        raise MetricsError("zero-total-bits")
    ratios = arr / total
    order = np.argsort(-ratios, kind="stable")
    return ChannelBitrateReport(tuple(float(ratios[i]) for i in order),
                                tuple(int(i) for i in order), kind)


def average_curve(curves: list[RDCurve], label: str = "average") -> RDCurve:
    """Mean bpp and quality per lambda index across sequences."""
    by_lambda = {}
    for c in curves:
        for p in c.points:
            by_lambda.setdefault(p.lambda_index, []).append(p)
    counts = {len(v) for v in by_lambda.values()}
    if len(counts) > 1:
        raise MetricsError("curves do not cover the same lambda indices")
    points = []
    for li, pts in sorted(by_lambda.items()):
        points.append(RDPoint(
            bpp=float(np.mean([p.bpp for p in pts])),
            quality=float(np.mean([p.quality for p in pts])),
            lambda_index=li,
            lossless=all(p.lossless for p in pts)))
    return RDCurve.from_points(points, label)
