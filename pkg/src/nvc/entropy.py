"""Probability modeling: quantization, Laplace rates, the factorized hyper prior,
prior fusion into distribution parameters, and the quadtree spatial schedule."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import ResBlock, conv1x1, conv3x3, deconv

SIGMA_MIN = 0.011
P_FLOOR = 2.0 ** -16
LOG2 = math.log(2.0)


class AlignmentMismatch(ValueError):
    pass


def round_half_away(x: torch.Tensor) -> torch.Tensor:
    """round() with ties away from zero; torch.round ties to even."""
    return torch.sign(x) * torch.floor(torch.abs(x) + 0.5)


def quantize(values: torch.Tensor, mean: torch.Tensor | float = 0.0,
             mode: str = "infer") -> torch.Tensor:
    """Train mode adds uniform noise on [-0.5, 0.5); infer mode rounds the
    mean-removed value half away from zero and adds the mean back."""
    if mode == "train":
        return values + torch.empty_like(values).uniform_(-0.5, 0.5)
    if mode == "infer":
        return round_half_away(values - mean) + mean
    raise ValueError(f"unknown quantize mode {mode!r}")


def laplace_bits(quantized: torch.Tensor, mean: torch.Tensor,
                 sigma: torch.Tensor) -> torch.Tensor:
    """Per-element bits of the interval [d-0.5, d+0.5], d = quantized - mean,
    under a Laplace of scale sigma. Written in |d| so bits(mu+delta) equals
    bits(mu-delta) exactly, not just analytically."""
    b = torch.clamp(sigma, min=SIGMA_MIN)
    a = torch.abs(quantized - mean)
    # interval straddles the mode for a < 0.5, sits in one tail otherwise.
    # torch.where evaluates both branches, and its backward multiplies the
    # unselected one by zero instead of skipping it, so the inner exponent
    # must not overflow where a >= 0.5 (0 * inf = nan in the grad). Clamping
    # at 0 is exact in the selected region, where a - 0.5 is negative.
    inner = 1.0 - 0.5 * (torch.exp(-(a + 0.5) / b)
                         + torch.exp(torch.clamp((a - 0.5) / b, max=0.0)))
    outer = 0.5 * torch.exp(-(a - 0.5) / b) * (-torch.expm1(-1.0 / b))
    p = torch.where(a < 0.5, inner, outer)
    return -torch.log2(torch.clamp(p, min=P_FLOOR))


class FactorizedPrior(nn.Module):
    """Learned per-channel cumulative distribution built from a chain of
    monotone affine + gated-tanh stages; models quantized hyper latents."""

    def __init__(self, channels: int, filters: tuple = (3, 3, 3),
                 init_scale: float = 10.0):
        super().__init__()
        self.channels = channels
        dims = (1,) + tuple(filters) + (1,)
        scale = init_scale ** (1.0 / (len(dims) - 1))
        self.matrices = nn.ParameterList()
        self.biases = nn.ParameterList()
        self.factors = nn.ParameterList()
        for i in range(len(dims) - 1):
            m = torch.full((channels, dims[i + 1], dims[i]),
                           math.log(math.expm1(1.0 / scale / dims[i + 1])))
            self.matrices.append(nn.Parameter(m))
            b = torch.empty(channels, dims[i + 1], 1).uniform_(-0.5, 0.5)
            self.biases.append(nn.Parameter(b))
            if i < len(dims) - 2:
                self.factors.append(nn.Parameter(torch.zeros(channels, dims[i + 1], 1)))

    def _logits(self, x: torch.Tensor) -> torch.Tensor:
        # x: (C, 1, N) -> logits of the CDF, monotone in x by construction
        for i, (m, b) in enumerate(zip(self.matrices, self.biases)):
            x = torch.bmm(F.softplus(m), x) + b
            if i < len(self.factors):
                x = x + torch.tanh(self.factors[i]) * torch.tanh(x)
        return x

    def cdf(self, x: torch.Tensor) -> torch.Tensor:
        """F(x) per channel; x shaped (C, N) in latent value space."""
        return torch.sigmoid(self._logits(x.unsqueeze(1))).squeeze(1)

    def bits(self, quantized: torch.Tensor) -> torch.Tensor:
        """Per-element bits for a (B, C, H, W) quantized hyper latent."""
        b, c, h, w = quantized.shape
        flat = quantized.permute(1, 0, 2, 3).reshape(c, -1)
        p = self.cdf(flat + 0.5) - self.cdf(flat - 0.5)
        p = p.reshape(c, b, h, w).permute(1, 0, 2, 3)
        return -torch.log2(torch.clamp(p, min=P_FLOOR))


class QuadtreeSchedule:
    """Fixed decode order over the four 2x2 spatial phases of a latent grid."""

    PHASES = ((0, 0), (1, 1), (0, 1), (1, 0))

    def __init__(self, height: int, width: int):
        if height % 2 or width % 2:
            raise ValueError(f"odd-dims: quadtree needs even dims, got {height}x{width}")
        self.height = height
        self.width = width
        self.groups = []
        for ph, pw in self.PHASES:
            m = torch.zeros(height, width, dtype=torch.bool)
            m[ph::2, pw::2] = True
            self.groups.append(m)

    def mask(self, step: int, device=None) -> torch.Tensor:
        m = self.groups[step]
        return m.to(device) if device is not None else m

    def decoded_before(self, step: int, device=None) -> torch.Tensor:
        """Union of groups decoded strictly before `step`."""
        m = torch.zeros(self.height, self.width, dtype=torch.bool)
        for g in self.groups[:step]:
            m |= g
        return m.to(device) if device is not None else m


def quadtree_partition(latent_dims: tuple[int, int]) -> QuadtreeSchedule:
    return QuadtreeSchedule(*latent_dims)


class HyperCodec(nn.Module):
    """Two stride-2 stages below the latent grid, so the hyper latent sits at
    1/64 of the frame; the decoder lifts it back to latent resolution."""

    def __init__(self, latent_channels: int, width: int, hyper_channels: int):
        super().__init__()
        self.encoder = nn.Sequential(
            conv3x3(latent_channels, width), nn.ReLU(inplace=True),
            conv3x3(width, width, stride=2), nn.ReLU(inplace=True),
            conv3x3(width, hyper_channels, stride=2))
        self.decoder = nn.Sequential(
            deconv(hyper_channels, width), nn.ReLU(inplace=True),
            deconv(width, width), nn.ReLU(inplace=True),
            conv3x3(width, width))

    def encode(self, y: torch.Tensor) -> torch.Tensor:
        return self.encoder(y)

    def decode(self, z_hat: torch.Tensor) -> torch.Tensor:
        return self.decoder(z_hat)


class ParamFusion(nn.Module):
    """Concatenate the available priors and regress Laplace (mu, sigma)."""

    def __init__(self, latent_channels: int, width: int, with_temporal: bool):
        super().__init__()
        n_in = width + latent_channels + width + (width if with_temporal else 0)
        self.with_temporal = with_temporal
        self.body = nn.Sequential(
            conv1x1(n_in, width), nn.ReLU(inplace=True),
            ResBlock(width), ResBlock(width),
            conv1x1(width, 2 * latent_channels))
        self.latent_channels = latent_channels

    def forward(self, hyper_out, latent_prior, spatial_prior, temporal_prior=None):
        parts = [hyper_out, latent_prior, spatial_prior]
        if self.with_temporal:
            if temporal_prior is None:
                raise AlignmentMismatch("temporal prior expected but missing")
            parts.append(temporal_prior)
        elif temporal_prior is not None:
            raise AlignmentMismatch("temporal prior supplied but not configured")
        ref = parts[0].shape[-2:]
        for p in parts[1:]:
            if p.shape[-2:] != ref:
                raise AlignmentMismatch(
                    f"alignment-mismatch: prior grids {tuple(ref)} vs {tuple(p.shape[-2:])}")
        out = self.body(torch.cat(parts, dim=1))
        mean, raw = out.chunk(2, dim=1)
        # additive floor realizes the sigma clamp without a dead gradient zone
        sigma = SIGMA_MIN + F.softplus(raw)
        return mean, sigma


class LatentEntropyModel(nn.Module):
    """Everything needed to rate-estimate or code one latent stream: hyper
    codec with a factorized prior, four masked spatial-context convolutions
    (one per quadtree step), an optional temporal branch, and prior fusion.
    """

    def __init__(self, latent_channels: int, width: int, hyper_channels: int,
                 temporal_in: int | None = None):
        super().__init__()
        self.latent_channels = latent_channels
        self.width = width
        self.hyper = HyperCodec(latent_channels, width, hyper_channels)
        self.hyper_prior = FactorizedPrior(hyper_channels)
        self.spatial_nets = nn.ModuleList(
            [nn.Conv2d(latent_channels, width, 5, padding=2) for _ in range(4)])
        if temporal_in is not None:
            self.temporal_net = nn.Sequential(
                conv3x3(temporal_in, width, stride=2), nn.ReLU(inplace=True),
                conv3x3(width, width, stride=2))
        else:
            self.temporal_net = None
        self.fusion = ParamFusion(latent_channels, width,
                                  with_temporal=temporal_in is not None)

    def temporal_feature(self, ctx_small: torch.Tensor | None) -> torch.Tensor | None:
        if self.temporal_net is None or ctx_small is None:
            return None
        return self.temporal_net(ctx_small)

    def step_params(self, partial: torch.Tensor, schedule: QuadtreeSchedule,
                    step: int, hyper_out: torch.Tensor, latent_prior: torch.Tensor,
                    temporal_feat: torch.Tensor | None):
        """Laplace params for quadtree step `step`, given the already-decoded
        positions in `partial` (zeros elsewhere). Causal by input masking."""
        seen = schedule.decoded_before(step, partial.device)
        spatial = self.spatial_nets[step](partial * seen)
        fused = self.fusion(hyper_out, latent_prior, spatial, temporal_feat)
        return fused

    def forward_rate(self, y: torch.Tensor, latent_prior: torch.Tensor,
                     ctx_small: torch.Tensor | None = None, mode: str = "train"):
        """Differentiable rate path: quantize the hyper and the latent through
        the quadtree schedule, return (y_hat, latent_bits, hyper_bits,
        per-channel latent bits)."""
        z = self.hyper.encode(y)
        z_hat = quantize(z, 0.0, mode)
        hyper_bits = self.hyper_prior.bits(z_hat).sum()
        hyper_out = self.hyper.decode(z_hat)
        temporal_feat = self.temporal_feature(ctx_small)
        schedule = QuadtreeSchedule(y.shape[-2], y.shape[-1])
        y_hat = torch.zeros_like(y)
        latent_bits = y.new_zeros(())
        channel_bits = y.new_zeros(y.shape[1])
        for step in range(4):
            mean, sigma = self.step_params(
                y_hat, schedule, step, hyper_out, latent_prior, temporal_feat)
            q = quantize(y, mean, mode)
            m = schedule.mask(step, y.device)
            y_hat = torch.where(m, q, y_hat)
            b = laplace_bits(q, mean, sigma) * m
            latent_bits = latent_bits + b.sum()
            channel_bits = channel_bits + b.sum(dim=(0, 2, 3))
        return y_hat, latent_bits, hyper_bits, channel_bits
