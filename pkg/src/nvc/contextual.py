"""Conditional frame coding: contextual encoder/decoder working off the three
temporal context scales, and the self-contained intra codec for GOP starts."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .entropy import SIGMA_MIN, FactorizedPrior, HyperCodec, laplace_bits, quantize
from .layers import conv1x1, conv3x3, deconv, make_stack
from .motion import ShapeMismatch


class PatchMerge(nn.Module):
    """Stride-2 downsampling without convolutional mixing across positions:
    2x2 pixel unshuffle followed by a pointwise projection."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.proj = conv1x1(4 * cin, cout)

    def forward(self, x):
        return self.proj(F.pixel_unshuffle(x, 2))


class PatchSplit(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.proj = conv1x1(cin, 4 * cout)

    def forward(self, x):
        return F.pixel_shuffle(self.proj(x), 2)


def _down(cin: int, cout: int, kind: str) -> nn.Module:
    return PatchMerge(cin, cout) if kind == "transformer" else conv3x3(cin, cout, 2)


def _up(cin: int, cout: int, kind: str) -> nn.Module:
    return PatchSplit(cin, cout) if kind == "transformer" else deconv(cin, cout)


def _check_contexts(h: int, w: int, ctx: list[torch.Tensor], n: int) -> None:
    expect = [(h, w, n), (h // 2, w // 2, 2 * n), (h // 4, w // 4, 4 * n)]
    if len(ctx) != 3:
        raise ShapeMismatch(f"shape-mismatch: expected 3 context scales, got {len(ctx)}")
    for c, (eh, ew, ec) in zip(ctx, expect):
        if c.shape[-2:] != (eh, ew) or c.shape[1] != ec:
            raise ShapeMismatch(
                f"shape-mismatch: context {tuple(c.shape[1:])} != ({ec}, {eh}, {ew})")


class ContextualEncoder(nn.Module):
    """Four stride-2 stages; contexts are channel-concatenated at the matching
    resolutions on the way down. Output latent y_t at H/16 x W/16 x C_y."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.contextual_enc_dec.channels
        r = cfg.contextual_enc_dec.res_blocks
        cy = cfg.contextual_enc_dec.latent_channels
        n = cfg.tcm.channels
        kind, attn = cfg.arch_kind, cfg.attention
        self.n = n
        self.down0 = _down(3 + n, c, kind)
        self.stack0 = make_stack(c, r, kind, attn)
        self.down1 = _down(c + 2 * n, c, kind)
        self.stack1 = make_stack(c, r, kind, attn)
        self.down2 = _down(c + 4 * n, c, kind)
        self.stack2 = make_stack(c, r, kind, attn)
        self.down3 = _down(c, cy, kind)

    def forward(self, x: torch.Tensor, ctx: list[torch.Tensor]) -> torch.Tensor:
        h, w = x.shape[-2:]
        if h % 16 or w % 16:
            raise ShapeMismatch(f"shape-mismatch: {h}x{w} not divisible by 16")
        _check_contexts(h, w, ctx, self.n)
        y = self.stack0(self.down0(torch.cat((x, ctx[0]), dim=1)))
        y = self.stack1(self.down1(torch.cat((y, ctx[1]), dim=1)))
        y = self.stack2(self.down2(torch.cat((y, ctx[2]), dim=1)))
        return self.down3(y)


class ContextualDecoder(nn.Module):
    """Mirror of the encoder; re-injects contexts while upsampling. Returns the
    clamped reconstruction and the reference feature taken one layer before the
    RGB projection."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.contextual_enc_dec.channels
        r = cfg.contextual_enc_dec.res_blocks
        cy = cfg.contextual_enc_dec.latent_channels
        n = cfg.tcm.channels
        cf = cfg.tcm.feature_channels
        kind, attn = cfg.arch_kind, cfg.attention
        self.n = n
        self.up0 = _up(cy, c, kind)
        self.stack0 = make_stack(c, r, kind, attn)
        self.up1 = _up(c, c, kind)
        self.mix1 = conv1x1(c + 4 * n, c)
        self.stack1 = make_stack(c, r, kind, attn)
        self.up2 = _up(c, c, kind)
        self.mix2 = conv1x1(c + 2 * n, c)
        self.stack2 = make_stack(c, r, kind, attn)
        self.up3 = _up(c, cf, kind)
        self.mix3 = conv3x3(cf + n, cf)
        self.stack3 = make_stack(cf, r, kind, attn)
        self.rgb = conv3x3(cf, 3)

    def forward(self, y_hat: torch.Tensor, ctx: list[torch.Tensor]):
        h, w = y_hat.shape[-2] * 16, y_hat.shape[-1] * 16
        _check_contexts(h, w, ctx, self.n)
        f = self.stack0(self.up0(y_hat))
        f = self.stack1(self.mix1(torch.cat((self.up1(f), ctx[2]), dim=1)))
        f = self.stack2(self.mix2(torch.cat((self.up2(f), ctx[1]), dim=1)))
        feature = self.stack3(self.mix3(torch.cat((self.up3(f), ctx[0]), dim=1)))
        frame = self.rgb(feature).clamp(0.0, 1.0)
        return frame, feature


class IntraCodec(nn.Module):
    """Mean-scale hyperprior image codec for GOP starts. Kept convolutional for
    every arch_kind: no scaling claims attach to it, it only has to produce the
    first reconstruction and reference feature."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.contextual_enc_dec.channels
        r = cfg.contextual_enc_dec.res_blocks
        cy = cfg.contextual_enc_dec.latent_channels
        cf = cfg.tcm.feature_channels
        w = cfg.contextual_entropy.channels
        attn = cfg.attention
        stack = lambda ch: make_stack(ch, r, "cnn", attn)
        self.encoder = nn.Sequential(
            conv3x3(3, c, stride=2), stack(c),
            conv3x3(c, c, stride=2), stack(c),
            conv3x3(c, c, stride=2), stack(c),
            conv3x3(c, cy, stride=2))
        self.dec_body = nn.Sequential(
            deconv(cy, c), stack(c),
            deconv(c, c), stack(c),
            deconv(c, c), stack(c),
            deconv(c, cf), stack(cf))
        self.rgb = conv3x3(cf, 3)
        self.hyper = HyperCodec(cy, w, cfg.contextual_entropy.hyper_channels)
        self.hyper_prior = FactorizedPrior(cfg.contextual_entropy.hyper_channels)
        self.param_head = nn.Sequential(
            conv3x3(w, w), nn.ReLU(inplace=True), conv1x1(w, 2 * cy))

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        if h % 16 or w % 16:
            raise ShapeMismatch(f"shape-mismatch: {h}x{w} not divisible by 16")
        return self.encoder(x)

    def latent_params(self, hyper_out: torch.Tensor):
        mean, raw = self.param_head(hyper_out).chunk(2, dim=1)
        return mean, SIGMA_MIN + F.softplus(raw)

    def decode(self, y_hat: torch.Tensor):
        feature = self.dec_body(y_hat)
        return self.rgb(feature).clamp(0.0, 1.0), feature

    def forward_rate(self, x: torch.Tensor, mode: str = "train"):
        """Differentiable compression pass: reconstruction, feature, and bits."""
        y = self.encode(x)
        z = self.hyper.encode(y)
        z_hat = quantize(z, 0.0, mode)
        hyper_bits = self.hyper_prior.bits(z_hat).sum()
        mean, sigma = self.latent_params(self.hyper.decode(z_hat))
        y_hat = quantize(y, mean, mode)
        latent_bits = laplace_bits(y_hat, mean, sigma).sum()
        frame, feature = self.decode(y_hat)
        return frame, feature, latent_bits, hyper_bits
