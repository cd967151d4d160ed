"""Motion side of the codec: structure/detail decomposition, coarse-to-fine
flow estimation, and the motion autoencoder over the concatenated flows."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .layers import conv3x3, deconv, make_stack, warp


class ShapeMismatch(ValueError):
    pass


def _gaussian_kernel(size: int = 5, sigma: float = 1.5) -> torch.Tensor:
    ax = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(ax ** 2) / (2 * sigma ** 2))
    k = torch.outer(g, g)
    return (k / k.sum()).float()


class StructureDetailSplit(nn.Module):
    """Additive split: structure = 5x5 Gaussian low-pass (sigma 1.5, replicate
    border), detail = frame - structure. Exact by construction."""

    def __init__(self):
        super().__init__()
        self.register_buffer("kernel", _gaussian_kernel(), persistent=False)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        c = x.shape[1]
        k = self.kernel.to(x.dtype).expand(c, 1, 5, 5)
        pad = F.pad(x, (2, 2, 2, 2), mode="replicate")
        structure = F.conv2d(pad, k, groups=c)
        return structure, x - structure


class FlowLevel(nn.Module):
    """One pyramid level: predicts a residual flow from (cur, warped ref, flow)."""

    def __init__(self, width: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            conv3x3(8, width), nn.ReLU(inplace=True),
            conv3x3(width, width), nn.ReLU(inplace=True),
            conv3x3(width, width // 2), nn.ReLU(inplace=True),
            conv3x3(width // 2, 2))
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def forward(self, cur, ref, flow):
        return self.net(torch.cat((cur, warp(ref, flow), flow), dim=1))


class FlowNet(nn.Module):
    """3-level coarse-to-fine flow estimation; each level refines the upsampled
    coarser flow. The same network serves structure and detail pairs."""

    LEVELS = 3

    def __init__(self, width: int = 32):
        super().__init__()
        self.levels = nn.ModuleList(FlowLevel(width) for _ in range(self.LEVELS))

    def forward(self, cur: torch.Tensor, ref: torch.Tensor) -> torch.Tensor:
        if cur.shape != ref.shape:
            raise ShapeMismatch(f"dim-mismatch: {tuple(cur.shape)} vs {tuple(ref.shape)}")
        curs, refs = [cur], [ref]
        for _ in range(self.LEVELS - 1):
            curs.append(F.avg_pool2d(curs[-1], 2))
            refs.append(F.avg_pool2d(refs[-1], 2))
        b, _, h, w = curs[-1].shape
        flow = cur.new_zeros(b, 2, h, w)
        for lvl in range(self.LEVELS - 1, -1, -1):
            if flow.shape[-2:] != curs[lvl].shape[-2:]:
                flow = F.interpolate(flow, scale_factor=2, mode="bilinear",
                                     align_corners=False) * 2.0
            flow = flow + self.levels[lvl](curs[lvl], refs[lvl], flow)
        limit = float(max(cur.shape[-2], cur.shape[-1]))
        return flow.clamp(-limit, limit)


class MotionEstimator(nn.Module):
    """Structure/detail decomposition followed by per-component flow."""

    def __init__(self):
        super().__init__()
        self.split = StructureDetailSplit()
        self.flow_net = FlowNet()

    def forward(self, cur: torch.Tensor, ref: torch.Tensor):
        if cur.shape != ref.shape:
            raise ShapeMismatch(f"dim-mismatch: {tuple(cur.shape)} vs {tuple(ref.shape)}")
        cur_s, cur_d = self.split(cur)
        ref_s, ref_d = self.split(ref)
        flow_s = self.flow_net(cur_s, ref_s)
        flow_d = self.flow_net(cur_d, ref_d)
        return flow_s, flow_d

    def warp_frame(self, ref: torch.Tensor, flow_s: torch.Tensor,
                   flow_d: torch.Tensor) -> torch.Tensor:
        """Motion-compensated prediction: each component warped by its flow."""
        ref_s, ref_d = self.split(ref)
        return warp(ref_s, flow_s) + warp(ref_d, flow_d)


class MotionAutoencoder(nn.Module):
    """(v_s, v_d) concatenated to 4 channels -> latent m_t at H/16 -> back."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.motion_enc_dec.channels
        r = cfg.motion_enc_dec.res_blocks
        cm = cfg.motion_entropy.latent_channels
        kind, attn = cfg.arch_kind, cfg.attention
        # the family defines no transformer motion parts; under the transformer
        # kind only the main modules change shape and motion stays convolutional
        kind = "cnn" if kind == "transformer" else kind
        stack = lambda ch: make_stack(ch, r, kind, attn, part="motion")
        self.encoder = nn.Sequential(
            conv3x3(4, c, stride=2), stack(c),
            conv3x3(c, c, stride=2), stack(c),
            conv3x3(c, c, stride=2), stack(c),
            conv3x3(c, cm, stride=2))
        self.decoder = nn.Sequential(
            deconv(cm, c), stack(c),
            deconv(c, c), stack(c),
            deconv(c, c), stack(c),
            deconv(c, 4))

    def encode(self, flow_s: torch.Tensor, flow_d: torch.Tensor) -> torch.Tensor:
        mv = torch.cat((flow_s, flow_d), dim=1)
        h, w = mv.shape[-2:]
        if h % 16 or w % 16:
            raise ShapeMismatch(f"shape-mismatch: {h}x{w} not divisible by 16")
        return self.encoder(mv)

    def decode(self, latent: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        out = self.decoder(latent)
        limit = float(max(out.shape[-2], out.shape[-1]))
        out = out.clamp(-limit, limit)
        return out[:, :2], out[:, 2:]
