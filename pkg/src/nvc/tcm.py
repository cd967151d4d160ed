"""Temporal context mining: feature pyramid over the previous reference
feature, feature-domain motion compensation, long-term recurrent state, and
long/short-term fusion into the three context scales."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .layers import ConvLSTMCell, conv3x3, make_stack, warp


class DimMismatch(ValueError):
    pass


class _FuseBlock(nn.Module):
    """Residual injection branch; ends in a zero-init conv so fusion is the
    identity at initialization."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.net = nn.Sequential(
            conv3x3(cin, cout), nn.ReLU(inplace=True), conv3x3(cout, cout))
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def forward(self, x):
        return self.net(x)


class TemporalContextMiner(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        n = cfg.tcm.channels
        cf = cfg.tcm.feature_channels
        r = cfg.tcm.res_blocks
        kind, attn = cfg.arch_kind, cfg.attention
        self.n = n
        self.feature_channels = cf
        self.pyr_in = nn.ModuleList([
            conv3x3(cf, n), conv3x3(n, 2 * n, stride=2), conv3x3(2 * n, 4 * n, stride=2)])
        self.pyr_stack = nn.ModuleList([
            make_stack(n, r, kind, attn), make_stack(2 * n, r, kind, attn),
            make_stack(4 * n, r, kind, attn)])
        self.refine = nn.ModuleList([
            make_stack(n, r, kind, attn), make_stack(2 * n, r, kind, attn),
            make_stack(4 * n, r, kind, attn)])
        self.lstm = ConvLSTMCell(cf)
        self.fuse_blocks = nn.ModuleList([
            _FuseBlock(n + cf, n), _FuseBlock(2 * n + n, 2 * n),
            _FuseBlock(4 * n + 2 * n, 4 * n)])

    def extract_pyramid(self, ref_feature: torch.Tensor) -> list[torch.Tensor]:
        """Levels at full, 1/2, 1/4 resolution with N, 2N, 4N channels."""
        levels = []
        x = ref_feature
        for conv, stack in zip(self.pyr_in, self.pyr_stack):
            x = stack(conv(x))
            levels.append(x)
        return levels

    @staticmethod
    def level_flows(flow: torch.Tensor) -> list[torch.Tensor]:
        """Flow per pyramid level: average-pooled and rescaled by 1/2 each."""
        return [flow,
                F.avg_pool2d(flow, 2) * 0.5,
                F.avg_pool2d(flow, 4) * 0.25]

    def mine_contexts(self, pyramid: list[torch.Tensor],
                      flows: list[torch.Tensor]) -> list[torch.Tensor]:
        """Warp each level by its flow, then refine. Raw contexts C-tilde."""
        if len(pyramid) != len(flows):
            raise DimMismatch(
                f"level-count mismatch: {len(pyramid)} features, {len(flows)} flows")
        return [stack(warp(f, v))
                for stack, f, v in zip(self.refine, pyramid, flows)]

    def update_long_term(self, state, ref_feature: torch.Tensor):
        """Gated recurrent update; returns (hidden, new state)."""
        if state is not None and state[0].shape != ref_feature.shape:
            raise DimMismatch(
                f"dim-mismatch: state {tuple(state[0].shape)} vs "
                f"ref {tuple(ref_feature.shape)}")
        return self.lstm(ref_feature, state)

    def fuse_contexts(self, raw: list[torch.Tensor],
                      hidden: torch.Tensor) -> list[torch.Tensor]:
        """Inject the long-term hidden at full resolution, then propagate the
        fused result down the scales."""
        c0 = raw[0] + self.fuse_blocks[0](torch.cat((raw[0], hidden), dim=1))
        d0 = F.avg_pool2d(c0, 2)
        c1 = raw[1] + self.fuse_blocks[1](torch.cat((raw[1], d0), dim=1))
        d1 = F.avg_pool2d(c1, 2)
        c2 = raw[2] + self.fuse_blocks[2](torch.cat((raw[2], d1), dim=1))
        return [c0, c1, c2]

    def forward(self, ref_feature: torch.Tensor, flow: torch.Tensor, state):
        """Full pass for one frame: returns (contexts [c0, c1, c2], new state)."""
        hidden, new_state = self.update_long_term(state, ref_feature)
        pyramid = self.extract_pyramid(ref_feature)
        raw = self.mine_contexts(pyramid, self.level_flows(flow))
        return self.fuse_contexts(raw, hidden), new_state
