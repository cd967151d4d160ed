"""Shared building blocks: convolutions, residual stacks, windowed attention, warping."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import AttentionConfig, UnsupportedCombination


def conv3x3(cin: int, cout: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1)


def conv1x1(cin: int, cout: int) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 1)


def deconv(cin: int, cout: int) -> nn.ConvTranspose2d:
    """Exact 2x upsampling transposed convolution."""
    return nn.ConvTranspose2d(cin, cout, 3, stride=2, padding=1, output_padding=1)


class ResBlock(nn.Module):
    """x + conv(relu(conv(x))); the second conv starts at zero so the block is
    the identity at initialization."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = conv3x3(channels, channels)
        self.conv2 = conv3x3(channels, channels)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


def warp(x: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Backward-warp x by a dense flow field in pixel units.

    flow[:, 0] is the horizontal displacement, flow[:, 1] vertical; output(p)
    samples x at p + flow(p) with bilinear interpolation and border padding.
    """
    b, _, h, w = x.shape
    ys = torch.arange(h, dtype=x.dtype, device=x.device)
    xs = torch.arange(w, dtype=x.dtype, device=x.device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    px = gx.unsqueeze(0) + flow[:, 0]
    py = gy.unsqueeze(0) + flow[:, 1]
    # normalize to [-1, 1] for grid_sample, align_corners semantics
    nx = 2.0 * px / max(w - 1, 1) - 1.0
    ny = 2.0 * py / max(h - 1, 1) - 1.0
    grid = torch.stack((nx, ny), dim=-1)
    return F.grid_sample(x, grid, mode="bilinear", padding_mode="border",
                         align_corners=True)


class ConvLSTMCell(nn.Module):
    """Convolutional LSTM over spatial feature maps; carries (h, c) state."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.gates = conv3x3(2 * channels, 4 * channels)

    def forward(self, x, state):
        if state is None:
            zeros = torch.zeros_like(x)
            state = (zeros, zeros)
        h, c = state
        i, f, g, o = self.gates(torch.cat((x, h), dim=1)).chunk(4, dim=1)
        c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, (h, c)


def effective_window(h: int, w: int, window: int) -> int:
    """Halve the window until it fits the feature map (minimum 1)."""
    e = window
    while e > 1 and (h < e or w < e):
        e //= 2
    return e


def _window_partition(x: torch.Tensor, win: int) -> torch.Tensor:
    # x: (B, H, W, C) -> (B*nW, win*win, C)
    b, h, w, c = x.shape
    x = x.view(b, h // win, win, w // win, win, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, win * win, c)


def _window_reverse(x: torch.Tensor, win: int, h: int, w: int) -> torch.Tensor:
    b = x.shape[0] // ((h // win) * (w // win))
    x = x.view(b, h // win, w // win, win, win, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, -1)


class WindowAttention(nn.Module):
    """Multi-head self-attention inside a square window with a learned relative
    position bias, as in the SwinTransformer layer design."""

    def __init__(self, dim: int, heads: int, window: int):
        super().__init__()
        self.dim = dim
        self.heads = heads
        self.window = window
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        # zero-init output projection: the block starts as the identity, like
        # the zero-init second conv in ResBlock
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)
        self.bias_table = nn.Parameter(torch.zeros((2 * window - 1) ** 2, heads))
        self.register_buffer("bias_index", self._rel_index(window), persistent=False)
        nn.init.trunc_normal_(self.bias_table, std=0.02)

    def _rel_index(self, win: int) -> torch.Tensor:
        """Pairwise relative-offset indices into the bias table for a win x win
        grid; the table spans offsets up to the configured window, so any
        effective window not larger than it can share the table."""
        coords = torch.stack(torch.meshgrid(
            torch.arange(win), torch.arange(win), indexing="ij")).flatten(1)
        rel = coords[:, :, None] - coords[:, None, :]
        rel = rel.permute(1, 2, 0) + (self.window - 1)
        return rel[:, :, 0] * (2 * self.window - 1) + rel[:, :, 1]

    def forward(self, x: torch.Tensor, win: int, mask: torch.Tensor | None):
        # x: (B*nW, win*win, C); win may be smaller than self.window
        n = win * win
        qkv = self.qkv(x).reshape(x.shape[0], n, 3, self.heads, -1)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q * self.scale) @ k.transpose(-2, -1)
        idx = self.bias_index if win == self.window \
            else self._rel_index(win).to(x.device)
        bias = self.bias_table[idx.reshape(-1)].reshape(n, n, -1)
        attn = attn + bias.permute(2, 0, 1).unsqueeze(0)
        if mask is not None:
            nw = mask.shape[0]
            attn = attn.view(-1, nw, self.heads, n, n) + mask[None, :, None]
            attn = attn.view(-1, self.heads, n, n)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(x.shape[0], n, self.dim)
        return self.proj(out)


class SwinBlock(nn.Module):
    """Pre-norm windowed attention block; odd positions use a cyclically shifted
    window so information crosses window borders."""

    def __init__(self, dim: int, attn_cfg: AttentionConfig, shifted: bool):
        super().__init__()
        self.window = attn_cfg.window
        self.shifted = shifted
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, attn_cfg.heads, attn_cfg.window)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))
        nn.init.zeros_(self.mlp[2].weight)
        nn.init.zeros_(self.mlp[2].bias)

    @staticmethod
    def _attn_mask(hp: int, wp: int, win: int, shift: int, device) -> torch.Tensor:
        img = torch.zeros(1, hp, wp, 1, device=device)
        cnt = 0
        for hs in (slice(0, -win), slice(-win, -shift), slice(-shift, None)):
            for ws in (slice(0, -win), slice(-win, -shift), slice(-shift, None)):
                img[:, hs, ws, :] = cnt
                cnt += 1
        windows = _window_partition(img, win).squeeze(-1)
        diff = windows.unsqueeze(1) - windows.unsqueeze(2)
        return diff.masked_fill(diff != 0, -100.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: NCHW
        b, c, h, w = x.shape
        win = effective_window(h, w, self.window)
        shift = win // 2 if (self.shifted and win > 1) else 0
        y = x.permute(0, 2, 3, 1)
        pad_h = (win - h % win) % win
        pad_w = (win - w % win) % win
        if pad_h or pad_w:
            y = F.pad(y, (0, 0, 0, pad_w, 0, pad_h))
        hp, wp = y.shape[1], y.shape[2]
        shortcut = y
        y = self.norm1(y)
        if shift:
            y = torch.roll(y, (-shift, -shift), dims=(1, 2))
            mask = self._attn_mask(hp, wp, win, shift, x.device)
        else:
            mask = None
        y = self.attn(_window_partition(y, win), win, mask)
        y = _window_reverse(y, win, hp, wp)
        if shift:
            y = torch.roll(y, (shift, shift), dims=(1, 2))
        y = shortcut + y
        y = y + self.mlp(self.norm2(y))
        if pad_h or pad_w:
            y = y[:, :h, :w]
        return y.permute(0, 3, 1, 2)


class BlockStack(nn.Module):
    """A run of processing blocks at fixed width, assembled per architecture kind.

    cnn:   res_blocks ResBlocks.
    mixed: each ResBlock followed by `depth` SwinBlocks (strictly adds parameters).
    transformer: res_blocks groups of `depth` SwinBlocks, no convolutions.
    """

    def __init__(self, channels: int, res_blocks: int, arch_kind: str,
                 attn_cfg: AttentionConfig):
        super().__init__()
        blocks: list[nn.Module] = []
        for _ in range(res_blocks):
            if arch_kind in ("cnn", "mixed_cnn_transformer"):
                blocks.append(ResBlock(channels))
            if arch_kind in ("mixed_cnn_transformer", "transformer"):
                for d in range(attn_cfg.depth):
                    blocks.append(SwinBlock(channels, attn_cfg, shifted=bool(d % 2)))
        self.body = nn.Sequential(*blocks)

    def forward(self, x):
        return self.body(x)


def make_stack(channels: int, res_blocks: int, arch_kind: str,
               attn_cfg: AttentionConfig, part: str = "contextual") -> BlockStack:
    """Build a BlockStack, rejecting combinations the family does not define."""
    if part.startswith("motion") and arch_kind == "transformer":
        raise UnsupportedCombination(
            "transformer architecture is not defined for motion parts")
    return BlockStack(channels, res_blocks, arch_kind, attn_cfg)
