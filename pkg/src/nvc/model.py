"""The assembled codec: model construction from a config, parameter accounting,
per-frame forward passes, and the decode state threaded between frames."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import torch
import torch.nn as nn

from .config import ModelConfig, ParamReport
from .contextual import ContextualDecoder, ContextualEncoder, IntraCodec
from .entropy import LatentEntropyModel
from .motion import MotionAutoencoder, MotionEstimator
from .tcm import TemporalContextMiner


@dataclass
class FrameState:
    """Everything frame t needs from frames < t. Reset at every intra frame;
    the long-term state and latent priors start empty there."""

    ref_frame: torch.Tensor
    ref_feature: torch.Tensor
    long_term: tuple | None = None
    prev_motion_latent: torch.Tensor | None = None
    prev_ctx_latent: torch.Tensor | None = None
    p_index: int = 0

    def detach(self) -> "FrameState":
        d = lambda t: None if t is None else t.detach()
        lt = None if self.long_term is None else tuple(t.detach() for t in self.long_term)
        return FrameState(self.ref_frame.detach(), self.ref_feature.detach(), lt,
                          d(self.prev_motion_latent), d(self.prev_ctx_latent),
                          self.p_index)


class IntraOutput(NamedTuple):
    recon: torch.Tensor
    feature: torch.Tensor
    latent_bits: torch.Tensor
    hyper_bits: torch.Tensor
    state: FrameState


class InterOutput(NamedTuple):
    recon: torch.Tensor
    warped: torch.Tensor
    motion_latent_bits: torch.Tensor
    motion_hyper_bits: torch.Tensor
    ctx_latent_bits: torch.Tensor
    ctx_hyper_bits: torch.Tensor
    state: FrameState
    motion_channel_bits: torch.Tensor = None  # (C_m,) latent bits by channel
    ctx_channel_bits: torch.Tensor = None  # (C_y,)


class CodecModel(nn.Module):
    """Five coding parts plus the intra codec, wired per ModelConfig."""

    PARAM_GROUPS = {
        "motion_estimation": ("flow",),
        "motion_enc_dec": ("motion_ae",),
        "motion_entropy": ("motion_em",),
        "contextual_enc_dec": ("ctx_encoder", "ctx_decoder"),
        "contextual_entropy": ("ctx_em",),
        "tcm": ("tcm",),
        "intra_codec": ("intra",),
    }
    SCOPES = {
        "inter": ("motion_estimation", "motion_enc_dec", "motion_entropy"),
        "recon": ("tcm", "contextual_enc_dec", "contextual_entropy"),
        "all": ("motion_estimation", "motion_enc_dec", "motion_entropy",
                "tcm", "contextual_enc_dec", "contextual_entropy"),
    }

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        me, ce, tc = config.motion_entropy, config.contextual_enc_dec, config.tcm
        self.flow = MotionEstimator()
        self.motion_ae = MotionAutoencoder(config)
        self.motion_em = LatentEntropyModel(
            me.latent_channels, me.channels, me.hyper_channels)
        self.tcm = TemporalContextMiner(config)
        self.ctx_encoder = ContextualEncoder(config)
        self.ctx_decoder = ContextualDecoder(config)
        self.ctx_em = LatentEntropyModel(
            ce.latent_channels, config.contextual_entropy.channels,
            config.contextual_entropy.hyper_channels, temporal_in=4 * tc.channels)
        self.intra = IntraCodec(config)

    def group_modules(self, group: str) -> list[nn.Module]:
        return [getattr(self, name) for name in self.PARAM_GROUPS[group]]

    def _zero_latent(self, like: torch.Tensor, channels: int) -> torch.Tensor:
        b, _, h, w = like.shape
        return like.new_zeros(b, channels, h // 16, w // 16)

    def forward_intra(self, x: torch.Tensor, mode: str = "train") -> IntraOutput:
        recon, feature, latent_bits, hyper_bits = self.intra.forward_rate(x, mode)
        state = FrameState(ref_frame=recon, ref_feature=feature)
        return IntraOutput(recon, feature, latent_bits, hyper_bits, state)

    def forward_inter(self, x: torch.Tensor, state: FrameState,
                      mode: str = "train", recon_grad: bool = True) -> InterOutput:
        """Code one P-frame against the running state. recon_grad=False runs
        the reconstruction half without autograd for motion-only stages."""
        flow_s, flow_d = self.flow(x, state.ref_frame)
        m = self.motion_ae.encode(flow_s, flow_d)
        m_prior = state.prev_motion_latent
        if m_prior is None:
            m_prior = self._zero_latent(x, self.motion_em.latent_channels)
        m_hat, m_bits, mz_bits, m_ch = self.motion_em.forward_rate(m, m_prior, None, mode)
        fs_hat, fd_hat = self.motion_ae.decode(m_hat)
        warped = self.flow.warp_frame(state.ref_frame, fs_hat, fd_hat)

        with torch.set_grad_enabled(recon_grad and torch.is_grad_enabled()):
            # feature-domain compensation uses the decoded structure flow; the
            # detail flow only steers the frame-domain prediction above
            ctx, long_term = self.tcm(state.ref_feature, fs_hat, state.long_term)
            y = self.ctx_encoder(x, ctx)
            y_prior = state.prev_ctx_latent
            if y_prior is None:
                y_prior = self._zero_latent(x, self.ctx_em.latent_channels)
            y_hat, y_bits, yz_bits, y_ch = self.ctx_em.forward_rate(y, y_prior, ctx[2], mode)
            recon, feature = self.ctx_decoder(y_hat, ctx)

        new_state = FrameState(
            ref_frame=recon, ref_feature=feature, long_term=long_term,
            prev_motion_latent=m_hat, prev_ctx_latent=y_hat,
            p_index=state.p_index + 1)
        return InterOutput(recon, warped, m_bits, mz_bits, y_bits, yz_bits,
                           new_state, m_ch, y_ch)


def build_model(config: ModelConfig, seed: int = 0) -> CodecModel:
    """Deterministic construction: same config and seed, same initial weights."""
    torch.manual_seed(seed)
    return CodecModel(config)


def count_parameters(model: CodecModel) -> ParamReport:
    per = {}
    for group in model.PARAM_GROUPS:
        per[group] = sum(p.numel() for m in model.group_modules(group)
                         for p in m.parameters())
    return ParamReport(per_module=per, total=sum(per.values()))
