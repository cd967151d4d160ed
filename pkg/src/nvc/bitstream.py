"""Frame bitstream layout and the exact integer coding paths.

A frame unit is: magic "NVC1", version u8, frame_type u8 (0 intra, 1 inter),
width u16le, height u16le (pre-padding dims), lambda index u8, then chunks of
(chunk_id u8, length u32le, payload). Chunk payloads start with the coded
symbol range (min_q i16le, max_q i16le) followed by range-coder bytes.

The encoder runs the decoder's arithmetic exactly (it quantizes, dequantizes
and feeds back the same tensors the decoder will see), so encoder state and
decoder state match bit for bit on one device.
"""

from __future__ import annotations

import math
import struct
from typing import NamedTuple

import numpy as np
import torch

from .entropy import (FactorizedPrior, LatentEntropyModel, P_FLOOR,
                      QuadtreeSchedule, laplace_bits, round_half_away)
from .model import CodecModel, FrameState
from .rangecoder import CdfTable, RangeDecoder, RangeEncoder, build_cdf

MAGIC = b"NVC1"
VERSION = 1
SYMBOL_LIMIT = 30000  # keeps coded values inside the i16 range header

CHUNK_INTRA_HYPER = 0
CHUNK_INTRA_LATENT = 1
CHUNK_MOTION_HYPER = 2
CHUNK_MOTION_LATENT = 3
CHUNK_CTX_HYPER = 4
CHUNK_CTX_LATENT = 5
INTER_CHUNK_ORDER = (CHUNK_MOTION_HYPER, CHUNK_MOTION_LATENT,
                     CHUNK_CTX_HYPER, CHUNK_CTX_LATENT)


class BitstreamError(ValueError):
    pass


class BitstreamUnit(NamedTuple):
    frame_type: str  # "intra" | "inter"
    dims: tuple[int, int]  # (width, height) before padding
    lambda_index: int
    chunks: tuple  # ((chunk_id, payload bytes), ...)

    def to_bytes(self) -> bytes:
        out = bytearray()
        ftype = 0 if self.frame_type == "intra" else 1
        out += struct.pack("<4sBBHHB", MAGIC, VERSION, ftype,
                           self.dims[0], self.dims[1], self.lambda_index)
        for cid, payload in self.chunks:
            out += struct.pack("<BI", cid, len(payload))
            out += payload
        return bytes(out)

    @property
    def total_bytes(self) -> int:
        return len(self.to_bytes())

    @property
    def payload_bits(self) -> int:
        """Bits the entropy coder produced: chunk payloads minus each chunk's
        4-byte symbol-range prefix (framing, like the chunk headers)."""
        return 8 * sum(len(p) - 4 for _, p in self.chunks)

    @property
    def bpp(self) -> float:
        w, h = self.dims
        return 8.0 * self.total_bytes / (w * h)


def parse_units(buf: bytes) -> list[BitstreamUnit]:
    """Parse a concatenation of frame units."""
    units = []
    pos = 0
    expected = {"intra": (CHUNK_INTRA_HYPER, CHUNK_INTRA_LATENT),
                "inter": INTER_CHUNK_ORDER}
    while pos < len(buf):
        if len(buf) - pos < 11:
            raise BitstreamError("malformed-stream: truncated frame header")
        magic, version, ftype, w, h, lam = struct.unpack_from("<4sBBHHB", buf, pos)
        pos += 11
        if magic != MAGIC:
            raise BitstreamError(f"bad-magic: {magic!r}")
        if version != VERSION:
            raise BitstreamError(f"version-mismatch: {version} != {VERSION}")
        if ftype not in (0, 1):
            raise BitstreamError(f"malformed-stream: frame_type {ftype}")
        frame_type = "intra" if ftype == 0 else "inter"
        chunks = []
        for want in expected[frame_type]:
            if len(buf) - pos < 5:
                raise BitstreamError("malformed-stream: truncated chunk header")
            cid, length = struct.unpack_from("<BI", buf, pos)
            pos += 5
            if cid != want:
                raise BitstreamError(
                    f"malformed-stream: chunk id {cid}, expected {want}")
            if len(buf) - pos < length:
                raise BitstreamError("malformed-stream: chunk length overruns buffer")
            chunks.append((cid, bytes(buf[pos:pos + length])))
            pos += length
        units.append(BitstreamUnit(frame_type, (w, h), lam, tuple(chunks)))
    return units


def _pad(x: torch.Tensor, multiple: int = 64) -> torch.Tensor:
    h, w = x.shape[-2:]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph == 0 and pw == 0:
        return x
    return torch.nn.functional.pad(x, (0, pw, 0, ph), mode="replicate")


def _factorized_tables(prior: FactorizedPrior, mn: int, mx: int) -> list[CdfTable]:
    """One table per channel over [mn, mx], tails folded into the ends."""
    c = prior.channels
    with torch.no_grad():
        grid = torch.arange(mn, mx + 2, dtype=torch.float32) - 0.5
        edges = prior.cdf(grid.expand(c, -1))  # (C, K+1) CDF at half-integers
    tables = []
    for ch in range(c):
        e = edges[ch].double().numpy()
        pmf = (e[1:] - e[:-1]).tolist()
        pmf[0] = float(e[1])
        pmf[-1] = float(1.0 - e[-2])
        if mn == mx:
            pmf[0] = 1.0
        pmf = [max(p, 1e-12) for p in pmf]
        tables.append(build_cdf(pmf, (mn, mx)))
    return tables


def _laplace_pmf_rows(sigmas: np.ndarray, mn: int, mx: int) -> np.ndarray:
    """(P, K) float64 interval masses, boundary symbols holding tail mass.
    Same formulas as rangecoder.laplace_symbol_pmf, vectorized over positions."""
    b = sigmas.astype(np.float64)[:, None]
    k = np.arange(mn, mx + 1, dtype=np.float64)[None, :]
    a = np.abs(k)
    outer = 0.5 * np.exp(-(a - 0.5) / b) * -np.expm1(-1.0 / b)
    pmf = np.where(k == 0, 1.0 - np.exp(-0.5 / b), outer)

    def tail(x: float) -> np.ndarray:
        if x >= 0:
            return 0.5 * np.exp(-x / b)
        return 1.0 - 0.5 * np.exp(x / b)

    pmf[:, 0:1] = tail(-(mn + 0.5))
    pmf[:, -1:] = tail(mx - 0.5)
    if mn == mx:
        pmf[:, 0] = 1.0
    return np.maximum(pmf, 1e-12)


def _laplace_tables(sigma_flat: np.ndarray, mn: int, mx: int) -> list[CdfTable]:
    rows = _laplace_pmf_rows(sigma_flat, mn, mx)
    return [build_cdf(row.tolist(), (mn, mx)) for row in rows]


def _laplace_range(sigmas: np.ndarray) -> int:
    """Magnitude beyond which the interval mass sits below the probability
    floor for every element. The coded range must span the model's support,
    not just the observed symbols: narrowing to the data range would smuggle
    rate through the range header and decouple payload size from the
    model-estimated bits. Inverting the tail of the outer branch:
    0.5 * exp(-(a - 0.5) / b) <= 2**-16 once a >= 0.5 + b * ln(2**15)."""
    b = float(sigmas.max())
    return min(SYMBOL_LIMIT, max(1, math.ceil(0.5 + 15.0 * math.log(2.0) * b)))


def _factorized_range(prior: FactorizedPrior) -> int:
    """Smallest power-of-two magnitude whose tails fall below the probability
    floor on every channel (same rationale as _laplace_range)."""
    k = 1
    with torch.no_grad():
        while k < SYMBOL_LIMIT:
            lo = prior.cdf(torch.full((prior.channels, 1), -(k + 0.5)))
            hi = prior.cdf(torch.full((prior.channels, 1), k + 0.5))
            if float(lo.max()) <= P_FLOOR and float((1.0 - hi).max()) <= P_FLOOR:
                break
            k *= 2
    return min(k, SYMBOL_LIMIT)


def _pack_chunk(mn: int, mx: int, body: bytes) -> bytes:
    return struct.pack("<hh", mn, mx) + body


def _unpack_chunk(payload: bytes) -> tuple[int, int, bytes]:
    if len(payload) < 4:
        raise BitstreamError("malformed-stream: chunk payload too short")
    mn, mx = struct.unpack_from("<hh", payload, 0)
    if mx < mn:
        raise BitstreamError("malformed-stream: empty symbol range")
    return mn, mx, payload[4:]


def _encode_hyper(z: torch.Tensor, prior: FactorizedPrior):
    """Quantize and code a hyper latent; returns (payload, z_hat, est_bits)."""
    sym = round_half_away(z).clamp(-SYMBOL_LIMIT, SYMBOL_LIMIT)
    z_hat = sym
    flat = sym[0].reshape(sym.shape[1], -1).to(torch.int64).numpy()
    k = _factorized_range(prior)
    mn, mx = min(int(flat.min()), -k), max(int(flat.max()), k)
    tables = _factorized_tables(prior, mn, mx)
    enc = RangeEncoder()
    for ch in range(flat.shape[0]):
        t = tables[ch]
        for s in flat[ch]:
            enc.encode_symbol(int(s), t)
    est_bits = float(prior.bits(z_hat).sum())
    return _pack_chunk(mn, mx, enc.finish()), z_hat, est_bits


def _decode_hyper(payload: bytes, prior: FactorizedPrior, shape) -> torch.Tensor:
    mn, mx, body = _unpack_chunk(payload)
    _, c, h, w = shape
    tables = _factorized_tables(prior, mn, mx)
    dec = RangeDecoder(body)
    out = np.empty((c, h * w), dtype=np.int64)
    for ch in range(c):
        t = tables[ch]
        for i in range(h * w):
            out[ch, i] = dec.decode_symbol(t)
    return torch.from_numpy(out).to(torch.float32).reshape(1, c, h, w)


def _encode_plain_latent(y: torch.Tensor, mean: torch.Tensor, sigma: torch.Tensor):
    """Mean-scale coding without spatial context (intra latent)."""
    sym = round_half_away(y - mean).clamp(-SYMBOL_LIMIT, SYMBOL_LIMIT)
    y_hat = sym + mean
    flat = sym[0].reshape(-1).to(torch.int64).numpy()
    sig = sigma[0].reshape(-1).detach().numpy()
    k = _laplace_range(sig)
    mn, mx = min(int(flat.min()), -k), max(int(flat.max()), k)
    tables = _laplace_tables(sig, mn, mx)
    enc = RangeEncoder()
    for s, t in zip(flat, tables):
        enc.encode_symbol(int(s), t)
    est_bits = float(laplace_bits(y_hat, mean, sigma).sum())
    return _pack_chunk(mn, mx, enc.finish()), y_hat, est_bits


def _decode_plain_latent(payload: bytes, mean: torch.Tensor, sigma: torch.Tensor):
    mn, mx, body = _unpack_chunk(payload)
    sig = sigma[0].reshape(-1).detach().numpy()
    tables = _laplace_tables(sig, mn, mx)
    dec = RangeDecoder(body)
    sym = np.array([dec.decode_symbol(t) for t in tables], dtype=np.int64)
    sym_t = torch.from_numpy(sym).to(torch.float32).reshape(mean[0:1].shape)
    return sym_t + mean


def _encode_latent_quadtree(em: LatentEntropyModel, y: torch.Tensor,
                            latent_prior: torch.Tensor,
                            temporal_feat: torch.Tensor | None,
                            hyper_out: torch.Tensor):
    """Code a latent through the 4-step schedule; returns (payload, y_hat, est)."""
    schedule = QuadtreeSchedule(y.shape[-2], y.shape[-1])
    partial = torch.zeros_like(y)
    step_syms, step_sigmas = [], []
    est_bits = 0.0
    for step in range(4):
        mean, sigma = em.step_params(partial, schedule, step, hyper_out,
                                     latent_prior, temporal_feat)
        mask = schedule.mask(step, y.device)
        mu_m = mean[0][:, mask]
        sg_m = sigma[0][:, mask]
        sym = round_half_away(y[0][:, mask] - mu_m).clamp(-SYMBOL_LIMIT, SYMBOL_LIMIT)
        deq = sym + mu_m
        partial = partial.clone()
        partial[0][:, mask] = deq
        est_bits += float(laplace_bits(deq, mu_m, sg_m).sum())
        step_syms.append(sym.reshape(-1).to(torch.int64).numpy())
        step_sigmas.append(sg_m.reshape(-1).detach().numpy())
    all_syms = np.concatenate(step_syms)
    k = _laplace_range(np.concatenate(step_sigmas))
    mn, mx = min(int(all_syms.min()), -k), max(int(all_syms.max()), k)
    enc = RangeEncoder()
    for syms, sigs in zip(step_syms, step_sigmas):
        for s, t in zip(syms, _laplace_tables(sigs, mn, mx)):
            enc.encode_symbol(int(s), t)
    return _pack_chunk(mn, mx, enc.finish()), partial, est_bits


def _decode_latent_quadtree(em: LatentEntropyModel, payload: bytes, shape,
                            latent_prior: torch.Tensor,
                            temporal_feat: torch.Tensor | None,
                            hyper_out: torch.Tensor) -> torch.Tensor:
    mn, mx, body = _unpack_chunk(payload)
    _, c, h, w = shape
    schedule = QuadtreeSchedule(h, w)
    partial = latent_prior.new_zeros(shape)
    dec = RangeDecoder(body)
    for step in range(4):
        mean, sigma = em.step_params(partial, schedule, step, hyper_out,
                                     latent_prior, temporal_feat)
        mask = schedule.mask(step, partial.device)
        mu_m = mean[0][:, mask]
        sg_m = sigma[0][:, mask]
        tables = _laplace_tables(sg_m.reshape(-1).detach().numpy(), mn, mx)
        sym = np.array([dec.decode_symbol(t) for t in tables], dtype=np.int64)
        deq = torch.from_numpy(sym).to(torch.float32).reshape(mu_m.shape) + mu_m
        partial = partial.clone()
        partial[0][:, mask] = deq
    return partial


class FrameResult(NamedTuple):
    unit: BitstreamUnit
    recon: torch.Tensor  # cropped to original dims
    state: FrameState
    est_bits: dict  # per-chunk model-estimated bits


class DecodeResult(NamedTuple):
    recon: torch.Tensor
    feature: torch.Tensor
    state: FrameState


def encode_frame(model: CodecModel, x: torch.Tensor, state: FrameState | None,
                 lambda_index: int) -> FrameResult:
    """Encode one frame (intra when state is None, inter otherwise); x is a
    (1, 3, H, W) tensor in [0, 1]. Returns the coded unit plus the exact state
    a decoder will reach."""
    if x.dim() != 4 or x.shape[0] != 1:
        raise BitstreamError(f"expected (1, 3, H, W) input, got {tuple(x.shape)}")
    h0, w0 = x.shape[-2:]
    xp = _pad(x)
    with torch.no_grad():
        if state is None:
            y = model.intra.encode(xp)
            z = model.intra.hyper.encode(y)
            hyper_payload, z_hat, hz_est = _encode_hyper(z, model.intra.hyper_prior)
            mean, sigma = model.intra.latent_params(model.intra.hyper.decode(z_hat))
            latent_payload, y_hat, y_est = _encode_plain_latent(y, mean, sigma)
            recon, feature = model.intra.decode(y_hat)
            new_state = FrameState(ref_frame=recon, ref_feature=feature)
            unit = BitstreamUnit("intra", (w0, h0), lambda_index,
                                 ((CHUNK_INTRA_HYPER, hyper_payload),
                                  (CHUNK_INTRA_LATENT, latent_payload)))
            est = {"intra_hyper": hz_est, "intra_latent": y_est}
        else:
            flow_s, flow_d = model.flow(xp, state.ref_frame)
            m = model.motion_ae.encode(flow_s, flow_d)
            m_prior = state.prev_motion_latent
            if m_prior is None:
                m_prior = model._zero_latent(xp, model.motion_em.latent_channels)
            zm = model.motion_em.hyper.encode(m)
            mh_payload, zm_hat, mh_est = _encode_hyper(zm, model.motion_em.hyper_prior)
            m_hyper_out = model.motion_em.hyper.decode(zm_hat)
            ml_payload, m_hat, ml_est = _encode_latent_quadtree(
                model.motion_em, m, m_prior, None, m_hyper_out)
            fs_hat, _ = model.motion_ae.decode(m_hat)

            ctx, long_term = model.tcm(state.ref_feature, fs_hat, state.long_term)
            y = model.ctx_encoder(xp, ctx)
            y_prior = state.prev_ctx_latent
            if y_prior is None:
                y_prior = model._zero_latent(xp, model.ctx_em.latent_channels)
            zy = model.ctx_em.hyper.encode(y)
            ch_payload, zy_hat, ch_est = _encode_hyper(zy, model.ctx_em.hyper_prior)
            y_hyper_out = model.ctx_em.hyper.decode(zy_hat)
            temporal_feat = model.ctx_em.temporal_feature(ctx[2])
            cl_payload, y_hat, cl_est = _encode_latent_quadtree(
                model.ctx_em, y, y_prior, temporal_feat, y_hyper_out)
            recon, feature = model.ctx_decoder(y_hat, ctx)
            new_state = FrameState(
                ref_frame=recon, ref_feature=feature, long_term=long_term,
                prev_motion_latent=m_hat, prev_ctx_latent=y_hat,
                p_index=state.p_index + 1)
            unit = BitstreamUnit("inter", (w0, h0), lambda_index,
                                 ((CHUNK_MOTION_HYPER, mh_payload),
                                  (CHUNK_MOTION_LATENT, ml_payload),
                                  (CHUNK_CTX_HYPER, ch_payload),
                                  (CHUNK_CTX_LATENT, cl_payload)))
            est = {"motion_hyper": mh_est, "motion_latent": ml_est,
                   "ctx_hyper": ch_est, "ctx_latent": cl_est}
    return FrameResult(unit, recon[:, :, :h0, :w0], new_state, est)


def decode_frame(model: CodecModel, unit: BitstreamUnit,
                 state: FrameState | None) -> DecodeResult:
    """Decode one unit; state must match the encoder's GOP position."""
    w0, h0 = unit.dims
    hp = (h0 + 63) // 64 * 64
    wp = (w0 + 63) // 64 * 64
    chunks = dict(unit.chunks)
    with torch.no_grad():
        if unit.frame_type == "intra":
            ch = model.intra.hyper_prior.channels
            z_hat = _decode_hyper(chunks[CHUNK_INTRA_HYPER],
                                  model.intra.hyper_prior,
                                  (1, ch, hp // 64, wp // 64))
            mean, sigma = model.intra.latent_params(model.intra.hyper.decode(z_hat))
            y_hat = _decode_plain_latent(chunks[CHUNK_INTRA_LATENT], mean, sigma)
            recon, feature = model.intra.decode(y_hat)
            new_state = FrameState(ref_frame=recon, ref_feature=feature)
        else:
            if state is None:
                raise BitstreamError("malformed-stream: inter frame without state")
            cm = model.motion_em.latent_channels
            m_prior = state.prev_motion_latent
            if m_prior is None:
                m_prior = state.ref_frame.new_zeros(1, cm, hp // 16, wp // 16)
            zm_hat = _decode_hyper(chunks[CHUNK_MOTION_HYPER],
                                   model.motion_em.hyper_prior,
                                   (1, model.motion_em.hyper_prior.channels,
                                    hp // 64, wp // 64))
            m_hyper_out = model.motion_em.hyper.decode(zm_hat)
            m_hat = _decode_latent_quadtree(
                model.motion_em, chunks[CHUNK_MOTION_LATENT],
                (1, cm, hp // 16, wp // 16), m_prior, None, m_hyper_out)
            fs_hat, _ = model.motion_ae.decode(m_hat)

            ctx, long_term = model.tcm(state.ref_feature, fs_hat, state.long_term)
            cyl = model.ctx_em.latent_channels
            y_prior = state.prev_ctx_latent
            if y_prior is None:
                y_prior = state.ref_frame.new_zeros(1, cyl, hp // 16, wp // 16)
            zy_hat = _decode_hyper(chunks[CHUNK_CTX_HYPER],
                                   model.ctx_em.hyper_prior,
                                   (1, model.ctx_em.hyper_prior.channels,
                                    hp // 64, wp // 64))
            y_hyper_out = model.ctx_em.hyper.decode(zy_hat)
            temporal_feat = model.ctx_em.temporal_feature(ctx[2])
            y_hat = _decode_latent_quadtree(
                model.ctx_em, chunks[CHUNK_CTX_LATENT],
                (1, cyl, hp // 16, wp // 16), y_prior, temporal_feat, y_hyper_out)
            recon, feature = model.ctx_decoder(y_hat, ctx)
            new_state = FrameState(
                ref_frame=recon, ref_feature=feature, long_term=long_term,
                prev_motion_latent=m_hat, prev_ctx_latent=y_hat,
                p_index=state.p_index + 1)
    return DecodeResult(recon[:, :, :h0, :w0], feature, new_state)


def encode_sequence(model: CodecModel, frames, lambda_index: int,
                    intra_period: int = 32) -> tuple[list[BitstreamUnit], list[FrameResult]]:
    """Encode a (T, H, W, 3) array or list of such frames as one GOP-structured
    stream; state resets at every intra."""
    results = []
    units = []
    state = None
    for t, fr in enumerate(frames):
        x = torch.from_numpy(np.ascontiguousarray(fr)).permute(2, 0, 1)[None].float()
        if t % intra_period == 0:
            state = None
        res = encode_frame(model, x, state, lambda_index)
        state = res.state
        results.append(res)
        units.append(res.unit)
    return units, results


def decode_sequence(model: CodecModel, units: list[BitstreamUnit]) -> list[DecodeResult]:
    outs = []
    state = None
    for unit in units:
        if unit.frame_type == "intra":
            state = None
        res = decode_frame(model, unit, state)
        state = res.state
        outs.append(res)
    return outs


def write_bitstream(units: list[BitstreamUnit], path) -> int:
    data = b"".join(u.to_bytes() for u in units)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_bitstream(path) -> list[BitstreamUnit]:
    with open(path, "rb") as fh:
        return parse_units(fh.read())
