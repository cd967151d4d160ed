"""Loss arithmetic, the staged schedule, and rollout training loops.

Single-frame stages roll a clip forward through decoded state but detach it
between frames, so each P-frame trains against a realistic (degraded)
reference without cross-frame gradients. Cascaded stages keep the graph
through the whole rollout, optionally recomputing activations frame by frame.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.utils.checkpoint

from .config import ModelConfig
from .dataio import sample_training_clips
from .layers import warp
from .model import CodecModel, FrameState, build_model

LAMBDAS = (85, 170, 380, 840)
FRAME_WEIGHTS = (0.5, 1.2, 0.5, 0.9)
LOSS_KINDS = ("meD", "meRD", "recD", "recRD", "all", "cascaded_all")
SCOPES = ("inter", "recon", "all")


class NanLossError(RuntimeError):
    """Raised when a stage hits a non-finite loss; carries where it happened."""

    def __init__(self, stage_index: int, step: int):
        super().__init__(f"nan-loss at stage {stage_index}, step {step}")
        self.stage_index = stage_index
        self.step = step


def frame_weight(p_index: int) -> float:
    """Periodic rate-allocation weight for the p_index-th P-frame (1-based)."""
    if p_index < 1:
        raise ValueError(f"p_index must be >= 1, got {p_index}")
    return FRAME_WEIGHTS[(p_index - 1) % 4]


def lambda_value(lambda_index: int) -> int:
    if not 0 <= lambda_index < len(LAMBDAS):
        raise ValueError(f"lambda_index out of range: {lambda_index}")
    return LAMBDAS[lambda_index]


@dataclass
class LossBreakdown:
    """Per-frame distortion and per-pixel rate components."""

    d_m: object = 0.0  # warped-frame MSE
    d_y: object = 0.0  # reconstruction MSE
    r_m: object = 0.0  # motion latent + hyper, bits per pixel
    r_y: object = 0.0  # contextual latent + hyper, bits per pixel
    total: object = 0.0

    def __post_init__(self):
        for name in ("d_m", "d_y", "r_m", "r_y"):
            v = getattr(self, name)
            v = float(v.detach()) if torch.is_tensor(v) else float(v)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"breakdown component {name} invalid: {v}")


def compute_loss(kind: str, w_t, lam, breakdown):
    """Pure loss arithmetic. For cascaded_all, `w_t` and `breakdown` are
    per-frame sequences and the result is the mean of per-frame totals."""
    if kind == "cascaded_all":
        if not isinstance(breakdown, (list, tuple)) or len(breakdown) == 0:
            raise ValueError("cascaded_all expects a non-empty breakdown sequence")
        terms = [compute_loss("all", w, lam, bd) for w, bd in zip(w_t, breakdown)]
        return sum(terms) / len(terms)
    if lam not in LAMBDAS:
        raise ValueError(f"lambda {lam} not in {LAMBDAS}")
    if kind == "meD":
        return w_t * lam * breakdown.d_m
    if kind == "meRD":
        return w_t * lam * breakdown.d_m + breakdown.r_m
    if kind == "recD":
        return w_t * lam * breakdown.d_y
    if kind == "recRD":
        return w_t * lam * breakdown.d_y + breakdown.r_y
    if kind == "all":
        return w_t * lam * breakdown.d_y + breakdown.r_m + breakdown.r_y
    raise ValueError(f"invalid-kind: {kind}")


@dataclass(frozen=True)
class TrainingStage:
    frames: int
    scope: str
    loss_kind: str
    learning_rate: float
    epochs: int

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"invalid-kind: {self.loss_kind}")
        if self.scope not in SCOPES:
            raise ValueError(f"invalid scope: {self.scope}")
        if self.loss_kind in ("meD", "meRD") and self.scope != "inter":
            raise ValueError(f"{self.loss_kind} requires scope=inter")
        if self.loss_kind in ("recD", "recRD") and self.scope != "recon":
            raise ValueError(f"{self.loss_kind} requires scope=recon")
        if self.loss_kind == "cascaded_all" and self.frames < 2:
            raise ValueError("cascaded_all requires frames >= 2")
        if self.frames < 2:
            raise ValueError("a stage needs at least one P-frame (frames >= 2)")
        if self.learning_rate <= 0 or self.epochs < 1:
            raise ValueError("learning_rate must be > 0 and epochs >= 1")


# The staged curriculum: motion first, then reconstruction, then joint, then
# multi-frame cascaded fine-tuning down the LR ladder.
DEFAULT_SCHEDULE = (
    TrainingStage(2, "inter", "meD", 1e-4, 2),
    TrainingStage(2, "inter", "meRD", 1e-4, 6),
    TrainingStage(2, "recon", "recD", 5e-5, 6),
    TrainingStage(3, "inter", "meRD", 1e-4, 2),
    TrainingStage(3, "recon", "recD", 5e-5, 3),
    TrainingStage(4, "recon", "recD", 5e-5, 3),
    TrainingStage(6, "recon", "recD", 5e-5, 3),
    TrainingStage(2, "recon", "recRD", 5e-5, 6),
    TrainingStage(3, "recon", "recRD", 5e-5, 3),
    TrainingStage(4, "recon", "recRD", 5e-5, 3),
    TrainingStage(6, "recon", "recRD", 5e-5, 3),
    TrainingStage(2, "all", "all", 5e-5, 15),
    TrainingStage(3, "all", "all", 5e-5, 15),
    TrainingStage(4, "all", "all", 5e-5, 15),
    TrainingStage(6, "all", "all", 5e-5, 10),
    TrainingStage(6, "all", "all", 1e-5, 10),
    TrainingStage(6, "all", "all", 5e-6, 5),
    TrainingStage(6, "all", "cascaded_all", 1e-5, 2),
    TrainingStage(6, "all", "cascaded_all", 1e-6, 2),
    TrainingStage(6, "all", "cascaded_all", 5e-7, 2),
    TrainingStage(6, "all", "cascaded_all", 1e-7, 4),
)


def save_schedule(stages: Sequence[TrainingStage], path) -> None:
    rows = [{"frames": s.frames, "scope": s.scope, "loss": s.loss_kind,
             "lr": s.learning_rate, "epochs": s.epochs} for s in stages]
    Path(path).write_text(json.dumps(rows, indent=2) + "\n")


def load_schedule(path) -> tuple[TrainingStage, ...]:
    rows = json.loads(Path(path).read_text())
    return tuple(TrainingStage(r["frames"], r["scope"], r["loss"],
                               r["lr"], r["epochs"]) for r in rows)


def save_checkpoint(path, model: CodecModel, stage_cursor: int = 0,
                    metadata: dict | None = None) -> None:
    torch.save({"config": model.config.to_dict(),
                "state_dict": model.state_dict(),
                "stage_cursor": stage_cursor,
                "metadata": metadata or {}}, path)


def load_checkpoint(path) -> tuple[CodecModel, int, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    model = build_model(ModelConfig.from_dict(blob["config"]))
    model.load_state_dict(blob["state_dict"])
    return model, blob.get("stage_cursor", 0), blob.get("metadata", {})


def parameter_checksums(model: CodecModel) -> dict[str, str]:
    """Stable digest per parameter group; used to prove freezing is airtight."""
    out = {}
    for group in model.PARAM_GROUPS:
        h = hashlib.sha256()
        for mod in model.group_modules(group):
            for p in mod.parameters():
                h.update(p.detach().numpy().tobytes())
        out[group] = h.hexdigest()
    return out


def set_trainable(model: CodecModel, scope: str, include_intra: bool) -> list:
    """Freeze everything outside `scope` (plus the intra codec unless asked
    for); returns the list of trainable parameters."""
    for p in model.parameters():
        p.requires_grad_(False)
    groups = list(model.SCOPES[scope])
    if include_intra:
        groups.append("intra_codec")
    params = []
    for g in groups:
        for mod in model.group_modules(g):
            for p in mod.parameters():
                p.requires_grad_(True)
                params.append(p)
    return params


def clip_source(dataset_root, patch: int, seed: int) -> Callable:
    """Deterministic batch sampler over a dataset directory. Returns
    sample(clip_len, batch) -> float32 (B, clip_len, patch, patch, 3)."""
    gens = {}

    def sample(clip_len: int, batch: int) -> np.ndarray:
        if clip_len not in gens:
            gens[clip_len] = sample_training_clips(
                dataset_root, clip_len, patch, seed + 1000 * clip_len)
        g = gens[clip_len]
        return np.stack([next(g) for _ in range(batch)])

    return sample


def array_clip_source(clips: np.ndarray) -> Callable:
    """Cycle through a fixed (N, T, H, W, 3) array; for small fixtures."""
    idx = {"i": 0}

    def sample(clip_len: int, batch: int) -> np.ndarray:
        if clip_len > clips.shape[1]:
            raise ValueError(f"fixture clips are {clips.shape[1]} frames, "
                             f"need {clip_len}")
        out = []
        for _ in range(batch):
            out.append(clips[idx["i"] % len(clips), :clip_len])
            idx["i"] += 1
        return np.stack(out)

    return sample


def _to_tensor(batch: np.ndarray) -> torch.Tensor:
    # (B, T, H, W, 3) -> (B, T, 3, H, W)
    return torch.from_numpy(np.ascontiguousarray(batch)).permute(0, 1, 4, 2, 3).float()


def _bpp(bits, x: torch.Tensor):
    return bits / float(x.shape[0] * x.shape[-2] * x.shape[-1])


def _mse(a: torch.Tensor, b: torch.Tensor):
    return torch.mean((a - b) ** 2)


def _f(x) -> float:
    return float(x.detach()) if torch.is_tensor(x) else float(x)


def single_frame_losses(model: CodecModel, clip: torch.Tensor, lam: int,
                        kind: str, mode: str = "train"):
    """Roll a (B, T, 3, H, W) clip with detached state; mean per-P-frame loss
    of the given kind and the averaged breakdown for logging."""
    with torch.no_grad():
        intra = model.forward_intra(clip[:, 0], mode=mode)
    state = intra.state.detach()
    recon_grad = kind not in ("meD", "meRD")
    losses, bds = [], []
    for t in range(1, clip.shape[1]):
        x = clip[:, t]
        out = model.forward_inter(x, state, mode=mode, recon_grad=recon_grad)
        bd = LossBreakdown(
            d_m=_mse(x, out.warped), d_y=_mse(x, out.recon),
            r_m=_bpp(out.motion_latent_bits + out.motion_hyper_bits, x),
            r_y=_bpp(out.ctx_latent_bits + out.ctx_hyper_bits, x))
        losses.append(compute_loss(kind, frame_weight(t), lam, bd))
        bds.append(bd)
        state = out.state.detach()
    loss = sum(losses) / len(losses)
    return loss, bds


def _inter_frame_fn(model: CodecModel):
    """Tensor-only inter step so activation recomputation can wrap it."""

    def fn(x, ref_frame, ref_feature, h, c, m_prior, y_prior):
        state = FrameState(ref_frame=ref_frame, ref_feature=ref_feature,
                           long_term=(h, c), prev_motion_latent=m_prior,
                           prev_ctx_latent=y_prior)
        out = model.forward_inter(x, state, mode="train")
        s = out.state
        return (out.recon, out.warped, out.motion_latent_bits,
                out.motion_hyper_bits, out.ctx_latent_bits, out.ctx_hyper_bits,
                s.ref_feature, s.long_term[0], s.long_term[1],
                s.prev_motion_latent, s.prev_ctx_latent)

    return fn


def cascaded_rollout(model: CodecModel, clip: torch.Tensor, lam: int,
                     recompute: bool = False):
    """Full-graph rollout: frame t is coded against frame t-1's decoded state.
    Returns (per-frame weights, per-frame LossBreakdown) including the intra
    frame (weight 1). With recompute=True intermediate activations are rebuilt
    during backprop instead of stored."""
    if clip.shape[1] < 2:
        raise ValueError("cascaded rollout needs at least 2 frames")
    x0 = clip[:, 0]
    intra = model.forward_intra(x0, mode="train")
    bd0 = LossBreakdown(d_m=0.0, d_y=_mse(x0, intra.recon), r_m=0.0,
                        r_y=_bpp(intra.latent_bits + intra.hyper_bits, x0))
    weights = [1.0]
    bds = [bd0]

    # long-term state and latent priors normalized to concrete zero tensors so
    # every frame step is a pure tensor->tensor call
    h = intra.feature.new_zeros(intra.feature.shape)
    c = intra.feature.new_zeros(intra.feature.shape)
    m_prior = model._zero_latent(x0, model.motion_em.latent_channels)
    y_prior = model._zero_latent(x0, model.ctx_em.latent_channels)

    fn = _inter_frame_fn(model)
    ref_frame, ref_feature = intra.recon, intra.feature
    for t in range(1, clip.shape[1]):
        args = (clip[:, t], ref_frame, ref_feature, h, c, m_prior, y_prior)
        if recompute:
            outs = torch.utils.checkpoint.checkpoint(
                fn, *args, use_reentrant=False, preserve_rng_state=True)
        else:
            outs = fn(*args)
        (recon, warped, mlb, mhb, clb, chb,
         ref_feature, h, c, m_prior, y_prior) = outs
        x = clip[:, t]
        bds.append(LossBreakdown(
            d_m=_mse(x, warped), d_y=_mse(x, recon),
            r_m=_bpp(mlb + mhb, x), r_y=_bpp(clb + chb, x)))
        weights.append(frame_weight(t))
        ref_frame = recon
    return weights, bds


def desk_scale(stages: Sequence[TrainingStage], steps_per_epoch: int,
               steps_scale: float = 1.0) -> list[tuple[TrainingStage, int]]:
    """Map the schedule's epoch counts to concrete step counts."""
    out = []
    for s in stages:
        n = max(1, round(s.epochs * steps_per_epoch * steps_scale))
        out.append((s, n))
    return out


def evaluate_l_all(model: CodecModel, clips: torch.Tensor, lam: int) -> float:
    """Mean single-frame joint rate-distortion loss over a fixed
    (B, T, 3, H, W) batch; the training smoke benchmark compares this
    before/after."""
    was_training = model.training
    model.eval()
    with torch.no_grad():
        loss, _ = single_frame_losses(model, clips, lam, "all", mode="infer")
    if was_training:
        model.train()
    return float(loss)


def run_schedule(model: CodecModel, stages: Sequence[TrainingStage],
                 data: Callable, lam: int, *, seed: int = 0,
                 steps_per_epoch: int = 4, steps_scale: float = 1.0,
                 batch_size: int = 4, recompute: bool = False,
                 max_grad_norm: float = 1.0, log_path=None,
                 start_stage: int = 0, checkpoint_path=None):
    """Execute the staged schedule in order; returns (model, log rows).

    `data` is a sample(clip_len, batch) callable. The intra codec stays frozen
    except during cascaded stages. A non-finite loss aborts with NanLossError
    naming the stage and step.
    """
    if lam not in LAMBDAS:
        raise ValueError(f"lambda {lam} not in {LAMBDAS}")
    torch.manual_seed(seed)
    rows = []
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["stage", "step", "loss", "d_m", "d_y", "r_m", "r_y"])
    try:
        plan = desk_scale(stages, steps_per_epoch, steps_scale)
        for si, (stage, n_steps) in enumerate(plan):
            if si < start_stage:
                continue
            cascaded = stage.loss_kind == "cascaded_all"
            params = set_trainable(model, stage.scope, include_intra=cascaded)
            model.train()
            opt = torch.optim.AdamW(params, lr=stage.learning_rate)
            for step in range(n_steps):
                batch = _to_tensor(data(stage.frames, batch_size))
                try:
                    if cascaded:
                        weights, bds = cascaded_rollout(model, batch, lam,
                                                        recompute=recompute)
                        loss = compute_loss("cascaded_all", weights, lam, bds)
                        log_bds = bds
                    else:
                        loss, log_bds = single_frame_losses(
                            model, batch, lam, stage.loss_kind)
                except ValueError as exc:
                    # LossBreakdown rejects non-finite components before the
                    # loss is even assembled; surface it as the same abort
                    raise NanLossError(si, step) from exc
                if not torch.isfinite(loss):
                    raise NanLossError(si, step)
                opt.zero_grad()
                loss.backward()
                if max_grad_norm is not None:
                    torch.nn.utils.clip_grad_norm_(params, max_grad_norm)
                opt.step()
                row = {"stage": si, "step": step, "loss": _f(loss),
                       "d_m": sum(_f(b.d_m) for b in log_bds) / len(log_bds),
                       "d_y": sum(_f(b.d_y) for b in log_bds) / len(log_bds),
                       "r_m": sum(_f(b.r_m) for b in log_bds) / len(log_bds),
                       "r_y": sum(_f(b.r_y) for b in log_bds) / len(log_bds)}
                rows.append(row)
                if writer is not None:
                    writer.writerow([row["stage"], row["step"], row["loss"],
                                     row["d_m"], row["d_y"], row["r_m"], row["r_y"]])
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, model, stage_cursor=si + 1,
                                metadata={"lambda": lam})
    finally:
        if fh is not None:
            fh.close()
    for p in model.parameters():
        p.requires_grad_(True)
    model.eval()
    return model, rows


def pretrain_flow(model: CodecModel, data: Callable, *, steps: int = 200,
                  lr: float = 1e-4, batch_size: int = 4, seed: int = 0,
                  max_shift: float = 3.0):
    """Warm up the flow net with a pure warp loss. Half of each batch is a
    synthetic constant-shift pair (known displacement, exactly attainable),
    the rest are consecutive frames from the sampler."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        p.requires_grad_(False)
    params = []
    for p in model.flow.parameters():
        p.requires_grad_(True)
        params.append(p)
    opt = torch.optim.AdamW(params, lr=lr)
    losses = []
    for step in range(steps):
        clip = _to_tensor(data(2, batch_size))
        ref, cur = clip[:, 0], clip[:, 1]
        n_syn = batch_size // 2
        if n_syn:
            shift = torch.from_numpy(
                rng.uniform(-max_shift, max_shift, (n_syn, 2))).float()
            flow = shift[:, :, None, None].expand(n_syn, 2, *ref.shape[-2:])
            cur = cur.clone()
            cur[:n_syn] = warp(ref[:n_syn], flow)
        flow_s, flow_d = model.flow(cur, ref)
        warped = model.flow.warp_frame(ref, flow_s, flow_d)
        loss = _mse(cur, warped)
        if not torch.isfinite(loss):
            raise NanLossError(-1, step)
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, 1.0)
        opt.step()
        losses.append(_f(loss))
    for p in model.parameters():
        p.requires_grad_(True)
    return losses


def pretrain_intra(model: CodecModel, data: Callable, lam: int, *,
                   steps: int = 300, lr: float = 1e-4, batch_size: int = 4,
                   seed: int = 0):
    """Rate-distortion pretraining of the intra codec alone."""
    if lam not in LAMBDAS:
        raise ValueError(f"lambda {lam} not in {LAMBDAS}")
    torch.manual_seed(seed)
    for p in model.parameters():
        p.requires_grad_(False)
    params = []
    for p in model.intra.parameters():
        p.requires_grad_(True)
        params.append(p)
    opt = torch.optim.AdamW(params, lr=lr)
    losses = []
    for step in range(steps):
        x = _to_tensor(data(1, batch_size))[:, 0]
        recon, _, latent_bits, hyper_bits = model.intra.forward_rate(x, "train")
        loss = lam * _mse(x, recon) + _bpp(latent_bits + hyper_bits, x)
        if not torch.isfinite(loss):
            raise NanLossError(-1, step)
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, 1.0)
        opt.step()
        losses.append(_f(loss))
    for p in model.parameters():
        p.requires_grad_(True)
    return losses
