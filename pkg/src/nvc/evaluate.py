"""Sequence evaluation: real encode/decode per lambda, RD tables and plots,
BD-rate against an anchor, channel bitrate reports, scaling sweeps."""

from __future__ import annotations

import csv
import json
import warnings
from pathlib import Path

import numpy as np
import torch

from . import bitstream as bs
from .config import ModelConfig, enumerate_sweep
from .dataio import Frame, VideoSequence, load_manifest, load_sequence
from .metrics import (ChannelBitrateReport, MetricsError, RDCurve, RDPoint,
                      average_curve, bd_rate, channel_bitrate_ratio, psnr_rgb,
                      psnr_yuv_compound, PSNR_CAP)
from .model import CodecModel, build_model
from .training import load_checkpoint


class EvalError(RuntimeError):
    pass


class MissingCheckpointError(EvalError):
    pass


def _decoded_to_frame(recon: torch.Tensor) -> Frame:
    arr = recon[0].permute(1, 2, 0).clamp(0, 1).numpy().astype(np.float32)
    return Frame(pixels=arr)


def eval_sequence(model: CodecModel, seq: VideoSequence, lambda_index: int,
                  intra_period: int = 32, frames: int = 96,
                  stream_path=None) -> dict:
    """Encode, then decode from the bytes, and score the decoded frames."""
    model.eval()
    n = min(frames, len(seq.frames))
    arr = np.stack([f.pixels for f in seq.frames[:n]])
    units, _ = bs.encode_sequence(model, arr, lambda_index, intra_period)
    data = b"".join(u.to_bytes() for u in units)
    if stream_path is not None:
        Path(stream_path).write_bytes(data)
    decoded = bs.decode_sequence(model, bs.parse_units(data))
    p_rgb, p_yuv = [], []
    for t in range(n):
        rec = _decoded_to_frame(decoded[t].recon)
        p_rgb.append(psnr_rgb(seq.frames[t], rec))
        p_yuv.append(psnr_yuv_compound(seq.frames[t], rec))
    h, w = seq.dims
    return {
        "sequence": seq.name,
        "lambda_index": lambda_index,
        "bpp": 8.0 * len(data) / (w * h * n),
        "psnr_rgb": float(np.mean(p_rgb)),
        "psnr_yuv": float(np.mean(p_yuv)),
        "frames": n,
        "bytes": len(data),
    }


def write_rd_csv(rows: list[dict], path) -> None:
    cols = ["sequence", "lambda_index", "bpp", "psnr_rgb", "psnr_yuv"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] for c in cols])


def read_rd_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = []
        for r in csv.DictReader(fh):
            rows.append({"sequence": r["sequence"],
                         "lambda_index": int(r["lambda_index"]),
                         "bpp": float(r["bpp"]),
                         "psnr_rgb": float(r["psnr_rgb"]),
                         "psnr_yuv": float(r["psnr_yuv"])})
        return rows


def curves_from_rows(rows: list[dict], quality: str = "psnr_rgb") -> dict[str, RDCurve]:
    by_seq = {}
    for r in rows:
        by_seq.setdefault(r["sequence"], []).append(r)
    curves = {}
    for name, rs in by_seq.items():
        pts = [RDPoint(r["bpp"], r[quality], r["lambda_index"],
                       lossless=r[quality] >= PSNR_CAP) for r in rs]
        curves[name] = RDCurve.from_points(pts, label=name)
    return curves


def analyze_channels(model: CodecModel, seq: VideoSequence,
                     intra_period: int = 32, frames: int = 96) -> dict:
    """Estimated per-channel latent bits over a rollout (deterministic
    rounding); returns contextual and motion reports."""
    model.eval()
    n = min(frames, len(seq.frames))
    ctx_bits, mot_bits = [], []
    state = None
    with torch.no_grad():
        for t in range(n):
            x = torch.from_numpy(seq.frames[t].pixels).permute(2, 0, 1)[None]
            x = bs._pad(x.float())
            if t % intra_period == 0:
                state = model.forward_intra(x, mode="infer").state
                continue
            out = model.forward_inter(x, state, mode="infer")
            ctx_bits.append(out.ctx_channel_bits.numpy())
            mot_bits.append(out.motion_channel_bits.numpy())
            state = out.state
    if not ctx_bits:
        raise EvalError("sequence too short for channel analysis")
    return {
        "contextual": channel_bitrate_ratio(np.stack(ctx_bits), "contextual"),
        "motion": channel_bitrate_ratio(np.stack(mot_bits), "motion"),
    }


def _plot_curves(curves: dict[str, RDCurve], path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4.5))
    for name, c in sorted(curves.items()):
        ax.plot([p.bpp for p in c.points], [p.quality for p in c.points],
                marker="o", label=name)
    ax.set_xlabel("bpp")
    ax.set_ylabel("PSNR (dB)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_channel_report(report: ChannelBitrateReport, path, n: int = 100) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pairs = report.top(n)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(range(len(pairs)), [r for _, r in pairs], width=0.9)
    ax.set_xlabel(f"{report.kind} channel (sorted)")
    ax.set_ylabel("bitrate ratio")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def run_eval(checkpoints: dict, dataset_root, out_dir, *,
             intra_period: int = 32, frames: int = 96,
             anchor_csv=None, channel_report: bool = True) -> dict:
    """Evaluate one checkpoint per lambda index over every sequence in the
    dataset manifest. Writes rd_points.csv, results.json, RD plots, channel
    reports, and a BD-rate table when an anchor CSV is given."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = load_manifest(dataset_root)
    models = {}
    for li, path in sorted(checkpoints.items()):
        if not Path(path).exists():
            raise MissingCheckpointError(f"missing-checkpoint: {path}")
        model, _, _ = load_checkpoint(path)
        model.eval()
        models[int(li)] = model

    rows = []
    streams_dir = out / "streams"
    streams_dir.mkdir(exist_ok=True)
    for entry in entries:
        seq = load_sequence(dataset_root, entry)
        for li, model in models.items():
            stream = streams_dir / f"{seq.name}_l{li}.nvc"
            row = eval_sequence(model, seq, li, intra_period, frames,
                                stream_path=stream)
            # single source of truth: rate always re-derived from the file
            row["bpp"] = 8.0 * stream.stat().st_size / (
                seq.dims[1] * seq.dims[0] * row["frames"])
            rows.append(row)

    write_rd_csv(rows, out / "rd_points.csv")
    result = {"rows": rows, "average": []}
    curves = {}
    try:
        curves = curves_from_rows(rows)
        avg = average_curve(list(curves.values()), label="average")
    except MetricsError as exc:
        # tied rates across lambdas (undertrained models) leave no valid curve
        warnings.warn(f"RD curve construction failed: {exc}", RuntimeWarning)
        avg = None
    if avg is not None:
        _plot_curves({**curves, "average": avg}, out / "rd_curves.png")
        result["average"] = [{"lambda_index": p.lambda_index, "bpp": p.bpp,
                              "psnr_rgb": p.quality} for p in avg.points]

    if anchor_csv is not None and avg is not None:
        anchor_rows = read_rd_csv(anchor_csv)
        anchor_avg = average_curve(list(curves_from_rows(anchor_rows).values()),
                                   label="anchor")
        result["bd_rate_vs_anchor"] = bd_rate(anchor_avg, avg)
        with open(out / "bdrate.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["anchor", "test", "bd_rate_percent"])
            w.writerow([str(anchor_csv), "average", result["bd_rate_vs_anchor"]])

    if channel_report and entries:
        seq = load_sequence(dataset_root, entries[0])
        li = max(models)
        reports = analyze_channels(models[li], seq, intra_period, frames)
        result["channel_reports"] = {
            kind: {"ratios": rep.ratios[:16], "channels": rep.channels[:16]}
            for kind, rep in reports.items()}
        for kind, rep in reports.items():
            _plot_channel_report(rep, out / f"channels_{kind}.png")

    (out / "results.json").write_text(json.dumps(result, indent=2) + "\n")
    return result


def run_scaling_sweep(base: ModelConfig, axis: str, scales, data, val_clips,
                      lam: int, *, stages, out_path=None, seeds=(0,),
                      steps_per_epoch: int = 2, steps_scale: float = 1.0,
                      batch_size: int = 2) -> dict:
    """Train each scaled config briefly and record held-out joint RD loss.
    `data` is a sample(clip_len, batch) callable, `val_clips` a fixed
    (B, T, 3, H, W) tensor. Returns the sweep manifest (JSON-serializable)."""
    from .training import evaluate_l_all, run_schedule

    configs = enumerate_sweep(base, axis, scales)
    manifest = {"axis": axis, "scales": list(scales), "lambda": lam,
                "runs": []}
    for scale, cfg in zip(scales, configs):
        for seed in seeds:
            model = build_model(cfg, seed=seed)
            run_schedule(model, stages, data, lam, seed=seed,
                         steps_per_epoch=steps_per_epoch,
                         steps_scale=steps_scale, batch_size=batch_size)
            val = evaluate_l_all(model, val_clips, lam)
            manifest["runs"].append({
                "scale": scale, "seed": seed, "val_loss": val,
                "config": cfg.to_dict()})
    if out_path is not None:
        Path(out_path).write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
