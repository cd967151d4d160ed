"""Command-line entry points.

Verbs: train, encode, decode, eval, sweep, analyze-channels, bdrate,
config (validate | sweep), toydata.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import bitstream as bs
from .config import ModelConfig, PRESETS, enumerate_sweep
from .dataio import (Frame, VideoSequence, read_png_sequence, read_yuv420,
                     write_png_sequence)
from .evaluate import (analyze_channels, curves_from_rows, read_rd_csv,
                       run_eval, run_scaling_sweep)
from .metrics import average_curve, bd_rate
from .model import build_model, count_parameters
from .toydata import make_toy_dataset, toy_clip
from .training import (DEFAULT_SCHEDULE, LAMBDAS, clip_source, load_checkpoint,
                       load_schedule, pretrain_flow, pretrain_intra,
                       run_schedule, save_checkpoint)


def _load_config(args) -> ModelConfig:
    if getattr(args, "config", None):
        return ModelConfig.from_json(Path(args.config).read_text()).validate()
    preset = getattr(args, "preset", None) or "tiny"
    if preset not in PRESETS:
        raise SystemExit(f"unknown preset {preset!r}; have {sorted(PRESETS)}")
    return PRESETS[preset]()


def _load_model(args):
    model, cursor, meta = load_checkpoint(args.model)
    if getattr(args, "config", None):
        want = ModelConfig.from_json(Path(args.config).read_text())
        if want != model.config:
            raise SystemExit("config file does not match checkpoint config")
    model.eval()
    return model, meta


def _read_input_sequence(args) -> VideoSequence:
    path = Path(args.input)
    if path.suffix == ".yuv":
        if args.width is None or args.height is None:
            raise SystemExit("raw .yuv input needs --width and --height")
        available = path.stat().st_size // (args.width * args.height * 3 // 2)
        n = min(args.frames, available) if args.frames else available
        return read_yuv420(path, args.width, args.height, n_frames=n)
    return read_png_sequence(path)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    lam = LAMBDAS[args.lambda_index]
    model = build_model(cfg, seed=args.seed)
    data = clip_source(args.dataset, args.patch, args.seed)
    if args.flow_steps:
        pretrain_flow(model, data, steps=args.flow_steps,
                      batch_size=args.batch_size, seed=args.seed)
    if args.intra_steps:
        pretrain_intra(model, data, lam, steps=args.intra_steps,
                       batch_size=args.batch_size, seed=args.seed)
    stages = load_schedule(args.schedule) if args.schedule else DEFAULT_SCHEDULE
    run_schedule(model, stages, data, lam, seed=args.seed,
                 steps_per_epoch=args.steps_per_epoch,
                 steps_scale=args.steps_scale, batch_size=args.batch_size,
                 recompute=args.recompute, log_path=args.log,
                 checkpoint_path=args.out)
    save_checkpoint(args.out, model, stage_cursor=len(stages),
                    metadata={"lambda": lam, "lambda_index": args.lambda_index})
    report = count_parameters(model)
    print(f"trained {args.out} (lambda {lam}, {report.total} parameters)")
    return 0


def cmd_encode(args) -> int:
    model, _ = _load_model(args)
    seq = _read_input_sequence(args)
    n = min(args.frames, len(seq.frames)) if args.frames else len(seq.frames)
    arr = np.stack([f.pixels for f in seq.frames[:n]])
    units, _ = bs.encode_sequence(model, arr, args.lambda_index,
                                  args.intra_period)
    size = bs.write_bitstream(units, args.output)
    h, w = seq.dims
    print(f"{args.output}: {n} frames, {size} bytes, "
          f"{8.0 * size / (w * h * n):.4f} bpp")
    return 0


def cmd_decode(args) -> int:
    model, _ = _load_model(args)
    units = bs.read_bitstream(args.input)
    decoded = bs.decode_sequence(model, units)
    frames = [Frame(d.recon[0].permute(1, 2, 0).clamp(0, 1).numpy())
              for d in decoded]
    Path(args.output).mkdir(parents=True, exist_ok=True)
    write_png_sequence(frames, args.output)
    print(f"decoded {len(frames)} frames to {args.output}")
    return 0


def cmd_eval(args) -> int:
    checkpoints = {}
    for pair in args.checkpoint:
        li, _, path = pair.partition("=")
        if not path:
            raise SystemExit(f"--checkpoint expects INDEX=PATH, got {pair!r}")
        checkpoints[int(li)] = path
    result = run_eval(checkpoints, args.dataset, args.out,
                      intra_period=args.intra_period, frames=args.frames,
                      anchor_csv=args.anchor)
    for p in result["average"]:
        print(f"lambda[{p['lambda_index']}]  {p['bpp']:.4f} bpp  "
              f"{p['psnr_rgb']:.2f} dB")
    if "bd_rate_vs_anchor" in result:
        print(f"BD-rate vs anchor: {result['bd_rate_vs_anchor']:+.2f}%")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    scales = [float(s) for s in args.scales.split(",")]
    lam = LAMBDAS[args.lambda_index]
    data = clip_source(args.dataset, args.patch, args.seed)
    val = toy_clip(args.patch, args.patch, 4, seed=9999)
    val_clips = torch.from_numpy(val).permute(0, 3, 1, 2).float()[None]
    stages = load_schedule(args.schedule) if args.schedule else DEFAULT_SCHEDULE
    manifest = run_scaling_sweep(
        cfg, args.axis, scales, data, val_clips, lam, stages=stages,
        out_path=args.out, seeds=tuple(range(args.seeds)),
        steps_per_epoch=args.steps_per_epoch, steps_scale=args.steps_scale,
        batch_size=args.batch_size)
    for run in manifest["runs"]:
        print(f"scale {run['scale']:g} seed {run['seed']}: "
              f"val loss {run['val_loss']:.4f}")
    return 0


def cmd_analyze_channels(args) -> int:
    model, _ = _load_model(args)
    seq = _read_input_sequence(args)
    reports = analyze_channels(model, seq, args.intra_period, args.frames)
    for kind, rep in reports.items():
        head = ", ".join(f"ch{c}={r:.3f}" for c, r in rep.top(8))
        print(f"{kind}: {head}")
    if args.out:
        payload = {kind: {"ratios": list(rep.ratios),
                          "channels": list(rep.channels)}
                   for kind, rep in reports.items()}
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    return 0


def cmd_bdrate(args) -> int:
    anchor = average_curve(list(curves_from_rows(
        read_rd_csv(args.anchor), args.quality).values()), "anchor")
    test = average_curve(list(curves_from_rows(
        read_rd_csv(args.test), args.quality).values()), "test")
    print(f"{bd_rate(anchor, test):+.4f}%")
    return 0


def cmd_config(args) -> int:
    if args.action == "validate":
        cfg = ModelConfig.from_json(args.path)
        cfg.validate()
        model = build_model(cfg)
        report = count_parameters(model)
        print(f"valid: {report.total} parameters")
        for name, count in sorted(report.per_module.items(),
                                  key=lambda kv: -kv[1]):
            print(f"  {name:20s} {count:>12,d}  {report.ratio(name):6.2%}")
        return 0
    # action == "sweep": emit one config file per scale
    base = _load_config(args)
    scales = [float(s) for s in args.scales.split(",")]
    configs = enumerate_sweep(base, args.axis, scales)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for s, cfg in zip(scales, configs):
        path = outdir / f"{args.axis}_x{s:g}.json"
        path.write_text(cfg.to_json() + "\n")
        print(path)
    return 0


def cmd_toydata(args) -> int:
    h, w = (int(v) for v in args.size.split("x"))
    make_toy_dataset(args.out, args.clips, clip_len=args.frames,
                     height=h, width=w, seed=args.seed,
                     yuv_fraction=args.yuv_fraction)
    print(f"wrote {args.clips} clips to {args.out}")
    return 0


def _add_model_flags(p, with_config=True):
    p.add_argument("--model", required=True, help="checkpoint path")
    if with_config:
        p.add_argument("--config", help="optional config JSON to cross-check")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nvc",
                                 description="conditional video codec tools")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="run the staged training schedule")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda-index", type=int, default=2, dest="lambda_index")
    p.add_argument("--preset", default="tiny")
    p.add_argument("--config")
    p.add_argument("--schedule", help="schedule JSON; defaults to built-in")
    p.add_argument("--steps-per-epoch", type=int, default=4)
    p.add_argument("--steps-scale", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--patch", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--flow-steps", type=int, default=100)
    p.add_argument("--intra-steps", type=int, default=200)
    p.add_argument("--recompute", action="store_true",
                   help="recompute activations in cascaded stages")
    p.add_argument("--log", help="CSV step log path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("encode", help="encode frames to a bitstream")
    _add_model_flags(p)
    p.add_argument("--input", required=True, help=".yuv file or PNG directory")
    p.add_argument("--output", required=True)
    p.add_argument("--lambda-index", type=int, default=2, dest="lambda_index")
    p.add_argument("--intra-period", type=int, default=32)
    p.add_argument("--frames", type=int, default=96)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("decode", help="decode a bitstream to PNG frames")
    _add_model_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="output directory")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("eval", help="rate-distortion evaluation")
    p.add_argument("--checkpoint", action="append", required=True,
                   metavar="INDEX=PATH")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--intra-period", type=int, default=32)
    p.add_argument("--frames", type=int, default=96)
    p.add_argument("--anchor", help="anchor RD CSV for BD-rate")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="train and score scaled configs")
    p.add_argument("--dataset", required=True)
    p.add_argument("--axis", required=True)
    p.add_argument("--scales", required=True, help="e.g. 1,2,4")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", default="tiny")
    p.add_argument("--config")
    p.add_argument("--schedule")
    p.add_argument("--lambda-index", type=int, default=2, dest="lambda_index")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--steps-per-epoch", type=int, default=2)
    p.add_argument("--steps-scale", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--patch", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("analyze-channels", help="per-channel bitrate ratios")
    _add_model_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--intra-period", type=int, default=32)
    p.add_argument("--frames", type=int, default=96)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(fn=cmd_analyze_channels)

    p = sub.add_parser("bdrate", help="BD-rate between two RD CSV files")
    p.add_argument("anchor")
    p.add_argument("test")
    p.add_argument("--quality", default="psnr_rgb",
                   choices=("psnr_rgb", "psnr_yuv"))
    p.set_defaults(fn=cmd_bdrate)

    p = sub.add_parser("config", help="validate or sweep model configs")
    csub = p.add_subparsers(dest="action", required=True)
    v = csub.add_parser("validate")
    v.add_argument("path")
    v.set_defaults(fn=cmd_config, action="validate")
    s = csub.add_parser("sweep")
    s.add_argument("--preset", default="tiny")
    s.add_argument("--config")
    s.add_argument("--axis", required=True)
    s.add_argument("--scales", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_config, action="sweep")

    p = sub.add_parser("toydata", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=8)
    p.add_argument("--frames", type=int, default=9)
    p.add_argument("--size", default="64x64", help="HxW")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--yuv-fraction", type=float, default=0.0)
    p.set_defaults(fn=cmd_toydata)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
