"""Codec family configuration: per-module widths, architecture kinds, scaling sweeps."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

ARCH_KINDS = ("cnn", "mixed_cnn_transformer", "transformer")
SWEEP_AXES = ("motion_ed", "motion_em", "ctx_ed", "ctx_em", "tcm")


class ConfigError(ValueError):
    """A ModelConfig invariant is violated; the message names the offending field."""


class UnsupportedCombination(ValueError):
    """A structurally valid request the family does not build (e.g. transformer motion)."""


@dataclass(frozen=True)
class MotionEncDecConfig:
    channels: int = 32
    res_blocks: int = 1


@dataclass(frozen=True)
class MotionEntropyConfig:
    channels: int = 32
    latent_channels: int = 32  # C_m
    hyper_channels: int = 32


@dataclass(frozen=True)
class ContextualEncDecConfig:
    channels: int = 32
    res_blocks: int = 1
    latent_channels: int = 32  # C_y


@dataclass(frozen=True)
class ContextualEntropyConfig:
    channels: int = 32
    hyper_channels: int = 32


@dataclass(frozen=True)
class TcmConfig:
    channels: int = 32  # N; the pyramid runs N, 2N, 4N
    res_blocks: int = 1
    feature_channels: int = 16  # C_F


@dataclass(frozen=True)
class AttentionConfig:
    """Windowed-attention settings, used only when arch_kind is not cnn."""

    window: int = 8
    heads: int = 4
    depth: int = 2


@dataclass(frozen=True)
class ModelConfig:
    motion_enc_dec: MotionEncDecConfig = MotionEncDecConfig()
    motion_entropy: MotionEntropyConfig = MotionEntropyConfig()
    contextual_enc_dec: ContextualEncDecConfig = ContextualEncDecConfig()
    contextual_entropy: ContextualEntropyConfig = ContextualEntropyConfig()
    tcm: TcmConfig = TcmConfig()
    arch_kind: str = "cnn"
    attention: AttentionConfig = AttentionConfig()

    def validate(self) -> "ModelConfig":
        """Check all invariants; returns self so calls can be chained."""
        if self.arch_kind not in ARCH_KINDS:
            raise ConfigError(f"arch_kind: {self.arch_kind!r} not one of {ARCH_KINDS}")
        for part in ("motion_enc_dec", "motion_entropy", "contextual_enc_dec",
                     "contextual_entropy", "tcm", "attention"):
            sub = getattr(self, part)
            for f in dataclasses.fields(sub):
                v = getattr(sub, f.name)
                if not isinstance(v, int) or v < 1:
                    raise ConfigError(f"{part}.{f.name}: must be an integer >= 1, got {v!r}")
        if self.motion_entropy.latent_channels < 2:
            raise ConfigError("motion_entropy.latent_channels: C_m must be >= 2")
        if self.contextual_enc_dec.latent_channels < 2:
            raise ConfigError("contextual_enc_dec.latent_channels: C_y must be >= 2")
        if self.tcm.feature_channels < 2:
            raise ConfigError("tcm.feature_channels: C_F must be >= 2")
        if self.arch_kind != "cnn":
            h = self.attention.heads
            # Attention sites sit inside the contextual and tcm stacks; every width
            # they can see must split evenly into heads.
            widths = {
                "contextual_enc_dec.channels": self.contextual_enc_dec.channels,
                "tcm.channels": self.tcm.channels,
                "tcm.channels*2": self.tcm.channels * 2,
                "tcm.channels*4": self.tcm.channels * 4,
                "tcm.feature_channels": self.tcm.feature_channels,
            }
            if self.arch_kind == "mixed_cnn_transformer":
                # only the mixed kind threads attention through motion stacks;
                # the transformer kind keeps motion convolutional
                widths["motion_enc_dec.channels"] = self.motion_enc_dec.channels
            for name, c in widths.items():
                if c % h != 0:
                    raise ConfigError(f"{name}: {c} not divisible by attention.heads={h}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            return cls(
                motion_enc_dec=MotionEncDecConfig(**d["motion_enc_dec"]),
                motion_entropy=MotionEntropyConfig(**d["motion_entropy"]),
                contextual_enc_dec=ContextualEncDecConfig(**d["contextual_enc_dec"]),
                contextual_entropy=ContextualEntropyConfig(**d["contextual_entropy"]),
                tcm=TcmConfig(**d["tcm"]),
                arch_kind=d["arch_kind"],
                attention=AttentionConfig(**d["attention"]),
            ).validate()
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed config: {e}") from e

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, source: str | Path) -> "ModelConfig":
        try:
            is_file = Path(source).exists()
        except OSError:  # JSON text long enough to overflow a path name
            is_file = False
        text = Path(source).read_text() if is_file else str(source)
        return cls.from_dict(json.loads(text))

    def replace(self, **parts) -> "ModelConfig":
        return dataclasses.replace(self, **parts)


@dataclass(frozen=True)
class ParamReport:
    per_module: dict
    total: int

    def __post_init__(self):
        assert self.total == sum(self.per_module.values())

    def ratio(self, name: str) -> float:
        return self.per_module[name] / self.total


def tiny() -> ModelConfig:
    """Smallest buildable family member; everything at width 32, single blocks."""
    return ModelConfig().validate()


def base() -> ModelConfig:
    """Desk-scale default used for training experiments."""
    return ModelConfig(
        motion_enc_dec=MotionEncDecConfig(channels=48, res_blocks=1),
        motion_entropy=MotionEntropyConfig(channels=48, latent_channels=48, hyper_channels=32),
        contextual_enc_dec=ContextualEncDecConfig(channels=48, res_blocks=2, latent_channels=48),
        contextual_entropy=ContextualEntropyConfig(channels=48, hyper_channels=32),
        tcm=TcmConfig(channels=32, res_blocks=2, feature_channels=32),
    ).validate()


def paper_pattern() -> ModelConfig:
    """Allocation-shaped preset: motion parts under 1% of parameters, the three
    large modules near 30% each. Absolute counts are not targeted."""
    return ModelConfig(
        motion_enc_dec=MotionEncDecConfig(channels=40, res_blocks=1),
        motion_entropy=MotionEntropyConfig(channels=40, latent_channels=40, hyper_channels=24),
        contextual_enc_dec=ContextualEncDecConfig(channels=176, res_blocks=7, latent_channels=96),
        contextual_entropy=ContextualEntropyConfig(channels=480, hyper_channels=128),
        tcm=TcmConfig(channels=64, res_blocks=8, feature_channels=64),
    ).validate()


PRESETS = {"tiny": tiny, "base": base, "paper_pattern": paper_pattern}


def _scale_int(value: int, scale: float, multiple_of: int = 1) -> int:
    v = max(1, round(value * scale))
    if multiple_of > 1:
        v = max(multiple_of, ((v + multiple_of - 1) // multiple_of) * multiple_of)
    return v


def enumerate_sweep(base_cfg: ModelConfig, axis: str, scales: Iterable[float]) -> list[ModelConfig]:
    """Scale one module group's widths (and block counts where the group has them)
    by each multiplier. Raises if two scales round to the same config, since the
    sweep contract is strictly increasing parameter counts."""
    scales = list(scales)
    if not scales:
        raise ConfigError("scales: empty sweep")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis: {axis!r} not one of {SWEEP_AXES}")
    for s in scales:
        if not (s >= 1.0 and s == s and s != float("inf")):
            raise ConfigError(f"scales: multiplier {s!r} must be finite and >= 1")
    base_cfg.validate()
    mult = base_cfg.attention.heads if base_cfg.arch_kind != "cnn" else 1
    motion_mult = (base_cfg.attention.heads
                   if base_cfg.arch_kind == "mixed_cnn_transformer" else 1)

    def scaled_fields(cfg: ModelConfig) -> tuple:
        g = {"motion_ed": cfg.motion_enc_dec, "motion_em": cfg.motion_entropy,
             "ctx_ed": cfg.contextual_enc_dec, "ctx_em": cfg.contextual_entropy,
             "tcm": cfg.tcm}[axis]
        return tuple(getattr(g, f.name) for f in dataclasses.fields(g))

    out: list[ModelConfig] = []
    for s in scales:
        if axis == "motion_ed":
            g = base_cfg.motion_enc_dec
            cfg = base_cfg.replace(motion_enc_dec=MotionEncDecConfig(
                channels=_scale_int(g.channels, s, motion_mult),
                res_blocks=_scale_int(g.res_blocks, s)))
        elif axis == "motion_em":
            g = base_cfg.motion_entropy
            cfg = base_cfg.replace(motion_entropy=MotionEntropyConfig(
                channels=_scale_int(g.channels, s),
                latent_channels=g.latent_channels,
                hyper_channels=_scale_int(g.hyper_channels, s)))
        elif axis == "ctx_ed":
            g = base_cfg.contextual_enc_dec
            cfg = base_cfg.replace(contextual_enc_dec=ContextualEncDecConfig(
                channels=_scale_int(g.channels, s, mult),
                res_blocks=_scale_int(g.res_blocks, s),
                latent_channels=g.latent_channels))
        elif axis == "ctx_em":
            g = base_cfg.contextual_entropy
            cfg = base_cfg.replace(contextual_entropy=ContextualEntropyConfig(
                channels=_scale_int(g.channels, s),
                hyper_channels=_scale_int(g.hyper_channels, s)))
        else:  # tcm
            g = base_cfg.tcm
            cfg = base_cfg.replace(tcm=TcmConfig(
                channels=_scale_int(g.channels, s, mult),
                res_blocks=_scale_int(g.res_blocks, s),
                feature_channels=g.feature_channels))
        cfg.validate()
        if out:
            prev, cur = scaled_fields(out[-1]), scaled_fields(cfg)
            # Strict parameter growth needs every scaled field nondecreasing and
            # at least one strictly larger; rounding can collapse nearby scales.
            if not (all(c >= p for c, p in zip(cur, prev)) and cur != prev):
                raise ConfigError(
                    f"scales: {s} does not grow the {axis} axis beyond the previous "
                    f"point {prev} -> {cur}; sweep must be strictly increasing")
        out.append(cfg)
    return out
