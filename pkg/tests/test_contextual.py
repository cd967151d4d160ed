import pytest
import torch

from nvc.config import tiny
from nvc.contextual import (ContextualDecoder, ContextualEncoder, IntraCodec,
                            PatchMerge, PatchSplit)
from nvc.layers import SwinBlock
from nvc.motion import ShapeMismatch


def _contexts(n, h, w, b=1):
    return [torch.randn(b, n, h, w), torch.randn(b, 2 * n, h // 2, w // 2),
            torch.randn(b, 4 * n, h // 4, w // 4)]


def test_patch_merge_split_resolutions():
    merge = PatchMerge(6, 10)
    split = PatchSplit(10, 6)
    x = torch.randn(2, 6, 16, 12)
    down = merge(x)
    assert down.shape == (2, 10, 8, 6)
    assert split(down).shape == x.shape


def test_encoder_maps_frame_to_sixteenth_latent():
    torch.manual_seed(0)
    cfg = tiny()
    enc = ContextualEncoder(cfg)
    x = torch.rand(1, 3, 64, 48)
    y = enc(x, _contexts(cfg.tcm.channels, 64, 48))
    assert y.shape == (1, cfg.contextual_enc_dec.latent_channels, 4, 3)


def test_encoder_validates_frame_and_contexts():
    cfg = tiny()
    enc = ContextualEncoder(cfg)
    n = cfg.tcm.channels
    with pytest.raises(ShapeMismatch, match="divisible by 16"):
        enc(torch.rand(1, 3, 60, 64), _contexts(n, 60, 64))
    with pytest.raises(ShapeMismatch, match="3 context scales"):
        enc(torch.rand(1, 3, 64, 64), _contexts(n, 64, 64)[:2])
    bad = _contexts(n, 64, 64)
    bad[1] = torch.randn(1, 2 * n, 16, 16)  # wrong resolution for scale 1
    with pytest.raises(ShapeMismatch, match="shape-mismatch"):
        enc(torch.rand(1, 3, 64, 64), bad)
    bad = _contexts(n, 64, 64)
    bad[2] = torch.randn(1, n, 16, 16)  # wrong channel count
    with pytest.raises(ShapeMismatch):
        enc(torch.rand(1, 3, 64, 64), bad)


def test_decoder_reconstruction_is_clamped_with_feature():
    torch.manual_seed(1)
    cfg = tiny()
    dec = ContextualDecoder(cfg)
    y_hat = torch.randn(1, cfg.contextual_enc_dec.latent_channels, 4, 4) * 5
    frame, feature = dec(y_hat, _contexts(cfg.tcm.channels, 64, 64))
    assert frame.shape == (1, 3, 64, 64)
    assert feature.shape == (1, cfg.tcm.feature_channels, 64, 64)
    assert frame.min() >= 0.0 and frame.max() <= 1.0


def test_decoder_validates_context_scales():
    cfg = tiny()
    dec = ContextualDecoder(cfg)
    y_hat = torch.randn(1, cfg.contextual_enc_dec.latent_channels, 4, 4)
    with pytest.raises(ShapeMismatch):
        dec(y_hat, _contexts(cfg.tcm.channels, 32, 32))


def test_transformer_enc_dec_round_trip_shapes():
    torch.manual_seed(2)
    cfg = tiny().replace(arch_kind="transformer")
    enc = ContextualEncoder(cfg)
    dec = ContextualDecoder(cfg)
    x = torch.rand(1, 3, 64, 64)
    ctx = _contexts(cfg.tcm.channels, 64, 64)
    y = enc(x, ctx)
    assert y.shape == (1, cfg.contextual_enc_dec.latent_channels, 4, 4)
    frame, feature = dec(y, ctx)
    assert frame.shape == x.shape
    assert feature.shape == (1, cfg.tcm.feature_channels, 64, 64)


def test_intra_codec_forward_rate():
    torch.manual_seed(3)
    intra = IntraCodec(tiny())
    x = torch.rand(2, 3, 64, 64)
    frame, feature, latent_bits, hyper_bits = intra.forward_rate(x, "infer")
    assert frame.shape == x.shape
    assert feature.shape == (2, tiny().tcm.feature_channels, 64, 64)
    assert frame.min() >= 0.0 and frame.max() <= 1.0
    assert latent_bits.item() >= 0.0 and hyper_bits.item() >= 0.0
    again = intra.forward_rate(x, "infer")
    assert torch.equal(again[0], frame) and torch.equal(again[2], latent_bits)


def test_intra_codec_rejects_unpadded_frames():
    intra = IntraCodec(tiny())
    with pytest.raises(ShapeMismatch, match="divisible by 16"):
        intra.encode(torch.rand(1, 3, 64, 50))


def test_intra_codec_stays_convolutional_across_arch_kinds():
    # scaling claims never involve the intra path, so it keeps one shape
    for kind in ("cnn", "mixed_cnn_transformer", "transformer"):
        intra = IntraCodec(tiny().replace(arch_kind=kind))
        assert not any(isinstance(m, SwinBlock) for m in intra.modules())
