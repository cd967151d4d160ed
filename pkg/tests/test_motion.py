import pytest
import torch

from nvc.config import tiny
from nvc.motion import (FlowNet, MotionAutoencoder, MotionEstimator,
                        ShapeMismatch, StructureDetailSplit, _gaussian_kernel)


def test_gaussian_kernel_is_a_normalized_symmetric_lowpass():
    k = _gaussian_kernel()
    assert k.shape == (5, 5)
    assert abs(k.sum().item() - 1.0) < 1e-6
    assert torch.allclose(k, k.flip(0)) and torch.allclose(k, k.flip(1))
    assert torch.allclose(k, k.t())
    assert k.argmax().item() == 12  # center tap dominates


def test_structure_detail_split_is_additive():
    torch.manual_seed(0)
    split = StructureDetailSplit()
    x = torch.rand(2, 3, 24, 20)
    s, d = split(x)
    # detail is defined as the residual; recombination costs one rounding
    assert (s + d - x).abs().max() < 1e-6


def test_structure_passes_constants_and_absorbs_lowpass():
    split = StructureDetailSplit()
    flat = torch.full((1, 3, 16, 16), 0.4)
    s, d = split(flat)
    assert torch.allclose(s, flat, atol=1e-6)
    assert d.abs().max() < 1e-6
    # a checkerboard is nearly all detail
    grid = torch.arange(16)
    checker = ((grid[:, None] + grid[None, :]) % 2).float().expand(1, 3, 16, 16)
    s, d = split(checker)
    assert s.var() < 0.05 * checker.var()


def test_flow_net_starts_at_zero_flow():
    torch.manual_seed(1)
    net = FlowNet()
    cur = torch.rand(2, 3, 32, 32)
    ref = torch.rand(2, 3, 32, 32)
    flow = net(cur, ref)
    assert flow.shape == (2, 2, 32, 32)
    assert torch.equal(flow, torch.zeros_like(flow))


def test_flow_net_clamps_to_frame_extent():
    torch.manual_seed(2)
    net = FlowNet()
    with torch.no_grad():
        net.levels[0].net[-1].bias.fill_(1e6)
    flow = net(torch.rand(1, 3, 16, 24), torch.rand(1, 3, 16, 24))
    assert flow.max().item() == 24.0


def test_flow_net_rejects_mismatched_pairs():
    net = FlowNet()
    with pytest.raises(ShapeMismatch, match="dim-mismatch"):
        net(torch.rand(1, 3, 32, 32), torch.rand(1, 3, 32, 16))


def test_motion_estimator_outputs_two_flows():
    torch.manual_seed(3)
    est = MotionEstimator()
    cur, ref = torch.rand(1, 3, 32, 32), torch.rand(1, 3, 32, 32)
    fs, fd = est(cur, ref)
    assert fs.shape == fd.shape == (1, 2, 32, 32)
    with pytest.raises(ShapeMismatch):
        est(cur, ref[..., :16])


def test_warp_frame_with_zero_flow_returns_reference():
    torch.manual_seed(4)
    est = MotionEstimator()
    ref = torch.rand(1, 3, 32, 32)
    zero = torch.zeros(1, 2, 32, 32)
    pred = est.warp_frame(ref, zero, zero)
    # structure and detail are warped separately but sum back to the frame
    assert torch.allclose(pred, ref, atol=1e-5)


def test_warp_frame_shifts_both_components():
    torch.manual_seed(5)
    est = MotionEstimator()
    ref = torch.rand(1, 3, 32, 32)
    shift = torch.zeros(1, 2, 32, 32)
    shift[:, 0] = 1.0
    pred = est.warp_frame(ref, shift, shift)
    assert torch.allclose(pred[..., :-1], ref[..., 1:], atol=1e-5)


def test_motion_autoencoder_round_trip_shapes():
    torch.manual_seed(6)
    ae = MotionAutoencoder(tiny())
    fs = torch.randn(2, 2, 64, 48)
    fd = torch.randn(2, 2, 64, 48)
    m = ae.encode(fs, fd)
    assert m.shape == (2, tiny().motion_entropy.latent_channels, 4, 3)
    out_s, out_d = ae.decode(m)
    assert out_s.shape == fs.shape and out_d.shape == fd.shape
    assert out_s.abs().max() <= 64.0  # decoded flows are clamped to the extent


def test_motion_autoencoder_rejects_unpadded_input():
    ae = MotionAutoencoder(tiny())
    with pytest.raises(ShapeMismatch, match="divisible by 16"):
        ae.encode(torch.randn(1, 2, 60, 64), torch.randn(1, 2, 60, 64))
