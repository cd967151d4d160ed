import pytest
import torch

from nvc.config import tiny
from nvc.tcm import DimMismatch, TemporalContextMiner


def _miner():
    torch.manual_seed(0)
    return TemporalContextMiner(tiny())


def test_pyramid_levels_shapes():
    tcm = _miner()
    n, cf = tcm.n, tcm.feature_channels
    levels = tcm.extract_pyramid(torch.randn(2, cf, 32, 48))
    assert [tuple(l.shape) for l in levels] == [
        (2, n, 32, 48), (2, 2 * n, 16, 24), (2, 4 * n, 8, 12)]


def test_level_flows_rescale_with_resolution():
    flow = torch.full((1, 2, 16, 16), 3.0)
    f0, f1, f2 = TemporalContextMiner.level_flows(flow)
    # a uniform 3px shift at full size is 1.5px at half and 0.75px at quarter
    assert torch.allclose(f0, torch.full((1, 2, 16, 16), 3.0))
    assert torch.allclose(f1, torch.full((1, 2, 8, 8), 1.5))
    assert torch.allclose(f2, torch.full((1, 2, 4, 4), 0.75))


def test_mine_contexts_checks_level_count():
    tcm = _miner()
    pyr = tcm.extract_pyramid(torch.randn(1, tcm.feature_channels, 16, 16))
    flows = TemporalContextMiner.level_flows(torch.zeros(1, 2, 16, 16))
    tcm.mine_contexts(pyr, flows)
    with pytest.raises(DimMismatch, match="level-count"):
        tcm.mine_contexts(pyr, flows[:2])


def test_long_term_state_validation():
    tcm = _miner()
    ref = torch.randn(1, tcm.feature_channels, 16, 16)
    hidden, state = tcm.update_long_term(None, ref)
    assert hidden.shape == ref.shape
    assert len(state) == 2 and torch.equal(state[0], hidden)
    tcm.update_long_term(state, ref)
    with pytest.raises(DimMismatch, match="dim-mismatch"):
        tcm.update_long_term(state, torch.randn(1, tcm.feature_channels, 8, 8))


def test_fusion_is_identity_at_init():
    tcm = _miner()
    n = tcm.n
    raw = [torch.randn(1, n, 16, 16), torch.randn(1, 2 * n, 8, 8),
           torch.randn(1, 4 * n, 4, 4)]
    hidden = torch.randn(1, tcm.feature_channels, 16, 16)
    fused = tcm.fuse_contexts(raw, hidden)
    # zero-init fuse blocks: the long-term path cannot disturb fresh models
    for f, r in zip(fused, raw):
        assert torch.equal(f, r)


def test_forward_returns_three_scales_and_threads_state():
    tcm = _miner()
    n, cf = tcm.n, tcm.feature_channels
    ref = torch.randn(2, cf, 32, 32)
    flow = torch.zeros(2, 2, 32, 32)
    ctx, state = tcm(ref, flow, None)
    assert [tuple(c.shape) for c in ctx] == [
        (2, n, 32, 32), (2, 2 * n, 16, 16), (2, 4 * n, 8, 8)]
    assert state[0].shape == ref.shape and state[1].shape == ref.shape
    _, state2 = tcm(ref, flow, state)
    # the recurrent cell keeps integrating: identical inputs, moving state
    assert not torch.equal(state2[1], state[1])
