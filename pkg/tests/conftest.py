"""Shared fixtures. The expensive ones (trained models) are session-scoped and
built lazily, so running a single test file stays cheap."""

from __future__ import annotations

import ctypes
import gc

import numpy as np
import pytest
import torch

from nvc.config import PRESETS
from nvc.model import build_model
from nvc.toydata import make_toy_dataset, toy_sequence
from nvc.training import (DEFAULT_SCHEDULE, TrainingStage, _to_tensor,
                          clip_source, lambda_value, pretrain_flow,
                          pretrain_intra, run_schedule)

torch.set_num_threads(1)


@pytest.fixture(autouse=True)
def _reclaim_memory():
    # The training tests allocate multi-GB transients. glibc keeps freed
    # arenas mapped, so without a trim the process RSS only ever grows and
    # the heaviest tests end up competing with the suite's own leftovers.
    yield
    gc.collect()
    try:
        ctypes.CDLL("libc.so.6").malloc_trim(0)
    except OSError:
        pass

# Compact stand-in for the full 21-stage schedule: same stage grammar, enough
# steps on toy data to pull latents away from zero so streams carry real bits.
FIT_STAGES = (
    TrainingStage(frames=2, scope="inter", loss_kind="meD", learning_rate=1e-4, epochs=2),
    TrainingStage(frames=2, scope="inter", loss_kind="meRD", learning_rate=1e-4, epochs=4),
    TrainingStage(frames=2, scope="recon", loss_kind="recD", learning_rate=5e-5, epochs=4),
    TrainingStage(frames=2, scope="recon", loss_kind="recRD", learning_rate=5e-5, epochs=6),
    TrainingStage(frames=3, scope="all", loss_kind="all", learning_rate=5e-5, epochs=8),
    TrainingStage(frames=4, scope="all", loss_kind="cascaded_all", learning_rate=1e-5, epochs=2),
)


def fit_model(cfg, data, lambda_index, seed):
    model = build_model(cfg, seed=seed)
    lam = lambda_value(lambda_index)
    pretrain_flow(model, data, steps=30, batch_size=4, seed=seed)
    pretrain_intra(model, data, lam, steps=60, batch_size=4, seed=seed)
    run_schedule(model, FIT_STAGES, data, lam, seed=seed,
                 steps_per_epoch=2, batch_size=4)
    model.eval()
    return model


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toydata")
    make_toy_dataset(root, 100, clip_len=9, height=64, width=64, seed=7,
                     yuv_fraction=0.25)
    return root


@pytest.fixture(scope="session")
def tiny_cfg():
    return PRESETS["tiny"]()


@pytest.fixture(scope="session")
def tiny_model(tiny_cfg):
    return build_model(tiny_cfg, seed=0).eval()


@pytest.fixture(scope="session")
def lambda_models(tiny_cfg, toy_root):
    """One trained tiny model per rate point, shared across the suite."""
    models = {}
    for i in range(4):
        data = clip_source(toy_root, patch=64, seed=100 + i)
        models[i] = fit_model(tiny_cfg, data, i, seed=0)
    return models


@pytest.fixture(scope="session")
def eval_sequences():
    """Three short sequences spanning the supported size range, including one
    whose dims force replicate padding inside the codec."""
    return [toy_sequence(64, 64, 9, seed=21, name="seq64"),
            toy_sequence(96, 64, 9, seed=22, name="seq96x64"),
            toy_sequence(128, 128, 9, seed=23, name="seq128")]


@pytest.fixture(scope="session")
def val_batch(toy_root):
    sampler = clip_source(toy_root, patch=64, seed=999)
    return _to_tensor(sampler(6, 4))
