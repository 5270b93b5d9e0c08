import numpy as np
import pytest
import torch

from deepfake_disrupt.dataset import assign_splits, from_arrays
from deepfake_disrupt.substitute import SubstituteModel, freeze
from deepfake_disrupt.synthetic import make_corpus
from deepfake_disrupt.tcagan import TcaGanConfig, build_networks


def tiny_substitute(seed=0, dtype=torch.float64, in_channels=1):
    """Two-stage autoencoder with a few hundred parameters."""
    torch.manual_seed(seed)
    return SubstituteModel((2, 4), in_channels).to(dtype)


def tiny_tcagan(seed=0, dtype=torch.float64, in_channels=1, **kw):
    cfg = TcaGanConfig(gen_channels=(2, 4), critic_channels=(2, 4), seed=seed, **kw)
    return cfg, [n.to(dtype) for n in build_networks(cfg, in_channels)]


@pytest.fixture
def tiny_corpus():
    return assign_splits(from_arrays(make_corpus(2, 30, size=16, seed=1)), seed=0)


@pytest.fixture
def frozen_tiny_s():
    return freeze(tiny_substitute())


@pytest.fixture
def rng():
    return np.random.default_rng(0)


TINY_PIPELINE = {
    "images_per_identity": 40,
    "eval_limit": 6,
    "image_size": 32,
    "substitute": {"channels": [4, 8, 8], "epochs": 1, "batch": 8},
    "deepfake": {"channels": [4, 8], "bottleneck": 16, "decoder_channels": [8, 4], "epochs": 1, "image_size": 32},
    "tcagan": {"epochs": 1, "gen_channels": [4, 8], "critic_channels": [4, 8], "bidir_pgd_iters": 1},
    "postreg": {"iters": 2},
    "pgd": {"iters": 2},
}


def tiny_pipeline_config(**kw):
    from deepfake_disrupt.pipeline import config_from_dict

    return config_from_dict({**TINY_PIPELINE, **kw})
