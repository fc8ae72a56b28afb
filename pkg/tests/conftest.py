import os

import numpy as np
import pytest

from sleepset import model as model_mod
from sleepset.config import ModelConfig, load_run_config
from sleepset.gradcheck import tiny_model_config
from sleepset.signals import ALL_KINDS, SignalKind

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TINY_PRESET = os.path.join(REPO_ROOT, "configs", "tiny.json")


@pytest.fixture(scope="session")
def tiny_config():
    """The T=8, k=16, feature_dim=8 model used for gradient checks."""
    return tiny_model_config()

@pytest.fixture(scope="session")
def tiny_params(tiny_config):
    return model_mod.init_params(tiny_config, seed=0)


@pytest.fixture(scope="session")
def desk_run_config():
    """The committed desk-scale preset (T=240 synthetic training)."""
    return load_run_config(TINY_PRESET)


def random_signals(config, rng, batch=1, kinds=ALL_KINDS):
    return {k: rng.normal(size=(batch, config.k_of(k) * config.epochs_t))
            .astype(np.float32) for k in kinds}


def random_model_config(rng):
    """A small random-but-valid architecture, for masking soundness sweeps."""
    feature_dim = int(rng.choice([8, 16]))
    heads = int(rng.choice([2, 4]))
    k_cardiac = int(rng.choice([16, 32]))
    k_resp = int(rng.choice([8, 16]))

    def channels(k):
        depth = int(np.log2(k / 4))
        mid = [int(rng.choice([4, 8]))] * max(depth - 1, 0)
        return tuple(mid + [feature_dim])

    ks = sorted({k_cardiac, k_resp})
    return ModelConfig(
        feature_dim=feature_dim,
        dropout=0.1,
        samples_per_epoch={SignalKind.ECG: k_cardiac,
                           SignalKind.PPG: k_cardiac,
                           SignalKind.ABD: k_resp,
                           SignalKind.THX: k_resp},
        encoder_channels={k: channels(k) for k in ks},
        mixer_layers=int(rng.choice([1, 2])),
        mixer_hidden=2 * feature_dim,
        mixer_heads=heads,
        seq_blocks=int(rng.choice([1, 2])),
        seq_kernel=int(rng.choice([3, 7])),
        seq_dilations=(1, 2),
        epochs_t=int(rng.choice([4, 8])),
    ).validate()
