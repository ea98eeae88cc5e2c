"""Shared fixtures: a small synthetic corpus and a briefly trained model.

Session-scoped so the expensive pieces (WAV synthesis, training) run once
for the whole suite.
"""

import numpy as np
import pytest

from sirenia import dataset as ds
from sirenia import model as mdl
from sirenia import synth as syn
from sirenia import training as tr
from sirenia.audio import PIPELINE_RATE_HZ, AudioClip

TINY_MODEL = mdl.ModelConfig(embed_dim=32, n_layers=1, n_heads=4)


def sine_clip(freq_hz: float = 4000.0, amplitude: float = 0.5, seconds: float = 1.0) -> AudioClip:
    t = np.arange(int(round(seconds * PIPELINE_RATE_HZ))) / PIPELINE_RATE_HZ
    return AudioClip(
        samples=amplitude * np.sin(2 * np.pi * freq_hz * t),
        sample_rate_hz=PIPELINE_RATE_HZ,
    )


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    cfg = syn.SynthConfig(session_length_s=20.5, calls_per_session_range=(2, 4))
    syn.write_registry(root, cfg, n_sessions=4, seed=7)
    return root


@pytest.fixture(scope="session")
def registry(corpus_dir):
    return ds.SessionRegistry(corpus_dir)


@pytest.fixture(scope="session")
def manifest(corpus_dir, registry):
    built = ds.build_manifest(registry)
    return ds.split_train_test(built, train_fraction=0.7, seed=0, registry=registry)


@pytest.fixture(scope="session")
def trained(manifest, registry):
    """(checkpoint, history) from a deliberately short run of the tiny model."""
    recipe = tr.TrainRecipe(epochs=2, batch_size=16, base_lr=1e-3, seed=0)
    return tr.train(manifest, TINY_MODEL, recipe, registry=registry)


@pytest.fixture(scope="session")
def checkpoint(trained):
    return trained[0]
