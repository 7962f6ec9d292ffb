"""Shared fixtures: a small audio geometry and corpus every suite can reuse.

The package defaults target the full desk-scale run; tests use a reduced
geometry (129 bins, 2 frames/char, narrow model) so the whole unit suite
stays fast on one CPU core.
"""

import numpy as np
import pytest
import torch

from fusevoice.config import RunConfig
from fusevoice.corpus import AudioParams, generate_corpus
from fusevoice.training import label_counts, make_model, utterances_from_corpus

torch.set_num_threads(1)


def small_config(**overrides) -> RunConfig:
    base = dict(
        d_model=32,
        d_style=24,
        d_spk=24,
        latent_channels=8,
        text_blocks=2,
        flow_layers=2,
        dur_flow_layers=2,
        attn_heads=2,
        enc_hidden=32,
        n_fft=256,
        hop=128,
        frames_per_char=2,
        speakers=3,
        styles=4,
        utterances_per_cell=2,
        batch_size=6,
        steps=10,
        seed=11,
    )
    base.update(overrides)
    return RunConfig(**base).validate()


@pytest.fixture(scope="session")
def audio_small() -> AudioParams:
    return AudioParams(sample_rate=16000, n_fft=256, hop=128, frames_per_char=2)


@pytest.fixture(scope="session")
def cfg_small() -> RunConfig:
    return small_config()


@pytest.fixture(scope="session")
def corpus_small(audio_small):
    return generate_corpus(3, 4, 2, 11, audio_small)


@pytest.fixture(scope="session")
def utts_small(corpus_small):
    return utterances_from_corpus(corpus_small)


@pytest.fixture(scope="session")
def model_small(cfg_small, utts_small):
    """Untrained model over the small corpus; treat as read-only."""
    n_spk, n_sty = label_counts(utts_small)
    model = make_model(cfg_small, n_spk, n_sty, seed=11)
    model.eval()
    return model


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
