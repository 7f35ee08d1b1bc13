"""Shared fixtures: a tiny search space, model, corpus and configuration."""

from pathlib import Path

import numpy as np
import pytest

from src.data.synth import generate_corpus
from src.supernet.model import ModelDims, SupernetModel
from src.supernet.search_space import SearchSpace
from src.utils.config import Config

TINY_VOCAB = 5
TINY_D_IN = 4


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_space():
    """3 layers, one optional dropped layer, widths 2 or 4: 12 configs."""
    return SearchSpace(n_layers_max=3, layer_options=[0, 1], channel_options=[2, 4])


@pytest.fixture
def tiny_dims():
    return ModelDims(d_in=TINY_D_IN, d_model=6, vocab_size=TINY_VOCAB, predictor_dim=4, joiner_dim=5)


@pytest.fixture
def tiny_model(tiny_space, tiny_dims):
    return SupernetModel(tiny_space, tiny_dims, seed=0)


@pytest.fixture
def tiny_corpus():
    return generate_corpus(
        seed=3,
        n_utterances=(8, 4, 4),
        vocab_size=TINY_VOCAB,
        frames_per_token_range=(1, 2),
        noise_std=0.1,
        d_in=TINY_D_IN,
        tokens_per_utterance=(1, 3),
    )


def tiny_config_dict(root: Path) -> dict:
    """Configuration mapping sized for unit tests, with every path under ``root``."""
    return {
        "paths": {
            "data_dir": str(root / "data"),
            "corpus_dir": str(root / "data" / "corpus"),
            "runs_dir": str(root / "runs"),
            "logs_dir": str(root / "logs"),
            "benchmark_dir": str(root / "benchmark_results"),
        },
        "corpus": {
            "seed": 3,
            "vocab_size": TINY_VOCAB,
            "d_in": TINY_D_IN,
            "noise_std": 0.1,
            "frames_per_token": [1, 2],
            "tokens_per_utterance": [1, 3],
            "n_train": 8,
            "n_dev": 4,
            "n_test": 4,
        },
        "model": {"d_model": 6, "predictor_dim": 4, "joiner_dim": 5, "init_seed": 0},
        "search_space": {"n_layers_max": 3, "layer_options": [0, 1], "channel_options": [2, 4]},
        "train": {
            "run_name": "tiny",
            "epochs": 2,
            "batch_size": 4,
            "anneal_start_epoch": 0,
            "kd_mode": "alphaD",
            "kd_j": 2,
            "seed": 5,
            "base_dropout": 0.1,
        },
        "search": {
            "population_size": 8,
            "generations": 2,
            "constraints": ["50%", "100%"],
            "max_symbols_per_frame": 2,
            "beam_size": 2,
        },
    }


@pytest.fixture
def tiny_config(tmp_path):
    config = Config.from_dict(tiny_config_dict(tmp_path))
    config.setup_directories()
    return config
