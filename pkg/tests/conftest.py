"""Pytest configuration: add src/ to sys.path so tests can import project modules."""
import os
import sys
from pathlib import Path

import pytest

# Project root → src
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

# marker -> env var that enables it
_OPT_IN = {
    "slow": "OPTMARL_RUN_SLOW",
    "acceptance": "OPTMARL_RUN_ACCEPTANCE",
}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long training runs (set OPTMARL_RUN_SLOW=1)")
    config.addinivalue_line(
        "markers", "acceptance: full-length multi-seed training (set OPTMARL_RUN_ACCEPTANCE=1; hours)"
    )


def pytest_collection_modifyitems(config, items):
    for marker, var in _OPT_IN.items():
        if os.environ.get(var) == "1":
            continue
        skip = pytest.mark.skip(reason=f"{marker}; set {var}=1 to run")
        for item in items:
            if marker in item.keywords:
                item.add_marker(skip)


@pytest.fixture
def tiny_config():
    """A RunConfig small enough to train for a few hundred steps in seconds."""
    from config import RunConfig

    cfg = RunConfig()
    cfg.model.n_layers = 1
    cfg.model.n_prototypes = 2
    cfg.model.d_x = 8
    cfg.model.d_h = 8
    cfg.model.d_ff = 8
    cfg.model.d_mix = 8
    cfg.model.hyper_hidden = 8
    cfg.train.batch_size = 2
    cfg.train.buffer_size = 16
    cfg.train.total_steps = 60
    cfg.train.eval_interval = 30
    cfg.train.eval_episodes = 2
    cfg.train.checkpoint_interval = 30
    cfg.train.target_interval = 2
    cfg.env.horizon = 8
    return cfg
