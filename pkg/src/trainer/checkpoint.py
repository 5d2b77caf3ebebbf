"""Versioned training checkpoints."""

from __future__ import annotations

import logging
import os
from typing import Tuple

import torch

from config import ConfigError, RunConfig

from .learner import OPTLearner

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Checkpoint missing, unreadable or from an incompatible format."""


def save_checkpoint(path: str, learner: OPTLearner, cfg: RunConfig, env_steps: int, episodes: int) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "env_steps": int(env_steps),
        "episodes": int(episodes),
        "learner": learner.state_dict(),
    }
    torch.save(payload, path)
    logger.info(f"Checkpoint saved: {path} (step {env_steps})")
    return path


def read_checkpoint(path: str) -> dict:
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"could not read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"{path} is not a training checkpoint")
    version = payload["format_version"]
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    return payload


def load_checkpoint(path: str, d_e: int, n_actions: int) -> Tuple[OPTLearner, RunConfig, dict]:
    """Rebuild the learner from the config stored alongside its weights."""
    payload = read_checkpoint(path)
    try:
        cfg = RunConfig.from_dict(payload["config"])
    except ConfigError as exc:
        raise CheckpointError(f"checkpoint config is invalid: {exc}") from exc
    if cfg.config_hash() != payload.get("config_hash"):
        logger.warning(f"Config hash mismatch in {path}; weights are loaded anyway")
    learner = OPTLearner(cfg, d_e, n_actions)
    learner.load_state_dict(payload["learner"])
    return learner, cfg, payload
