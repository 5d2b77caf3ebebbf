"""Export of interaction-prototype attention for offline heatmaps.

Dump schema::

    {
      "activation": str, "n_prototypes": int, "n_layers": int,
      "episodes": [
        {"task": {...}, "win": bool, "trace": {...},
         "steps": [
           {"t": int,
            "sites": [
              {"site": "agent_0" | ... | "mixer",
               "mask": [bool] * M,
               "layers": [{"layer": k, "omega": [N floats], "P": [N x M x M floats]}]}
            ]}
         ]}
      ]
    }

Rows and columns of ``P`` outside ``mask`` are zero.

Episodes are rolled with the trained networks at their training precision;
attention is then recomputed on a float64 copy so softmax entries that
underflow in float32 (logit gaps beyond ~100) stay strictly positive. Gaps
beyond ~745 still underflow in float64.
"""

from __future__ import annotations

import copy
import json
import logging
import os
from typing import List

import numpy as np
import torch

from config import RunConfig
from env import PredatorPrey, sample_task, trace_to_dict
from mixer import OPTMixer

logger = logging.getLogger(__name__)


def _site(name: str, mask: torch.Tensor, omegas, attention, row: int) -> dict:
    return {
        "site": name,
        "mask": mask.tolist(),
        "layers": [
            {"layer": k, "omega": omegas[k][row].tolist(), "P": attention[k][row].tolist()}
            for k in range(len(attention))
        ],
    }


def dump_prototypes(learner, env: PredatorPrey, cfg: RunConfig, n_episodes: int,
                    rng: np.random.Generator, split: str = "train") -> dict:
    """Roll greedy episodes and record every site's prototypes per step."""
    from trainer.runner import collect_episode

    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    dtype = learner.dtype
    agent, mixer = learner.agent, learner.mixer
    agent64 = copy.deepcopy(agent).double()
    mixer64 = copy.deepcopy(mixer).double()
    episodes: List[dict] = []
    for _ in range(n_episodes):
        task = sample_task(split, cfg.env, rng)
        ep = collect_episode(env, agent, task, 0.0, rng, dtype=dtype, record_states=True)
        h = agent64.init_hidden(ep.agent_mask.shape[0], dtype=torch.float64)
        steps = []
        for t in range(ep.length + 1):
            obs_mask = torch.as_tensor(ep.obs_mask[t])
            with torch.no_grad():
                out = agent64(torch.as_tensor(ep.obs_features[t], dtype=torch.float64), obs_mask,
                            torch.as_tensor(ep.self_index[t], dtype=torch.long), h)
            h = out.hidden
            sites = [
                _site(f"agent_{a}", obs_mask[a], out.omegas, out.attention, a)
                for a in range(task.n_agents)
            ]
            if isinstance(mixer64, OPTMixer):
                state_mask = torch.as_tensor(ep.state_mask[t]).unsqueeze(0)
                with torch.no_grad():
                    s_out = mixer64.stack(torch.as_tensor(ep.state_features[t], dtype=torch.float64).unsqueeze(0),
                                        state_mask)
                sites.append(_site("mixer", state_mask[0], s_out.omegas, s_out.attention, 0))
            steps.append({"t": t, "sites": sites})
        episodes.append({"task": task.to_dict(), "win": ep.win,
                         "trace": trace_to_dict(ep.states), "steps": steps})

    return {
        "activation": cfg.model.activation,
        "n_prototypes": cfg.model.n_prototypes,
        "n_layers": cfg.model.n_layers,
        "episodes": episodes,
    }


def _iter_rows(dump: dict):
    """Yield (row values, column mask) for every unmasked attention row."""
    for ep in dump["episodes"]:
        for step in ep["steps"]:
            for site in step["sites"]:
                mask = np.asarray(site["mask"], dtype=bool)
                for layer in site["layers"]:
                    for p in layer["P"]:
                        p = np.asarray(p)
                        for i in np.flatnonzero(mask):
                            yield p[i], mask


def sparsity_fraction(dump: dict) -> float:
    """Fraction of exact zeros among attention entries between unmasked entities."""
    zeros = total = 0
    for row, mask in _iter_rows(dump):
        vals = row[mask]
        zeros += int(np.sum(vals == 0.0))
        total += int(vals.size)
    return zeros / total if total else 0.0


def max_row_sum_error(dump: dict) -> float:
    worst = 0.0
    for row, mask in _iter_rows(dump):
        worst = max(worst, abs(float(row[mask].sum()) - 1.0))
    return worst


def write_prototype_dump(path: str, dump: dict) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(dump, fh)
    logger.info(f"Prototype dump written: {path} ({len(dump['episodes'])} episodes, "
                f"sparsity {sparsity_fraction(dump):.3f})")
    return path
