"""Episode collection, greedy evaluation and the outer training loop.

Usage (from src/):
    from trainer import Trainer
    Trainer(cfg, out_dir="runs/seed0").run()

Run directory layout:
    config.yaml        config snapshot (re-parses to the same config)
    metrics.csv        one row per evaluation point and split
    checkpoints/       step_<n>.pt at the configured cadence, final.pt at the end
"""

from __future__ import annotations

import copy
import logging
import os
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch

try:
    import mlflow
    _HAS_MLFLOW = True
except Exception:
    mlflow = None
    _HAS_MLFLOW = False

from agent import UtilityNetwork, UtilityOutput, epsilon_schedule, select_actions
from config import EnvConfig, RunConfig
from env import STOP, Observation, PredatorPrey, TaskSpec, sample_task
from numerics import InvalidInputError

from .checkpoint import save_checkpoint
from .collectors import CollectorJob, CollectorPool
from .episode import Episode, ReplayBuffer
from .learner import OPTLearner

logger = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "step", "episodes", "epsilon", "td_loss", "cd_loss", "cmi_loss", "total_loss",
    "eval_split", "win_rate", "mean_return", "auc_so_far", "variant",
]

# rng stream ids derived from the run seed
_COLLECT, _TRAIN, _EVAL, _WORKER = 0, 1, 2, 3


# ─────────────────────────────────────────────────────────────────────────────
# Acting
# ─────────────────────────────────────────────────────────────────────────────

def pad_observations(env: PredatorPrey, observations: Sequence[Observation]) -> List[Observation]:
    """Fill absent agent slots with placeholder observations."""
    full = list(observations)
    for slot in range(len(full), env.family.max_agents):
        full.append(env.placeholder_observation(slot))
    return full


def act_step(agent: UtilityNetwork, observations: Sequence[Observation],
             h: torch.Tensor) -> UtilityOutput:
    """Decentralised forward of every agent slot at one timestep."""
    dtype = h.dtype
    feats = torch.as_tensor(np.stack([o.entity_features for o in observations]), dtype=dtype)
    mask = torch.as_tensor(np.stack([o.visibility_mask for o in observations]))
    self_idx = torch.as_tensor([o.self_index for o in observations], dtype=torch.long)
    with torch.no_grad():
        return agent(feats, mask, self_idx, h)


def collect_episode(env: PredatorPrey, agent: Optional[UtilityNetwork], task: TaskSpec,
                    epsilon: float, rng: np.random.Generator,
                    dtype: torch.dtype = torch.float32, record_states: bool = False) -> Episode:
    """Roll one full episode with epsilon-greedy decentralised execution.

    ``agent=None`` gives the uniform random policy over available actions.
    """
    n_slots = env.family.max_agents
    n_act = env.n_actions
    state, obs = env.reset(task, rng)
    h = agent.init_hidden(n_slots, dtype=dtype) if agent is not None else None

    obs_f, obs_m, self_i, avail, st_f, st_m = [], [], [], [], [], []
    actions, rewards, terminated, q_values = [], [], [], []
    states = [state] if record_states else []

    def record(observations):
        full = pad_observations(env, observations)
        gs = env.global_state(state)
        obs_f.append(np.stack([o.entity_features for o in full]))
        obs_m.append(np.stack([o.visibility_mask for o in full]))
        self_i.append(np.array([o.self_index for o in full], dtype=np.int64))
        avail.append(np.stack([o.available_actions for o in full]))
        st_f.append(gs.entity_features)
        st_m.append(gs.entity_mask)
        return full

    while True:
        full = record(obs)
        if agent is not None:
            out = act_step(agent, full, h)
            h = out.hidden
            q = out.q.numpy().astype(np.float64)
            eps = epsilon
        else:
            q = np.zeros((n_slots, n_act))
            eps = 1.0
        q_values.append(q)
        chosen = select_actions(q[:task.n_agents], avail[-1][:task.n_agents], eps, rng)
        joint = np.full(n_slots, STOP, dtype=np.int64)
        joint[:task.n_agents] = chosen

        state, result = env.step(state, chosen, rng)
        actions.append(joint)
        rewards.append(result.reward)
        terminated.append(result.terminated)
        obs = result.observations
        if record_states:
            states.append(state)
        if result.done:
            break
    record(obs)

    agent_mask = np.zeros(n_slots, dtype=bool)
    agent_mask[:task.n_agents] = True
    return Episode(
        obs_features=np.stack(obs_f), obs_mask=np.stack(obs_m), self_index=np.stack(self_i),
        avail=np.stack(avail), state_features=np.stack(st_f), state_mask=np.stack(st_m),
        actions=np.stack(actions), rewards=np.asarray(rewards, dtype=np.float64),
        terminated=np.asarray(terminated, dtype=bool), agent_mask=agent_mask,
        task=task, q_values=np.stack(q_values), states=states, win=bool(state.win),
    )


def replay_q_values(agent: UtilityNetwork, episode: Episode, dtype: torch.dtype = torch.float32) -> np.ndarray:
    """Recompute the per-step action values of a stored episode."""
    n_slots = episode.agent_mask.shape[0]
    h = agent.init_hidden(n_slots, dtype=dtype)
    qs = []
    for t in range(episode.length):
        feats = torch.as_tensor(episode.obs_features[t], dtype=dtype)
        mask = torch.as_tensor(episode.obs_mask[t])
        self_idx = torch.as_tensor(episode.self_index[t], dtype=torch.long)
        with torch.no_grad():
            out = agent(feats, mask, self_idx, h)
        h = out.hidden
        qs.append(out.q.numpy().astype(np.float64))
    return np.stack(qs)


# ─────────────────────────────────────────────────────────────────────────────
# Evaluation
# ─────────────────────────────────────────────────────────────────────────────

def evaluate(agent: Optional[UtilityNetwork], env: PredatorPrey, env_cfg: EnvConfig, split: str,
             n_episodes: int, rng: np.random.Generator,
             dtype: torch.dtype = torch.float32) -> Dict[str, float]:
    """Greedy win rate and mean return over ``n_episodes`` tasks from ``split``."""
    if n_episodes < 1:
        raise InvalidInputError("evaluation needs at least one episode")
    wins, returns = [], []
    for _ in range(n_episodes):
        task = sample_task(split, env_cfg, rng)
        ep = collect_episode(env, agent, task, 0.0, rng, dtype=dtype)
        wins.append(ep.win)
        returns.append(ep.episode_return)
    return {"win_rate": float(np.mean(wins)), "mean_return": float(np.mean(returns))}


def evaluate_random(env: PredatorPrey, env_cfg: EnvConfig, split: str, n_episodes: int,
                    rng: np.random.Generator) -> Dict[str, float]:
    """Uniform-random baseline on the same protocol as ``evaluate``."""
    return evaluate(None, env, env_cfg, split, n_episodes, rng)


def area_under_curve(steps: Sequence[float], win_rates: Sequence[float]) -> float:
    """Trapezoidal area under win rate vs step, normalised by the step span."""
    s = np.asarray(steps, dtype=np.float64)
    w = np.asarray(win_rates, dtype=np.float64)
    if s.size == 0:
        return 0.0
    if s.size == 1 or s[-1] == s[0]:
        return float(w[-1])
    area = np.sum((s[1:] - s[:-1]) * (w[1:] + w[:-1]) / 2.0)
    return float(area / (s[-1] - s[0]))


# ─────────────────────────────────────────────────────────────────────────────
# Training loop
# ─────────────────────────────────────────────────────────────────────────────

class Trainer:
    """Alternates multi-task collection and optimisation until train.total_steps.

    Parameters
    ----------
    cfg : RunConfig
        Full configuration; ``cfg.train.seed`` seeds every rng stream.
    out_dir : str
        Run directory (created if needed).
    """

    def __init__(self, cfg: RunConfig, out_dir: str):
        self.cfg = cfg
        self.out_dir = out_dir
        seed = cfg.train.seed
        torch.manual_seed(seed)
        self.env = PredatorPrey.from_config(cfg.env)
        self.learner = OPTLearner(cfg, self.env.n_features, self.env.n_actions)
        self.buffer = ReplayBuffer(cfg.train.buffer_size)
        self.collect_rng = np.random.default_rng([seed, _COLLECT])
        self.train_rng = np.random.default_rng([seed, _TRAIN])
        self.env_steps = 0
        self.episodes = 0
        self.rows: List[dict] = []
        self._curves: Dict[str, List[tuple]] = {s: [] for s in cfg.train.eval_splits}
        self._last_losses: Dict[str, float] = {}
        self._n_evals = 0
        self._pool: Optional[CollectorPool] = None
        self._snapshot: Optional[UtilityNetwork] = None
        self._mlflow_run = None

    @property
    def metrics_path(self) -> str:
        return os.path.join(self.out_dir, "metrics.csv")

    def checkpoint_path(self, name: str) -> str:
        return os.path.join(self.out_dir, "checkpoints", f"{name}.pt")

    # ------------------------------------------------------------------

    def run(self) -> str:
        t = self.cfg.train
        os.makedirs(self.out_dir, exist_ok=True)
        self.cfg.to_yaml(os.path.join(self.out_dir, "config.yaml"))
        self._start_mlflow()
        logger.info(
            f"Training variant={self.cfg.variant} seed={t.seed} steps={t.total_steps} "
            f"N={self.cfg.model.n_prototypes} activation={self.cfg.model.activation} "
            f"mixer={self.cfg.model.mixer}"
        )
        if t.n_collectors > 1:
            self._pool = CollectorPool(self._collect_job, max_workers=t.n_collectors)

        try:
            self._evaluate_all()
            next_eval = t.eval_interval
            next_ckpt = t.checkpoint_interval
            while self.env_steps < t.total_steps:
                epsilon = self.epsilon
                for episode in self._collect_round(epsilon):
                    self.buffer.add(episode)
                    self.env_steps += episode.length
                    self.episodes += 1
                    losses = self.learner.train_step(self.buffer, self.train_rng)
                    if losses is not None:
                        self._last_losses = losses.as_floats()

                if self.env_steps >= next_eval:
                    self._evaluate_all()
                    while next_eval <= self.env_steps:
                        next_eval += t.eval_interval
                if self.env_steps >= next_ckpt:
                    save_checkpoint(self.checkpoint_path(f"step_{self.env_steps}"), self.learner,
                                    self.cfg, self.env_steps, self.episodes)
                    while next_ckpt <= self.env_steps:
                        next_ckpt += t.checkpoint_interval

            final = save_checkpoint(self.checkpoint_path("final"), self.learner, self.cfg,
                                    self.env_steps, self.episodes)
            self._finish_mlflow(final)
        finally:
            if self._pool is not None:
                self._pool.shutdown()
                self._pool = None
            if self._mlflow_run is not None:
                mlflow.end_run(status="FAILED")
                self._mlflow_run = None
        logger.info(f"Run complete: {self.env_steps} env steps, {self.episodes} episodes -> {self.out_dir}")
        return self.out_dir

    @property
    def epsilon(self) -> float:
        t = self.cfg.train
        return epsilon_schedule(self.env_steps, t.epsilon_start, t.epsilon_end, t.epsilon_anneal)

    def _collect_round(self, epsilon: float) -> List[Episode]:
        dtype = self.learner.dtype
        if self._pool is None:
            task = sample_task("train", self.cfg.env, self.collect_rng)
            return [collect_episode(self.env, self.learner.agent, task, epsilon, self.collect_rng, dtype=dtype)]

        self._snapshot = copy.deepcopy(self.learner.agent)
        jobs = []
        for k in range(self.cfg.train.n_collectors):
            task = sample_task("train", self.cfg.env, self.collect_rng)
            seed = [self.cfg.train.seed, _WORKER, self.episodes + k]
            jobs.append(CollectorJob(job_id=self.episodes + k, task=task, epsilon=epsilon, seed=seed))
        return self._pool.collect(jobs)

    def _collect_job(self, job: CollectorJob) -> Episode:
        rng = np.random.default_rng(job.seed)
        return collect_episode(self.env, self._snapshot, job.task, job.epsilon, rng, dtype=self.learner.dtype)

    def _evaluate_all(self) -> None:
        t = self.cfg.train
        for split in t.eval_splits:
            rng = np.random.default_rng([t.seed, _EVAL, self._n_evals])
            result = evaluate(self.learner.agent, self.env, self.cfg.env, split,
                              t.eval_episodes, rng, dtype=self.learner.dtype)
            curve = self._curves[split]
            curve.append((self.env_steps, result["win_rate"]))
            auc = area_under_curve([c[0] for c in curve], [c[1] for c in curve])
            row = {
                "step": self.env_steps,
                "episodes": self.episodes,
                "epsilon": self.epsilon,
                "td_loss": self._last_losses.get("td_loss", float("nan")),
                "cd_loss": self._last_losses.get("cd_loss", float("nan")),
                "cmi_loss": self._last_losses.get("cmi_loss", float("nan")),
                "total_loss": self._last_losses.get("total_loss", float("nan")),
                "eval_split": split,
                "win_rate": result["win_rate"],
                "mean_return": result["mean_return"],
                "auc_so_far": auc,
                "variant": self.cfg.variant,
            }
            self.rows.append(row)
            logger.info(
                f"step={self.env_steps} eps={row['epsilon']:.3f} split={split} "
                f"win={row['win_rate']:.3f} return={row['mean_return']:.2f} "
                f"td={row['td_loss']:.4f} cd={row['cd_loss']:.4f} cmi={row['cmi_loss']:.4f}"
            )
            self._log_mlflow_metrics(row, split)
        self._n_evals += 1
        pd.DataFrame(self.rows, columns=METRIC_COLUMNS).to_csv(self.metrics_path, index=False)

    # ------------------------------------------------------------------
    # Experiment tracking
    # ------------------------------------------------------------------

    def _start_mlflow(self) -> None:
        if not self.cfg.train.use_mlflow:
            return
        if not _HAS_MLFLOW:
            logger.warning("train.use_mlflow is set but mlflow is not installed; tracking disabled")
            return
        try:
            mlflow.set_experiment("opt-predator-prey")
            self._mlflow_run = mlflow.start_run(run_name=f"{self.cfg.variant}_seed{self.cfg.train.seed}")
            mlflow.set_tags({"variant": self.cfg.variant, "config_hash": self.cfg.config_hash()})
            params = {}
            for section in ("model", "loss", "train"):
                for k, v in getattr(self.cfg, section).__dict__.items():
                    params[f"{section}.{k}"] = str(v)
            mlflow.log_params(params)
        except Exception:
            logger.warning("MLflow start failed; continuing without tracking", exc_info=True)
            self._mlflow_run = None

    def _log_mlflow_metrics(self, row: dict, split: str) -> None:
        if self._mlflow_run is None:
            return
        try:
            for key in ("win_rate", "mean_return", "auc_so_far", "td_loss", "cd_loss", "cmi_loss"):
                value = float(row[key])
                if np.isfinite(value):
                    mlflow.log_metric(f"{split}.{key}", value, step=int(row["step"]))
        except Exception:
            logger.warning("MLflow metric logging failed", exc_info=True)

    def _finish_mlflow(self, final_checkpoint: str) -> None:
        if self._mlflow_run is None:
            return
        try:
            mlflow.log_artifact(self.metrics_path, artifact_path="metrics")
            mlflow.log_artifact(final_checkpoint, artifact_path="checkpoints")
        except Exception:
            logger.exception("MLflow logging failed")
        finally:
            try:
                mlflow.end_run()
            except Exception:
                pass
            self._mlflow_run = None
