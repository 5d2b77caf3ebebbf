"""Multi-task Predator-Prey grid world.

Agents (predators) move on a grid with fixed obstacles and randomly moving
prey. A prey is removed when the agents adjacent to it (Chebyshev distance 1)
that chose ``CAPTURE`` this step have total attack capability at least the
prey's defense capability. The episode terminates when every prey is
captured and is truncated at the horizon.

Step order: agents move (ascending index, blocked moves become stop), then
captures resolve, then surviving prey move, then reward.

Every observation and global state uses the family's fixed slot layout
(agents, prey, obstacles, each padded), so the entity count M and the
feature size d_e do not vary across tasks. Row features:

    [dx, dy, is_agent, is_prey, is_obstacle, capability, is_self, visible]
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Sequence, Tuple

import numpy as np

from config import ConfigError, EnvConfig

from .tasks import N_ACTIONS, N_FEATURES, ScenarioFamily, TaskSpec

logger = logging.getLogger(__name__)

UP, DOWN, LEFT, RIGHT, STOP, CAPTURE = range(N_ACTIONS)
ACTION_NAMES = ("up", "down", "left", "right", "stop", "capture")
ACTION_TO_DIR = {UP: (0, -1), DOWN: (0, 1), LEFT: (-1, 0), RIGHT: (1, 0)}
_PREY_DIRS = ((0, -1), (0, 1), (-1, 0), (1, 0))


class InvalidStateError(RuntimeError):
    """The world state does not admit the requested transition."""


# ─────────────────────────────────────────────────────────────────────────────
# Types
# ─────────────────────────────────────────────────────────────────────────────

@dataclass
class WorldState:
    task: TaskSpec
    agent_pos: np.ndarray       # (N_a, 2) int, (x, y)
    prey_pos: np.ndarray        # (N_p, 2)
    prey_alive: np.ndarray      # (N_p,) bool
    obstacle_pos: np.ndarray    # (N_o, 2)
    t: int = 0
    done: bool = False
    win: bool = False

    def copy(self) -> "WorldState":
        return replace(self, agent_pos=self.agent_pos.copy(), prey_pos=self.prey_pos.copy(),
                       prey_alive=self.prey_alive.copy(), obstacle_pos=self.obstacle_pos.copy())


@dataclass
class Observation:
    entity_features: np.ndarray     # (M, d_e)
    visibility_mask: np.ndarray     # (M,) bool
    available_actions: np.ndarray   # (n_actions,) bool
    self_index: int


@dataclass
class GlobalState:
    entity_features: np.ndarray     # (M, d_e)
    entity_mask: np.ndarray         # (M,) bool


@dataclass
class StepResult:
    observations: List[Observation]
    reward: float
    done: bool
    terminated: bool
    truncated: bool
    captures: int = 0
    info: dict = field(default_factory=dict)


def capture_rule(attacker_caps: Sequence[int], prey_defense: int) -> bool:
    """Capture succeeds iff a non-empty coalition's total attack covers the defense."""
    return len(attacker_caps) > 0 and sum(attacker_caps) >= prey_defense


def _chebyshev(a, b) -> int:
    return int(max(abs(int(a[0]) - int(b[0])), abs(int(a[1]) - int(b[1]))))


# ─────────────────────────────────────────────────────────────────────────────
# Environment
# ─────────────────────────────────────────────────────────────────────────────

class PredatorPrey:
    """Stateless simulator: all episode state lives in ``WorldState``.

    Parameters
    ----------
    family : ScenarioFamily
        Padding bounds and capability scale shared by every task.
    capture_reward, win_bonus, step_penalty : float
        Team-shared reward table.
    """

    def __init__(self, family: ScenarioFamily, capture_reward: float = 10.0,
                 win_bonus: float = 50.0, step_penalty: float = -0.05):
        self.family = family
        self.capture_reward = capture_reward
        self.win_bonus = win_bonus
        self.step_penalty = step_penalty
        self._pos_scale = float(max(family.grid_w, family.grid_h))
        self._cap_scale = float(max(family.max_capability, 1))

    @classmethod
    def from_config(cls, env: EnvConfig) -> "PredatorPrey":
        return cls(ScenarioFamily.from_config(env), capture_reward=env.capture_reward,
                   win_bonus=env.win_bonus, step_penalty=env.step_penalty)

    @property
    def n_entities(self) -> int:
        return self.family.n_entities

    @property
    def n_features(self) -> int:
        return N_FEATURES

    @property
    def n_actions(self) -> int:
        return N_ACTIONS

    # ------------------------------------------------------------------
    # Reset
    # ------------------------------------------------------------------

    def reset(self, task: TaskSpec, rng: np.random.Generator) -> Tuple[WorldState, List[Observation]]:
        """Place every entity on a distinct uniformly random cell."""
        if not self.family.fits(task):
            raise ConfigError(f"task {task} exceeds the family's padding bounds")
        n_cells = task.grid_w * task.grid_h
        if task.n_entities > n_cells:
            raise ConfigError(
                f"cannot place {task.n_entities} entities on a {task.grid_w}x{task.grid_h} grid"
            )
        cells = rng.choice(n_cells, size=task.n_entities, replace=False)
        coords = np.stack([cells % task.grid_w, cells // task.grid_w], axis=1).astype(np.int64)
        a, p = task.n_agents, task.n_prey
        state = WorldState(
            task=task,
            agent_pos=coords[:a].copy(),
            prey_pos=coords[a:a + p].copy(),
            prey_alive=np.ones(p, dtype=bool),
            obstacle_pos=coords[a + p:].copy(),
        )
        logger.debug(f"Reset {task.n_agents}a/{task.n_prey}p/{task.n_obstacles}o task")
        return state, self.observe_all(state)

    # ------------------------------------------------------------------
    # Step
    # ------------------------------------------------------------------

    def step(self, state: WorldState, actions: Sequence[int],
             rng: np.random.Generator) -> Tuple[WorldState, StepResult]:
        if state.done:
            raise InvalidStateError("episode has finished; call reset()")
        task = state.task
        actions = [int(u) for u in actions]
        if len(actions) != task.n_agents:
            raise ValueError(f"expected {task.n_agents} actions, got {len(actions)}")
        if any(u < 0 or u >= N_ACTIONS for u in actions):
            raise ValueError(f"actions must lie in [0, {N_ACTIONS}), got {actions}")

        nxt = state.copy()
        self._move_agents(nxt, actions)
        captures = self._resolve_captures(nxt, actions)
        self._move_prey(nxt, rng)

        nxt.t = state.t + 1
        terminated = not bool(nxt.prey_alive.any())
        truncated = (not terminated) and nxt.t >= task.horizon
        nxt.done = terminated or truncated
        nxt.win = terminated

        reward = self.step_penalty + self.capture_reward * captures
        if terminated:
            reward += self.win_bonus

        result = StepResult(
            observations=self.observe_all(nxt),
            reward=float(reward),
            done=nxt.done,
            terminated=terminated,
            truncated=truncated,
            captures=captures,
            info={"win": terminated, "t": nxt.t},
        )
        return nxt, result

    def _in_bounds(self, task: TaskSpec, x: int, y: int) -> bool:
        return 0 <= x < task.grid_w and 0 <= y < task.grid_h

    def _move_agents(self, state: WorldState, actions: List[int]) -> None:
        occupied = {tuple(c) for c in state.obstacle_pos}
        occupied |= {tuple(c) for c, alive in zip(state.prey_pos, state.prey_alive) if alive}
        occupied |= {tuple(c) for c in state.agent_pos}
        for i, u in enumerate(actions):
            if u not in ACTION_TO_DIR:
                continue
            dx, dy = ACTION_TO_DIR[u]
            x, y = int(state.agent_pos[i, 0]) + dx, int(state.agent_pos[i, 1]) + dy
            if not self._in_bounds(state.task, x, y) or (x, y) in occupied:
                continue
            occupied.discard(tuple(state.agent_pos[i]))
            state.agent_pos[i] = (x, y)
            occupied.add((x, y))

    def _resolve_captures(self, state: WorldState, actions: List[int]) -> int:
        captures = 0
        for j in np.flatnonzero(state.prey_alive):
            attackers = [
                state.task.attack_caps[i]
                for i, u in enumerate(actions)
                if u == CAPTURE and _chebyshev(state.agent_pos[i], state.prey_pos[j]) == 1
            ]
            if capture_rule(attackers, state.task.defense_caps[j]):
                state.prey_alive[j] = False
                captures += 1
        return captures

    def _move_prey(self, state: WorldState, rng: np.random.Generator) -> None:
        occupied = {tuple(c) for c in state.obstacle_pos}
        occupied |= {tuple(c) for c in state.agent_pos}
        occupied |= {tuple(c) for c, alive in zip(state.prey_pos, state.prey_alive) if alive}
        for j in np.flatnonzero(state.prey_alive):
            x, y = int(state.prey_pos[j, 0]), int(state.prey_pos[j, 1])
            options = [(x, y)]
            for dx, dy in _PREY_DIRS:
                nx, ny = x + dx, y + dy
                if self._in_bounds(state.task, nx, ny) and (nx, ny) not in occupied:
                    options.append((nx, ny))
            choice = options[int(rng.integers(len(options)))]
            occupied.discard((x, y))
            occupied.add(choice)
            state.prey_pos[j] = choice

    # ------------------------------------------------------------------
    # Observations
    # ------------------------------------------------------------------

    def _entity_rows(self, state: WorldState):
        """Yield (slot, position, kind, capability) for every live entity."""
        fam, task = self.family, state.task
        for i in range(task.n_agents):
            yield i, state.agent_pos[i], 0, task.attack_caps[i]
        for j in range(task.n_prey):
            if state.prey_alive[j]:
                yield fam.prey_offset + j, state.prey_pos[j], 1, task.defense_caps[j]
        for k in range(task.n_obstacles):
            yield fam.obstacle_offset + k, state.obstacle_pos[k], 2, 0

    def _row(self, dx: float, dy: float, kind: int, cap: int, is_self: bool) -> np.ndarray:
        row = np.zeros(N_FEATURES, dtype=np.float64)
        row[0] = dx / self._pos_scale
        row[1] = dy / self._pos_scale
        row[2 + kind] = 1.0
        row[5] = cap / self._cap_scale
        row[6] = float(is_self)
        row[7] = 1.0
        return row

    def observe(self, state: WorldState, agent_index: int) -> Observation:
        """Partial view of one agent: entities within Chebyshev ``sight_range``."""
        if not 0 <= agent_index < state.task.n_agents:
            raise ValueError(f"agent index {agent_index} out of range")
        m = self.n_entities
        feats = np.zeros((m, N_FEATURES), dtype=np.float64)
        mask = np.zeros(m, dtype=bool)
        me = state.agent_pos[agent_index]
        sight = state.task.sight_range
        for slot, pos, kind, cap in self._entity_rows(state):
            if _chebyshev(me, pos) > sight and slot != agent_index:
                continue
            feats[slot] = self._row(pos[0] - me[0], pos[1] - me[1], kind, cap, slot == agent_index)
            mask[slot] = True

        avail = np.ones(N_ACTIONS, dtype=bool)
        # adjacent prey are only actionable when visible (sight_range >= 1)
        avail[CAPTURE] = sight >= 1 and any(
            alive and _chebyshev(me, pos) == 1
            for pos, alive in zip(state.prey_pos, state.prey_alive)
        )
        return Observation(entity_features=feats, visibility_mask=mask,
                           available_actions=avail, self_index=agent_index)

    def observe_all(self, state: WorldState) -> List[Observation]:
        return [self.observe(state, i) for i in range(state.task.n_agents)]

    def placeholder_observation(self, slot: int) -> Observation:
        """Observation for an absent agent slot: itself only, ``STOP`` only."""
        m = self.n_entities
        feats = np.zeros((m, N_FEATURES), dtype=np.float64)
        mask = np.zeros(m, dtype=bool)
        feats[slot] = self._row(0.0, 0.0, 0, 0, True)
        mask[slot] = True
        avail = np.zeros(N_ACTIONS, dtype=bool)
        avail[STOP] = True
        return Observation(entity_features=feats, visibility_mask=mask,
                           available_actions=avail, self_index=slot)

    def global_state(self, state: WorldState) -> GlobalState:
        """Fully observed state with absolute coordinates."""
        m = self.n_entities
        feats = np.zeros((m, N_FEATURES), dtype=np.float64)
        mask = np.zeros(m, dtype=bool)
        for slot, pos, kind, cap in self._entity_rows(state):
            feats[slot] = self._row(pos[0], pos[1], kind, cap, False)
            mask[slot] = True
        return GlobalState(entity_features=feats, entity_mask=mask)


def trace_to_dict(states: Sequence[WorldState]) -> dict:
    """JSON-ready record of an episode's world states."""
    if not states:
        return {"task": None, "steps": []}
    return {
        "task": states[0].task.to_dict(),
        "steps": [
            {
                "t": s.t,
                "agents": s.agent_pos.tolist(),
                "prey": s.prey_pos.tolist(),
                "prey_alive": s.prey_alive.tolist(),
                "obstacles": s.obstacle_pos.tolist(),
                "done": s.done,
                "win": s.win,
            }
            for s in states
        ],
    }
