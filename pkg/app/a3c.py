"""
Asynchronous advantage actor-critic agent that picks one material per layer by walking
the environment map.

The state holds one grid cell per layer (GRID_CELLS positions per axis, coordinate =
cell / GRID_CELLS). Each action moves one layer by one cell. Every visited state is
resolved to a material tuple, whose thicknesses are optimized once and memoized in a
shared DesignCache. Worker threads push n-step advantage gradients to a lock-protected
global network.
"""
import logging
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from numbers import Integral
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field

from ga import GaConfig, optimize_thickness
from networks import Adam, Mlp, softmax
from runtime_config import config
from tmm import Quantity, StackOptics, observation_error
from utils import band_average, band_mask, derive_seed

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1

# Layer moves in cells: +x, +y, -x, -y
BASE_MOVES = ((1, 0), (0, 1), (-1, 0), (0, -1))

SUCCESS = "success"
IMPROVED = "improved"
STALLED = "stalled"
NOT_IMPROVED = "not_improved"
STEP_CAP = "step_cap"
FAILED = "failed"


class UpdateError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration


class RewardConfig(BaseModel):
    stall_threshold: int = Field(default_factory=lambda: config.STALL_THRESHOLD, ge=1)
    stall_penalty: float = Field(default_factory=lambda: config.STALL_PENALTY)
    no_improve_penalty: float = Field(default_factory=lambda: config.NO_IMPROVE_PENALTY)
    success_reward: float = Field(default_factory=lambda: config.SUCCESS_REWARD)
    success_merit_threshold: float = Field(default=0.0, ge=0)
    # Band-average absorption that also counts as success; None disables the check
    success_band_absorption: Optional[float] = Field(default=None, gt=0, le=1)
    observation_scale: float = Field(default_factory=lambda: config.OBSERVATION_SCALE, gt=0)
    gamma: float = Field(default_factory=lambda: config.A3C_GAMMA, gt=0, le=1)
    n_steps: int = Field(default_factory=lambda: config.A3C_N_STEPS, ge=1)


class A3cConfig(BaseModel):
    actor_hidden: List[int] = Field(default_factory=lambda: list(config.A3C_ACTOR_HIDDEN))
    critic_hidden: List[int] = Field(default_factory=lambda: list(config.A3C_CRITIC_HIDDEN))
    learning_rate: float = Field(default_factory=lambda: config.A3C_LEARNING_RATE, gt=0)
    entropy_beta: float = Field(default_factory=lambda: config.A3C_ENTROPY_BETA, ge=0)
    workers: int = Field(default_factory=lambda: config.A3C_WORKERS, ge=1)
    max_episode_steps: int = Field(default_factory=lambda: config.A3C_MAX_EPISODE_STEPS, ge=1)
    seed: int = Field(default_factory=lambda: config.SEED)
    reward: RewardConfig = Field(default_factory=RewardConfig)


# ---------------------------------------------------------------------------
# Actions and states


@dataclass(frozen=True)
class Action:
    index: int
    layer: int  # 1-based
    dx: int  # cells
    dy: int

    @property
    def delta(self):
        return self.dx / config.GRID_CELLS, self.dy / config.GRID_CELLS


class ActionTable:
    def __init__(self, movable_layers):
        self.actions = []
        for layer in movable_layers:
            moves = BASE_MOVES
            if ((layer - 1) // 2) % 2 == 1:
                moves = BASE_MOVES[2:] + BASE_MOVES[:2]
                if layer % 2 == 0:
                    moves = moves[:2] + moves[:1:-1]
            for dx, dy in moves:
                self.actions.append(Action(len(self.actions), int(layer), dx, dy))
        self._index = {(a.layer, a.dx, a.dy): a.index for a in self.actions}

    def __len__(self):
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def decode(self, index) -> Action:
        return self.actions[index]

    def encode(self, layer, dx, dy) -> int:
        return self._index[(layer, dx, dy)]


def build_action_table(movable_layers) -> ActionTable:
    """
    movable_layers: a count M (layers 1..M) or the explicit 1-based layer numbers.
    Layers 3-4, 7-8, ... list their moves starting from -x; layers 4, 8, ... end with +y, +x.
    """
    if isinstance(movable_layers, Integral):
        if movable_layers < 1:
            raise ValueError("At least one movable layer is required")
        movable_layers = range(1, int(movable_layers) + 1)
    return ActionTable(list(movable_layers))


@dataclass(frozen=True)
class EnvState:
    cells: tuple  # ((cx, cy), ...) one pair per layer

    def __post_init__(self):
        cells = tuple((int(x), int(y)) for x, y in self.cells)
        for x, y in cells:
            if not (0 <= x < config.GRID_CELLS and 0 <= y < config.GRID_CELLS):
                raise ValueError(f"Cell ({x}, {y}) outside the {config.GRID_CELLS}x{config.GRID_CELLS} grid")
        object.__setattr__(self, "cells", cells)

    @property
    def positions(self):
        return [(x / config.GRID_CELLS, y / config.GRID_CELLS) for x, y in self.cells]

    def vector(self):
        return np.array(self.cells, dtype=float).ravel() / config.GRID_CELLS


def step(state: EnvState, action: Action) -> EnvState:
    last = config.GRID_CELLS - 1
    cells = list(state.cells)
    x, y = cells[action.layer - 1]
    cells[action.layer - 1] = (min(max(x + action.dx, 0), last), min(max(y + action.dy, 0), last))
    return EnvState(tuple(cells))


def random_state(layer_count, rng) -> EnvState:
    cells = rng.integers(0, config.GRID_CELLS, size=(layer_count, 2))
    return EnvState(tuple(map(tuple, cells)))


# ---------------------------------------------------------------------------
# Rewards


def meets_target(merit, band_absorption, cfg: RewardConfig) -> bool:
    if merit <= cfg.success_merit_threshold:
        return True
    return (cfg.success_band_absorption is not None and band_absorption is not None
            and band_absorption >= cfg.success_band_absorption)


def reward_case(prev_best_merit, new_merit, steps_since_improvement, cfg: RewardConfig, band_absorption=None) -> str:
    if meets_target(new_merit, band_absorption, cfg):
        return SUCCESS
    if new_merit < prev_best_merit:
        return IMPROVED
    if steps_since_improvement >= cfg.stall_threshold:
        return STALLED
    return NOT_IMPROVED


def compute_reward(prev_best_merit, new_merit, steps_since_improvement, cfg: RewardConfig,
                   observation_error=0.0, band_absorption=None) -> float:
    case = reward_case(prev_best_merit, new_merit, steps_since_improvement, cfg, band_absorption)
    if case == SUCCESS:
        return cfg.success_reward
    if case == IMPROVED:
        return cfg.observation_scale / (1.0 + observation_error)
    if case == STALLED:
        return cfg.stall_penalty
    return cfg.no_improve_penalty


# ---------------------------------------------------------------------------
# Networks


class ActorCritic:
    def __init__(self, state_dim, action_count, cfg: A3cConfig = None, rng=None):
        cfg = cfg or A3cConfig()
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        self.state_dim = state_dim
        self.action_count = action_count
        # Small output weights start the policy close to uniform
        self.actor = Mlp([state_dim, *cfg.actor_hidden, action_count], rng, output_scale=0.01)
        self.critic = Mlp([state_dim, *cfg.critic_hidden, 1], rng)

    def check_finite(self):
        if not (self.actor.is_finite() and self.critic.is_finite()):
            raise UpdateError("Network parameters are not finite")

    def policy(self, states):
        self.check_finite()
        return softmax(self.actor(states))

    def value(self, states):
        self.check_finite()
        return self.critic(states)[:, 0]

    def snapshot(self):
        return self.actor.copy_params(), self.critic.copy_params()

    def load(self, snapshot):
        actor_params, critic_params = snapshot
        self.actor.load_params(actor_params)
        self.critic.load_params(critic_params)


def actor_forward(params: ActorCritic, state) -> np.ndarray:
    vector = state.vector() if isinstance(state, EnvState) else np.asarray(state, dtype=float)
    return params.policy(vector[None, :])[0]


def critic_forward(params: ActorCritic, state) -> float:
    vector = state.vector() if isinstance(state, EnvState) else np.asarray(state, dtype=float)
    return float(params.value(vector[None, :])[0])


@dataclass
class Transition:
    state: EnvState
    action: int
    reward: float
    next_state: EnvState
    terminal: bool


def n_step_returns(rewards, bootstrap_value, gamma):
    returns = np.zeros(len(rewards))
    running = bootstrap_value
    for t in reversed(range(len(rewards))):
        running = rewards[t] + gamma * running
        returns[t] = running
    return returns


def actor_loss(model: ActorCritic, states, actions, advantages, entropy_beta):
    """-sum log pi(a|s) * A - beta * sum H(pi(.|s)), advantages held constant."""
    probs = softmax(model.actor(states))
    log_probs = np.log(probs)
    chosen = log_probs[np.arange(len(actions)), actions]
    entropy = -np.sum(probs * log_probs, axis=1)
    return float(-np.sum(chosen * advantages) - entropy_beta * np.sum(entropy))


def critic_loss(model: ActorCritic, states, returns):
    values = model.critic(states)[:, 0]
    return float(np.sum((returns - values) ** 2))


def trajectory_gradients(model: ActorCritic, trajectory, bootstrap_value, cfg: A3cConfig):
    """
    Returns (actor_grads, critic_grads, info) for one n-step segment.
    """
    if not 1 <= len(trajectory) <= cfg.reward.n_steps:
        raise ValueError(f"Trajectory length must be in [1, {cfg.reward.n_steps}], got {len(trajectory)}")
    states = np.array([t.state.vector() for t in trajectory])
    actions = np.array([t.action for t in trajectory])
    rewards = [t.reward for t in trajectory]
    returns = n_step_returns(rewards, bootstrap_value, cfg.reward.gamma)

    values, critic_cache = model.critic.forward(states)
    values = values[:, 0]
    advantages = returns - values

    logits, actor_cache = model.actor.forward(states)
    probs = softmax(logits)
    log_probs = np.log(probs)
    entropy = -np.sum(probs * log_probs, axis=1)
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(len(actions)), actions] = 1.0
    grad_logits = advantages[:, None] * (probs - one_hot)
    grad_logits += cfg.entropy_beta * probs * (log_probs + entropy[:, None])

    actor_grads, _ = model.actor.backward(actor_cache, grad_logits)
    critic_grads, _ = model.critic.backward(critic_cache, (2.0 * (values - returns))[:, None])

    info = {
        "returns": returns,
        "advantages": advantages,
        "actor_loss": float(-np.sum(log_probs[np.arange(len(actions)), actions] * advantages)
                            - cfg.entropy_beta * np.sum(entropy)),
        "critic_loss": float(np.sum(advantages**2)),
    }
    finite = np.isfinite(info["actor_loss"]) and np.isfinite(info["critic_loss"]) and all(
        np.all(np.isfinite(g)) for g in actor_grads + critic_grads
    )
    if not finite:
        raise UpdateError(f"Non-finite loss for trajectory of {len(trajectory)} steps, rewards {rewards}")
    return actor_grads, critic_grads, info


class GlobalStore:
    """
    Shared actor-critic parameters. Snapshots and updates are atomic.
    """

    def __init__(self, model: ActorCritic, cfg: A3cConfig = None):
        cfg = cfg or A3cConfig()
        self.model = model
        self.actor_optimizer = Adam(model.actor.params, cfg.learning_rate)
        self.critic_optimizer = Adam(model.critic.params, cfg.learning_rate)
        self.version = 0
        self.updates_by_worker = {}
        self._lock = threading.Lock()

    @classmethod
    def create(cls, state_dim, action_count, cfg: A3cConfig = None):
        cfg = cfg or A3cConfig()
        return cls(ActorCritic(state_dim, action_count, cfg), cfg)

    def snapshot(self):
        with self._lock:
            return self.model.snapshot()

    def local_copy(self, cfg: A3cConfig = None):
        local = ActorCritic(self.model.state_dim, self.model.action_count, cfg)
        local.load(self.snapshot())
        return local

    def apply(self, actor_grads, critic_grads, worker_id=0):
        for grad in actor_grads + critic_grads:
            if not np.all(np.isfinite(grad)):
                raise UpdateError(f"Worker {worker_id} sent non-finite gradients")
        with self._lock:
            self.actor_optimizer.step(self.model.actor.params, actor_grads)
            self.critic_optimizer.step(self.model.critic.params, critic_grads)
            self.model.check_finite()
            self.version += 1
            self.updates_by_worker[worker_id] = self.updates_by_worker.get(worker_id, 0) + 1


def n_step_update(store: GlobalStore, trajectory, bootstrap_value, cfg: A3cConfig, model: ActorCritic = None,
                  worker_id=0):
    """
    Gradients are taken on `model` (a worker's local copy, or the global network when omitted)
    and applied to the global store.
    """
    model = store.model if model is None else model
    actor_grads, critic_grads, info = trajectory_gradients(model, trajectory, bootstrap_value, cfg)
    store.apply(actor_grads, critic_grads, worker_id)
    return info


def save_checkpoint(store: GlobalStore, path):
    arrays = {
        "format": np.array(CHECKPOINT_FORMAT),
        "version": np.array(store.version),
        "actor_widths": np.array(store.model.actor.widths),
        "critic_widths": np.array(store.model.critic.widths),
        "actor_steps": np.array(store.actor_optimizer.step_count),
        "critic_steps": np.array(store.critic_optimizer.step_count),
    }
    with store._lock:
        for prefix, network, optimizer in (
            ("actor", store.model.actor, store.actor_optimizer),
            ("critic", store.model.critic, store.critic_optimizer),
        ):
            for i, (param, m, v) in enumerate(zip(network.params, optimizer.m, optimizer.v)):
                arrays[f"{prefix}_param_{i}"] = param
                arrays[f"{prefix}_m_{i}"] = m
                arrays[f"{prefix}_v_{i}"] = v
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        np.savez(handle, **arrays)
    return path


def load_checkpoint(path, cfg: A3cConfig = None) -> GlobalStore:
    with np.load(path) as data:
        if int(data["format"]) != CHECKPOINT_FORMAT:
            raise ValueError(f"Unsupported checkpoint format {int(data['format'])}")
        actor_widths = [int(w) for w in data["actor_widths"]]
        critic_widths = [int(w) for w in data["critic_widths"]]
        base = cfg or A3cConfig()
        cfg = base.model_copy(update={"actor_hidden": actor_widths[1:-1], "critic_hidden": critic_widths[1:-1]})
        store = GlobalStore.create(actor_widths[0], actor_widths[-1], cfg)
        for prefix, network, optimizer in (
            ("actor", store.model.actor, store.actor_optimizer),
            ("critic", store.model.critic, store.critic_optimizer),
        ):
            count = len(network.params)
            network.load_params([data[f"{prefix}_param_{i}"] for i in range(count)])
            optimizer.load_state({
                "step_count": data[f"{prefix}_steps"],
                "m": [data[f"{prefix}_m_{i}"] for i in range(count)],
                "v": [data[f"{prefix}_v_{i}"] for i in range(count)],
            })
        store.version = int(data["version"])
    return store


# ---------------------------------------------------------------------------
# Design evaluation


@dataclass(frozen=True)
class Evaluation:
    materials: tuple  # material ids, top layer first
    thicknesses: tuple  # nm
    merit: float
    observation_error: float = 0.0
    band_absorption: Optional[float] = None  # mean A over the task band, absorption targets only


class DesignCache:
    """
    Thread-safe get-or-compute map from material tuples to Evaluations.
    At most one caller computes a given key; concurrent callers wait for its result.
    """

    def __init__(self):
        self._futures = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        self.computed = 0
        self.best: Optional[Evaluation] = None

    def __len__(self):
        return len(self._futures)

    def __contains__(self, key):
        with self._lock:
            return tuple(key) in self._futures

    def _record(self, evaluation):
        if self.best is None or evaluation.merit < self.best.merit:
            self.best = evaluation

    def seed(self, key, evaluation: Evaluation):
        future = Future()
        future.set_result(evaluation)
        with self._lock:
            self._futures[tuple(key)] = future
            self._record(evaluation)

    def get_or_compute(self, key, compute) -> Evaluation:
        key = tuple(key)
        with self._lock:
            future = self._futures.get(key)
            owner = future is None
            if owner:
                future = Future()
                self._futures[key] = future
                self.misses += 1
            else:
                self.hits += 1
        if owner:
            try:
                evaluation = compute()
            except BaseException as exc:
                future.set_exception(exc)
                raise
            with self._lock:
                self.computed += 1
                self._record(evaluation)
            future.set_result(evaluation)
            logger.debug("Evaluated %s: merit %.6g", key, evaluation.merit)
        return future.result()

    def evaluations(self):
        with self._lock:
            futures = list(self._futures.values())
        return [f.result() for f in futures if f.done() and f.exception() is None]

    def counters(self):
        with self._lock:
            return self.hits, self.misses


def resolve_material(db, value):
    """Material name or id to id; other numbers pass through as fixed indices."""
    if value is None:
        return None
    if isinstance(value, str):
        return db.by_name(value).id
    if isinstance(value, Integral) and not isinstance(value, bool):
        return db.by_id(int(value)).id
    return value


class DesignEnvironment:
    """
    task needs: layer_count, target, incidence, incident_medium, substrate, frozen_layers.
    optimizer(material_ids) -> Evaluation; defaults to a GA run per tuple.
    """

    def __init__(self, env_map, db, task, ga_cfg: GaConfig = None, cache: DesignCache = None, optimizer=None):
        self.env_map = env_map
        self.db = db
        self.task = task
        self.ga_cfg = ga_cfg or GaConfig()
        self.cache = DesignCache() if cache is None else cache
        self.optimizer = optimizer or self.optimize
        self.layer_count = int(task.layer_count)
        self.frozen = {
            int(layer): resolve_material(db, material) if db is not None else int(material)
            for layer, material in (getattr(task, "frozen_layers", None) or {}).items()
        }
        for layer in self.frozen:
            if not 1 <= layer <= self.layer_count:
                raise ValueError(f"Frozen layer {layer} outside 1..{self.layer_count}")
        self.movable_layers = [j for j in range(1, self.layer_count + 1) if j not in self.frozen]
        self.action_table = build_action_table(self.movable_layers) if self.movable_layers else ActionTable([])

    @property
    def state_dim(self):
        return 2 * self.layer_count

    def random_state(self, rng) -> EnvState:
        return random_state(self.layer_count, rng)

    def materials_for(self, state: EnvState):
        if len(state.cells) != self.layer_count:
            raise ValueError(f"State has {len(state.cells)} layers, task has {self.layer_count}")
        found = self.env_map.nearest_materials(state.positions)
        return tuple(self.frozen.get(j + 1, int(found[j])) for j in range(self.layer_count))

    def optimize(self, materials) -> Evaluation:
        cfg = self.ga_cfg.model_copy(update={"seed": derive_seed(self.ga_cfg.seed, *materials)})
        substrate = resolve_material(self.db, self.task.substrate)
        incident = resolve_material(self.db, self.task.incident_medium)
        result = optimize_thickness(list(materials), self.task.target, self.task.incidence, cfg, self.db,
                                    incident, substrate)
        optics = StackOptics.from_materials(materials, self.db, self.task.target.wavelengths_nm, incident, substrate)
        spectra = optics.spectra(result.best_thicknesses, self.task.incidence)
        return Evaluation(
            tuple(int(m) for m in materials),
            tuple(float(t) for t in result.best_thicknesses),
            result.best_merit,
            observation_error(spectra, self.task.target, self.task.incidence),
            self.band_absorption(spectra),
        )

    def band_absorption(self, spectra):
        target = self.task.target
        band = getattr(self.task, "band_nm", None)
        if band is None or target.quantity != Quantity.A or not band_mask(target.wavelengths_nm, band).any():
            return None
        return float(np.mean([band_average(s.absorption, s.wavelengths_nm, band) for s in spectra]))

    def evaluate_materials(self, materials) -> Evaluation:
        materials = tuple(int(m) for m in materials)
        return self.cache.get_or_compute(materials, lambda: self.optimizer(materials))

    def evaluate_state(self, state: EnvState) -> Evaluation:
        return self.evaluate_materials(self.materials_for(state))


def evaluate_state(state: EnvState, env_map, task, ga_cfg: GaConfig, cache: DesignCache, db) -> Evaluation:
    return DesignEnvironment(env_map, db, task, ga_cfg, cache).evaluate_state(state)


# ---------------------------------------------------------------------------
# Workers


class EpisodeBudget:
    def __init__(self, episodes):
        self.episodes = int(episodes)
        self._claimed = 0
        self._lock = threading.Lock()

    def claim(self):
        """Next episode number, or None when the budget is spent."""
        with self._lock:
            if self._claimed >= self.episodes:
                return None
            self._claimed += 1
            return self._claimed - 1


@dataclass
class EpisodeSummary:
    episode: int
    worker_id: int
    steps: int
    terminal_reason: str
    episode_return: float
    episode_best_merit: float
    best_merit_so_far: float
    cache_hits: int
    cache_misses: int
    best: Optional[Evaluation] = field(default=None, repr=False)

    def row(self):
        return {
            "episode": self.episode,
            "worker_id": self.worker_id,
            "steps": self.steps,
            "terminal_reason": self.terminal_reason,
            "best_merit_so_far": self.best_merit_so_far,
            "cache_hits": self.cache_hits,
            "cache_misses": self.cache_misses,
        }


def run_worker(worker_id, store: GlobalStore, env: DesignEnvironment, cfg: A3cConfig, budget: EpisodeBudget):
    """
    Generator of EpisodeSummary. Evaluation errors end the episode as 'failed'.
    """
    rng = np.random.default_rng(cfg.seed + worker_id)
    local = store.local_copy(cfg)
    reward_cfg = cfg.reward

    while (episode := budget.claim()) is not None:
        state = env.random_state(rng)
        steps, total_return, stall = 0, 0.0, 0
        reason, best = None, None
        try:
            best = env.evaluate_state(state)
            if meets_target(best.merit, best.band_absorption, reward_cfg):
                reason = SUCCESS
            elif not len(env.action_table):
                reason = STEP_CAP
        except ValueError as exc:
            logger.warning("Worker %d episode %d failed: %s", worker_id, episode, exc)
            reason = FAILED

        while reason is None:
            local.load(store.snapshot())
            trajectory = []
            while len(trajectory) < reward_cfg.n_steps and reason is None:
                probs = actor_forward(local, state)
                action = int(rng.choice(len(probs), p=probs))
                next_state = step(state, env.action_table.decode(action))
                try:
                    evaluation = env.evaluate_state(next_state)
                except ValueError as exc:
                    logger.warning("Worker %d episode %d failed: %s", worker_id, episode, exc)
                    reason = FAILED
                    break
                stall = 0 if evaluation.merit < best.merit else stall + 1
                case = reward_case(best.merit, evaluation.merit, stall, reward_cfg, evaluation.band_absorption)
                reward = compute_reward(best.merit, evaluation.merit, stall, reward_cfg, evaluation.observation_error,
                                        evaluation.band_absorption)
                if evaluation.merit < best.merit:
                    best = evaluation
                steps += 1
                total_return += reward
                terminal = case in (SUCCESS, STALLED)
                if terminal:
                    reason = case
                elif steps >= cfg.max_episode_steps:
                    reason = STEP_CAP
                trajectory.append(Transition(state, action, reward, next_state, terminal))
                state = next_state

            if trajectory and reason != FAILED:
                bootstrap = 0.0 if trajectory[-1].terminal else critic_forward(local, state)
                n_step_update(store, trajectory, bootstrap, cfg, model=local, worker_id=worker_id)

        hits, misses = env.cache.counters()
        global_best = env.cache.best
        summary = EpisodeSummary(
            episode=episode,
            worker_id=worker_id,
            steps=steps,
            terminal_reason=reason,
            episode_return=total_return,
            episode_best_merit=np.inf if best is None else best.merit,
            best_merit_so_far=np.inf if global_best is None else global_best.merit,
            cache_hits=hits,
            cache_misses=misses,
            best=best,
        )
        logger.info("Worker %d episode %d: %s after %d steps, best merit %.6g",
                    worker_id, episode, reason, steps, summary.best_merit_so_far)
        yield summary


def run_workers(env: DesignEnvironment, cfg: A3cConfig, episodes, store: GlobalStore = None):
    """
    Runs cfg.workers threads until `episodes` episodes are done.
    Returns (store, summaries sorted by episode).
    """
    if store is None:
        store = GlobalStore.create(env.state_dim, max(len(env.action_table), 1), cfg)
    budget = EpisodeBudget(episodes)
    if cfg.workers == 1:
        summaries = list(run_worker(0, store, env, cfg, budget))
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(lambda w: list(run_worker(w, store, env, cfg, budget)), w)
                       for w in range(cfg.workers)]
            summaries = [s for f in futures for s in f.result()]
    return store, sorted(summaries, key=lambda s: s.episode)
