'''
Scheduling agents.

  * deep Q-learning with experience replay, a target network synced every N
    gradient updates and an annealed epsilon-greedy policy
  * tabular Q-learning and a value-iteration oracle for small instances
  * the comparison baselines: the same learner without caching, and a myopic
    selector that assumes the current channel stays as it is
'''
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .fsmc_channel import sample_channel_matrices
from .ia_core import solve_ia
from .mdp_env import (
    CacheIaEnv,
    EnvConfig,
    SystemAction,
    SystemState,
    advance_state,
    compute_rewards,
    encode_observation,
    enumerate_actions,
    enumerate_states,
    evaluate_action,
    reset,
    state_index,
    state_space_size,
)
from .neural_q import (
    DEFAULT_HIDDEN,
    MlpParameters,
    TrainingBatch,
    backward,
    copy_weights,
    forward,
    init_parameters,
    q_architecture,
    sgd_step,
)

logger = logging.getLogger(__name__)

MAX_ORACLE_STATES = 10**4
MAX_ORACLE_ACTIONS = 64
ORACLE_TOL = 1e-10


class ReplayUnderflowError(ValueError):
    pass


class OracleSizeError(ValueError):
    pass


# ============= EXPERIENCE REPLAY =============

@dataclass(frozen=True)
class Experience:
    x: np.ndarray
    a: int
    r: float
    x_next: np.ndarray


@dataclass(frozen=True)
class ExperienceBatch:
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_observations: np.ndarray
    positions: np.ndarray

    def __len__(self):
        return self.actions.size


class ReplayMemory:
    """
    FIFO ring buffer of experiences.

    Storage grows geometrically up to `capacity`; once full, each store
    overwrites the oldest entry.
    """

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError(f"Replay capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.insertions = 0
        self._size = 0
        self._next = 0
        self._obs = None
        self._next_obs = None
        self._actions = None
        self._rewards = None

    def __len__(self):
        return self._size

    def _allocate(self, dim: int, rows: int) -> None:
        def grow(old, shape, dtype):
            new = np.zeros(shape, dtype=dtype)
            if old is not None:
                new[: old.shape[0]] = old
            return new

        self._obs = grow(self._obs, (rows, dim), np.float64)
        self._next_obs = grow(self._next_obs, (rows, dim), np.float64)
        self._actions = grow(self._actions, (rows,), np.int64)
        self._rewards = grow(self._rewards, (rows,), np.float64)

    def store(self, e: Experience) -> None:
        x = np.asarray(e.x, dtype=np.float64)
        if self._obs is None:
            self._allocate(x.size, min(self.capacity, 1024))
        elif self._next >= self._obs.shape[0]:
            self._allocate(x.size, min(self.capacity, 2 * self._obs.shape[0]))

        pos = self._next
        self._obs[pos] = x
        self._next_obs[pos] = np.asarray(e.x_next, dtype=np.float64)
        self._actions[pos] = int(e.a)
        self._rewards[pos] = float(e.r)

        self._next = (pos + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.insertions += 1

    def order(self) -> np.ndarray:
        """Storage positions from oldest to newest."""
        if self._size < self.capacity:
            return np.arange(self._size)
        return (np.arange(self._size) + self._next) % self.capacity

    def experiences(self) -> list[Experience]:
        return [
            Experience(self._obs[p].copy(), int(self._actions[p]), float(self._rewards[p]), self._next_obs[p].copy())
            for p in self.order()
        ]

    def gather(self, positions: np.ndarray) -> ExperienceBatch:
        return ExperienceBatch(
            self._obs[positions],
            self._actions[positions],
            self._rewards[positions],
            self._next_obs[positions],
            positions,
        )


def store(memory: ReplayMemory, e: Experience) -> ReplayMemory:
    memory.store(e)
    return memory


def sample_minibatch(memory: ReplayMemory, B: int, rng: np.random.Generator) -> ExperienceBatch:
    """B experiences drawn uniformly with replacement."""
    if B < 1:
        raise ValueError(f"Batch size must be >= 1, got {B}")
    if len(memory) < B:
        raise ReplayUnderflowError(f"Replay memory holds {len(memory)} experiences, batch needs {B}")
    return memory.gather(rng.integers(0, len(memory), size=B))


# ============= DEEP Q-LEARNING =============

@dataclass(frozen=True)
class DqnHyperparams:
    """
    Defaults: discount 0.5, target sync every 4 gradient updates, replay of
    100K experiences, greedy probability annealed 0.1 -> 1.0.
    """

    discount: float = 0.5
    greedy_start: float = 0.1
    greedy_end: float = 1.0
    anneal_fraction: float = 0.8
    batch_size: int = 32
    target_sync: int = 4
    learning_rate: float = 1e-3
    warmup: int = 1000
    replay_capacity: int = 100_000
    episodes: int = 500
    hidden: tuple[int, ...] = DEFAULT_HIDDEN

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if self.target_sync < 1:
            raise ValueError(f"target_sync must be >= 1, got {self.target_sync}")
        for name in ("greedy_start", "greedy_end", "anneal_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if self.batch_size < 1 or self.replay_capacity < self.batch_size:
            raise ValueError("Need 1 <= batch_size <= replay_capacity")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.episodes < 0 or self.warmup < 0:
            raise ValueError("episodes and warmup must be >= 0")
        if any(h < 1 for h in self.hidden):
            raise ValueError(f"Hidden widths must be >= 1, got {self.hidden}")

    @property
    def warmup_size(self) -> int:
        return max(self.batch_size, self.warmup)


def greedy_probability(step: int, total_steps: int, hyper: DqnHyperparams) -> float:
    """Linear anneal from greedy_start to greedy_end over the first anneal_fraction of training."""
    anneal_steps = hyper.anneal_fraction * total_steps
    if anneal_steps <= 0:
        return hyper.greedy_end
    frac = min(1.0, step / anneal_steps)
    return hyper.greedy_start + frac * (hyper.greedy_end - hyper.greedy_start)


def select_action(params: MlpParameters, observation: np.ndarray, greedy_prob: float, rng: np.random.Generator) -> int:
    """Exploit with probability greedy_prob (lowest index wins ties), else explore uniformly."""
    if not 0.0 <= greedy_prob <= 1.0:
        raise ValueError(f"greedy_prob must lie in [0, 1], got {greedy_prob}")
    if rng.random() < greedy_prob:
        return int(np.argmax(forward(params, observation)))
    return int(rng.integers(0, params.n_outputs))


def td_targets(batch: ExperienceBatch, target_params: MlpParameters, discount: float) -> np.ndarray:
    """y = r + discount * max_a' Q(x', a'; theta^-)."""
    next_q = forward(target_params, batch.next_observations)
    return batch.rewards + discount * next_q.max(axis=1)


@dataclass
class TrainingResult:
    params: MlpParameters | None
    curve: list[float]
    target_params: MlpParameters | None = None
    sync_updates: list[int] = field(default_factory=list)
    updates: int = 0
    visited_states: list[SystemState] | None = None


def train(
    env_cfg: EnvConfig,
    hyper: DqnHyperparams,
    rng: np.random.Generator,
    record_states: bool = False,
    progress_every: int = 50,
) -> TrainingResult:
    """
    Deep Q-learning over `hyper.episodes` episodes of `env_cfg.T` slots.

    Every slot: act, observe, store; once the replay holds the warm-up size,
    one minibatch gradient step. The target copy is refreshed after every
    `target_sync` gradient updates. The curve holds each episode's summed
    reward.
    """
    params = init_parameters(q_architecture(env_cfg.observation_size, env_cfg.n_actions, hyper.hidden), rng)
    target = copy_weights(params)
    memory = ReplayMemory(hyper.replay_capacity)
    env = CacheIaEnv(env_cfg, rng)

    total_steps = hyper.episodes * env_cfg.T
    curve: list[float] = []
    sync_updates: list[int] = []
    visited: list[SystemState] | None = [] if record_states else None
    updates = 0
    global_step = 0

    for episode in range(hyper.episodes):
        state = env.reset()
        obs = env.observation()
        episode_sum = 0.0
        for _ in range(env_cfg.T):
            greedy = greedy_probability(global_step, total_steps, hyper)
            action = select_action(params, obs, greedy, rng)
            outcome = env.step(action)
            next_obs = env.observation()
            memory.store(Experience(obs, action, outcome.reward, next_obs))
            if visited is not None:
                visited.append(state)
            episode_sum += outcome.reward

            if len(memory) >= hyper.warmup_size:
                batch = sample_minibatch(memory, hyper.batch_size, rng)
                y = td_targets(batch, target, hyper.discount)
                grads = backward(params, TrainingBatch(batch.observations, batch.actions, y))
                params = sgd_step(params, grads, hyper.learning_rate)
                updates += 1
                if updates % hyper.target_sync == 0:
                    target = copy_weights(params)
                    sync_updates.append(updates)

            state, obs = outcome.next_state, next_obs
            global_step += 1

        curve.append(episode_sum)
        if progress_every and (episode + 1) % progress_every == 0:
            recent = np.mean(curve[-progress_every:])
            logger.info(
                "Episode %d/%d: mean sum rate %.3f over last %d, greedy prob %.3f, %d updates",
                episode + 1, hyper.episodes, recent, progress_every, greedy, updates,
            )

    return TrainingResult(params, curve, target, sync_updates, updates, visited)


def baseline_no_cache_train(env_cfg: EnvConfig, hyper: DqnHyperparams, rng: np.random.Generator, **kwargs) -> TrainingResult:
    """The same learner on a network whose caches never hold the requested content."""
    return train(replace(env_cfg, p_hit=0.0), hyper, rng, **kwargs)


def greedy_policy(params: MlpParameters, states: Sequence[SystemState], H: int) -> np.ndarray:
    obs = np.stack([encode_observation(s, H) for s in states])
    return np.argmax(forward(params, obs), axis=1)


# ============= MYOPIC STATIC BASELINE =============

def _myopic_scores(state: SystemState, env_cfg: EnvConfig, channels, rng: np.random.Generator) -> list[np.ndarray]:
    no_cache = (0,) * env_cfg.L
    scores = []
    for action in enumerate_actions(env_cfg.L):
        if action.n_active == 0:
            scores.append(np.zeros(env_cfg.L))
            continue
        solution = solve_ia(channels, action.active_set, env_cfg.ia, rng)
        scores.append(compute_rewards(state, action, solution, channels, env_cfg, cache_bits=no_cache))
    return scores


def baseline_myopic_static(state: SystemState, env_cfg: EnvConfig, frozen_channels, rng: np.random.Generator) -> SystemAction:
    """
    Best action for the current slot alone, scored with every cache bit forced
    to 0 on the given channel realization.
    """
    totals = [s.sum() for s in _myopic_scores(state, env_cfg, frozen_channels, rng)]
    return SystemAction.from_index(int(np.argmax(totals)), env_cfg.L)


def run_myopic_static(env_cfg: EnvConfig, hyper: DqnHyperparams, rng: np.random.Generator) -> TrainingResult:
    """Episodic rollout of the myopic selector on the cache-free network."""
    cfg = replace(env_cfg, p_hit=0.0)
    curve = []
    for episode in range(hyper.episodes):
        state = reset(cfg, rng, fallback_uniform=True)
        episode_sum = 0.0
        for _ in range(cfg.T):
            channels = sample_channel_matrices(cfg.L, cfg.N_t, cfg.N_r, rng, slot=state.slot)
            totals = [s.sum() for s in _myopic_scores(state, cfg, channels, rng)]
            episode_sum += float(max(totals))
            state = advance_state(state, cfg, rng)
        curve.append(episode_sum)
        logger.debug("Myopic baseline episode %d: sum rate %.3f", episode + 1, episode_sum)
    return TrainingResult(None, curve)


# ============= TABULAR Q-LEARNING AND ORACLE =============

class TabularQ:
    """Dense Q table over the enumerated (2H)^L states, with per-pair visit counts."""

    def __init__(self, L: int, H: int):
        self.L = L
        self.H = H
        self.values = np.zeros((state_space_size(L, H), 2**L))
        self.visits = np.zeros_like(self.values, dtype=np.int64)

    def index(self, state) -> int:
        if isinstance(state, SystemState):
            return state_index(state, self.H)
        return int(state)

    def greedy_policy(self) -> np.ndarray:
        return np.argmax(self.values, axis=1)


def tabular_q_update(Q: TabularQ, x, a: int, r: float, x_next, discount: float) -> TabularQ:
    """
    Q(x,a) += alpha * (r + discount * max_a' Q(x',a') - Q(x,a)) with the
    pair's own decaying rate alpha = 1 / (1 + visits(x,a)).
    """
    i, j = Q.index(x), Q.index(x_next)
    alpha = 1.0 / (1.0 + Q.visits[i, a])
    target = r + discount * Q.values[j].max()
    Q.values[i, a] += alpha * (target - Q.values[i, a])
    Q.visits[i, a] += 1
    return Q


@dataclass(frozen=True)
class OracleSolution:
    states: list[SystemState]
    rewards: np.ndarray
    transitions: np.ndarray
    q_values: np.ndarray
    values: np.ndarray
    policy: np.ndarray
    discount: float


def _candidate_kernel(env_cfg: EnvConfig) -> np.ndarray:
    """Transition kernel of one candidate's (level, bit) digit, digit = level*2 + bit."""
    cache = np.array([1.0 - env_cfg.p_hit, env_cfg.p_hit])
    return np.kron(env_cfg.transition.entries, np.tile(cache, (2, 1)))


def system_transitions(env_cfg: EnvConfig) -> np.ndarray:
    """Exact state kernel; channels and caches evolve independently of the action."""
    K = _candidate_kernel(env_cfg)
    P = np.ones((1, 1))
    for _ in range(env_cfg.L):
        P = np.kron(K, P)
    return P


def _estimate_rewards(env_cfg: EnvConfig, states: list[SystemState], mc_samples: int, rng: np.random.Generator) -> np.ndarray:
    actions = enumerate_actions(env_cfg.L)
    R = np.zeros((len(states), len(actions)))
    for _ in range(mc_samples):
        channels = sample_channel_matrices(env_cfg.L, env_cfg.N_t, env_cfg.N_r, rng)
        for action in actions:
            if action.n_active == 0:
                continue
            # the IA solution depends on the active set only, so it is shared by every state
            solution = solve_ia(channels, action.active_set, env_cfg.ia, rng)
            for s, state in enumerate(states):
                R[s, action.index] += compute_rewards(state, action, solution, channels, env_cfg).sum()
    return R / mc_samples


def _bellman_fixed_point(R: np.ndarray, P: np.ndarray, discount: float) -> np.ndarray:
    V = np.zeros(R.shape[0])
    for _ in range(10**6):
        V_next = (R + discount * (P @ V)[:, None]).max(axis=1)
        if np.max(np.abs(V_next - V)) < ORACLE_TOL:
            return V_next
        V = V_next
    raise RuntimeError("Value iteration did not converge")


def value_iteration_oracle(
    env_cfg: EnvConfig,
    mc_samples: int,
    rng: np.random.Generator,
    discount: float = 0.5,
) -> OracleSolution:
    """
    Optimal values and policy of a small instance: Monte Carlo rewards per
    (state, action), exact transition kernel, Bellman iteration to a fixed
    point.
    """
    n_states = state_space_size(env_cfg.L, env_cfg.H)
    if n_states > MAX_ORACLE_STATES or env_cfg.n_actions > MAX_ORACLE_ACTIONS:
        raise OracleSizeError(
            f"Oracle limited to {MAX_ORACLE_STATES} states and {MAX_ORACLE_ACTIONS} actions, "
            f"got {n_states} and {env_cfg.n_actions}"
        )
    if not 0.0 <= discount < 1.0:
        raise ValueError(f"discount must lie in [0, 1), got {discount}")
    if mc_samples < 1:
        raise ValueError(f"mc_samples must be >= 1, got {mc_samples}")

    states = enumerate_states(env_cfg.L, env_cfg.H)
    R = _estimate_rewards(env_cfg, states, mc_samples, rng)
    P = system_transitions(env_cfg)
    V = _bellman_fixed_point(R, P, discount)
    Q = R + discount * (P @ V)[:, None]
    logger.info("Oracle solved: %d states, %d actions, %d MC samples", n_states, env_cfg.n_actions, mc_samples)
    return OracleSolution(states, R, P, Q, V, np.argmax(Q, axis=1), discount)


def run_tabular_q_learning(
    env_cfg: EnvConfig,
    discount: float,
    rng: np.random.Generator,
    slots: int,
    progress_every: int = 5000,
) -> TabularQ:
    """
    Tabular Q-learning along one long rollout of the environment.

    Every slot draws the channels once, scores each action on them and
    samples the next state; each observed (x, a, r, x') then goes through
    `tabular_q_update`. Actions share the slot's channels and next state, so
    their value differences carry only the reward noise.
    """
    if not 0.0 <= discount < 1.0:
        raise ValueError(f"discount must lie in [0, 1), got {discount}")
    if slots < 1:
        raise ValueError(f"slots must be >= 1, got {slots}")

    Q = TabularQ(env_cfg.L, env_cfg.H)
    actions = enumerate_actions(env_cfg.L)
    state = reset(env_cfg, rng, fallback_uniform=True)
    for t in range(slots):
        channels = sample_channel_matrices(env_cfg.L, env_cfg.N_t, env_cfg.N_r, rng, slot=state.slot)
        rewards = [float(evaluate_action(state, a, channels, env_cfg, rng)[0].sum()) for a in actions]
        next_state = advance_state(state, env_cfg, rng)
        for action, r in zip(actions, rewards):
            tabular_q_update(Q, state, action.index, r, next_state, discount)
        state = next_state
        if progress_every and (t + 1) % progress_every == 0:
            logger.info("Tabular Q-learning: %d/%d slots, %d pairs unvisited", t + 1, slots, int(np.sum(Q.visits == 0)))
    return Q


def policy_value(oracle: OracleSolution, policy: np.ndarray, discount: float | None = None) -> np.ndarray:
    """Exact discounted value of a fixed policy on the oracle's model."""
    discount = oracle.discount if discount is None else discount
    r_pi = oracle.rewards[np.arange(len(policy)), np.asarray(policy)]
    V = np.zeros_like(r_pi)
    for _ in range(10**6):
        V_next = r_pi + discount * oracle.transitions @ V
        if np.max(np.abs(V_next - V)) < ORACLE_TOL:
            return V_next
        V = V_next
    raise RuntimeError("Policy evaluation did not converge")


def policy_agreement(oracle: OracleSolution, policy: np.ndarray, tie_tol: float | None = None) -> float:
    """
    Share of states where `policy` takes the oracle's action. With `tie_tol`,
    an action whose Q* lies within tie_tol of the best one counts as well.
    """
    policy = np.asarray(policy)
    if tie_tol is None:
        return float(np.mean(policy == oracle.policy))
    rows = np.arange(len(policy))
    best = oracle.q_values[rows, oracle.policy]
    return float(np.mean(oracle.q_values[rows, policy] >= best - tie_tol))
