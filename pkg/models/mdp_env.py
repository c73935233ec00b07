'''
Scheduling MDP of the cache-enabled IA network.

State: one (SNR level, cache bit) pair per candidate. Action: an L-bit
active/passive mask. Reward: the sum over candidates of the per-user rate,
where a cache miss caps the rate at the user's share of the backhaul left after
CSI exchange.
'''
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .cache_model import sample_cache_states
from .fsmc_channel import (
    ChannelRealization,
    ReducibleChainError,
    SnrLevelSet,
    TransitionMatrix,
    build_transition_matrix,
    sample_channel_matrices,
    snr_to_linear,
    stationary_distribution,
    step_state,
    uniform_snr_levels,
)
from .ia_core import IaConfig, IaSolution, link_gains, solve_ia

logger = logging.getLogger(__name__)

MAX_ENUMERABLE_L = 20
REWARD_SUM_TOL = 1e-9


@dataclass(frozen=True)
class EnvConfig:
    """Network, channel, cache and backhaul parameters. Capacities are in bits/s/Hz."""

    L: int = 5
    H: int = 10
    p_stay: float = 0.489
    p_hit: float = 0.5
    C_total: float = 60.0
    C_c: float = 2.0
    N_t: int = 3
    N_r: int = 3
    d: int = 1
    noise_var: float = 1.0
    T: int = 50
    ia_max_iter: int = 5000
    ia_tol: float = 1e-8

    def __post_init__(self):
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        if self.H < 2:
            raise ValueError(f"H must be >= 2, got {self.H}")
        if not 0.0 < self.p_stay <= 1.0:
            raise ValueError(f"p_stay must lie in (0, 1], got {self.p_stay}")
        if not 0.0 <= self.p_hit <= 1.0:
            raise ValueError(f"p_hit must lie in [0, 1], got {self.p_hit}")
        if self.C_total < 0 or self.C_c < 0:
            raise ValueError("Backhaul capacities must be >= 0")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if not self.noise_var > 0:
            raise ValueError(f"noise_var must be > 0, got {self.noise_var}")

    @property
    def ia(self) -> IaConfig:
        return IaConfig(d=self.d, max_iter=self.ia_max_iter, tol=self.ia_tol)

    @property
    def n_actions(self) -> int:
        return 2**self.L

    @property
    def observation_size(self) -> int:
        return self.L * (self.H + 1)

    @cached_property
    def snr_levels(self) -> SnrLevelSet:
        return uniform_snr_levels(self.H)

    @cached_property
    def transition(self) -> TransitionMatrix:
        return build_transition_matrix(self.p_stay, self.H)

    @cached_property
    def level_powers(self) -> np.ndarray:
        """Transmit power P^[l] for each SNR level (linear SNR times noise variance)."""
        powers = np.array([snr_to_linear(h, self.snr_levels) for h in range(self.H)]) * self.noise_var
        powers.setflags(write=False)
        return powers


@dataclass(frozen=True)
class SystemState:
    levels: tuple[int, ...]
    cache: tuple[int, ...]
    slot: int = 0

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(x) for x in self.levels))
        object.__setattr__(self, "cache", tuple(int(x) for x in self.cache))
        if len(self.levels) != len(self.cache):
            raise ValueError("State needs exactly one cache bit per SNR level")
        if any(c not in (0, 1) for c in self.cache):
            raise ValueError(f"Cache bits must be 0 or 1, got {self.cache}")

    @property
    def L(self) -> int:
        return len(self.levels)

    @property
    def key(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Slot-free identity used by tabular methods."""
        return self.levels, self.cache

    def validate(self, H: int) -> None:
        bad = [g for g in self.levels if not 0 <= g < H]
        if bad:
            raise ValueError(f"SNR levels {bad} outside [0, {H})")


@dataclass(frozen=True)
class SystemAction:
    """Active/passive mask; bit i of `index` is candidate i (LSB = first candidate)."""

    bits: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"Action bits must be 0 or 1, got {self.bits}")

    @classmethod
    def from_index(cls, index: int, L: int) -> "SystemAction":
        if not 0 <= index < 2**L:
            raise ValueError(f"Action index {index} outside [0, {2**L})")
        return cls(tuple((index >> i) & 1 for i in range(L)))

    @property
    def index(self) -> int:
        return sum(b << i for i, b in enumerate(self.bits))

    @property
    def active_set(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.bits) if b)

    @property
    def n_active(self) -> int:
        return sum(self.bits)


@dataclass(frozen=True)
class StepOutcome:
    next_state: SystemState
    reward: float
    per_user_rewards: tuple[float, ...]
    leakage: float = 0.0
    n_active: int = 0
    channels: ChannelRealization | None = field(default=None, repr=False, compare=False)


def state_space_size(L: int, H: int) -> int:
    return (2 * H) ** L


def backhaul_share(n_active: int, C_total: float, C_c: float) -> float:
    """Per-user backhaul left for content after every active user took C_c for CSI exchange."""
    if n_active < 1:
        raise ValueError("backhaul_share needs at least one active user")
    return max(0.0, (C_total - C_c * n_active) / n_active)


def _sample_levels(cfg: EnvConfig, rng: np.random.Generator, fallback_uniform: bool) -> tuple[int, ...]:
    try:
        pi = stationary_distribution(cfg.transition)
    except ReducibleChainError:
        if not fallback_uniform:
            raise
        logger.debug("Reducible SNR chain (p_stay=%s); drawing initial levels uniformly", cfg.p_stay)
        return tuple(int(x) for x in rng.integers(0, cfg.H, size=cfg.L))
    return tuple(int(x) for x in rng.choice(cfg.H, size=cfg.L, p=pi))


def reset(cfg: EnvConfig, rng: np.random.Generator, fallback_uniform: bool = False) -> SystemState:
    """
    Initial state: SNR levels from the chain's stationary distribution, fresh
    cache bits, slot 0. A reducible chain (p_stay = 1) raises unless
    `fallback_uniform` asks for uniformly drawn levels instead.
    """
    levels = _sample_levels(cfg, rng, fallback_uniform)
    cache = sample_cache_states(cfg.p_hit, cfg.L, rng)
    return SystemState(levels, cache.bits, 0)


def compute_rewards(
    state: SystemState,
    action: SystemAction,
    solution: IaSolution | None,
    channels: ChannelRealization,
    cfg: EnvConfig,
    cache_bits: Sequence[int] | None = None,
) -> np.ndarray:
    """
    Per-candidate rewards for one slot.

    A hit earns the full log-rate; a miss earns min(backhaul share, log-rate).
    The interference term uses the residual gains left by the IA solution, so
    imperfect alignment lowers the rate on its own. `cache_bits` overrides the
    state's bits (the no-cache baseline passes all zeros).
    """
    rewards = np.zeros(cfg.L)
    active = action.active_set
    if not active:
        return rewards
    if solution is None or solution.active_set != active:
        raise ValueError("IA solution does not match the action's active set")

    bits = state.cache if cache_bits is None else tuple(cache_bits)
    gains = link_gains(channels, solution)
    powers = cfg.level_powers[np.asarray([state.levels[k] for k in active])]
    share = backhaul_share(len(active), cfg.C_total, cfg.C_c)

    for pos, l in enumerate(active):
        signal = gains[pos, pos] * powers[pos]
        interference = np.dot(np.delete(gains[pos], pos), np.delete(powers, pos))
        rate = np.log2(1.0 + signal / (interference + cfg.noise_var))
        rewards[l] = rate if bits[l] == 1 else min(share, rate)
    return rewards


def evaluate_action(
    state: SystemState,
    action: SystemAction,
    channels: ChannelRealization,
    cfg: EnvConfig,
    rng: np.random.Generator,
    cache_bits: Sequence[int] | None = None,
) -> tuple[np.ndarray, IaSolution | None]:
    """Solve IA for the action's active set on frozen channels and score it."""
    if action.n_active == 0:
        return np.zeros(cfg.L), None
    solution = solve_ia(channels, action.active_set, cfg.ia, rng)
    return compute_rewards(state, action, solution, channels, cfg, cache_bits), solution


def advance_state(state: SystemState, cfg: EnvConfig, rng: np.random.Generator) -> SystemState:
    """Move every candidate's SNR chain one slot and redraw the cache bits."""
    levels = tuple(step_state(g, cfg.transition, rng) for g in state.levels)
    cache = sample_cache_states(cfg.p_hit, cfg.L, rng)
    return SystemState(levels, cache.bits, state.slot + 1)


def step(state: SystemState, action: SystemAction, cfg: EnvConfig, rng: np.random.Generator) -> StepOutcome:
    """
    One decision epoch: draw channels, align the active users, score the
    action under the current state, then transition.
    """
    state.validate(cfg.H)
    if len(action.bits) != cfg.L or state.L != cfg.L:
        raise ValueError(f"State/action sizes must equal L={cfg.L}")

    channels = sample_channel_matrices(cfg.L, cfg.N_t, cfg.N_r, rng, slot=state.slot)
    per_user, solution = evaluate_action(state, action, channels, cfg, rng)
    next_state = advance_state(state, cfg, rng)
    return StepOutcome(
        next_state=next_state,
        reward=float(per_user.sum()),
        per_user_rewards=tuple(float(r) for r in per_user),
        leakage=solution.leakage if solution is not None else 0.0,
        n_active=action.n_active,
        channels=channels,
    )


def encode_observation(state: SystemState, H: int) -> np.ndarray:
    """One-hot SNR level (length H) followed by the cache bit, per candidate."""
    state.validate(H)
    obs = np.zeros(state.L * (H + 1))
    for i, (level, bit) in enumerate(zip(state.levels, state.cache)):
        base = i * (H + 1)
        obs[base + level] = 1.0
        obs[base + H] = float(bit)
    return obs


def decode_observation(obs: np.ndarray, H: int, slot: int = 0) -> SystemState:
    blocks = np.asarray(obs).reshape(-1, H + 1)
    levels = tuple(int(np.argmax(b[:H])) for b in blocks)
    cache = tuple(int(round(b[H])) for b in blocks)
    return SystemState(levels, cache, slot)


def episode_return(rewards: Sequence[float], discount: float) -> float:
    """Discounted return sum_t discount^t * r(t)."""
    if not 0.0 < discount < 1.0:
        raise ValueError(f"discount must lie in (0, 1), got {discount}")
    r = np.asarray(rewards, dtype=np.float64)
    return float(np.sum(r * discount ** np.arange(r.size)))


def enumerate_actions(L: int) -> list[SystemAction]:
    if L > MAX_ENUMERABLE_L:
        raise ValueError(f"Refusing to enumerate 2^{L} actions (limit L <= {MAX_ENUMERABLE_L})")
    return [SystemAction.from_index(i, L) for i in range(2**L)]


def state_index(state: SystemState, H: int) -> int:
    """Mixed-radix index: candidate i contributes digit level*2 + bit in base 2H."""
    index = 0
    for i in reversed(range(state.L)):
        index = index * (2 * H) + state.levels[i] * 2 + state.cache[i]
    return index


def enumerate_states(L: int, H: int) -> list[SystemState]:
    """All (2H)^L slot-free states in `state_index` order."""
    digits = [(h, c) for h in range(H) for c in (0, 1)]
    states = []
    for combo in itertools.product(digits, repeat=L):
        ordered = combo[::-1]
        states.append(SystemState(tuple(g for g, _ in ordered), tuple(c for _, c in ordered)))
    return states


class CacheIaEnv:
    """Stateful wrapper used by the training loops: one episode of T slots at a time."""

    def __init__(self, cfg: EnvConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.state: SystemState | None = None

    def reset(self) -> SystemState:
        self.state = reset(self.cfg, self.rng, fallback_uniform=True)
        return self.state

    def observation(self) -> np.ndarray:
        return encode_observation(self.state, self.cfg.H)

    def step(self, action_index: int) -> StepOutcome:
        if self.state is None:
            raise RuntimeError("Call reset() before step()")
        action = SystemAction.from_index(action_index, self.cfg.L)
        outcome = step(self.state, action, self.cfg, self.rng)
        self.state = outcome.next_state
        return outcome

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.slot >= self.cfg.T
