from dataclasses import replace

import numpy as np
import pytest

from models.agents import (
    DqnHyperparams,
    Experience,
    ExperienceBatch,
    OracleSizeError,
    ReplayMemory,
    ReplayUnderflowError,
    TabularQ,
    baseline_myopic_static,
    baseline_no_cache_train,
    greedy_policy,
    greedy_probability,
    policy_agreement,
    policy_value,
    run_myopic_static,
    run_tabular_q_learning,
    sample_minibatch,
    select_action,
    store,
    system_transitions,
    tabular_q_update,
    td_targets,
    train,
    value_iteration_oracle,
)
from models.fsmc_channel import sample_channel_matrices
from models.ia_core import solve_ia
from models.mdp_env import EnvConfig, SystemAction, SystemState, enumerate_actions, evaluate_action, state_index
from models.neural_q import MlpParameters, init_parameters


def _experience(r):
    return Experience(np.full(2, r), 0, float(r), np.full(2, r + 1))


def test_replay_evicts_oldest_first():
    memory = ReplayMemory(capacity=3)
    for r in range(5):
        store(memory, _experience(r))
    assert len(memory) == 3
    assert memory.insertions == 5
    assert [e.r for e in memory.experiences()] == [2.0, 3.0, 4.0]


def test_replay_grows_past_initial_block():
    memory = ReplayMemory(capacity=3000)
    for r in range(2500):
        memory.store(_experience(r))
    assert len(memory) == 2500
    assert [e.r for e in memory.experiences()][-3:] == [2497.0, 2498.0, 2499.0]


def test_minibatch_draws(rng):
    memory = ReplayMemory(capacity=10)
    with pytest.raises(ReplayUnderflowError):
        sample_minibatch(memory, 1, rng)
    for r in range(4):
        memory.store(_experience(r))
    with pytest.raises(ReplayUnderflowError):
        sample_minibatch(memory, 8, rng)
    batch = sample_minibatch(memory, 4, rng)
    assert batch.observations.shape == (4, 2)
    assert np.array_equal(batch.rewards, batch.observations[:, 0])


def test_default_hyperparameters():
    hyper = DqnHyperparams()
    assert hyper.discount == 0.5
    assert hyper.target_sync == 4
    assert hyper.replay_capacity == 100_000
    assert (hyper.greedy_start, hyper.greedy_end) == (0.1, 1.0)
    assert hyper.warmup_size == 1000


def test_greedy_probability_anneals_linearly():
    hyper = DqnHyperparams()
    assert greedy_probability(0, 1000, hyper) == pytest.approx(0.1)
    assert greedy_probability(400, 1000, hyper) == pytest.approx(0.55)
    assert greedy_probability(800, 1000, hyper) == pytest.approx(1.0)
    assert greedy_probability(999, 1000, hyper) == pytest.approx(1.0)


def test_select_action_extremes(rng):
    params = MlpParameters([np.zeros((2, 4))], [np.array([0.0, 3.0, 1.0, 3.0])])
    assert select_action(params, np.zeros(2), 1.0, rng) == 1
    draws = {select_action(params, np.zeros(2), 0.0, rng) for _ in range(200)}
    assert draws == {0, 1, 2, 3}


def test_exploration_is_uniform(rng):
    params = MlpParameters([np.zeros((2, 32))], [np.arange(32.0)])
    draws = [select_action(params, np.zeros(2), 0.0, rng) for _ in range(100_000)]
    freq = np.bincount(draws, minlength=32) / len(draws)
    assert np.all(np.abs(freq - 1 / 32) <= 0.01)


def test_td_targets_use_target_network():
    target = MlpParameters([np.zeros((2, 3))], [np.array([1.0, 4.0, 2.0])])
    batch = ExperienceBatch(
        np.zeros((2, 2)), np.array([0, 1]), np.array([1.0, -1.0]), np.zeros((2, 2)), np.arange(2)
    )
    assert np.allclose(td_targets(batch, target, 0.5), [3.0, 1.0])


def test_target_syncs_every_four_updates(small_env, tiny_hyper, rng):
    result = train(small_env, tiny_hyper, rng, record_states=True)
    # 4 episodes x 5 slots; updates start once 2 experiences are stored
    assert result.updates == 19
    assert result.sync_updates == [4, 8, 12, 16]
    assert len(result.curve) == 4
    assert len(result.visited_states) == 20
    assert result.params.architecture == (8, 8, 4)
    assert result.params.is_finite()


def test_training_is_deterministic(small_env, tiny_hyper):
    a = train(small_env, tiny_hyper, np.random.default_rng(5))
    b = train(small_env, tiny_hyper, np.random.default_rng(5))
    assert a.curve == b.curve
    assert all(np.array_equal(x, y) for x, y in zip(a.params.arrays(), b.params.arrays()))


def test_no_cache_baseline_never_hits(small_env, tiny_hyper, rng):
    result = baseline_no_cache_train(small_env, tiny_hyper, rng, record_states=True)
    assert all(s.cache == (0, 0) for s in result.visited_states)


def test_myopic_picks_best_immediate_action(small_env, rng):
    state = SystemState((2, 1), (0, 0))
    channels = sample_channel_matrices(2, 3, 3, rng)
    action = baseline_myopic_static(state, small_env, channels, np.random.default_rng(1))
    # single-user solves draw nothing, so both paths feed the joint solve the same stream
    totals = [
        evaluate_action(state, a, channels, small_env, np.random.default_rng(1))[0].sum()
        for a in enumerate_actions(2)
    ]
    assert totals[action.index] == pytest.approx(max(totals), rel=1e-6)


def test_myopic_rollout(small_env, rng):
    result = run_myopic_static(small_env, DqnHyperparams(episodes=2), rng)
    assert result.params is None
    assert len(result.curve) == 2
    assert all(r >= 0 for r in result.curve)


def test_tabular_update_single_state_converges():
    Q = TabularQ(1, 2)
    tabular_q_update(Q, 0, 0, 1.0, 0, 0.5)
    assert Q.values[0, 0] == 1.0
    for _ in range(10_000 - 1):
        tabular_q_update(Q, 0, 0, 1.0, 0, 0.5)
    # fixed point r / (1 - discount) = 2, approached from below
    assert 1.98 < Q.values[0, 0] < 2.0
    assert Q.visits[0, 0] == 10_000


def test_tabular_index_accepts_states():
    Q = TabularQ(2, 3)
    state = SystemState((1, 0), (1, 0))
    assert Q.index(state) == state_index(state, 3) == 3
    assert Q.values.shape == (36, 4)


def test_system_kernel_entries():
    cfg = EnvConfig(L=1, H=2, p_stay=0.7, p_hit=0.5)
    P = system_transitions(cfg)
    assert P.shape == (4, 4)
    assert np.allclose(P.sum(axis=1), 1.0)
    # (level 0, miss) -> (level 1, hit)
    assert P[0, 3] == pytest.approx(0.3 * 0.5)


def test_oracle_rejects_large_instances(rng):
    with pytest.raises(OracleSizeError):
        value_iteration_oracle(EnvConfig(), 1, rng)


def test_oracle_on_static_cached_network(small_env, rng):
    cfg = replace(small_env, p_stay=1.0, p_hit=1.0)
    oracle = value_iteration_oracle(cfg, 3, rng, discount=0.5)
    assert oracle.transitions.shape == (36, 36)
    for s, state in enumerate(oracle.states):
        if state.cache == (1, 1):
            # the state never changes, so V* = max_a R / (1 - discount)
            assert oracle.values[s] == pytest.approx(oracle.rewards[s].max() / 0.5, rel=1e-9)
    assert np.allclose(policy_value(oracle, oracle.policy), oracle.values, atol=1e-8)


def test_policy_value_of_worse_policy_is_lower(small_env, rng):
    oracle = value_iteration_oracle(small_env, 3, rng)
    idle = policy_value(oracle, np.zeros(len(oracle.states), dtype=int))
    assert np.all(idle == 0.0)
    assert np.all(oracle.values >= idle)


def test_greedy_policy_over_states(small_env, rng):
    params = init_parameters((small_env.observation_size, small_env.n_actions), rng)
    states = [SystemState((0, 1), (1, 0)), SystemState((2, 2), (0, 0))]
    policy = greedy_policy(params, states, small_env.H)
    assert policy.shape == (2,)
    assert all(0 <= a < small_env.n_actions for a in policy)
    assert SystemAction.from_index(int(policy[0]), 2).n_active <= 2


def _enumerate_myopic_totals(state, cfg, channels, rng):
    """Sum rate of every bitmask from explicit per-user arithmetic, caches read as misses."""
    power = [10 ** ((5 * g + 2.5) / 10) * cfg.noise_var for g in state.levels]
    totals = []
    for mask in range(2**cfg.L):
        active = tuple(l for l in range(cfg.L) if mask >> l & 1)
        if not active:
            totals.append(0.0)
            continue
        sol = solve_ia(channels, active, cfg.ia, rng)
        share = max(0.0, (cfg.C_total - cfg.C_c * len(active)) / len(active))
        total = 0.0
        for pos, k in enumerate(active):
            u = sol.combiners[pos][:, 0]
            signal = abs(np.vdot(u, channels[k, k] @ sol.precoders[pos][:, 0])) ** 2 * power[k]
            interference = 0.0
            for q, j in enumerate(active):
                if j != k:
                    interference += abs(np.vdot(u, channels[k, j] @ sol.precoders[q][:, 0])) ** 2 * power[j]
            total += min(share, float(np.log2(1 + signal / (interference + cfg.noise_var))))
        totals.append(total)
    return totals


@pytest.mark.parametrize("C_total", [60.0, 9.0])
def test_myopic_matches_exhaustive_enumeration(C_total, rng):
    cfg = EnvConfig(L=3, H=10, C_total=C_total, ia_max_iter=300)
    state = SystemState((3, 8, 5), (1, 0, 1))
    channels = sample_channel_matrices(3, 3, 3, rng)
    action = baseline_myopic_static(state, cfg, channels, np.random.default_rng(7))
    # same seed and mask order, so the joint solves start from the same precoders
    totals = _enumerate_myopic_totals(state, cfg, channels, np.random.default_rng(7))
    assert totals[action.index] == pytest.approx(max(totals), rel=1e-9)
    assert set(action.active_set) == {l for l in range(3) if action.index >> l & 1}


def _one_user_env():
    return EnvConfig(L=1, H=2, T=5)


def test_tabular_learner_samples_every_pair(rng):
    cfg = _one_user_env()
    Q = run_tabular_q_learning(cfg, 0.5, rng, slots=4000)
    assert Q.visits.sum() == 4000 * cfg.n_actions
    assert np.all(Q.visits > 0)
    # idle earns nothing, so its value is the discounted future alone
    assert np.all(Q.values[:, 1] > Q.values[:, 0])


def test_tabular_learner_tracks_oracle_values(rng):
    cfg = _one_user_env()
    oracle = value_iteration_oracle(cfg, 200, rng, discount=0.5)
    scale = max(1.0, np.max(np.abs(oracle.values)))

    Q = run_tabular_q_learning(cfg, 0.5, rng, slots=4000)
    assert policy_agreement(oracle, Q.greedy_policy()) == 1.0
    assert np.max(np.abs(Q.values.max(axis=1) - oracle.values)) <= 0.05 * scale

    wrong = run_tabular_q_learning(cfg, 0.9, rng, slots=4000)
    assert np.max(np.abs(wrong.values.max(axis=1) - oracle.values)) > 0.05 * scale


def test_tabular_learner_input_errors(rng):
    with pytest.raises(ValueError):
        run_tabular_q_learning(_one_user_env(), 1.0, rng, slots=10)
    with pytest.raises(ValueError):
        run_tabular_q_learning(_one_user_env(), 0.5, rng, slots=0)


def test_policy_agreement_counts_ties(small_env, rng):
    oracle = value_iteration_oracle(small_env, 3, rng)
    assert policy_agreement(oracle, oracle.policy) == 1.0
    idle = np.zeros(len(oracle.states), dtype=int)
    assert policy_agreement(oracle, idle) == 0.0
    assert policy_agreement(oracle, idle, tie_tol=np.inf) == 1.0


@pytest.mark.slow
def test_sampled_tabular_learner_recovers_oracle_policy(small_env, rng):
    oracle = value_iteration_oracle(small_env, 200, rng, discount=0.5)
    scale = max(1.0, np.max(np.abs(oracle.values)))
    Q = run_tabular_q_learning(small_env, 0.5, rng, slots=20_000)
    assert np.all(Q.visits > 0)
    assert policy_agreement(oracle, Q.greedy_policy(), tie_tol=0.005 * scale) == 1.0
    assert np.max(np.abs(Q.values.max(axis=1) - oracle.values)) <= 0.05 * scale
