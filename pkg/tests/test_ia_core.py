from dataclasses import replace

import numpy as np
import pytest

from models.fsmc_channel import ChannelRealization, sample_channel_matrices
from models.ia_core import (
    DimensionError,
    IaConfig,
    IaSolution,
    NotHermitianError,
    desired_rank_check,
    effective_gain,
    feasibility,
    leakage,
    link_gains,
    random_orthonormal,
    smallest_eigvecs,
    solve_ia,
)


def test_smallest_eigvecs_picks_lowest_eigenvalue():
    Q = np.diag([3.0, 1.0, 2.0]).astype(complex)
    v = smallest_eigvecs(Q, 1)
    assert v.shape == (3, 1)
    assert np.allclose(np.abs(v[:, 0]), [0.0, 1.0, 0.0])


def test_smallest_eigvecs_spans_lowest_subspace(rng):
    A = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    Q = A @ A.conj().T
    V = smallest_eigvecs(Q, 2)
    assert np.allclose(V.conj().T @ V, np.eye(2), atol=1e-12)
    w = np.linalg.eigvalsh(Q)
    assert np.allclose(np.sort(np.linalg.eigvalsh(V.conj().T @ Q @ V)), w[:2], atol=1e-9)


def test_smallest_eigvecs_rejects_non_hermitian_and_bad_d():
    with pytest.raises(NotHermitianError):
        smallest_eigvecs(np.array([[1.0, 2.0], [0.0, 1.0]]), 1)
    with pytest.raises(DimensionError):
        smallest_eigvecs(np.eye(2), 3)


def test_feasibility_condition():
    assert feasibility(3, 3, 1, 5)
    assert not feasibility(3, 3, 1, 6)
    assert feasibility(2, 2, 1, 3)


def test_random_orthonormal_columns(rng):
    V = random_orthonormal(3, 2, rng, count=4)
    assert V.shape == (4, 3, 2)
    for m in V:
        assert np.allclose(m.conj().T @ m, np.eye(2), atol=1e-12)


def test_three_users_align(rng):
    channels = sample_channel_matrices(4, 3, 3, rng)
    sol = solve_ia(channels, (0, 2, 3), IaConfig(d=1, max_iter=5000, tol=1e-12), rng)

    assert sol.leakage < 1e-6
    assert leakage(channels, sol) == pytest.approx(sol.leakage, abs=1e-12)
    assert all(desired_rank_check(sol, channels, 1).values())
    history = np.array(sol.leakage_history)
    assert len(history) == sol.iterations_used
    assert np.all(np.diff(history) <= 1e-9 * history[0])
    for V in sol.precoders:
        assert np.allclose(V.conj().T @ V, np.eye(1), atol=1e-10)


def test_single_user_uses_dominant_singular_modes(rng):
    channels = sample_channel_matrices(3, 3, 3, rng)
    sol = solve_ia(channels, (1,), IaConfig(), rng)
    assert sol.leakage == 0.0
    assert sol.iterations_used == 1
    top = np.linalg.svd(channels[1, 1], compute_uv=False)[0]
    assert effective_gain(sol.combiner(1), channels[1, 1], sol.precoder(1)) == pytest.approx(top**2)


def test_link_gain_diagonal_matches_effective_gain(rng):
    channels = sample_channel_matrices(3, 3, 3, rng)
    sol = solve_ia(channels, (0, 1, 2), IaConfig(max_iter=500), rng)
    G = link_gains(channels, sol)
    for pos, k in enumerate(sol.active_set):
        assert G[pos, pos] == pytest.approx(effective_gain(sol.combiners[pos], channels[k, k], sol.precoders[pos]))
    off = G[~np.eye(3, dtype=bool)]
    assert off.sum() == pytest.approx(sol.leakage, rel=1e-9, abs=1e-15)


def test_solve_ia_input_errors(rng):
    channels = sample_channel_matrices(3, 2, 2, rng)
    with pytest.raises(ValueError):
        solve_ia(channels, (0, 0), IaConfig(), rng)
    with pytest.raises(DimensionError):
        solve_ia(channels, (0, 5), IaConfig(), rng)
    with pytest.raises(DimensionError):
        solve_ia(channels, (0, 1), IaConfig(d=3), rng)


def test_effective_gain_needs_single_stream():
    with pytest.raises(DimensionError):
        effective_gain(np.ones((3, 2)), np.eye(3), np.ones((3, 1)))


@pytest.mark.slow
def test_five_users_reach_alignment():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        channels = sample_channel_matrices(5, 3, 3, rng)
        sol = solve_ia(channels, range(5), IaConfig(d=1, max_iter=20_000, tol=1e-7), rng)
        assert sol.leakage < 1e-6
        assert all(desired_rank_check(sol, channels, 1).values())
        history = np.array(sol.leakage_history)
        assert np.all(np.diff(history) <= 1e-9 * history[0])


def _random_filters(channels, active, rng):
    n = len(active)
    V = random_orthonormal(channels.N_t, 1, rng, count=n)
    U = random_orthonormal(channels.N_r, 1, rng, count=n)
    return IaSolution(tuple(active), V, U, 0.0, 1)


def test_leakage_vanishes_when_combiners_null_the_interference():
    a = np.array([1.0, 1.0j]) / np.sqrt(2.0)
    c = np.array([1.0, -1.0]) / np.sqrt(2.0)
    H = np.zeros((2, 2, 2, 2), dtype=complex)
    H[0, 0] = H[1, 1] = np.eye(2)
    # interference into each user lives on one known direction
    H[0, 1] = np.outer(a, [0.3, 2.0 - 1.0j])
    H[1, 0] = np.outer(c, [1.5j, -0.4])
    U = np.stack([np.array([[1.0], [-1.0j]]) / np.sqrt(2.0), np.array([[1.0], [1.0]]) / np.sqrt(2.0)])
    V = np.stack([np.array([[0.6], [0.8]]), np.array([[0.8j], [0.6]])])
    sol = IaSolution((0, 1), V, U, 0.0, 1)
    assert abs(np.vdot(U[0][:, 0], a)) < 1e-15
    assert leakage(ChannelRealization(H), sol) < 1e-12


def test_random_filters_leak(rng):
    channels = sample_channel_matrices(3, 3, 3, rng)
    assert leakage(channels, _random_filters(channels, (0, 1, 2), rng)) > 0.0


def test_leakage_ignores_column_phases(rng):
    channels = sample_channel_matrices(3, 3, 3, rng)
    sol = solve_ia(channels, (0, 1, 2), IaConfig(max_iter=3), rng)
    precoders = sol.precoders.copy()
    precoders[1][:, 0] *= np.exp(0.7j)
    combiners = sol.combiners.copy()
    combiners[2][:, 0] *= np.exp(-2.1j)
    rotated = replace(sol, precoders=precoders, combiners=combiners)
    assert leakage(channels, rotated) == pytest.approx(leakage(channels, sol), abs=1e-12)


@pytest.mark.parametrize("c", [0.5, 2.5, 10.0])
def test_leakage_scales_with_channel_power(c, rng):
    channels = sample_channel_matrices(3, 3, 3, rng)
    sol = _random_filters(channels, (0, 1, 2), rng)
    assert leakage(channels.scaled(c), sol) == pytest.approx(c**2 * leakage(channels, sol), rel=1e-12)


def test_aligned_received_signal_reduces_to_desired_term(rng):
    cfg = IaConfig(d=1, max_iter=20_000, tol=1e-8)
    channels = sample_channel_matrices(3, 3, 3, rng)
    sol = solve_ia(channels, (0, 1, 2), cfg, rng)
    assert sol.leakage < cfg.tol

    symbols = np.exp(2j * np.pi * rng.random(3))
    for pos, k in enumerate(sol.active_set):
        u = sol.combiners[pos][:, 0]
        received = sum(np.vdot(u, channels[k, j] @ sol.precoders[q][:, 0]) * symbols[q] for q, j in enumerate(sol.active_set))
        desired = np.vdot(u, channels[k, k] @ sol.precoders[pos][:, 0]) * symbols[pos]
        # two interferers, each below sqrt(leakage) in magnitude
        assert abs(received - desired) <= np.sqrt(2 * cfg.tol)
