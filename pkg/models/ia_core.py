'''
Interference alignment (IA) for the active users of a slot.

Precoders V and combiners U come from alternating leakage minimization: with
all V fixed, each U takes the eigenvectors of the smallest eigenvalues of the
interference covariance seen at its receiver; the same update on the
reciprocal network (channels H^[kj]^H) then refreshes every V. The leakage
never increases from one iteration to the next.
'''
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .fsmc_channel import ChannelRealization

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-10
RANK_TOL = 1e-6


class NotHermitianError(ValueError):
    pass


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class IaConfig:
    """d streams per user, iteration cap and leakage tolerance."""

    d: int = 1
    max_iter: int = 5000
    tol: float = 1e-8

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")


@dataclass(frozen=True)
class IaSolution:
    """
    Filters of one IA solve.

    precoders[i] is V of active_set[i] (N_t x d), combiners[i] is U of the same
    user (N_r x d).
    """

    active_set: tuple[int, ...]
    precoders: np.ndarray
    combiners: np.ndarray
    leakage: float
    iterations_used: int
    leakage_history: tuple[float, ...] = field(default=(), repr=False)

    def position(self, user: int) -> int:
        return self.active_set.index(user)

    def precoder(self, user: int) -> np.ndarray:
        return self.precoders[self.position(user)]

    def combiner(self, user: int) -> np.ndarray:
        return self.combiners[self.position(user)]

    @property
    def d(self) -> int:
        return self.precoders.shape[-1]


def feasibility(N_t: int, N_r: int, d: int, n_active: int) -> bool:
    """IA feasibility of a symmetric network: N_t + N_r >= d (n_active + 1)."""
    if min(N_t, N_r, d, n_active) < 1:
        raise ValueError("feasibility arguments must all be >= 1")
    return N_t + N_r >= d * (n_active + 1)


def _check_hermitian(Q: np.ndarray) -> None:
    if Q.ndim < 2 or Q.shape[-1] != Q.shape[-2]:
        raise NotHermitianError(f"Expected a square matrix, got shape {Q.shape}")
    gap = np.max(np.abs(Q - np.conj(np.swapaxes(Q, -1, -2)))) if Q.size else 0.0
    if gap > HERMITIAN_TOL:
        raise NotHermitianError(f"Matrix is not Hermitian (max asymmetry {gap:.3e})")


def smallest_eigvecs(Q: np.ndarray, d: int) -> np.ndarray:
    """Orthonormal columns spanning the eigenspace of the d smallest eigenvalues of Q."""
    Q = np.asarray(Q, dtype=np.complex128)
    _check_hermitian(Q)
    if not 1 <= d <= Q.shape[-1]:
        raise DimensionError(f"Cannot take {d} eigenvectors of a {Q.shape[-1]}x{Q.shape[-1]} matrix")
    # eigh sorts eigenvalues ascending
    _, vecs = np.linalg.eigh(Q)
    return vecs[..., :d]


def _hermitize(Q: np.ndarray) -> np.ndarray:
    return 0.5 * (Q + np.conj(np.swapaxes(Q, -1, -2)))


def random_orthonormal(n: int, d: int, rng: np.random.Generator, count: int = 1) -> np.ndarray:
    """`count` independent n x d matrices with orthonormal columns (QR of complex Gaussians)."""
    G = rng.standard_normal((count, n, d)) + 1j * rng.standard_normal((count, n, d))
    Q, _ = np.linalg.qr(G)
    return Q


def _active_channels(channels: ChannelRealization, active: tuple[int, ...]) -> np.ndarray:
    idx = np.asarray(active)
    return channels.matrices[np.ix_(idx, idx)]


def _interference_products(H: np.ndarray, U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """P[k, j] = U_k^H H^[kj] V_j, shape (n, n, d, d)."""
    return np.einsum("krd,kjrt,jte->kjde", U.conj(), H, V)


def _leakage_from(H: np.ndarray, U: np.ndarray, V: np.ndarray) -> float:
    P = _interference_products(H, U, V)
    power = np.sum(np.abs(P) ** 2, axis=(2, 3))
    np.fill_diagonal(power, 0.0)
    return float(power.sum())


def _update_combiners(H: np.ndarray, V: np.ndarray, d: int) -> np.ndarray:
    n = H.shape[0]
    G = np.einsum("kjrt,jtd->kjrd", H, V)
    G[np.arange(n), np.arange(n)] = 0.0
    Q = np.einsum("kjrd,kjsd->krs", G, G.conj())
    _, vecs = np.linalg.eigh(_hermitize(Q))
    return vecs[..., :d]


def _update_precoders(H: np.ndarray, U: np.ndarray, d: int) -> np.ndarray:
    # reciprocal network: receiver j sees H^[kj]^H from transmitter k
    n = H.shape[0]
    F = np.einsum("kjrt,krd->kjtd", H.conj(), U)
    F[np.arange(n), np.arange(n)] = 0.0
    Q = np.einsum("kjtd,kjsd->jts", F, F.conj())
    _, vecs = np.linalg.eigh(_hermitize(Q))
    return vecs[..., :d]


def _validate_active_set(channels: ChannelRealization, active_set) -> tuple[int, ...]:
    active = tuple(int(k) for k in active_set)
    if not active:
        raise ValueError("IA needs at least one active user")
    if len(set(active)) != len(active):
        raise ValueError(f"Active set has repeated users: {active}")
    bad = [k for k in active if not 0 <= k < channels.L]
    if bad:
        raise DimensionError(f"Users {bad} are not in a {channels.L}-user channel")
    return active


def solve_ia(channels: ChannelRealization, active_set, cfg: IaConfig, rng: np.random.Generator) -> IaSolution:
    """Alternating leakage minimization over the active users of `channels`."""
    active = _validate_active_set(channels, active_set)
    d = cfg.d
    if d > min(channels.N_t, channels.N_r):
        raise DimensionError(f"d={d} streams exceed antennas ({channels.N_t} x {channels.N_r})")

    H = _active_channels(channels, active)
    n = len(active)

    if n == 1:
        # no interferers: align with the strongest modes of the direct link
        left, _, right_h = np.linalg.svd(H[0, 0])
        U = left[:, :d][np.newaxis]
        V = right_h.conj().T[:, :d][np.newaxis]
        return IaSolution(active, V, U, 0.0, 1, (0.0,))

    V = random_orthonormal(channels.N_t, d, rng, count=n)
    history = []
    leak = np.inf
    for iteration in range(1, cfg.max_iter + 1):
        U = _update_combiners(H, V, d)
        V = _update_precoders(H, U, d)
        leak = _leakage_from(H, U, V)
        history.append(leak)
        if leak < cfg.tol:
            break

    if leak >= cfg.tol:
        logger.debug("IA for users %s stopped at leakage %.3e after %d iterations", active, leak, iteration)
    return IaSolution(active, V, U, leak, iteration, tuple(history))


def leakage(channels: ChannelRealization, solution: IaSolution) -> float:
    """Total interference power after combining, the summed squared violation of U^H H V = 0."""
    H = _active_channels(channels, solution.active_set)
    if solution.precoders.shape[1] != channels.N_t or solution.combiners.shape[1] != channels.N_r:
        raise DimensionError("Solution filters do not match the channel antenna counts")
    return _leakage_from(H, solution.combiners, solution.precoders)


def desired_rank_check(solution: IaSolution, channels: ChannelRealization, d: int) -> dict[int, bool]:
    """Per active user: does U^H H^[kk] V keep all d streams (d-th singular value > 1e-6)?"""
    result = {}
    for pos, k in enumerate(solution.active_set):
        M = solution.combiners[pos].conj().T @ channels[k, k] @ solution.precoders[pos]
        if min(M.shape) < d:
            result[k] = False
            continue
        sv = np.linalg.svd(M, compute_uv=False)
        result[k] = bool(sv[d - 1] > RANK_TOL)
    return result


def effective_gain(U_k: np.ndarray, H_kk: np.ndarray, V_k: np.ndarray) -> float:
    """|u^H H v|^2 for single-stream filters."""
    u = np.asarray(U_k, dtype=np.complex128)
    v = np.asarray(V_k, dtype=np.complex128)
    if (u.ndim == 2 and u.shape[1] != 1) or (v.ndim == 2 and v.shape[1] != 1):
        raise DimensionError("effective_gain is defined for d = 1 column vectors")
    value = np.vdot(u.reshape(-1), np.asarray(H_kk) @ v.reshape(-1))
    return float(np.abs(value) ** 2)


def link_gains(channels: ChannelRealization, solution: IaSolution) -> np.ndarray:
    """
    G[a, b] = ||U_a^H H^[ab] V_b||_F^2 over positions in the active set.

    The diagonal holds the desired-link gains, the rest is residual
    interference.
    """
    H = _active_channels(channels, solution.active_set)
    P = _interference_products(H, solution.combiners, solution.precoders)
    return np.sum(np.abs(P) ** 2, axis=(2, 3))
