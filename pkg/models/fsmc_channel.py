'''
Finite-state Markov channel (FSMC).

The received SNR of every candidate is quantized into H levels and evolves as a
first-order Markov chain. Fast fading is drawn fresh each slot as i.i.d.
CN(0, 1) channel matrices.
'''
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_LEVEL_WIDTH_DB = 5.0
ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-12
STATIONARY_MAX_ITER = 10**6


class ReducibleChainError(ValueError):
    """Raised when a transition matrix has no unique stationary distribution."""


@dataclass(frozen=True)
class SnrLevelSet:
    """H quantization levels described by their H-1 inner dB boundaries."""

    boundaries_db: tuple[float, ...]

    def __post_init__(self):
        bounds = tuple(float(b) for b in self.boundaries_db)
        if len(bounds) < 1:
            raise ValueError("An SNR level set needs at least one boundary (H >= 2)")
        if not all(np.isfinite(bounds)):
            raise ValueError("SNR boundaries must be finite")
        if any(hi <= lo for lo, hi in zip(bounds, bounds[1:])):
            raise ValueError(f"SNR boundaries must be strictly increasing: {bounds}")
        object.__setattr__(self, "boundaries_db", bounds)

    @property
    def H(self) -> int:
        return len(self.boundaries_db) + 1

    def interval_db(self, level: int) -> tuple[float, float]:
        """Return the (low, high) dB interval of a level; open ends are +-inf."""
        if not 0 <= level < self.H:
            raise ValueError(f"SNR level {level} outside [0, {self.H})")
        low = -np.inf if level == 0 else self.boundaries_db[level - 1]
        high = np.inf if level == self.H - 1 else self.boundaries_db[level]
        return low, high

    @property
    def edge_width_db(self) -> float:
        # open intervals borrow the width of their interior neighbour
        if self.H >= 3:
            return self.boundaries_db[1] - self.boundaries_db[0]
        return DEFAULT_LEVEL_WIDTH_DB


def uniform_snr_levels(H: int, first_db: float = 5.0, width_db: float = DEFAULT_LEVEL_WIDTH_DB) -> SnrLevelSet:
    """Levels [-inf, 5], [5, 10], ..., [5(H-1), +inf]; H = 10 gives the ten-level grid."""
    if H < 2:
        raise ValueError(f"H must be >= 2, got {H}")
    return SnrLevelSet(tuple(first_db + width_db * i for i in range(H - 1)))


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic H x H kernel over SNR levels."""

    entries: np.ndarray

    def __post_init__(self):
        P = np.array(self.entries, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 2:
            raise ValueError(f"Transition matrix must be square with H >= 2, got shape {P.shape}")
        if np.any(P < 0.0) or np.any(P > 1.0):
            raise ValueError("Transition probabilities must lie in [0, 1]")
        row_error = np.max(np.abs(P.sum(axis=1) - 1.0))
        if row_error > ROW_SUM_TOL:
            raise ValueError(f"Transition rows must sum to 1 (max error {row_error:.3e})")
        P.setflags(write=False)
        object.__setattr__(self, "entries", P)

    @property
    def H(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def cumulative(self) -> np.ndarray:
        cdf = np.cumsum(self.entries, axis=1)
        cdf[:, -1] = 1.0
        cdf.setflags(write=False)
        return cdf


def _row_weights(i: int, H: int) -> tuple[np.ndarray, np.ndarray]:
    """Adjacency mask and off-diagonal mask for row i."""
    idx = np.arange(H)
    adjacent = np.abs(idx - i) == 1
    off_diagonal = idx != i
    return adjacent, off_diagonal


def build_transition_matrix(p_stay: float, H: int) -> TransitionMatrix:
    """
    Build the FSMC kernel: stay with probability p_stay, move to an adjacent
    level with twice the probability of any non-adjacent level.

    Each row's base probability q solves p_stay + q * (2 * n_adj + n_non) = 1,
    so interior rows get q = (1 - p_stay) / (H + 1) and edge rows
    q = (1 - p_stay) / H.
    """
    if not 0.0 < p_stay <= 1.0:
        raise ValueError(f"p_stay must lie in (0, 1], got {p_stay}")
    if H < 2:
        raise ValueError(f"H must be >= 2, got {H}")

    P = np.zeros((H, H), dtype=np.float64)
    for i in range(H):
        adjacent, off_diagonal = _row_weights(i, H)
        n_adj = int(adjacent.sum())
        n_non = int(off_diagonal.sum()) - n_adj
        q = (1.0 - p_stay) / (2 * n_adj + n_non)
        P[i, off_diagonal] = q
        P[i, adjacent] = 2.0 * q
        P[i, i] = p_stay
    return TransitionMatrix(P)


def adjacency_ratio_holds(T: TransitionMatrix, tol: float = 1e-15) -> bool:
    """True when every row gives adjacent levels exactly twice the non-adjacent mass."""
    H = T.H
    for i in range(H):
        adjacent, off_diagonal = _row_weights(i, H)
        non_adjacent = off_diagonal & ~adjacent
        if not non_adjacent.any():
            continue
        row = T.entries[i]
        q = row[non_adjacent]
        if np.ptp(q) > tol or np.any(np.abs(row[adjacent] - 2.0 * q[0]) > tol):
            return False
    return True


def step_state(level: int, T: TransitionMatrix, rng: np.random.Generator) -> int:
    """Draw the next SNR level from row `level` of T."""
    if not 0 <= level < T.H:
        raise ValueError(f"SNR level {level} outside [0, {T.H})")
    u = rng.random()
    return int(np.searchsorted(T.cumulative[level], u, side="right"))


def is_irreducible(T: TransitionMatrix) -> bool:
    reach = (T.entries > 0.0) | np.eye(T.H, dtype=bool)
    for _ in range(int(np.ceil(np.log2(T.H))) + 1):
        reach = (reach.astype(np.int64) @ reach.astype(np.int64)) > 0
    return bool(reach.all())


def stationary_distribution(T: TransitionMatrix) -> np.ndarray:
    """
    Stationary vector of T by repeated multiplication.

    Raises ReducibleChainError for reducible kernels (e.g. the identity) and
    when the iteration has not settled after STATIONARY_MAX_ITER products.
    """
    if not is_irreducible(T):
        raise ReducibleChainError("Transition matrix is reducible; stationary distribution is not unique")

    pi = np.full(T.H, 1.0 / T.H)
    for _ in range(STATIONARY_MAX_ITER):
        nxt = pi @ T.entries
        if np.max(np.abs(nxt - pi)) < STATIONARY_TOL:
            return nxt / nxt.sum()
        pi = nxt
    raise ReducibleChainError(f"Stationary iteration did not converge in {STATIONARY_MAX_ITER} steps")


@dataclass(frozen=True)
class ChannelRealization:
    """Per-slot channel matrices; matrices[k, j] is H^[kj] (N_r x N_t)."""

    matrices: np.ndarray
    slot: int = 0

    def __post_init__(self):
        H = np.asarray(self.matrices, dtype=np.complex128)
        if H.ndim != 4 or H.shape[0] != H.shape[1]:
            raise ValueError(f"Channel array must have shape (L, L, N_r, N_t), got {H.shape}")
        H.setflags(write=False)
        object.__setattr__(self, "matrices", H)

    @property
    def L(self) -> int:
        return self.matrices.shape[0]

    @property
    def N_r(self) -> int:
        return self.matrices.shape[2]

    @property
    def N_t(self) -> int:
        return self.matrices.shape[3]

    def __getitem__(self, pair: tuple[int, int]) -> np.ndarray:
        k, j = pair
        return self.matrices[k, j]

    def scaled(self, c: float) -> "ChannelRealization":
        return ChannelRealization(self.matrices * c, self.slot)


def sample_channel_matrices(L: int, N_t: int, N_r: int, rng: np.random.Generator, slot: int = 0) -> ChannelRealization:
    """Draw all L x L links with CN(0, 1) entries."""
    if L < 1 or N_t < 1 or N_r < 1:
        raise ValueError(f"Need L, N_t, N_r >= 1, got ({L}, {N_t}, {N_r})")
    shape = (L, L, N_r, N_t)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return ChannelRealization((re + 1j * im) / np.sqrt(2.0), slot)


def interval_to_linear(low_db: float, high_db: float) -> float:
    """Linear value at the dB midpoint of a finite interval."""
    return float(10.0 ** ((low_db + high_db) / 20.0))


def snr_to_linear(level: int, levels: SnrLevelSet) -> float:
    """Representative linear SNR of a level (midpoint rule, open ends clamped)."""
    low, high = levels.interval_db(level)
    width = levels.edge_width_db
    if np.isinf(low):
        low = high - width
    if np.isinf(high):
        high = low + width
    return interval_to_linear(low, high)


def write_transition_csv(T: TransitionMatrix, path) -> None:
    """Row-major CSV dump; repr() keeps full double precision."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        for row in T.entries:
            writer.writerow([repr(float(x)) for x in row])
    logger.debug("Transition matrix (H=%d) written to %s", T.H, path)
