import numpy as np
import pytest

from models.cache_model import CacheStateVector, empirical_hit_ratio, sample_cache_states


def test_extreme_hit_probabilities(rng):
    assert sample_cache_states(0.0, 5, rng).bits == (0, 0, 0, 0, 0)
    assert sample_cache_states(1.0, 5, rng).bits == (1, 1, 1, 1, 1)


def test_hit_ratio_matches_probability(rng):
    history = [sample_cache_states(0.5, 5, rng) for _ in range(20_000)]
    assert empirical_hit_ratio(history) == pytest.approx(0.5, abs=0.01)


def test_same_seed_same_vectors():
    a = sample_cache_states(0.3, 4, np.random.default_rng(3))
    b = sample_cache_states(0.3, 4, np.random.default_rng(3))
    assert a == b


def test_empty_history_ratio_is_zero():
    assert empirical_hit_ratio([]) == 0.0


@pytest.mark.parametrize("p_hit", [-0.1, 1.1])
def test_invalid_probability(rng, p_hit):
    with pytest.raises(ValueError):
        sample_cache_states(p_hit, 3, rng)


def test_bits_must_be_binary():
    with pytest.raises(ValueError):
        CacheStateVector((0, 2, 1))
