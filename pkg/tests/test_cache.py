"""Tests for prediction caching."""
import numpy as np
import pytest

from app.models.domain import Prediction
from app.utils.cache import PredictionCache, PredictionTable, predict_many
from tests.conftest import CountingScorer, HashScorer, sentences


@pytest.fixture
def pairs():
    a, b, c = sentences("a dog", "a cat", "the man")
    return [(a, b), (b, c), (a, b), (c, a)]


class TestPredictionCache:
    """Tests for PredictionCache."""

    def test_hits_and_misses(self, pairs):
        """Test that repeated pairs are served from the cache."""
        counting = CountingScorer(HashScorer())
        cache = PredictionCache(counting, maxsize=10)
        results = [cache.predict(a, b) for a, b in pairs]
        assert counting.calls == 3
        assert (cache.hits, cache.misses) == (1, 3)
        assert results[0] == results[2]
        assert cache.hit_ratio == pytest.approx(0.25)

    def test_batch_matches_single(self, pairs):
        cache = PredictionCache(HashScorer())
        cache.predict(*pairs[1])
        batch = cache.predict_batch(pairs)
        assert batch.shape == (4, 3)
        for row, (a, b) in zip(batch, pairs):
            assert tuple(row) == HashScorer().predict(a, b).probs
        assert cache.hits == 1

    def test_eviction_and_clear(self, pairs):
        counting = CountingScorer(HashScorer())
        cache = PredictionCache(counting, maxsize=1)
        cache.predict(*pairs[0])
        cache.predict(*pairs[1])
        cache.predict(*pairs[0])
        assert counting.calls == 3
        cache.clear()
        assert (cache.hits, cache.misses) == (0, 0)


class TestPredictionTable:
    """Tests for PredictionTable."""

    def test_build_scores_each_pair_once(self, pairs):
        counting = CountingScorer(HashScorer())
        table = PredictionTable.build(counting, pairs)
        assert counting.calls == 3
        assert len(table) == 3
        assert pairs[0] in table

    def test_missing_pair(self, pairs):
        with pytest.raises(KeyError):
            PredictionTable().predict(*pairs[0])

    def test_default(self, pairs):
        default = Prediction(probs=(0.2, 0.3, 0.5))
        assert PredictionTable(default=default).predict(*pairs[0]) == default

    def test_update_and_batch(self, pairs):
        table = PredictionTable()
        other = PredictionTable.build(HashScorer(), pairs)
        table.update(other)
        assert np.array_equal(table.predict_batch(pairs), predict_many(HashScorer(), pairs))
        assert table.predict_batch([]).shape == (0, 3)


def test_predict_many_empty():
    assert predict_many(HashScorer(), []).shape == (0, 3)
