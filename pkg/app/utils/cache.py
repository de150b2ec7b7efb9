"""Caching utilities for scorer predictions."""
import logging
import threading
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from cachetools import LRUCache

from app.models.domain import Prediction, Scorer, Sentence

logger = logging.getLogger(__name__)

PairKey = Tuple[Tuple[str, ...], Tuple[str, ...]]


def pair_key(premise: Sentence, hypothesis: Sentence) -> PairKey:
    return premise.tokens, hypothesis.tokens


def predict_many(scorer: Scorer, pairs: Sequence[Tuple[Sentence, Sentence]]) -> np.ndarray:
    """(n, 3) probabilities, batched when the scorer supports it."""
    if not pairs:
        return np.zeros((0, 3))
    batch = getattr(scorer, "predict_batch", None)
    if batch is not None:
        return np.asarray(batch(pairs), dtype=np.float64)
    return np.array([scorer.predict(a, b).probs for a, b in pairs], dtype=np.float64)


class PredictionCache:
    """LRU cache in front of a frozen scorer."""

    def __init__(self, scorer: Scorer, maxsize: int = 100_000):
        """
        Initialize prediction cache.

        Args:
            scorer: Scorer whose parameters will not change while cached
            maxsize: Maximum number of cached pairs
        """
        self.scorer = scorer
        self._cache: LRUCache = LRUCache(maxsize=max(1, maxsize))
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def predict(self, premise: Sentence, hypothesis: Sentence) -> Prediction:
        key = pair_key(premise, hypothesis)
        with self._lock:
            cached = self._cache.get(key)
            if cached is not None:
                self.hits += 1
                return cached
            self.misses += 1
        prediction = self.scorer.predict(premise, hypothesis)
        with self._lock:
            self._cache[key] = prediction
        return prediction

    def predict_batch(self, pairs: Sequence[Tuple[Sentence, Sentence]]) -> np.ndarray:
        out = np.zeros((len(pairs), 3))
        missing = []
        with self._lock:
            for i, (a, b) in enumerate(pairs):
                cached = self._cache.get(pair_key(a, b))
                if cached is None:
                    missing.append(i)
                else:
                    out[i] = cached.probs
            self.hits += len(pairs) - len(missing)
            self.misses += len(missing)
        if missing:
            fresh = predict_many(self.scorer, [pairs[i] for i in missing])
            with self._lock:
                for i, row in zip(missing, fresh):
                    out[i] = row
                    self._cache[pair_key(*pairs[i])] = Prediction.from_array(row)
        return out

    @property
    def hit_ratio(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0

    def log_stats(self) -> None:
        logger.debug(f"Prediction cache: {self.hits} hits, {self.misses} misses ({self.hit_ratio:.1%} hit ratio)")

    def clear(self) -> None:
        with self._lock:
            self._cache.clear()
            self.hits = self.misses = 0


class PredictionTable:
    """Precomputed predictions keyed by token sequences; satisfies the Scorer contract."""

    def __init__(self, table: Optional[Dict[PairKey, Prediction]] = None, default: Optional[Prediction] = None):
        self.table: Dict[PairKey, Prediction] = dict(table or {})
        self.default = default

    @classmethod
    def build(cls, scorer: Scorer, pairs: Iterable[Tuple[Sentence, Sentence]]) -> "PredictionTable":
        """Score every distinct pair once."""
        unique: Dict[PairKey, Tuple[Sentence, Sentence]] = {}
        for a, b in pairs:
            unique.setdefault(pair_key(a, b), (a, b))
        keys = list(unique)
        probs = predict_many(scorer, [unique[k] for k in keys])
        return cls({k: Prediction.from_array(row) for k, row in zip(keys, probs)})

    def set(self, premise: Sentence, hypothesis: Sentence, probs: Sequence[float]) -> None:
        self.table[pair_key(premise, hypothesis)] = Prediction.from_array(probs)

    def update(self, other: "PredictionTable") -> None:
        self.table.update(other.table)

    def __contains__(self, pair: Tuple[Sentence, Sentence]) -> bool:
        return pair_key(*pair) in self.table

    def __len__(self) -> int:
        return len(self.table)

    def predict(self, premise: Sentence, hypothesis: Sentence) -> Prediction:
        prediction = self.table.get(pair_key(premise, hypothesis), self.default)
        if prediction is None:
            raise KeyError(f"no prediction for ({premise.text!r}, {hypothesis.text!r})")
        return prediction

    def predict_batch(self, pairs: Sequence[Tuple[Sentence, Sentence]]) -> np.ndarray:
        return np.array([self.predict(a, b).probs for a, b in pairs], dtype=np.float64).reshape(len(pairs), 3)
