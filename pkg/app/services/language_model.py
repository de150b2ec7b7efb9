"""Additively smoothed n-gram language model used as the plausibility gate."""
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from cachetools import LRUCache
from nltk.probability import ConditionalFreqDist, FreqDist
from nltk.util import ngrams

from app.exceptions import ArgumentError, CheckpointFormatError
from app.models.domain import BOS, EOS, UNK, Corpus, Sentence, Substitution

logger = logging.getLogger(__name__)

LM_MAGIC = "NLILM"
LM_VERSION = 1

Context = Tuple[str, ...]


class NGramLanguageModel:
    """
    Order-n model with add-delta smoothing.

    Each sentence is padded with ``order - 1`` BOS symbols and one EOS, so a
    sentence of length l contributes l + 1 events. The model is read-only
    after construction.
    """

    def __init__(
        self,
        order: int,
        delta: float,
        counts: ConditionalFreqDist,
        vocab_size: Optional[int] = None,
        lowercase: bool = True,
        nll_cache_size: int = 100_000,
    ):
        """
        Initialize language model.

        Args:
            order: n of the n-grams
            delta: Additive smoothing constant
            counts: Token counts keyed by (order - 1)-token context
            vocab_size: Size of the event vocabulary; defaults to the observed
                events plus one bucket for unseen tokens
            lowercase: Normalize tokens before lookup
            nll_cache_size: Number of per-sentence scores to memoize
        """
        if order < 1:
            raise ArgumentError("LM order must be at least 1")
        if delta <= 0.0:
            raise ArgumentError("LM smoothing constant must be positive")
        self.order = order
        self.delta = delta
        self.counts = counts
        self.lowercase = lowercase
        self.unigrams = FreqDist()
        for context in counts.conditions():
            self.unigrams.update(counts[context])
        self.events = sorted(self.unigrams)
        self.vocab_size = vocab_size if vocab_size is not None else len(self.events) + 1
        if self.vocab_size < 1:
            raise ArgumentError("LM vocabulary size must be positive")
        self.context_totals: Dict[Context, int] = {c: counts[c].N() for c in counts.conditions()}
        self._nll: LRUCache = LRUCache(maxsize=nll_cache_size)

    @classmethod
    def fit(cls, sentences: Iterable[Sentence], order: int = 3, delta: float = 0.1, lowercase: bool = True) -> "NGramLanguageModel":
        """Count n-grams over sentences; deterministic for a given input."""
        if order < 1:
            raise ArgumentError("LM order must be at least 1")
        counts = ConditionalFreqDist()
        n_sentences = 0
        for sentence in sentences:
            n_sentences += 1
            for gram in ngrams(cls._pad(sentence.normalized(lowercase), order), order):
                counts[gram[:-1]][gram[-1]] += 1
        if n_sentences == 0:
            raise ArgumentError("cannot fit a language model on an empty corpus")
        lm = cls(order, delta, counts, lowercase=lowercase)
        logger.info(
            f"Fitted order-{order} LM on {n_sentences} sentences "
            f"({len(lm.context_totals)} contexts, vocab_size={lm.vocab_size})"
        )
        return lm

    @staticmethod
    def _pad(tokens: Sequence[str], order: int) -> List[str]:
        return [BOS] * (order - 1) + list(tokens) + [EOS]

    def _tokens(self, sentence: Sentence) -> Tuple[str, ...]:
        return sentence.normalized(self.lowercase)

    def context_of(self, left: Sequence[str]) -> Context:
        """The (order - 1)-token context ending just before a position."""
        if self.order == 1:
            return ()
        padded = [BOS] * (self.order - 1) + list(left)
        return tuple(padded[len(padded) - (self.order - 1):])

    def prob(self, context: Context, token: str) -> float:
        """Smoothed conditional probability; unseen contexts have total 0."""
        count = self.counts[context][token] if context in self.context_totals else 0
        total = self.context_totals.get(context, 0)
        return (count + self.delta) / (total + self.delta * self.vocab_size)

    def conditional_logprob(self, context: Context, token: str) -> float:
        return math.log(self.prob(context, token))

    def log_prob(self, sentence: Sentence) -> float:
        """Natural-log probability of the padded sentence, EOS included."""
        padded = self._pad(self._tokens(sentence), self.order)
        return sum(self.conditional_logprob(gram[:-1], gram[-1]) for gram in ngrams(padded, self.order))

    def per_token_nll(self, sentence: Sentence) -> float:
        tokens = self._tokens(sentence)
        nll = self._nll.get(tokens)
        if nll is None:
            nll = -self.log_prob(sentence) / (len(tokens) + 1)
            self._nll[tokens] = nll
        return nll

    def admissible(self, substitution: Substitution, tau: float) -> bool:
        """Every bound sentence has per-token NLL at most tau."""
        return all(self.per_token_nll(s) <= tau for s in substitution.sentences())

    def rank_candidates(self, left: Sequence[str], k: int, exclude: Iterable[str] = ()) -> List[str]:
        """
        Top-k replacement tokens after a left context.

        Tokens seen after the context come first by count; the rest are filled in
        by overall frequency. Ties break lexicographically.
        """
        if k <= 0:
            return []
        banned = {BOS, EOS, UNK, *exclude}
        context = self.context_of(left)
        following = self.counts[context] if context in self.context_totals else {}
        candidates = [t for t in self.events if t not in banned]
        candidates.sort(key=lambda t: (-following.get(t, 0), -self.unigrams[t], t))
        return candidates[:k]

    def save(self, path: Union[str, Path]) -> None:
        """Write the versioned text format; load inverts it exactly."""
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"{LM_MAGIC} {LM_VERSION} {self.order} {self.delta!r} {self.vocab_size}\n")
            for context in sorted(self.context_totals):
                dist = self.counts[context]
                prefix = "\t".join(context)
                for token in sorted(dist):
                    f.write(f"{prefix} {token} {dist[token]}\n")
        logger.info(f"Saved language model to {path}")

    @classmethod
    def load(cls, path: Union[str, Path], lowercase: bool = True) -> "NGramLanguageModel":
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().split()
            if len(header) != 5 or header[0] != LM_MAGIC or header[1] != str(LM_VERSION):
                raise CheckpointFormatError(f"{path}: not a version {LM_VERSION} language model file")
            order, delta, vocab_size = int(header[2]), float(header[3]), int(header[4])
            counts = ConditionalFreqDist()
            for line_number, line in enumerate(f, start=2):
                parts = line.rstrip("\n").rsplit(" ", 2)
                if len(parts) != 3:
                    raise CheckpointFormatError(f"{path}: malformed line {line_number}")
                context_text, token, count = parts
                context = tuple(context_text.split("\t")) if context_text else ()
                if len(context) != order - 1:
                    raise CheckpointFormatError(f"{path}: line {line_number} has a context of the wrong length")
                counts[context][token] = int(count)
        return cls(order, delta, counts, vocab_size=vocab_size, lowercase=lowercase)


def fit_lm(corpus: Corpus, order: int = 3, delta: float = 0.1, lowercase: bool = True) -> NGramLanguageModel:
    """Fit over every premise and hypothesis of a corpus."""
    return NGramLanguageModel.fit(corpus.sentences(), order=order, delta=delta, lowercase=lowercase)


def admissible(lm: NGramLanguageModel, substitution: Substitution, tau: float) -> bool:
    return lm.admissible(substitution, tau)
