"""Unit tests for the n-gram language model."""
import math

import pytest

from app.exceptions import ArgumentError, CheckpointFormatError
from app.models.domain import BOS, EOS, Substitution
from app.services.language_model import NGramLanguageModel, admissible
from tests.conftest import sentences


@pytest.fixture
def tiny_lm():
    """Bigram model over "a b", "a b", "a c" with delta 1."""
    return NGramLanguageModel.fit(sentences("a b", "a b", "a c"), order=2, delta=1.0)


class TestFit:
    """Tests for counting."""

    def test_counts(self, tiny_lm):
        assert tiny_lm.counts[(BOS,)]["a"] == 3
        assert tiny_lm.counts[("a",)]["b"] == 2
        assert tiny_lm.counts[("b",)][EOS] == 2
        assert tiny_lm.events == sorted(["a", "b", "c", EOS])
        assert tiny_lm.vocab_size == 5

    def test_lowercases(self):
        lm = NGramLanguageModel.fit(sentences("A B"), order=2, delta=1.0)
        assert lm.counts[(BOS,)]["a"] == 1

    def test_empty_corpus(self):
        with pytest.raises(ArgumentError):
            NGramLanguageModel.fit([], order=2)

    def test_invalid_parameters(self, tiny_lm):
        with pytest.raises(ArgumentError):
            NGramLanguageModel(2, 0.0, tiny_lm.counts)
        with pytest.raises(ArgumentError):
            NGramLanguageModel.fit(sentences("a"), order=0)


class TestProbabilities:
    """Tests for smoothed probabilities."""

    def test_log_prob_hand_example(self, tiny_lm):
        """Test log P("a b") with an explicit vocabulary size of 6."""
        lm = NGramLanguageModel(2, 1.0, tiny_lm.counts, vocab_size=6)
        expected = math.log(4 / 9) + math.log(3 / 9) + math.log(3 / 8)
        assert lm.log_prob(sentences("a b")[0]) == pytest.approx(expected)
        assert lm.per_token_nll(sentences("a b")[0]) == pytest.approx(-expected / 3)

    def test_unseen_context_is_uniform(self, tiny_lm):
        assert tiny_lm.prob(("zzz",), "a") == pytest.approx(1 / tiny_lm.vocab_size)

    def test_normalized_over_event_vocabulary(self, tiny_lm):
        """Test that observed events plus the unseen buckets sum to one."""
        context = ("a",)
        seen = sum(tiny_lm.prob(context, t) for t in tiny_lm.events)
        unseen = (tiny_lm.vocab_size - len(tiny_lm.events)) * tiny_lm.prob(context, "never-seen")
        assert seen + unseen == pytest.approx(1.0)

    def test_unigram_model(self):
        lm = NGramLanguageModel.fit(sentences("a b"), order=1, delta=1.0)
        # 2 events (a, b) + EOS, total 3, vocab_size 4
        assert lm.prob((), "a") == pytest.approx(2 / 7)
        assert lm.context_of(["a", "b"]) == ()

    def test_context_of_pads(self, tiny_lm):
        assert tiny_lm.context_of([]) == (BOS,)
        assert tiny_lm.context_of(["a", "b"]) == ("b",)

    def test_more_counts_never_lower_log_prob(self, nli_corpus):
        """Test that refitting with one more copy of a sentence's n-grams does not lower its log-probability."""
        base = list(nli_corpus.sentences())
        lm = NGramLanguageModel.fit(base, order=3, delta=0.1)
        for sentence in base[:20]:
            refit = NGramLanguageModel.fit(base + [sentence], order=3, delta=0.1)
            assert refit.vocab_size == lm.vocab_size
            assert refit.log_prob(sentence) >= lm.log_prob(sentence)

    def test_added_bigram_raises_probability(self, tiny_lm):
        """Test the hand example of adding "a b" once more to the bigram corpus."""
        refit = NGramLanguageModel.fit(sentences("a b", "a b", "a c", "a b"), order=2, delta=1.0)
        before = math.log(4 / 8) + math.log(3 / 8) + math.log(3 / 7)
        after = math.log(5 / 9) + math.log(4 / 9) + math.log(4 / 8)
        assert tiny_lm.log_prob(sentences("a b")[0]) == pytest.approx(before)
        assert refit.log_prob(sentences("a b")[0]) == pytest.approx(after)
        assert after > before

    def test_fluent_beats_scrambled(self, lm, nli_corpus):
        fluent = nli_corpus[0].premise
        scrambled = sentences(" ".join(reversed(fluent.tokens)))[0]
        assert lm.per_token_nll(fluent) < lm.per_token_nll(scrambled)


class TestAdmissible:
    """Tests for the plausibility gate."""

    def test_threshold(self, tiny_lm):
        a, c = sentences("a b", "c c c")
        s = Substitution(binding={"X1": a, "X2": c})
        worst = max(tiny_lm.per_token_nll(a), tiny_lm.per_token_nll(c))
        assert admissible(tiny_lm, s, worst)
        assert not admissible(tiny_lm, s, worst - 1e-9)

    def test_monotone_in_tau(self, lm, nli_corpus):
        """Test that raising tau never rejects an admitted substitution."""
        subs = [Substitution(binding={"X1": i.premise, "X2": i.hypothesis}) for i in nli_corpus]
        previous = 0
        for tau in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0]:
            count = sum(lm.admissible(s, tau) for s in subs)
            assert count >= previous
            previous = count
        assert previous == len(subs)


class TestRankCandidates:
    """Tests for rank_candidates."""

    def test_following_tokens_first(self, tiny_lm):
        assert tiny_lm.rank_candidates(["a"], 3) == ["b", "c", "a"]

    def test_exclusions_and_reserved(self, tiny_lm):
        ranked = tiny_lm.rank_candidates(["a"], 10, exclude={"b"})
        assert ranked == ["c", "a"]
        assert EOS not in tiny_lm.rank_candidates(["b"], 10)

    def test_zero_k(self, tiny_lm):
        assert tiny_lm.rank_candidates(["a"], 0) == []


class TestPersistence:
    """Tests for save and load."""

    def test_round_trip(self, tmp_path, lm, nli_corpus):
        path = tmp_path / "lm.txt"
        lm.save(path)
        loaded = NGramLanguageModel.load(path)
        assert loaded.order == lm.order
        assert loaded.vocab_size == lm.vocab_size
        for inst in nli_corpus:
            assert loaded.log_prob(inst.premise) == lm.log_prob(inst.premise)
        again = tmp_path / "again.txt"
        loaded.save(again)
        assert again.read_text() == path.read_text()

    def test_bad_header(self, tmp_path):
        path = tmp_path / "lm.txt"
        path.write_text("NOTLM 1 2 0.1 5\n")
        with pytest.raises(CheckpointFormatError):
            NGramLanguageModel.load(path)

    def test_wrong_context_length(self, tmp_path):
        path = tmp_path / "lm.txt"
        path.write_text("NLILM 1 3 0.1 5\na b 1\n")
        with pytest.raises(CheckpointFormatError):
            NGramLanguageModel.load(path)
