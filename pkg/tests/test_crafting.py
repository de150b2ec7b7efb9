"""Unit tests for dataset crafting, violation audits and accuracy."""
import pytest

from app.exceptions import ArgumentError
from app.models.domain import Corpus, Label
from app.services.crafting import (
    audit,
    audit_groundings,
    craft_dataset,
    evaluate,
    format_percentage,
    instance_score,
    pair_rules,
    rule_percentages,
    score_corpus,
)
from app.utils.cache import PredictionTable
from tests.conftest import ConstantScorer, make_nli_corpus, plain_instance


@pytest.fixture
def instance():
    return plain_instance("a dog runs", "a cat sleeps", Label.CONTRADICTION)


@pytest.fixture
def table(instance):
    """con(p,h) certain, neu(h,p) certain, every sentence entails itself."""
    p, h = instance.premise, instance.hypothesis
    table = PredictionTable()
    table.set(p, h, (0.0, 1.0, 0.0))
    table.set(h, p, (0.0, 0.0, 1.0))
    table.set(p, p, (1.0, 0.0, 0.0))
    table.set(h, h, (1.0, 0.0, 0.0))
    return table


class TestInstanceScore:
    """Tests for instance_score."""

    def test_hand_example(self, table, instance, rules):
        """Test one symmetry and one neutrality violation, each of loss 1."""
        assert instance_score(table, instance, rules) == pytest.approx(2.0)

    def test_symmetric_under_swap(self, hash_scorer, nli_corpus, rules):
        for inst in list(nli_corpus)[:20]:
            assert instance_score(hash_scorer, inst, rules) == pytest.approx(instance_score(hash_scorer, inst.swapped(), rules))

    def test_label_independent(self, hash_scorer, instance, rules):
        relabeled = instance.model_copy(update={"label": Label.NEUTRAL})
        assert instance_score(hash_scorer, instance, rules) == instance_score(hash_scorer, relabeled, rules)

    def test_three_variable_rules_excluded(self, rules):
        assert [rule.name for rule in pair_rules(rules)] == ["r1", "r2", "r3", "r4"]

    def test_batched_scores_match(self, hash_scorer, nli_corpus, rules):
        scores = score_corpus(hash_scorer, nli_corpus, rules)
        assert list(scores) == [instance_score(hash_scorer, inst, rules) for inst in nli_corpus]


class TestCraftDataset:
    """Tests for craft_dataset."""

    def test_top_k_against_full_sort(self, hash_scorer, rules):
        """Test selection and layout for several k on a larger corpus."""
        corpus = make_nli_corpus(1200, seed=21)
        scores = [instance_score(hash_scorer, inst, rules) for inst in corpus]
        ranking = sorted(range(len(corpus)), key=lambda i: (-scores[i], i))
        for k in (100, 500, 1000):
            crafted = craft_dataset(hash_scorer, corpus, rules, k, model_name="hash")
            assert crafted.k == k
            assert len(crafted.instances) == 2 * k
            assert crafted.scores == [scores[i] for i in ranking[:k]]
            for j, i in enumerate(ranking[:k]):
                original, swap = crafted.instances[2 * j], crafted.instances[2 * j + 1]
                assert original == corpus[i]
                assert swap.premise == original.hypothesis
                assert swap.hypothesis == original.premise
                assert swap.label == Label.UNLABELED

    def test_inferred_swap_labels(self, hash_scorer, nli_corpus, rules):
        crafted = craft_dataset(hash_scorer, nli_corpus, rules, len(nli_corpus), infer_swap_labels=True)
        for original, swap in zip(crafted.instances[::2], crafted.instances[1::2]):
            expected = Label.CONTRADICTION if original.label == Label.CONTRADICTION else Label.UNLABELED
            assert swap.label == expected

    def test_k_out_of_range(self, hash_scorer, nli_corpus, rules):
        with pytest.raises(ArgumentError):
            craft_dataset(hash_scorer, nli_corpus, rules, 0)
        with pytest.raises(ArgumentError):
            craft_dataset(hash_scorer, nli_corpus, rules, len(nli_corpus) + 1)


class TestAudit:
    """Tests for audit."""

    def test_hand_example(self, table, instance, rules):
        """Test body and violation counts on a single instance."""
        report = audit(table, Corpus(instances=(instance,)), rules)
        counts = {row.rule: (row.body_count, row.violation_count) for row in report.rows}
        assert counts == {"r1": (2, 0), "r2": (1, 1), "r3": (0, 0), "r4": (1, 1)}

    def test_consistent_scorer_has_no_violations(self, consistent_scorer, nli_corpus, rules):
        report = audit(consistent_scorer, nli_corpus, rules)
        assert all(row.violation_count == 0 for row in report.rows)
        assert report.get("r1").body_count == len({s.tokens for s in nli_corpus.sentences()})

    def test_grounding_domains(self, nli_corpus, rules):
        assert len(audit_groundings(nli_corpus, rules.get("r2"))) == 2 * len(nli_corpus)
        assert audit_groundings(nli_corpus, rules.get("r5")) == []

    def test_percentages(self, table, instance, rules):
        report = audit(table, Corpus(instances=(instance,)), rules)
        percentages = rule_percentages(report, rules)
        assert percentages == {"r1": 0.0, "r2": 100.0, "r3": 0.0, "r4": 100.0, "r5": None}
        assert format_percentage(percentages["r2"]) == "100.00"


class TestEvaluate:
    """Tests for evaluate."""

    def test_skips_unlabeled(self):
        """Test accuracy over labeled instances only."""
        corpus = Corpus(instances=(
            plain_instance("a", "b", Label.ENTAILMENT),
            plain_instance("c", "d", Label.ENTAILMENT),
            plain_instance("e", "f", Label.ENTAILMENT),
            plain_instance("g", "h", Label.NEUTRAL),
            plain_instance("i", "j", Label.UNLABELED),
            plain_instance("k", "l", Label.UNLABELED),
        ))
        result = evaluate(ConstantScorer((0.6, 0.2, 0.2)), corpus)
        assert result.accuracy == 0.75
        assert (result.correct, result.labeled, result.skipped) == (3, 4, 2)

    def test_no_labeled_instances(self):
        corpus = Corpus(instances=(plain_instance("a", "b", Label.UNLABELED),))
        with pytest.raises(ArgumentError):
            evaluate(ConstantScorer((0.6, 0.2, 0.2)), corpus)
