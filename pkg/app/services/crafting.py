"""Inconsistency-ranked dataset crafting, rule-violation audits and accuracy."""
import logging
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from app.exceptions import ArgumentError
from app.models.domain import (
    AccuracyResult,
    Corpus,
    CraftedDataset,
    Instance,
    Label,
    Rule,
    RuleSet,
    RuleViolations,
    Scorer,
    Sentence,
    Substitution,
    ViolationReport,
)
from app.services.rules import body_holds, ground_atom, head_holds, inconsistency_loss
from app.utils.cache import PredictionTable, predict_many

logger = logging.getLogger(__name__)


def pair_rules(rules: RuleSet) -> List[Rule]:
    """Rules over at most two variables, the ones grounded on single instances."""
    return [rule for rule in rules if len(rule.variables) <= 2]


def instance_bindings(rule: Rule, instance: Instance) -> List[Substitution]:
    """The two groundings of a rule on an instance: as given and swapped."""
    p, h = instance.premise, instance.hypothesis
    variables = rule.variables
    if len(variables) == 1:
        return [Substitution(binding={variables[0]: p}), Substitution(binding={variables[0]: h})]
    return [
        Substitution(binding={variables[0]: p, variables[1]: h}),
        Substitution(binding={variables[0]: h, variables[1]: p}),
    ]


def _atom_pairs(substitutions: Iterable[Tuple[Rule, Substitution]]) -> List[Tuple[Sentence, Sentence]]:
    pairs = []
    for rule, s in substitutions:
        for atom in (*rule.body, rule.head.atom):
            pairs.append(ground_atom(atom, s))
    return pairs


def instance_score(scorer: Scorer, instance: Instance, rules: RuleSet) -> float:
    """Summed inconsistency loss of the instance and its swap; the label is ignored."""
    return sum(
        inconsistency_loss(scorer, rule, s)
        for rule in pair_rules(rules)
        for s in instance_bindings(rule, instance)
    )


def score_corpus(scorer: Scorer, corpus: Corpus, rules: RuleSet) -> np.ndarray:
    """instance_score for every instance, predictions computed in one batch."""
    active = pair_rules(rules)
    groundings = [(rule, s) for inst in corpus for rule in active for s in instance_bindings(rule, inst)]
    table = PredictionTable.build(scorer, _atom_pairs(groundings))
    return np.array([instance_score(table, inst, rules) for inst in corpus], dtype=np.float64)


def craft_dataset(
    scorer: Scorer,
    corpus: Corpus,
    rules: RuleSet,
    k: int,
    model_name: str = "model",
    infer_swap_labels: bool = False,
) -> CraftedDataset:
    """
    Select the k most inconsistent instances and pair each with its swap.

    Args:
        scorer: Frozen scorer
        corpus: Candidate instances
        rules: Rule set; only rules over at most two variables contribute
        k: Number of originals to keep
        model_name: Identifier of the scored model
        infer_swap_labels: Label a contradiction's swap as contradiction instead of unlabeled

    Returns:
        CraftedDataset with originals at even positions and swaps at odd positions
    """
    if k < 1 or k > len(corpus):
        raise ArgumentError(f"k must be between 1 and {len(corpus)}, got {k}")
    scores = score_corpus(scorer, corpus, rules)
    # sorted() is stable, so ties keep corpus order
    order = sorted(range(len(corpus)), key=lambda i: -scores[i])[:k]

    instances: List[Instance] = []
    for i in order:
        original = corpus[i]
        swap_label = Label.UNLABELED
        if infer_swap_labels and original.label == Label.CONTRADICTION:
            swap_label = Label.CONTRADICTION
        instances.extend([original, original.swapped(swap_label)])

    logger.info(f"Crafted {len(instances)} instances from the top {k} of {len(corpus)} (max score {scores[order[0]]:.4f})")
    return CraftedDataset(instances=instances, scores=[float(scores[i]) for i in order], model_name=model_name, k=k)


def audit_groundings(corpus: Corpus, rule: Rule) -> List[Substitution]:
    """
    Grounding domain of a rule on a corpus.

    One-variable rules range over distinct sentences, two-variable rules over both
    orderings of each instance. Rules over more variables are not audited.
    """
    variables = rule.variables
    if len(variables) == 1:
        distinct: Dict[Tuple[str, ...], Sentence] = {}
        for sentence in corpus.sentences():
            distinct.setdefault(sentence.tokens, sentence)
        return [Substitution(binding={variables[0]: s}) for s in distinct.values()]
    if len(variables) == 2:
        return [s for inst in corpus for s in instance_bindings(rule, inst)]
    return []


def audit(scorer: Scorer, corpus: Corpus, rules: RuleSet) -> ViolationReport:
    """Count, per auditable rule, how often the body holds and the head does not."""
    domains = {rule.name: audit_groundings(corpus, rule) for rule in rules if len(rule.variables) <= 2}
    table = PredictionTable.build(
        scorer,
        _atom_pairs([(rules.get(name), s) for name, subs in domains.items() for s in subs]),
    )
    rows = []
    for name, substitutions in domains.items():
        rule = rules.get(name)
        body = violations = 0
        for s in substitutions:
            if body_holds(table, rule, s):
                body += 1
                if not head_holds(table, rule, s):
                    violations += 1
        rows.append(RuleViolations(rule=name, body_count=body, violation_count=violations))
        logger.debug(f"Audit {name}: body {body}, violations {violations}")
    return ViolationReport(rows=rows)


def format_percentage(value: float) -> str:
    return f"{value:.2f}"


def evaluate(scorer: Scorer, corpus: Corpus) -> AccuracyResult:
    """
    Accuracy over labeled instances; unlabeled ones are counted as skipped.

    Raises:
        ArgumentError: if no instance is labeled
    """
    labeled = [inst for inst in corpus if inst.label != Label.UNLABELED]
    skipped = len(corpus) - len(labeled)
    if not labeled:
        raise ArgumentError("no labeled instances to evaluate")
    probs = predict_many(scorer, [(inst.premise, inst.hypothesis) for inst in labeled])
    # np.argmax returns the first maximum, matching the lowest-index tie-break
    predicted = np.argmax(probs, axis=1)
    gold = np.array([inst.label.class_index for inst in labeled])
    correct = int((predicted == gold).sum())
    return AccuracyResult(accuracy=correct / len(labeled), correct=correct, labeled=len(labeled), skipped=skipped)


def rule_percentages(report: ViolationReport, rules: RuleSet) -> Dict[str, Optional[float]]:
    """Violation percentage per rule, None for rules the audit does not cover."""
    covered = report.percentages()
    return {name: covered.get(name) for name in rules.names}
