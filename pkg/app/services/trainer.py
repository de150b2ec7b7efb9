"""Mini-batch SGD training and adversarially regularised fine-tuning."""
import logging
import math
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.exceptions import ArgumentError, InvariantViolation, NumericError
from app.models.domain import (
    AdversarialSet,
    Aggregation,
    BatchRecord,
    Corpus,
    EpochStats,
    Instance,
    RuleSet,
    TrainConfig,
    TrainReport,
    Vocab,
)
from app.services.crafting import audit, evaluate, rule_percentages
from app.services.language_model import NGramLanguageModel
from app.services.scorer import NLIScorer, ScorerParams, sgd_step
from app.services.search import AdversarialSearch

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    params: ScorerParams
    report: TrainReport
    best_params: ScorerParams


def batches_per_epoch(size: int, batch_size: int) -> int:
    return math.ceil(size / batch_size)


def select_adversarial_sets(sets: Sequence[AdversarialSet], n_adv: int, aggregation: Aggregation, lam: float) -> Tuple[List[AdversarialSet], float]:
    """
    Sets entering the regulariser and the weight applied to their summed loss.

    ``sum`` keeps the top n_adv sets at weight lam, ``mean`` divides that weight
    by the number kept, ``max`` keeps only the single worst set.
    """
    top = list(sets[:n_adv])
    if aggregation == Aggregation.MAX:
        top = top[:1]
    if aggregation == Aggregation.MEAN and top:
        return top, lam / len(top)
    return top, lam


class Trainer:
    """Runs the SGD schedule shared by plain training and fine-tuning."""

    def __init__(
        self,
        vocab: Vocab,
        rules: Optional[RuleSet] = None,
        lm: Optional[NGramLanguageModel] = None,
    ):
        """
        Initialize trainer.

        Args:
            vocab: Vocabulary of the scorer being trained
            rules: Rules for the regulariser and the per-epoch audit
            lm: Language model gating adversarial candidates
        """
        self.vocab = vocab
        self.rules = rules
        self.lm = lm

    def train(self, params: ScorerParams, corpus: Corpus, dev: Optional[Corpus], config: TrainConfig) -> TrainResult:
        """Plain cross-entropy training; the regulariser weight is ignored."""
        return self._run(params, corpus, dev, config.model_copy(update={"lam": 0.0}))

    def fine_tune(self, params: ScorerParams, corpus: Corpus, dev: Optional[Corpus], config: TrainConfig) -> TrainResult:
        """Training with ``lam * sum L_I`` over adversarial sets generated per batch."""
        if config.lam > 0.0 and config.n_adv > 0 and (self.rules is None or self.lm is None):
            raise ArgumentError("fine-tuning with a regulariser needs rules and a language model")
        return self._run(params, corpus, dev, config)

    def _run(self, params: ScorerParams, corpus: Corpus, dev: Optional[Corpus], config: TrainConfig) -> TrainResult:
        m = len(corpus)
        if m == 0:
            raise ArgumentError("cannot train on an empty corpus")
        use_adv = config.lam > 0.0 and config.n_adv > 0

        shuffle_rng = np.random.default_rng(config.rng_seed)
        search_rng = np.random.default_rng(config.search.rng_seed)
        scorer = NLIScorer(params.copy(), self.vocab)
        search = AdversarialSearch(scorer, self.lm, self.rules, config.search) if use_adv else None

        report = TrainReport()
        best_params = scorer.params.copy()
        best_accuracy = -1.0

        for epoch in range(1, config.epochs + 1):
            started = time.perf_counter()
            order = shuffle_rng.permutation(m)
            epoch_data = epoch_adv = 0.0
            updates = 0
            for index, start in enumerate(range(0, m, config.batch_size)):
                batch = [corpus[int(i)] for i in order[start:start + config.batch_size]]
                record = self._step(scorer, search, corpus, batch, config, search_rng, epoch, index, use_adv)
                epoch_data += record.data_loss
                epoch_adv += record.adv_loss
                updates += 1
                if config.record_batches:
                    report.batches.append(record)

            if updates != batches_per_epoch(m, config.batch_size):
                raise InvariantViolation(f"epoch {epoch} ran {updates} updates, expected {batches_per_epoch(m, config.batch_size)}")
            stats = EpochStats(epoch=epoch, data_loss=epoch_data, adv_loss=epoch_adv, updates=updates)
            if dev is not None:
                stats.dev_accuracy = evaluate(scorer, dev).accuracy
                if self.rules is not None:
                    stats.violations = rule_percentages(audit(scorer, dev, self.rules), self.rules)
                if stats.dev_accuracy > best_accuracy:
                    best_accuracy = stats.dev_accuracy
                    best_params = scorer.params.copy()
                    report.best_epoch = epoch
            if config.record_timing:
                stats.seconds = time.perf_counter() - started
            report.epochs.append(stats)
            logger.info(
                f"Epoch {epoch}/{config.epochs}: data_loss={epoch_data:.4f} adv_loss={epoch_adv:.4f} "
                f"dev_acc={stats.dev_accuracy if stats.dev_accuracy is not None else 'n/a'} updates={updates}"
            )

        if dev is None:
            best_params = scorer.params.copy()
            report.best_epoch = config.epochs
        return TrainResult(params=scorer.params, report=report, best_params=best_params)

    def _step(
        self,
        scorer: NLIScorer,
        search: Optional[AdversarialSearch],
        corpus: Corpus,
        batch: List[Instance],
        config: TrainConfig,
        search_rng: np.random.Generator,
        epoch: int,
        index: int,
        use_adv: bool,
    ) -> BatchRecord:
        chosen: List[AdversarialSet] = []
        weight = 0.0
        if use_adv:
            # generation finishes before the parameters change
            search.scorer = scorer
            outcome = search.generate(corpus, search_rng, seeds=batch)
            chosen, weight = select_adversarial_sets(outcome.sets, config.n_adv, config.aggregation, config.lam)

        adv_pairs = [(self.rules.get(s.rule), s.substitution) for s in chosen]
        terms = scorer.objective_and_grad(batch, adv_pairs, weight)
        scorer.params = sgd_step(scorer.params, terms.grad, config.learning_rate)
        if not scorer.params.all_finite():
            raise NumericError(f"non-finite parameters after update {index} of epoch {epoch}")
        return BatchRecord(
            epoch=epoch,
            index=index,
            data_loss=terms.data_loss,
            adv_loss=terms.adv_loss,
            loss=terms.value,
            adv_sets=chosen,
        )


def train(
    params: ScorerParams,
    vocab: Vocab,
    corpus: Corpus,
    dev: Optional[Corpus],
    config: TrainConfig,
    rules: Optional[RuleSet] = None,
) -> TrainResult:
    return Trainer(vocab, rules=rules).train(params, corpus, dev, config)


def fine_tune(
    params: ScorerParams,
    vocab: Vocab,
    corpus: Corpus,
    dev: Optional[Corpus],
    rules: RuleSet,
    lm: NGramLanguageModel,
    config: TrainConfig,
) -> TrainResult:
    return Trainer(vocab, rules=rules, lm=lm).fine_tune(params, corpus, dev, config)
