"""Adversarial substitution search: prototype perturbation and loss re-ranking."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.models.domain import (
    AdversarialSet,
    Corpus,
    Instance,
    ParseTree,
    Perturbation,
    PerturbationKind,
    PerturbedSentence,
    Provenance,
    Rule,
    RuleSet,
    Scorer,
    SearchConfig,
    Sentence,
    Substitution,
)
from app.services.language_model import NGramLanguageModel
from app.services.rules import ground_atom, inconsistency_loss
from app.services.trees import (
    delete_subtree,
    insert_subtree,
    internal_nodes,
    leaf_count,
    linearize,
    replace_leaf,
)
from app.utils.cache import PredictionTable, pair_key, predict_many

logger = logging.getLogger(__name__)

MAX_DONOR_LEAVES = 5


def collect_donors(corpus: Corpus, max_leaves: int = MAX_DONOR_LEAVES) -> List[ParseTree]:
    """Distinct constituents with at most ``max_leaves`` leaves, in corpus order."""
    seen: Dict[str, ParseTree] = {}
    for sentence in corpus.sentences():
        if sentence.tree is None:
            continue
        for _, node in internal_nodes(sentence.tree):
            if leaf_count(node) <= max_leaves:
                seen.setdefault(str(node), node)
    return list(seen.values())


class PerturbationEngine:
    """Applies single word swaps and subtree deletions or insertions to a sentence."""

    def __init__(self, lm: NGramLanguageModel, donors: Sequence[ParseTree], config: SearchConfig):
        """
        Initialize perturbation engine.

        Args:
            lm: Language model ranking word-swap candidates
            donors: Constituents available for insertion
            config: Search configuration
        """
        self.lm = lm
        self.donors = list(donors)
        self.config = config

    def _sample_sites(self, sites: List, rng: np.random.Generator) -> List:
        limit = self.config.max_sites_per_sentence
        if len(sites) <= limit:
            return sites
        chosen = np.sort(rng.choice(len(sites), size=limit, replace=False))
        return [sites[i] for i in chosen]

    def enumerate(self, sentence: Sentence, rng: np.random.Generator) -> List[PerturbedSentence]:
        """
        Every single-edit variant of ``sentence`` this configuration allows.

        At most ``max_sites_per_sentence`` sites are drawn per kind. Sentences
        without a tree only get word swaps.
        """
        kinds = self.config.enabled_kinds
        out: List[PerturbedSentence] = []
        seen = {sentence.tokens}

        def emit(tokens: Tuple[str, ...], tree: Optional[ParseTree], perturbation: Perturbation):
            if not tokens or tokens in seen:
                return
            seen.add(tokens)
            out.append(PerturbedSentence(sentence=Sentence(tokens=tokens, tree=tree), perturbation=perturbation))

        if PerturbationKind.WORD_SWAP in kinds and self.config.word_candidates_per_site > 0:
            normalized = sentence.normalized(self.lm.lowercase)
            for i in self._sample_sites(list(range(len(sentence))), rng):
                candidates = self.lm.rank_candidates(normalized[:i], self.config.word_candidates_per_site, exclude=(normalized[i],))
                for token in candidates:
                    tokens = sentence.tokens[:i] + (token,) + sentence.tokens[i + 1:]
                    tree = replace_leaf(sentence.tree, i, token) if sentence.tree is not None else None
                    emit(tokens, tree, Perturbation(kind=PerturbationKind.WORD_SWAP, site=i, payload=token))

        if sentence.tree is None:
            return out

        if PerturbationKind.SUBTREE_DELETE in kinds:
            paths = [path for path, _ in internal_nodes(sentence.tree) if path]
            for path in self._sample_sites(paths, rng):
                tree = delete_subtree(sentence.tree, path)
                if tree is None:
                    continue
                emit(tuple(linearize(tree)), tree, Perturbation(kind=PerturbationKind.SUBTREE_DELETE, site=path))

        if PerturbationKind.SUBTREE_INSERT in kinds and self.donors:
            nodes = list(internal_nodes(sentence.tree))
            for path, node in self._sample_sites(nodes, rng):
                donor = self.donors[int(rng.integers(len(self.donors)))]
                position = int(rng.integers(len(node.children) + 1))
                tree = insert_subtree(sentence.tree, path, position, donor)
                emit(
                    tuple(linearize(tree)),
                    tree,
                    Perturbation(kind=PerturbationKind.SUBTREE_INSERT, site=path + (position,), payload=str(donor)),
                )
        return out


def enumerate_perturbations(
    sentence: Sentence,
    corpus: Corpus,
    config: SearchConfig,
    rng: np.random.Generator,
    lm: NGramLanguageModel,
) -> List[Sentence]:
    """Single-edit variants of a sentence, donors drawn from ``corpus``."""
    engine = PerturbationEngine(lm, collect_donors(corpus), config)
    return [p.sentence for p in engine.enumerate(sentence, rng)]


@dataclass(frozen=True)
class PoolEntry:
    """A candidate substitution and the prototype binding it was edited from."""
    variables: Tuple[str, ...]
    substitution: Substitution
    prototype: Substitution
    provenance: Provenance


@dataclass
class SearchOutcome:
    sets: List[AdversarialSet]
    pool: List[PoolEntry] = field(default_factory=list)
    admissible: int = 0


class AdversarialSearch:
    """Stochastic perturbation re-ranking against a frozen scorer."""

    def __init__(self, scorer: Scorer, lm: NGramLanguageModel, rules: RuleSet, config: SearchConfig):
        self.scorer = scorer
        self.lm = lm
        self.rules = rules
        self.config = config
        self._donor_corpus: Optional[Corpus] = None
        self._donors: List[ParseTree] = []
        self._groups: Dict[Tuple[str, ...], List[Rule]] = {}
        for rule in rules:
            self._groups.setdefault(rule.variables, []).append(rule)

    def _engine(self, corpus: Corpus) -> PerturbationEngine:
        if self._donor_corpus is not corpus:
            self._donor_corpus = corpus
            self._donors = collect_donors(corpus)
        return PerturbationEngine(self.lm, self._donors, self.config)

    def _prototypes(self, instance: Instance) -> Iterable[Tuple[str, Tuple[str, ...], Dict[str, Sentence]]]:
        p, h = instance.premise, instance.hypothesis
        for variables in self._groups:
            if len(variables) == 1:
                yield "premise", variables, {variables[0]: p}
                yield "hypothesis", variables, {variables[0]: h}
            else:
                for orientation, (a, b) in (("forward", (p, h)), ("swapped", (h, p))):
                    binding = {variables[0]: a, variables[1]: b}
                    if len(variables) == 3:
                        binding[variables[2]] = b
                    yield orientation, variables, binding

    def build_pool(self, corpus: Corpus, seeds: Sequence[Tuple[int, Instance]], rng: np.random.Generator) -> List[PoolEntry]:
        """Candidate substitutions, one perturbation away from a prototype binding."""
        engine = self._engine(corpus)
        variants: Dict[Tuple[str, ...], List[PerturbedSentence]] = {}

        def perturb(sentence: Sentence) -> List[PerturbedSentence]:
            if sentence.tokens not in variants:
                variants[sentence.tokens] = engine.enumerate(sentence, rng)
            return variants[sentence.tokens]

        pool: List[PoolEntry] = []
        for seed_index, instance in seeds:
            for orientation, variables, binding in self._prototypes(instance):
                prototype = Substitution(binding=binding)
                # a third variable is always an edit of the second
                edited = variables[2:] if len(variables) == 3 else variables
                for variable in edited:
                    for variant in perturb(binding[variable]):
                        substitution = Substitution(binding={**binding, variable: variant.sentence})
                        provenance = Provenance(
                            seed_index=seed_index,
                            orientation=orientation,
                            variable=variable,
                            perturbation=variant.perturbation,
                            order=len(pool),
                        )
                        pool.append(PoolEntry(variables, substitution, prototype, provenance))

        if len(pool) > self.config.pool_size:
            keep = np.sort(rng.permutation(len(pool))[: self.config.pool_size])
            pool = [pool[i] for i in keep]
        return pool

    def _prediction_table(self, substitutions: Iterable[Tuple[Tuple[str, ...], Substitution]]) -> PredictionTable:
        pairs: Dict = {}
        for variables, s in substitutions:
            for rule in self._groups[variables]:
                for atom in (*rule.body, rule.head.atom):
                    a, b = ground_atom(atom, s)
                    pairs.setdefault(pair_key(a, b), (a, b))
        unique = list(pairs.values())
        workers = self.config.workers
        if workers > 1 and len(unique) > workers:
            chunks = [unique[i::workers] for i in range(workers)]
            with ThreadPoolExecutor(max_workers=workers) as executor:
                results = list(executor.map(lambda chunk: predict_many(self.scorer, chunk), chunks))
            table = PredictionTable()
            for chunk, probs in zip(chunks, results):
                for (a, b), row in zip(chunk, probs):
                    table.set(a, b, row)
            return table
        return PredictionTable.build(self.scorer, unique)

    def score_pool(self, pool: Sequence[PoolEntry]) -> Tuple[List[AdversarialSet], int]:
        """Gate the pool through the LM, then score survivors against every rule of their signature."""
        survivors = [entry for entry in pool if self.lm.admissible(entry.substitution, self.config.tau)]
        table = self._prediction_table(
            [(e.variables, e.substitution) for e in survivors] + [(e.variables, e.prototype) for e in survivors]
        )
        sets: List[AdversarialSet] = []
        for entry in survivors:
            for rule in self._groups[entry.variables]:
                sets.append(AdversarialSet(
                    rule=rule.name,
                    substitution=entry.substitution,
                    loss=_clip(inconsistency_loss(table, rule, entry.substitution)),
                    prototype_loss=_clip(inconsistency_loss(table, rule, entry.prototype)),
                    provenance=entry.provenance,
                ))
        sets.sort(key=lambda s: (-s.loss, s.rule, s.provenance.order))
        return sets, len(survivors)

    def generate(
        self,
        corpus: Corpus,
        rng: np.random.Generator,
        seeds: Optional[Sequence[Instance]] = None,
    ) -> SearchOutcome:
        """
        One round of prototype sampling, perturbation and re-ranking.

        Args:
            corpus: Source of prototypes and donor constituents
            rng: Seeded generator; the only source of randomness
            seeds: Explicit prototypes; when omitted ``seeds_per_round`` instances
                are drawn from ``corpus`` without replacement

        Returns:
            SearchOutcome with sets sorted by loss descending and the scored pool
        """
        if seeds is None:
            size = min(self.config.seeds_per_round, len(corpus))
            indices = rng.choice(len(corpus), size=size, replace=False)
            chosen = [(int(i), corpus[int(i)]) for i in indices]
        else:
            chosen = list(enumerate(seeds))

        pool = self.build_pool(corpus, chosen, rng)
        sets, admitted = self.score_pool(pool)
        logger.debug(f"Search round: {len(chosen)} seeds, pool {len(pool)}, {admitted} admissible, {len(sets)} scored sets")
        return SearchOutcome(sets=sets, pool=pool, admissible=admitted)


def _clip(loss: float) -> float:
    return min(1.0, max(0.0, loss))


def generate_adversarials(
    scorer: Scorer,
    lm: NGramLanguageModel,
    rules: RuleSet,
    corpus: Corpus,
    config: SearchConfig,
    rng: np.random.Generator,
) -> List[AdversarialSet]:
    """Adversarial sets sorted by inconsistency loss, highest first."""
    return AdversarialSearch(scorer, lm, rules, config).generate(corpus, rng).sets
