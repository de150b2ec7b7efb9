"""Domain models for NLI corpora, logic rules, scoring and adversarial search."""
from __future__ import annotations

import math
from enum import Enum
from typing import Dict, FrozenSet, Iterator, List, Optional, Protocol, Sequence, Tuple, Union, runtime_checkable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
RESERVED_TOKENS = (PAD, UNK, BOS, EOS)
SIMPLEX_TOLERANCE = 1e-9


class Label(str, Enum):
    """Gold relation between a premise and a hypothesis."""
    ENTAILMENT = "entailment"
    CONTRADICTION = "contradiction"
    NEUTRAL = "neutral"
    UNLABELED = "unlabeled"

    @property
    def class_index(self) -> Optional[int]:
        """Model output index, or None for unlabeled instances."""
        return _LABEL_INDEX.get(self)

    @classmethod
    def from_class_index(cls, index: int) -> "Label":
        return _INDEX_LABEL[index]


_LABEL_INDEX = {Label.ENTAILMENT: 0, Label.CONTRADICTION: 1, Label.NEUTRAL: 2}
_INDEX_LABEL = {v: k for k, v in _LABEL_INDEX.items()}


class Predicate(str, Enum):
    """Binary logic predicates, one per model output class."""
    ENT = "ent"
    CON = "con"
    NEU = "neu"

    @property
    def class_index(self) -> int:
        return _PREDICATE_INDEX[self]


_PREDICATE_INDEX = {Predicate.ENT: 0, Predicate.CON: 1, Predicate.NEU: 2}


# Parse trees

class Leaf(BaseModel):
    """A single token at the frontier of a parse tree."""
    model_config = ConfigDict(frozen=True)

    token: str

    def __str__(self) -> str:
        return self.token


class Node(BaseModel):
    """An internal constituent with a label and at least one child."""
    model_config = ConfigDict(frozen=True)

    label: str
    children: Tuple["ParseTree", ...]

    @field_validator("children")
    @classmethod
    def _non_empty(cls, children):
        if not children:
            raise ValueError("a node needs at least one child")
        return children

    def __str__(self) -> str:
        inner = " ".join(str(child) for child in self.children)
        return f"({self.label} {inner})"


ParseTree = Union[Leaf, Node]
Node.model_rebuild()


def tree_leaves(tree: ParseTree) -> List[str]:
    """Left-to-right leaf tokens of a tree."""
    leaves: List[str] = []
    stack: List[ParseTree] = [tree]
    while stack:
        item = stack.pop()
        if isinstance(item, Leaf):
            leaves.append(item.token)
        else:
            stack.extend(reversed(item.children))
    return leaves


# Corpus

class Sentence(BaseModel):
    """A token sequence with an optional constituency tree over the same tokens."""
    model_config = ConfigDict(frozen=True)

    tokens: Tuple[str, ...]
    tree: Optional[ParseTree] = None

    @field_validator("tokens")
    @classmethod
    def _valid_tokens(cls, tokens):
        if not tokens:
            raise ValueError("a sentence needs at least one token")
        for token in tokens:
            if not token or any(ch.isspace() for ch in token):
                raise ValueError(f"invalid token {token!r}")
        return tokens

    @model_validator(mode="after")
    def _tree_matches_tokens(self):
        if self.tree is not None and tuple(tree_leaves(self.tree)) != self.tokens:
            raise ValueError("tree leaves do not match sentence tokens")
        return self

    @classmethod
    def from_text(cls, text: str) -> "Sentence":
        return cls(tokens=tuple(text.split()))

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def normalized(self, lowercase: bool = True) -> Tuple[str, ...]:
        """Tokens as seen by the vocabulary and the language model."""
        if lowercase:
            return tuple(token.lower() for token in self.tokens)
        return self.tokens


class Instance(BaseModel):
    """A premise-hypothesis pair with its gold label."""
    model_config = ConfigDict(frozen=True)

    premise: Sentence
    hypothesis: Sentence
    label: Label
    pair_id: Optional[str] = None

    def swapped(self, label: Label = Label.UNLABELED) -> "Instance":
        return Instance(premise=self.hypothesis, hypothesis=self.premise, label=label, pair_id=self.pair_id)


class Corpus(BaseModel):
    """Ordered NLI instances read from one source."""
    model_config = ConfigDict(frozen=True)

    instances: Tuple[Instance, ...]
    source: str = "<memory>"

    @field_validator("instances")
    @classmethod
    def _non_empty(cls, instances):
        if not instances:
            raise ValueError("a corpus needs at least one instance")
        return instances

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[Instance]:  # type: ignore[override]
        return iter(self.instances)

    def __getitem__(self, index: int) -> Instance:
        return self.instances[index]

    def sentences(self) -> Iterator[Sentence]:
        for instance in self.instances:
            yield instance.premise
            yield instance.hypothesis


class Vocab(BaseModel):
    """Token index with the four reserved entries at fixed positions."""
    model_config = ConfigDict(frozen=True)

    token_of: Tuple[str, ...]
    counts: Dict[str, int]
    lowercase: bool = True
    id_of: Dict[str, int] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _index(self):
        if self.token_of[: len(RESERVED_TOKENS)] != RESERVED_TOKENS:
            raise ValueError("reserved tokens must occupy the first four indices")
        if len(set(self.token_of)) != len(self.token_of):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "id_of", {token: i for i, token in enumerate(self.token_of)})
        return self

    def __len__(self) -> int:
        return len(self.token_of)

    def normalize(self, token: str) -> str:
        return token.lower() if self.lowercase else token

    def index(self, token: str) -> int:
        """Index of a raw token; unknown tokens map to UNK."""
        return self.id_of.get(self.normalize(token), self.id_of[UNK])

    def indices(self, sentence: Sentence) -> np.ndarray:
        return np.fromiter((self.index(token) for token in sentence.tokens), dtype=np.int64, count=len(sentence))


# Rules

class Atom(BaseModel):
    """A binary predicate applied to two variables."""
    model_config = ConfigDict(frozen=True)

    predicate: Predicate
    arg1: str
    arg2: str

    def __str__(self) -> str:
        return f"{self.predicate.value}({self.arg1},{self.arg2})"


class Literal(BaseModel):
    """A possibly negated atom; negation only appears in rule heads."""
    model_config = ConfigDict(frozen=True)

    atom: Atom
    negated: bool = False

    def __str__(self) -> str:
        return f"~{self.atom}" if self.negated else str(self.atom)


class Rule(BaseModel):
    """A ``body => head`` clause; an empty body encodes the tautology."""
    model_config = ConfigDict(frozen=True)

    name: str
    body: Tuple[Atom, ...] = ()
    head: Literal

    @model_validator(mode="after")
    def _check_variables(self):
        body_vars = {v for atom in self.body for v in (atom.arg1, atom.arg2)}
        head_vars = {self.head.atom.arg1, self.head.atom.arg2}
        if self.body and not head_vars <= body_vars:
            raise ValueError(f"rule {self.name}: head variables {sorted(head_vars - body_vars)} not in body")
        if len(body_vars | head_vars) > 3:
            raise ValueError(f"rule {self.name}: at most three variables are supported")
        return self

    @property
    def variables(self) -> Tuple[str, ...]:
        """Variables in order of first appearance, body before head."""
        seen: Dict[str, None] = {}
        for atom in (*self.body, self.head.atom):
            seen.setdefault(atom.arg1)
            seen.setdefault(atom.arg2)
        return tuple(seen)

    def __str__(self) -> str:
        body = " & ".join(str(atom) for atom in self.body) if self.body else "true"
        return f"{self.name}: {body} => {self.head}"


class RuleSet(BaseModel):
    """Ordered rules with unique names."""
    model_config = ConfigDict(frozen=True)

    rules: Tuple[Rule, ...]

    @field_validator("rules")
    @classmethod
    def _unique_names(cls, rules):
        names = [rule.name for rule in rules]
        if len(names) != len(set(names)):
            raise ValueError("rule names must be unique")
        return rules

    def __iter__(self) -> Iterator[Rule]:  # type: ignore[override]
        return iter(self.rules)

    def __len__(self) -> int:
        return len(self.rules)

    def get(self, name: str) -> Rule:
        for rule in self.rules:
            if rule.name == name:
                return rule
        raise KeyError(name)

    @property
    def names(self) -> List[str]:
        return [rule.name for rule in self.rules]


class Substitution(BaseModel):
    """Binding of rule variables to sentences."""
    model_config = ConfigDict(frozen=True)

    binding: Dict[str, Sentence]

    def __getitem__(self, variable: str) -> Sentence:
        return self.binding[variable]

    def __contains__(self, variable: str) -> bool:
        return variable in self.binding

    def sentences(self) -> List[Sentence]:
        return list(self.binding.values())

    def key(self) -> Tuple[Tuple[str, Tuple[str, ...]], ...]:
        """Hashable identity over variable names and token sequences."""
        return tuple((var, self.binding[var].tokens) for var in sorted(self.binding))


# Scoring

class Prediction(BaseModel):
    """Distribution over (ent, con, neu)."""
    model_config = ConfigDict(frozen=True)

    probs: Tuple[float, float, float]

    @field_validator("probs")
    @classmethod
    def _on_simplex(cls, probs):
        if any(not math.isfinite(p) or p < 0.0 for p in probs):
            raise ValueError(f"invalid probabilities {probs}")
        if abs(sum(probs) - 1.0) > SIMPLEX_TOLERANCE:
            raise ValueError(f"probabilities {probs} do not sum to 1")
        return probs

    @classmethod
    def from_array(cls, row: Sequence[float]) -> "Prediction":
        return cls(probs=(float(row[0]), float(row[1]), float(row[2])))

    def argmax(self) -> int:
        """Index of the largest probability; ties go to the lowest index."""
        best = 0
        for i in (1, 2):
            if self.probs[i] > self.probs[best]:
                best = i
        return best


@runtime_checkable
class Scorer(Protocol):
    """Anything that maps a sentence pair to a 3-class distribution."""

    def predict(self, premise: Sentence, hypothesis: Sentence) -> Prediction:
        ...


class ScorerConfig(BaseModel):
    """Shape and initialization of the built-in scorer."""
    embedding_dim: int = Field(default=32, ge=1)
    hidden_dim: int = Field(default=64, ge=1)
    vocab_size: int = Field(ge=1)
    rng_seed: int = 0
    init_scale: float = Field(default=0.1, ge=0.0)


# Search

class PerturbationKind(str, Enum):
    WORD_SWAP = "word_swap"
    SUBTREE_DELETE = "subtree_delete"
    SUBTREE_INSERT = "subtree_insert"


class Perturbation(BaseModel):
    """One edit: a token index for swaps, a node path for tree edits."""
    model_config = ConfigDict(frozen=True)

    kind: PerturbationKind
    site: Union[int, Tuple[int, ...]]
    payload: Optional[str] = None

    @model_validator(mode="after")
    def _payload_matches_kind(self):
        needs_payload = self.kind != PerturbationKind.SUBTREE_DELETE
        if needs_payload != (self.payload is not None):
            raise ValueError(f"{self.kind.value} payload mismatch")
        return self


class PerturbedSentence(BaseModel):
    model_config = ConfigDict(frozen=True)

    sentence: Sentence
    perturbation: Perturbation


class SearchConfig(BaseModel):
    """Knobs for prototype perturbation and re-ranking."""
    seeds_per_round: int = Field(default=32, ge=1)
    pool_size: int = Field(default=512, ge=1)
    tau: float = Field(default=7.0, gt=0.0)
    word_candidates_per_site: int = Field(default=5, ge=0)
    max_sites_per_sentence: int = Field(default=4, ge=0)
    rng_seed: int = 0
    enabled_kinds: FrozenSet[PerturbationKind] = frozenset(PerturbationKind)
    workers: int = Field(default=1, ge=1)


class Provenance(BaseModel):
    """Where a candidate substitution came from."""
    model_config = ConfigDict(frozen=True)

    seed_index: int
    orientation: str
    variable: str
    perturbation: Perturbation
    order: int


class AdversarialSet(BaseModel):
    """A scored substitution for one rule."""
    model_config = ConfigDict(frozen=True)

    rule: str
    substitution: Substitution
    loss: float = Field(ge=0.0, le=1.0)
    prototype_loss: float = Field(default=0.0, ge=0.0, le=1.0)
    provenance: Provenance


# Training

class Aggregation(str, Enum):
    SUM = "sum"
    MEAN = "mean"
    MAX = "max"


class TrainConfig(BaseModel):
    """Mini-batch SGD schedule with an optional adversarial regulariser."""
    learning_rate: float = Field(default=0.05, gt=0.0)
    epochs: int = Field(default=10, ge=1)
    batch_size: int = Field(default=32, ge=1)
    lam: float = Field(default=0.0, ge=0.0)
    n_adv: int = Field(default=8, ge=0)
    rng_seed: int = 0
    aggregation: Aggregation = Aggregation.SUM
    search: SearchConfig = Field(default_factory=SearchConfig)
    record_timing: bool = True
    record_batches: bool = False


class BatchRecord(BaseModel):
    """Objective of a single update and the adversarial sets it used."""
    epoch: int
    index: int
    data_loss: float
    adv_loss: float
    loss: float
    adv_sets: List[AdversarialSet] = Field(default_factory=list)


class EpochStats(BaseModel):
    epoch: int
    data_loss: float
    adv_loss: float
    dev_accuracy: Optional[float] = None
    violations: Dict[str, Optional[float]] = Field(default_factory=dict)
    seconds: float = 0.0
    updates: int = 0


class TrainReport(BaseModel):
    epochs: List[EpochStats] = Field(default_factory=list)
    best_epoch: Optional[int] = None
    batches: List[BatchRecord] = Field(default_factory=list)

    @property
    def updates(self) -> int:
        return sum(stats.updates for stats in self.epochs)


# Crafting and auditing

class RuleViolations(BaseModel):
    """Body and violation counts of one rule."""
    rule: str
    body_count: int = Field(ge=0)
    violation_count: int = Field(ge=0)

    @model_validator(mode="after")
    def _bounded(self):
        if self.violation_count > self.body_count:
            raise ValueError("violations cannot exceed body count")
        return self

    @property
    def percentage(self) -> float:
        if self.body_count == 0:
            return 0.0
        return 100.0 * self.violation_count / self.body_count


class ViolationReport(BaseModel):
    rows: List[RuleViolations] = Field(default_factory=list)

    def get(self, rule: str) -> RuleViolations:
        for row in self.rows:
            if row.rule == rule:
                return row
        raise KeyError(rule)

    def percentages(self) -> Dict[str, float]:
        return {row.rule: row.percentage for row in self.rows}


class AccuracyResult(BaseModel):
    accuracy: float = Field(ge=0.0, le=1.0)
    correct: int
    labeled: int
    skipped: int = 0


class CraftedDataset(BaseModel):
    """Top-k inconsistent pairs followed, pairwise, by their swaps."""
    instances: List[Instance]
    scores: List[float]
    model_name: str
    k: int

    @model_validator(mode="after")
    def _shape(self):
        if len(self.instances) != 2 * self.k or len(self.scores) != self.k:
            raise ValueError("crafted dataset must hold 2k instances and k scores")
        return self
