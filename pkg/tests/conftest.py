"""Pytest configuration and fixtures."""
import hashlib
import json
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pytest

from app.models.domain import Corpus, Instance, Label, Prediction, Sentence
from app.services.corpus_loader import build_vocab, serialize_snli
from app.services.language_model import fit_lm
from app.services.rules import load_rules
from app.services.trees import linearize, parse_tree

RULES_PATH = Path(__file__).resolve().parent.parent / "rules" / "nli.rules"

SUBJECTS = [("a", "dog"), ("the", "cat"), ("a", "man"), ("the", "kids")]
ACTIONS = [("runs",), ("sleeps",), ("eats", "food"), ("plays", "outside")]


def make_sentence(subject: Tuple[str, str], action: Tuple[str, ...]) -> Sentence:
    """Small sentence with a constituency tree, e.g. (ROOT (S (NP ...) (VP ...)))."""
    det, noun = subject
    vp = f"(VBZ {action[0]})" if len(action) == 1 else f"(VBZ {action[0]}) (NP (NN {action[1]}))"
    tree = parse_tree(f"(ROOT (S (NP (DT {det}) (NN {noun})) (VP {vp})))")
    return Sentence(tokens=tuple(linearize(tree)), tree=tree)


def pair_label(p: Tuple[int, int], h: Tuple[int, int]) -> Label:
    if p[0] != h[0]:
        return Label.NEUTRAL
    return Label.ENTAILMENT if p[1] == h[1] else Label.CONTRADICTION


def make_nli_corpus(n: int, seed: int = 0, source: str = "<fixture>") -> Corpus:
    """n instances over the subject/action grid, labels fixed by the grid positions."""
    rng = np.random.default_rng(seed)
    instances = []
    for i in range(n):
        p = (int(rng.integers(len(SUBJECTS))), int(rng.integers(len(ACTIONS))))
        # bias towards shared subjects so every label occurs
        s2 = p[0] if rng.random() < 0.6 else int(rng.integers(len(SUBJECTS)))
        h = (s2, int(rng.integers(len(ACTIONS))))
        instances.append(Instance(
            premise=make_sentence(SUBJECTS[p[0]], ACTIONS[p[1]]),
            hypothesis=make_sentence(SUBJECTS[h[0]], ACTIONS[h[1]]),
            label=pair_label(p, h),
            pair_id=f"{source}-{i}",
        ))
    return Corpus(instances=tuple(instances), source=source)


def plain_instance(premise: str, hypothesis: str, label: Label = Label.NEUTRAL) -> Instance:
    return Instance(premise=Sentence.from_text(premise), hypothesis=Sentence.from_text(hypothesis), label=label)


def write_corpus(path: Path, instances: Sequence[Instance]) -> Path:
    path.write_text(serialize_snli(instances), encoding="utf-8")
    return path


class HashScorer:
    """Deterministic pseudo-random distributions keyed by the sentence texts."""

    def predict(self, premise: Sentence, hypothesis: Sentence) -> Prediction:
        digest = hashlib.sha256(f"{premise.text}|{hypothesis.text}".encode()).digest()
        raw = np.frombuffer(digest[:12], dtype="<u4").astype(np.float64) + 1.0
        return Prediction.from_array(raw / raw.sum())


class ConstantScorer:
    def __init__(self, probs: Tuple[float, float, float]):
        self.prediction = Prediction(probs=probs)

    def predict(self, premise: Sentence, hypothesis: Sentence) -> Prediction:
        return self.prediction


class ConsistentScorer:
    """Entailment for identical sentences, neutral otherwise; satisfies every shipped rule."""

    def predict(self, premise: Sentence, hypothesis: Sentence) -> Prediction:
        if premise.tokens == hypothesis.tokens:
            return Prediction(probs=(1.0, 0.0, 0.0))
        return Prediction(probs=(0.0, 0.0, 1.0))


class CountingScorer:
    """Wraps a scorer and counts predict calls."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def predict(self, premise: Sentence, hypothesis: Sentence) -> Prediction:
        self.calls += 1
        return self.inner.predict(premise, hypothesis)


@pytest.fixture
def rules():
    """The shipped rule set."""
    return load_rules(str(RULES_PATH))


@pytest.fixture
def nli_corpus():
    """60 tree-annotated instances."""
    return make_nli_corpus(60, seed=1, source="train")


@pytest.fixture
def dev_corpus():
    return make_nli_corpus(30, seed=2, source="dev")


@pytest.fixture
def vocab(nli_corpus):
    return build_vocab(nli_corpus)


@pytest.fixture
def lm(nli_corpus):
    return fit_lm(nli_corpus, order=3, delta=0.1)


@pytest.fixture
def hash_scorer():
    return HashScorer()


@pytest.fixture
def consistent_scorer():
    return ConsistentScorer()


@pytest.fixture
def snli_files(tmp_path) -> Dict[str, str]:
    """Train/dev/test JSONL files and a copy of the rules in a temporary directory."""
    paths = {
        "train_path": write_corpus(tmp_path / "train.jsonl", make_nli_corpus(48, seed=11, source="train").instances),
        "dev_path": write_corpus(tmp_path / "dev.jsonl", make_nli_corpus(24, seed=12, source="dev").instances),
        "test_path": write_corpus(tmp_path / "test.jsonl", make_nli_corpus(24, seed=13, source="test").instances),
        "rules_path": tmp_path / "nli.rules",
    }
    paths["rules_path"].write_text(RULES_PATH.read_text(encoding="utf-8"), encoding="utf-8")
    return {key: str(value) for key, value in paths.items()}


def snli_line(gold: str, s1: str, s2: str, **extra) -> str:
    return json.dumps({"gold_label": gold, "sentence1": s1, "sentence2": s2, **extra}) + "\n"


def sentences(*texts: str) -> List[Sentence]:
    return [Sentence.from_text(t) for t in texts]
