"""SNLI-format corpus loading, serialization and vocabulary building."""
import json
import logging
from collections import Counter
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from app.exceptions import ArgumentError, CorpusFormatError, TreeParseError
from app.models.domain import RESERVED_TOKENS, Corpus, Instance, Label, Sentence, Vocab
from app.services.trees import linearize, parse_tree

logger = logging.getLogger(__name__)

GOLD_LABELS = {
    "entailment": Label.ENTAILMENT,
    "contradiction": Label.CONTRADICTION,
    "neutral": Label.NEUTRAL,
    "-": Label.UNLABELED,
}
REQUIRED_FIELDS = ("gold_label", "sentence1", "sentence2")


class CorpusLoader:
    """Reads SNLI JSONL files into immutable corpora."""

    def __init__(self, max_sentence_length: int = 64):
        """
        Initialize corpus loader.

        Args:
            max_sentence_length: Instances with a longer premise or hypothesis are dropped
        """
        self.max_sentence_length = max_sentence_length

    def load(self, path: Union[str, Path], keep_unlabeled: bool = False) -> Corpus:
        """
        Load an SNLI JSONL corpus.

        Args:
            path: File with one JSON object per line
            keep_unlabeled: Keep lines whose gold_label is "-"

        Returns:
            Corpus in file order
        """
        path = Path(path)
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()

        instances: List[Instance] = []
        dropped_unlabeled = 0
        dropped_long = 0
        for line_number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusFormatError(f"invalid JSON ({e.msg})", line_number) from e
            if not isinstance(record, dict) or any(key not in record for key in REQUIRED_FIELDS):
                raise CorpusFormatError(f"expected an object with keys {', '.join(REQUIRED_FIELDS)}", line_number)

            gold = record["gold_label"]
            if gold not in GOLD_LABELS:
                raise CorpusFormatError(f"unknown gold_label {gold!r}", line_number)
            label = GOLD_LABELS[gold]
            if label == Label.UNLABELED and not keep_unlabeled:
                dropped_unlabeled += 1
                continue

            premise = self._sentence(record["sentence1"], record.get("sentence1_parse"), line_number)
            hypothesis = self._sentence(record["sentence2"], record.get("sentence2_parse"), line_number)
            if max(len(premise), len(hypothesis)) > self.max_sentence_length:
                dropped_long += 1
                continue

            pair_id = record.get("pairID")
            instances.append(Instance(
                premise=premise,
                hypothesis=hypothesis,
                label=label,
                pair_id=str(pair_id) if pair_id is not None else None,
            ))

        if dropped_unlabeled:
            logger.info(f"Dropped {dropped_unlabeled} unlabeled instances from {path}")
        if dropped_long:
            logger.warning(f"Dropped {dropped_long} instances longer than {self.max_sentence_length} tokens from {path}")
        if not instances:
            raise ArgumentError(f"no usable instances in {path}")

        logger.info(f"Loaded {len(instances)} instances from {path}")
        return Corpus(instances=tuple(instances), source=str(path))

    def _sentence(self, text: Any, parse: Optional[Any], line_number: int) -> Sentence:
        if not isinstance(text, str):
            raise CorpusFormatError("sentence fields must be strings", line_number)
        if isinstance(parse, str) and parse.strip():
            try:
                tree = parse_tree(parse)
                return Sentence(tokens=tuple(linearize(tree)), tree=tree)
            except (TreeParseError, ValueError) as e:
                logger.warning(f"Line {line_number}: ignoring malformed parse ({e})")
        tokens = tuple(text.split())
        if not tokens:
            raise CorpusFormatError("empty sentence", line_number)
        return Sentence(tokens=tokens)


def load_snli(path: Union[str, Path], keep_unlabeled: bool = False, max_sentence_length: int = 64) -> Corpus:
    """Load an SNLI JSONL file; see CorpusLoader.load."""
    return CorpusLoader(max_sentence_length).load(path, keep_unlabeled=keep_unlabeled)


def instance_record(instance: Instance) -> Dict[str, Any]:
    """SNLI JSON object for one instance."""
    record: Dict[str, Any] = {
        "gold_label": "-" if instance.label == Label.UNLABELED else instance.label.value,
        "sentence1": instance.premise.text,
        "sentence2": instance.hypothesis.text,
    }
    if instance.premise.tree is not None:
        record["sentence1_parse"] = str(instance.premise.tree)
    if instance.hypothesis.tree is not None:
        record["sentence2_parse"] = str(instance.hypothesis.tree)
    if instance.pair_id is not None:
        record["pairID"] = instance.pair_id
    return record


def serialize_snli(instances: Iterable[Instance]) -> str:
    """SNLI JSONL text for a sequence of instances."""
    return "".join(json.dumps(instance_record(inst), ensure_ascii=False) + "\n" for inst in instances)


def build_vocab(corpus: Corpus, min_count: int = 1, lowercase: bool = True) -> Vocab:
    """
    Build a vocabulary over premise and hypothesis tokens.

    Reserved tokens come first, then tokens by descending count, ties broken
    lexicographically.

    Args:
        corpus: Source corpus
        min_count: Minimum occurrences for a token to be kept
        lowercase: Normalize tokens to lower case

    Returns:
        Vocab
    """
    if min_count < 1:
        raise ArgumentError("min_count must be at least 1")
    counts: Counter = Counter()
    for sentence in corpus.sentences():
        counts.update(sentence.normalized(lowercase))
    for reserved in RESERVED_TOKENS:
        counts.pop(reserved, None)

    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    vocab = Vocab(
        token_of=RESERVED_TOKENS + tuple(kept),
        counts={**{t: 0 for t in RESERVED_TOKENS}, **{t: counts[t] for t in kept}},
        lowercase=lowercase,
    )
    logger.info(f"Built vocabulary of {len(vocab)} tokens (min_count={min_count})")
    return vocab
