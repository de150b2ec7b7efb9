"""First-order rule DSL and fuzzy (Goedel t-norm) rule semantics.

Grammar, one rule per line, ``#`` starts a comment::

    rule := name ":" body "=>" head
    body := "true" | atom ("&" atom)*
    head := ["~"] atom
    atom := ("ent"|"con"|"neu") "(" var "," var ")"
"""
import logging
import re
from typing import List, Optional, Sequence, Tuple

from pydantic import ValidationError

from app.exceptions import GroundingError, RuleSyntaxError, RuleValidationError, UnknownPredicateError
from app.models.domain import Atom, Literal, Predicate, Prediction, Rule, RuleSet, Scorer, Sentence, Substitution

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"\s*(?:(?P<arrow>=>)|(?P<punct>[:&~(),])|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<bad>\S))")
_VAR_RE = re.compile(r"^[A-Za-z][A-Za-z0-9]*$")
PREDICATES = {p.value: p for p in Predicate}


class _LineParser:
    """Recursive-descent parser for a single rule line."""

    def __init__(self, line: str, line_number: int):
        self.line = line
        self.line_number = line_number
        self.tokens: List[Tuple[str, int]] = []
        for match in _TOKEN_RE.finditer(line):
            if match.group("bad"):
                self._fail(f"unexpected character {match.group('bad')!r}", match.start("bad"))
            kind = match.lastgroup
            self.tokens.append((match.group(kind), match.start(kind)))
        self.position = 0

    def _fail(self, message: str, offset: Optional[int] = None):
        if offset is None:
            offset = self.tokens[self.position][1] if self.position < len(self.tokens) else len(self.line.rstrip())
        raise RuleSyntaxError(message, self.line_number, offset + 1)

    def _peek(self) -> Optional[str]:
        return self.tokens[self.position][0] if self.position < len(self.tokens) else None

    def _next(self) -> Tuple[str, int]:
        if self.position >= len(self.tokens):
            self._fail("unexpected end of rule")
        token = self.tokens[self.position]
        self.position += 1
        return token

    def _expect(self, expected: str) -> None:
        token, offset = self._next()
        if token != expected:
            self._fail(f"expected {expected!r}, found {token!r}", offset)

    def _identifier(self, what: str) -> Tuple[str, int]:
        token, offset = self._next()
        if not re.match(r"^[A-Za-z_]", token):
            self._fail(f"expected {what}, found {token!r}", offset)
        return token, offset

    def _variable(self) -> str:
        name, offset = self._identifier("variable")
        if not _VAR_RE.match(name):
            self._fail(f"invalid variable name {name!r}", offset)
        return name

    def _atom(self) -> Atom:
        name, offset = self._identifier("predicate")
        if name not in PREDICATES:
            raise UnknownPredicateError(f"unknown predicate {name!r}", self.line_number, offset + 1)
        self._expect("(")
        arg1 = self._variable()
        self._expect(",")
        arg2 = self._variable()
        self._expect(")")
        return Atom(predicate=PREDICATES[name], arg1=arg1, arg2=arg2)

    def parse(self) -> Rule:
        name, _ = self._identifier("rule name")
        self._expect(":")
        body: List[Atom] = []
        if self._peek() == "true":
            self._next()
        else:
            body.append(self._atom())
            while self._peek() == "&":
                self._next()
                body.append(self._atom())
        self._expect("=>")
        negated = False
        if self._peek() == "~":
            self._next()
            negated = True
        head = Literal(atom=self._atom(), negated=negated)
        if self.position != len(self.tokens):
            self._fail(f"unexpected {self._peek()!r} after rule head")
        try:
            return Rule(name=name, body=tuple(body), head=head)
        except ValidationError as e:
            message = e.errors()[0]["msg"].removeprefix("Value error, ")
            raise RuleValidationError(f"line {self.line_number}: {message}") from e


def parse_rules(text: str) -> RuleSet:
    """
    Parse rule DSL source.

    Args:
        text: DSL source, one rule per non-comment line

    Returns:
        RuleSet in source order
    """
    rules: List[Rule] = []
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        rule = _LineParser(line, line_number).parse()
        if any(existing.name == rule.name for existing in rules):
            raise RuleValidationError(f"line {line_number}: duplicate rule name {rule.name!r}")
        rules.append(rule)
    return RuleSet(rules=tuple(rules))


def format_rules(rules: RuleSet) -> str:
    """DSL source for a rule set; parse_rules inverts it."""
    return "".join(f"{rule}\n" for rule in rules)


def load_rules(path: str) -> RuleSet:
    with open(path, "r", encoding="utf-8") as f:
        rules = parse_rules(f.read())
    logger.info(f"Loaded {len(rules)} rules from {path}")
    return rules


# Semantics

def ground_atom(atom: Atom, s: Substitution) -> Tuple[Sentence, Sentence]:
    """Sentence pair an atom refers to under a substitution."""
    for var in (atom.arg1, atom.arg2):
        if var not in s:
            raise GroundingError(f"variable {var} is not bound in the substitution")
    return s[atom.arg1], s[atom.arg2]


def _prediction(scorer: Scorer, atom: Atom, s: Substitution) -> Prediction:
    premise, hypothesis = ground_atom(atom, s)
    return scorer.predict(premise, hypothesis)


def atom_probability(scorer: Scorer, atom: Atom, s: Substitution) -> float:
    """Probability the scorer assigns to the atom's class for the grounded pair."""
    return _prediction(scorer, atom, s).probs[atom.predicate.class_index]


def body_atom_probabilities(scorer: Scorer, rule: Rule, s: Substitution) -> List[float]:
    return [atom_probability(scorer, atom, s) for atom in rule.body]


def argmin_index(values: Sequence[float]) -> int:
    """Position of the smallest value; ties resolve to the earliest position."""
    best = 0
    for i in range(1, len(values)):
        if values[i] < values[best]:
            best = i
    return best


def body_probability(scorer: Scorer, rule: Rule, s: Substitution) -> float:
    """Goedel conjunction of the body atoms; the empty body is 1."""
    if not rule.body:
        return 1.0
    return min(body_atom_probabilities(scorer, rule, s))


def head_probability(scorer: Scorer, rule: Rule, s: Substitution) -> float:
    p = atom_probability(scorer, rule.head.atom, s)
    return 1.0 - p if rule.head.negated else p


def inconsistency_loss(scorer: Scorer, rule: Rule, s: Substitution) -> float:
    """Hinge of body probability over head probability, in [0, 1]."""
    return max(0.0, body_probability(scorer, rule, s) - head_probability(scorer, rule, s))


def atom_holds(scorer: Scorer, atom: Atom, s: Substitution) -> bool:
    """True iff the atom's class is the scorer's argmax for the grounded pair."""
    return _prediction(scorer, atom, s).argmax() == atom.predicate.class_index


def body_holds(scorer: Scorer, rule: Rule, s: Substitution) -> bool:
    return all(atom_holds(scorer, atom, s) for atom in rule.body)


def head_holds(scorer: Scorer, rule: Rule, s: Substitution) -> bool:
    holds = atom_holds(scorer, rule.head.atom, s)
    return not holds if rule.head.negated else holds


def is_violated(scorer: Scorer, rule: Rule, s: Substitution) -> bool:
    """Body holds under argmax predictions while the head does not."""
    return body_holds(scorer, rule, s) and not head_holds(scorer, rule, s)
