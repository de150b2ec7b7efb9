"""Built-in differentiable NLI scorer with hand-derived gradients.

Architecture: mean-of-embeddings sentence encoder, pair features
``[u; v; u*v; |u-v|]``, one ReLU hidden layer and a softmax over (ent, con, neu).
"""
import logging
import threading
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Iterator, List, Sequence, Tuple, Union

import numpy as np
from cachetools import LRUCache

from app.exceptions import CheckpointFormatError, ContractViolation, NumericError
from app.models.domain import (
    PAD,
    Instance,
    Prediction,
    Rule,
    ScorerConfig,
    Sentence,
    Substitution,
    Vocab,
)
from app.services.rules import argmin_index, ground_atom

logger = logging.getLogger(__name__)

PAD_INDEX = 0
NUM_CLASSES = 3
CHECKPOINT_MAGIC = "NLICKPT"
CHECKPOINT_VERSION = 1

IdPair = Tuple[np.ndarray, np.ndarray]


@dataclass
class ScorerParams:
    """Parameters of the built-in scorer; gradients share this layout."""
    embeddings: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def blocks(self) -> Dict[str, np.ndarray]:
        """Parameter blocks in checkpoint order."""
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.blocks().values())

    def copy(self) -> "ScorerParams":
        return ScorerParams(**{name: block.copy() for name, block in self.blocks().items()})

    def zeros_like(self) -> "ScorerParams":
        return ScorerParams(**{name: np.zeros_like(block) for name, block in self.blocks().items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(block)) for block in self)

    @property
    def embedding_dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.embeddings.shape[0]


Gradient = ScorerParams


def init_params(config: ScorerConfig) -> ScorerParams:
    """
    Draw parameters uniformly from [-init_scale, init_scale].

    Deterministic given ``config.rng_seed``; the PAD embedding row is zero.
    """
    rng = np.random.default_rng(config.rng_seed)
    k, h, s = config.embedding_dim, config.hidden_dim, config.init_scale
    params = ScorerParams(
        embeddings=rng.uniform(-s, s, size=(config.vocab_size, k)),
        W1=rng.uniform(-s, s, size=(4 * k, h)),
        b1=rng.uniform(-s, s, size=h),
        W2=rng.uniform(-s, s, size=(h, NUM_CLASSES)),
        b2=rng.uniform(-s, s, size=NUM_CLASSES),
    )
    params.embeddings[PAD_INDEX] = 0.0
    return params


def sgd_step(params: ScorerParams, grad: Gradient, eta: float) -> ScorerParams:
    """Return ``params - eta * grad`` with the PAD row re-zeroed."""
    updated = ScorerParams(**{
        name: block - eta * getattr(grad, name) for name, block in params.blocks().items()
    })
    updated.embeddings[PAD_INDEX] = 0.0
    return updated


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class ForwardPass:
    """Activations kept for the backward pass, one row per sentence pair."""
    pairs: List[IdPair]
    U: np.ndarray
    V: np.ndarray
    F: np.ndarray
    A: np.ndarray
    R: np.ndarray
    Z: np.ndarray
    P: np.ndarray


@dataclass
class ObjectiveTerms:
    data_loss: float
    adv_loss: float
    lam: float
    grad: Gradient

    @property
    def value(self) -> float:
        return self.data_loss + self.lam * self.adv_loss


class NLIScorer:
    """Scorer over a vocabulary and a parameter set."""

    def __init__(self, params: ScorerParams, vocab: Vocab, id_cache_size: int = 200_000):
        """
        Initialize scorer.

        Args:
            params: Model parameters
            vocab: Vocabulary the embedding rows are indexed by
            id_cache_size: Number of token-id sequences to memoize
        """
        if params.vocab_size != len(vocab):
            raise ContractViolation(f"embedding rows ({params.vocab_size}) do not match vocab size ({len(vocab)})")
        self.params = params
        self.vocab = vocab
        self._ids: LRUCache = LRUCache(maxsize=id_cache_size)
        self._ids_lock = threading.Lock()

    def with_params(self, params: ScorerParams) -> "NLIScorer":
        """Scorer sharing vocabulary and id cache but using other parameters."""
        scorer = NLIScorer.__new__(NLIScorer)
        scorer.params = params
        scorer.vocab = self.vocab
        scorer._ids = self._ids
        scorer._ids_lock = self._ids_lock
        return scorer

    def token_ids(self, sentence: Sentence) -> np.ndarray:
        # LRUCache reorders on lookup; search workers share it
        with self._ids_lock:
            ids = self._ids.get(sentence.tokens)
        if ids is None:
            if not sentence.tokens:
                raise ContractViolation("cannot encode an empty sentence")
            ids = self.vocab.indices(sentence)
            with self._ids_lock:
                self._ids[sentence.tokens] = ids
        return ids

    def encode(self, sentence: Sentence) -> np.ndarray:
        """Mean of the sentence's embedding rows."""
        return self.params.embeddings[self.token_ids(sentence)].mean(axis=0)

    def forward(self, pairs: Sequence[IdPair]) -> ForwardPass:
        p = self.params
        E = p.embeddings
        U = np.stack([E[ids].mean(axis=0) for ids, _ in pairs])
        V = np.stack([E[ids].mean(axis=0) for _, ids in pairs])
        F = np.concatenate([U, V, U * V, np.abs(U - V)], axis=1)
        A = F @ p.W1 + p.b1
        R = np.maximum(A, 0.0)
        Z = R @ p.W2 + p.b2
        if not np.all(np.isfinite(Z)):
            raise NumericError("non-finite logits; parameters contain inf or nan")
        return ForwardPass(pairs=list(pairs), U=U, V=V, F=F, A=A, R=R, Z=Z, P=softmax(Z))

    def backward(self, fwd: ForwardPass, dZ: np.ndarray) -> Gradient:
        """Gradient of ``sum(dZ * Z)`` with respect to every parameter."""
        p = self.params
        k = p.embedding_dim
        grad = p.zeros_like()
        grad.W2 = fwd.R.T @ dZ
        grad.b2 = dZ.sum(axis=0)
        dA = (dZ @ p.W2.T) * (fwd.A > 0.0)
        grad.W1 = fwd.F.T @ dA
        grad.b1 = dA.sum(axis=0)
        dF = dA @ p.W1.T
        # d|x|/dx is taken as 0 at x == 0
        sign = np.sign(fwd.U - fwd.V)
        dU = dF[:, :k] + dF[:, 2 * k:3 * k] * fwd.V + dF[:, 3 * k:] * sign
        dV = dF[:, k:2 * k] + dF[:, 2 * k:3 * k] * fwd.U - dF[:, 3 * k:] * sign
        for i, (ids_p, ids_h) in enumerate(fwd.pairs):
            np.add.at(grad.embeddings, ids_p, dU[i] / len(ids_p))
            np.add.at(grad.embeddings, ids_h, dV[i] / len(ids_h))
        grad.embeddings[PAD_INDEX] = 0.0
        return grad

    def predict(self, premise: Sentence, hypothesis: Sentence) -> Prediction:
        fwd = self.forward([(self.token_ids(premise), self.token_ids(hypothesis))])
        return Prediction.from_array(fwd.P[0])

    def predict_batch(self, pairs: Sequence[Tuple[Sentence, Sentence]]) -> np.ndarray:
        """Probabilities for many pairs at once, shape (n, 3)."""
        if not pairs:
            return np.zeros((0, NUM_CLASSES))
        return self.forward([(self.token_ids(a), self.token_ids(b)) for a, b in pairs]).P

    def _labelled_pairs(self, batch: Sequence[Instance]) -> Tuple[List[IdPair], np.ndarray]:
        pairs, labels = [], []
        for instance in batch:
            index = instance.label.class_index
            if index is None:
                raise ContractViolation("unlabeled instance in a training batch")
            pairs.append((self.token_ids(instance.premise), self.token_ids(instance.hypothesis)))
            labels.append(index)
        return pairs, np.asarray(labels, dtype=np.int64)

    def data_loss(self, batch: Sequence[Instance]) -> float:
        """Summed cross-entropy of the gold labels."""
        pairs, labels = self._labelled_pairs(batch)
        if not pairs:
            return 0.0
        logp = log_softmax(self.forward(pairs).Z)
        return float(-logp[np.arange(len(labels)), labels].sum())

    def loss_and_grad(
        self,
        batch: Sequence[Instance],
        adv_sets: Sequence[Tuple[Rule, Substitution]],
        lam: float,
    ) -> Tuple[float, Gradient]:
        """
        Regularised objective ``L_D(batch) + lam * sum_k L_I(S_k)`` and its gradient.

        Adversarial substitutions are constants. The min over body atoms routes its
        subgradient to the first minimal atom; the hinge has zero derivative at 0.

        Args:
            batch: Labeled instances
            adv_sets: (rule, substitution) pairs, already generated
            lam: Weight of the inconsistency terms

        Returns:
            (objective value, gradient)
        """
        terms = self.objective_and_grad(batch, adv_sets, lam)
        return terms.value, terms.grad

    def objective_and_grad(
        self,
        batch: Sequence[Instance],
        adv_sets: Sequence[Tuple[Rule, Substitution]],
        lam: float,
    ) -> "ObjectiveTerms":
        """Like loss_and_grad, keeping the data and inconsistency terms apart."""
        data_pairs, labels = self._labelled_pairs(batch)
        use_adv = lam > 0.0 and len(adv_sets) > 0

        # One row per data pair, then one row per grounded atom of every adversarial set
        pairs = list(data_pairs)
        atom_rows: List[Tuple[Rule, List[int], int]] = []
        if use_adv:
            for rule, s in adv_sets:
                body_rows = []
                for atom in rule.body:
                    a, b = ground_atom(atom, s)
                    body_rows.append(len(pairs))
                    pairs.append((self.token_ids(a), self.token_ids(b)))
                a, b = ground_atom(rule.head.atom, s)
                atom_rows.append((rule, body_rows, len(pairs)))
                pairs.append((self.token_ids(a), self.token_ids(b)))

        if not pairs:
            return ObjectiveTerms(0.0, 0.0, lam, self.params.zeros_like())

        fwd = self.forward(pairs)
        P = fwd.P
        dZ = np.zeros_like(P)
        n = len(data_pairs)

        data_value = 0.0
        if n:
            logp = log_softmax(fwd.Z[:n])
            data_value = float(-logp[np.arange(n), labels].sum())
            dZ[:n] = P[:n]
            dZ[np.arange(n), labels] -= 1.0

        adv_value = 0.0
        for rule, body_rows, head_row in atom_rows:
            body_probs = [P[row, atom.predicate.class_index] for row, atom in zip(body_rows, rule.body)]
            body = min(body_probs) if body_probs else 1.0
            head_class = rule.head.atom.predicate.class_index
            head_p = P[head_row, head_class]
            head = 1.0 - head_p if rule.head.negated else head_p
            loss = body - head
            if loss <= 0.0:
                continue
            adv_value += float(loss)
            if body_rows:
                j = argmin_index(body_probs)
                self._add_class_prob_grad(dZ, P, body_rows[j], rule.body[j].predicate.class_index, lam)
            head_weight = lam if rule.head.negated else -lam
            self._add_class_prob_grad(dZ, P, head_row, head_class, head_weight)

        terms = ObjectiveTerms(data_value, adv_value, lam if use_adv else 0.0, self.backward(fwd, dZ))
        if not np.isfinite(terms.value):
            raise NumericError("objective overflowed")
        return terms

    @staticmethod
    def _add_class_prob_grad(dZ: np.ndarray, P: np.ndarray, row: int, c: int, weight: float) -> None:
        # d p_c / d z = p_c * (e_c - p)
        g = -P[row, c] * P[row]
        g[c] += P[row, c]
        dZ[row] += weight * g


# Checkpoints

def save_checkpoint(path: Union[str, Path], params: ScorerParams, vocab: Vocab) -> None:
    """Write parameters and vocabulary; round trips bit-exactly."""
    with open(path, "wb") as f:
        f.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {len(vocab)} {params.embedding_dim} {params.hidden_dim}\n".encode())
        for token in vocab.token_of:
            f.write(f"{token}\t{vocab.counts.get(token, 0)}\n".encode("utf-8"))
        for name, block in params.blocks().items():
            matrix = np.atleast_2d(block)
            f.write(f"BLOCK {name} {matrix.shape[0]} {matrix.shape[1]}\n".encode())
            f.write(np.ascontiguousarray(matrix, dtype="<f8").tobytes())


def load_checkpoint(path: Union[str, Path], lowercase: bool = True) -> Tuple[ScorerParams, Vocab]:
    """
    Read a checkpoint written by save_checkpoint.

    Args:
        path: Checkpoint file
        lowercase: Normalization flag for the restored vocabulary

    Returns:
        (parameters, vocabulary)
    """
    with open(path, "rb") as f:
        header = f.readline().decode().split()
        if len(header) != 5 or header[0] != CHECKPOINT_MAGIC or header[1] != str(CHECKPOINT_VERSION):
            raise CheckpointFormatError(f"{path}: not a version {CHECKPOINT_VERSION} checkpoint")
        vocab_size, k, h = (int(x) for x in header[2:])

        tokens, counts = [], {}
        for _ in range(vocab_size):
            line = f.readline().decode("utf-8").rstrip("\n")
            token, sep, count = line.rpartition("\t")
            if not sep:
                raise CheckpointFormatError(f"{path}: malformed vocabulary line {line!r}")
            tokens.append(token)
            counts[token] = int(count)

        expected = {"embeddings": (vocab_size, k), "W1": (4 * k, h), "b1": (1, h), "W2": (h, NUM_CLASSES), "b2": (1, NUM_CLASSES)}
        blocks = {}
        for name, shape in expected.items():
            parts = f.readline().decode().split()
            if len(parts) != 4 or parts[0] != "BLOCK" or parts[1] != name or (int(parts[2]), int(parts[3])) != shape:
                raise CheckpointFormatError(f"{path}: expected block {name} {shape}, found {' '.join(parts)!r}")
            size = shape[0] * shape[1] * 8
            raw = f.read(size)
            if len(raw) != size:
                raise CheckpointFormatError(f"{path}: truncated block {name}")
            blocks[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)

    blocks["b1"] = blocks["b1"].reshape(h)
    blocks["b2"] = blocks["b2"].reshape(NUM_CLASSES)
    vocab = Vocab(token_of=tuple(tokens), counts=counts, lowercase=lowercase)
    logger.info(f"Loaded checkpoint {path} (|V|={vocab_size}, k={k}, hidden={h})")
    return ScorerParams(**blocks), vocab


def load_pretrained_embeddings(params: ScorerParams, vocab: Vocab, path: Union[str, Path]) -> Tuple[ScorerParams, int]:
    """
    Overwrite embedding rows from a ``token v1 ... vk`` text file.

    Tokens absent from the file keep their current rows.

    Returns:
        (updated parameters, number of rows replaced)
    """
    updated = params.copy()
    replaced = 0
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            if len(parts) - 1 != params.embedding_dim:
                raise CheckpointFormatError(f"{path}: line {line_number} has {len(parts) - 1} values, expected {params.embedding_dim}")
            index = vocab.id_of.get(vocab.normalize(parts[0]))
            if index is None or vocab.token_of[index] == PAD:
                continue
            updated.embeddings[index] = np.asarray(parts[1:], dtype=np.float64)
            replaced += 1
    logger.info(f"Loaded {replaced} pretrained embedding rows from {path}")
    return updated, replaced
