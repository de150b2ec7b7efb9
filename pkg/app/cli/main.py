"""Command-line entry point: train, finetune, attack, craft, audit, eval."""
import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from app.config import Settings, derive_seed, load_settings
from app.exceptions import ArgumentError, InvariantViolation, NLIToolkitError
from app.models.domain import Corpus, RuleSet
from app.services.corpus_loader import build_vocab, load_snli
from app.services.crafting import audit, craft_dataset, evaluate, format_percentage
from app.services.data_storage import ExperimentStorage, lambda_tag, load_attack_seeds
from app.services.language_model import NGramLanguageModel, fit_lm
from app.services.rules import load_rules
from app.services.scorer import NLIScorer, init_params, load_checkpoint, load_pretrained_embeddings
from app.services.search import AdversarialSearch
from app.services.trainer import Trainer
from app.utils.cache import PredictionCache

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT)


def parse_overrides(extra: Sequence[str]) -> Dict[str, str]:
    """Turn leftover ``--key=value`` arguments into settings overrides."""
    overrides: Dict[str, str] = {}
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            raise ArgumentError(f"unrecognized argument {item!r}; overrides take the form --key=value")
        key, value = item[2:].split("=", 1)
        overrides[key.replace("-", "_")] = value
    return overrides


def require_file(path: Optional[str], what: str) -> str:
    if path is None:
        raise ArgumentError(f"{what} is not configured")
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def load_split(settings: Settings, split: str, keep_unlabeled: bool = False) -> Corpus:
    path = require_file(settings.split_path(split), f"{split}_path")
    return load_snli(path, keep_unlabeled=keep_unlabeled, max_sentence_length=settings.max_sentence_length)


def load_rule_set(settings: Settings) -> RuleSet:
    return load_rules(require_file(settings.rules_path, "rules_path"))


def checkpoint_file(settings: Settings) -> str:
    return settings.checkpoint_path or str(settings.output_path / "model.ckpt")


def lm_file(settings: Settings) -> str:
    return settings.lm_path or str(settings.output_path / "lm.txt")


def load_scorer(settings: Settings) -> NLIScorer:
    params, vocab = load_checkpoint(require_file(checkpoint_file(settings), "checkpoint"), lowercase=settings.lowercase)
    return NLIScorer(params, vocab)


def frozen_scorer(settings: Settings) -> PredictionCache:
    return PredictionCache(load_scorer(settings), maxsize=settings.prediction_cache_size)


def load_lm(settings: Settings) -> NGramLanguageModel:
    return NGramLanguageModel.load(require_file(lm_file(settings), "language model"), lowercase=settings.lowercase)


def cmd_train(settings: Settings) -> int:
    """Train a scorer from scratch and fit the language model gate."""
    train = load_split(settings, "train")
    dev = load_split(settings, "dev") if settings.dev_path else None
    rules = load_rule_set(settings)
    storage = ExperimentStorage(settings.output_dir)

    vocab = build_vocab(train, min_count=settings.min_count, lowercase=settings.lowercase)
    params = init_params(settings.scorer_config(len(vocab), derive_seed(settings.seed, "train", "init")))
    if settings.pretrained_embeddings:
        params, _ = load_pretrained_embeddings(params, vocab, require_file(settings.pretrained_embeddings, "pretrained_embeddings"))

    config = settings.train_config(
        rng_seed=derive_seed(settings.seed, "train", "shuffle"),
        search_seed=derive_seed(settings.seed, "train", "search"),
    )
    result = Trainer(vocab, rules=rules).train(params, train, dev, config)

    storage.save_checkpoint(result.params, vocab, "model.ckpt")
    storage.save_checkpoint(result.best_params, vocab, "best.ckpt")
    storage.save_train_report(result.report, rules, "train.tsv")
    storage.save_lm(fit_lm(train, order=settings.lm_order, delta=settings.lm_delta, lowercase=settings.lowercase))
    return 0


def cmd_finetune(settings: Settings) -> int:
    """Fine-tune a trained scorer once per regulariser weight and write the violation curve."""
    base = load_scorer(settings)
    train = load_split(settings, "train")
    dev = load_split(settings, "dev") if settings.dev_path else None
    audit_corpus = load_split(settings, settings.audit_split)
    rules = load_rule_set(settings)
    storage = ExperimentStorage(settings.output_dir)

    if Path(lm_file(settings)).is_file():
        lm = load_lm(settings)
    else:
        logger.warning(f"No language model at {lm_file(settings)}; fitting one on the training split")
        lm = fit_lm(train, order=settings.lm_order, delta=settings.lm_delta, lowercase=settings.lowercase)

    trainer = Trainer(base.vocab, rules=rules, lm=lm)
    curve: List[Dict] = []
    for lam in settings.lambdas:
        config = settings.train_config(
            rng_seed=derive_seed(settings.seed, "finetune", "shuffle"),
            search_seed=derive_seed(settings.seed, "finetune", "search"),
            lam=lam,
            epochs=settings.finetune_epochs,
        )
        result = trainer.fine_tune(base.params, train, dev, config)
        tag = lambda_tag(lam)
        storage.save_checkpoint(result.params, base.vocab, f"finetune_lambda_{tag}.ckpt")
        storage.save_train_report(result.report, rules, f"finetune_lambda_{tag}.tsv")

        tuned = base.with_params(result.params)
        accuracy = evaluate(tuned, audit_corpus).accuracy
        for row in audit(tuned, audit_corpus, rules).rows:
            curve.append({
                "lambda": lam,
                "rule": row.rule,
                "body": row.body_count,
                "violations": row.violation_count,
                "pct": row.percentage,
                "dev_accuracy": accuracy,
            })
        logger.info(f"lambda={lam}: accuracy {100 * accuracy:.2f}% on {settings.audit_split}")

    storage.save_violation_curve(curve)
    return 0


def cmd_attack(settings: Settings) -> int:
    """Search for the substitutions the scorer finds most inconsistent."""
    scorer = frozen_scorer(settings)
    lm = load_lm(settings)
    rules = load_rule_set(settings)
    corpus = load_split(settings, settings.attack_split, keep_unlabeled=True)
    seeds = None
    if settings.attack_seeds_path:
        seeds = load_attack_seeds(require_file(settings.attack_seeds_path, "attack_seeds_path"))
        if not seeds:
            raise ArgumentError(f"no two-sentence records in {settings.attack_seeds_path}")

    search_seed = derive_seed(settings.seed, "attack", "search")
    search = AdversarialSearch(scorer, lm, rules, settings.search_config(search_seed))
    outcome = search.generate(corpus, np.random.default_rng(search_seed), seeds=seeds)
    scorer.log_stats()

    storage = ExperimentStorage(settings.output_dir)
    storage.save_attack(outcome.sets)
    if not outcome.sets:
        logger.warning(f"No admissible candidates among {len(outcome.pool)} (tau={settings.search_tau}); wrote an empty attack file")
    return 0


def cmd_craft(settings: Settings) -> int:
    """Write the top-k inconsistent pairs and their swaps."""
    if settings.craft_k < 1:
        raise ArgumentError(f"k must be positive, got {settings.craft_k}")
    scorer = frozen_scorer(settings)
    rules = load_rule_set(settings)
    corpus = load_split(settings, settings.craft_split)
    dataset = craft_dataset(
        scorer,
        corpus,
        rules,
        settings.craft_k,
        model_name=Path(checkpoint_file(settings)).stem,
        infer_swap_labels=settings.craft_infer_swap_labels,
    )
    ExperimentStorage(settings.output_dir).save_crafted(dataset)
    return 0


def cmd_audit(settings: Settings) -> int:
    """Count rule violations of the scorer's argmax predictions."""
    scorer = frozen_scorer(settings)
    rules = load_rule_set(settings)
    corpus = load_split(settings, settings.audit_split, keep_unlabeled=True)
    report = audit(scorer, corpus, rules)
    ExperimentStorage(settings.output_dir).save_violations(report)
    for row in report.rows:
        print(f"{row.rule}\t{row.body_count}\t{row.violation_count}\t{format_percentage(row.percentage)}")
    return 0


def cmd_eval(settings: Settings) -> int:
    """Print accuracy over the labeled instances of a split."""
    scorer = frozen_scorer(settings)
    corpus = load_split(settings, settings.eval_split, keep_unlabeled=True)
    result = evaluate(scorer, corpus)
    print(
        f"accuracy: {format_percentage(100 * result.accuracy)}% "
        f"({result.correct}/{result.labeled} labeled, {result.skipped} skipped)"
    )
    return 0


COMMANDS: Dict[str, Callable[[Settings], int]] = {
    "train": cmd_train,
    "finetune": cmd_finetune,
    "attack": cmd_attack,
    "craft": cmd_craft,
    "audit": cmd_audit,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--config", help="key=value experiment file")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(
        prog="nliadv",
        description="Adversarially regularised NLI: training, attacks, crafted datasets and audits.",
        epilog="Any setting can be overridden with --key=value.",
        allow_abbrev=False,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, command in COMMANDS.items():
        command_parser = sub.add_parser(name, parents=[common], help=command.__doc__, allow_abbrev=False)
        if name == "craft":
            command_parser.add_argument("--k", type=int, help="number of original pairs to keep")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)

    try:
        overrides: Dict[str, object] = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["output_dir"] = args.out
        if getattr(args, "k", None) is not None:
            overrides["craft_k"] = args.k
        overrides.update(parse_overrides(extra))
        settings = load_settings(args.config, overrides)
    except ValidationError as e:
        print(f"error: invalid configuration\n{e}", file=sys.stderr)
        return 1
    except (NLIToolkitError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    configure_logging(settings.log_level)
    try:
        return COMMANDS[args.command](settings)
    except InvariantViolation as e:
        logger.error(f"Internal invariant violated: {e}")
        return 2
    except (NLIToolkitError, OSError) as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
