"""Experiment artifact storage: checkpoints, reports, attack sets and crafted data."""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
import plotly.express as px
import plotly.io as pio

from app.exceptions import CorpusFormatError, TreeParseError
from app.models.domain import (
    AdversarialSet,
    CraftedDataset,
    Instance,
    Label,
    RuleSet,
    Sentence,
    TrainReport,
    ViolationReport,
    Vocab,
)
from app.services.corpus_loader import instance_record
from app.services.crafting import format_percentage
from app.services.language_model import NGramLanguageModel
from app.services.scorer import ScorerParams, save_checkpoint
from app.services.trees import parse_tree

logger = logging.getLogger(__name__)


def lambda_tag(lam: float) -> str:
    """File-name form of a regulariser weight, e.g. 0.1 -> "0.1", 1e-4 -> "0.0001"."""
    return format(lam, "f").rstrip("0").rstrip(".") or "0"


def attack_record(adv: AdversarialSet) -> Dict[str, Any]:
    """JSON object for one adversarial set."""
    provenance = adv.provenance
    site = provenance.perturbation.site
    return {
        "rule": adv.rule,
        "loss": adv.loss,
        "prototype_loss": adv.prototype_loss,
        "sentences": {var: list(s.tokens) for var, s in sorted(adv.substitution.binding.items())},
        "sentence_parses": {
            var: str(s.tree) for var, s in sorted(adv.substitution.binding.items()) if s.tree is not None
        },
        "provenance": {
            "seed_index": provenance.seed_index,
            "orientation": provenance.orientation,
            "variable": provenance.variable,
            "kind": provenance.perturbation.kind.value,
            "site": list(site) if isinstance(site, tuple) else site,
            "payload": provenance.perturbation.payload,
        },
    }


class ExperimentStorage:
    """Writes and reads the artifacts of one output directory."""

    def __init__(self, output_dir: str):
        """
        Initialize experiment storage.

        Args:
            output_dir: Directory receiving every artifact; created if missing
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def path(self, filename: str) -> Path:
        return self.output_dir / filename

    def save_checkpoint(self, params: ScorerParams, vocab: Vocab, filename: str = "model.ckpt") -> str:
        filepath = self.path(filename)
        try:
            save_checkpoint(filepath, params, vocab)
            logger.info(f"Saved checkpoint to {filepath}")
            return str(filepath)
        except Exception as e:
            logger.error(f"Error saving checkpoint: {e}")
            raise

    def save_lm(self, lm: NGramLanguageModel, filename: str = "lm.txt") -> str:
        filepath = self.path(filename)
        lm.save(filepath)
        return str(filepath)

    def save_train_report(self, report: TrainReport, rules: Optional[RuleSet], filename: str = "train.tsv") -> str:
        """
        Per-epoch TSV: epoch, data_loss, adv_loss, dev_acc, viol_<rule>..., seconds.

        Rules the audit does not cover are written as NA.
        """
        names = rules.names if rules is not None else []
        rows = []
        for stats in report.epochs:
            row: Dict[str, Any] = {
                "epoch": stats.epoch,
                "data_loss": stats.data_loss,
                "adv_loss": stats.adv_loss,
                "dev_acc": stats.dev_accuracy,
            }
            for name in names:
                row[f"viol_{name}"] = stats.violations.get(name)
            row["seconds"] = stats.seconds
            rows.append(row)
        columns = ["epoch", "data_loss", "adv_loss", "dev_acc", *(f"viol_{n}" for n in names), "seconds"]
        return self._write_tsv(pd.DataFrame(rows, columns=columns), filename, float_format="%.6f")

    def save_violations(self, report: ViolationReport, filename: str = "violations.tsv") -> str:
        df = pd.DataFrame(
            [
                {"rule": r.rule, "body": r.body_count, "violations": r.violation_count, "pct": format_percentage(r.percentage)}
                for r in report.rows
            ],
            columns=["rule", "body", "violations", "pct"],
        )
        return self._write_tsv(df, filename)

    def save_attack(self, sets: Sequence[AdversarialSet], filename: str = "attack.jsonl") -> str:
        filepath = self.path(filename)
        try:
            with open(filepath, "w", encoding="utf-8") as f:
                for adv in sets:
                    f.write(json.dumps(attack_record(adv), ensure_ascii=False) + "\n")
            logger.info(f"Saved {len(sets)} adversarial sets to {filepath}")
            return str(filepath)
        except Exception as e:
            logger.error(f"Error saving attack results: {e}")
            raise

    def save_crafted(self, dataset: CraftedDataset) -> List[str]:
        """
        Crafted JSONL (2k lines) and the annotation template for the swapped pairs.

        Returns:
            Paths of the two files written
        """
        jsonl_path = self.path(f"crafted_k{dataset.k}.jsonl")
        template_path = f"crafted_k{dataset.k}.annotations.tsv"
        annotations = []
        with open(jsonl_path, "w", encoding="utf-8") as f:
            for line, instance in enumerate(dataset.instances, start=1):
                record = instance_record(instance)
                record["inconsistency_score"] = dataset.scores[(line - 1) // 2]
                f.write(json.dumps(record, ensure_ascii=False) + "\n")
                if line % 2 == 0:
                    annotations.append({
                        "line": line,
                        "sentence1": instance.premise.text,
                        "sentence2": instance.hypothesis.text,
                        "suggested_label": "" if instance.label == Label.UNLABELED else instance.label.value,
                        "gold_label": "",
                    })
        logger.info(f"Saved crafted dataset ({len(dataset.instances)} instances) to {jsonl_path}")
        columns = ["line", "sentence1", "sentence2", "suggested_label", "gold_label"]
        template = self._write_tsv(pd.DataFrame(annotations, columns=columns), template_path)
        return [str(jsonl_path), template]

    def save_violation_curve(self, rows: List[Dict[str, Any]], stem: str = "violations_curve") -> List[str]:
        """
        Violation percentage per (lambda, rule) as TSV plus an HTML line plot.

        Each row holds lambda, rule, body, violations, pct and dev_accuracy.
        """
        columns = ["lambda", "rule", "body", "violations", "pct", "dev_accuracy"]
        df = pd.DataFrame(rows, columns=columns)
        tsv_path = self._write_tsv(df, f"{stem}.tsv", float_format="%.6f")

        fig = px.line(
            df,
            x="lambda",
            y="pct",
            color="rule",
            markers=True,
            title="Rule violations vs regulariser weight",
            labels={"lambda": "lambda", "pct": "Violations (%)", "rule": "Rule"},
        )
        accuracy = df.drop_duplicates("lambda")
        fig.add_scatter(
            x=accuracy["lambda"],
            y=100.0 * accuracy["dev_accuracy"],
            mode="lines+markers",
            name="dev accuracy (%)",
            line={"dash": "dash"},
        )
        fig.update_layout(height=500)
        html_path = self.path(f"{stem}.html")
        pio.write_html(fig, file=str(html_path), include_plotlyjs=True, full_html=True, div_id="violations-curve", auto_open=False)
        logger.info(f"Saved violation curve to {tsv_path} and {html_path}")
        return [tsv_path, str(html_path)]

    def _write_tsv(self, df: pd.DataFrame, filename: str, float_format: Optional[str] = None) -> str:
        filepath = self.path(filename)
        try:
            df.to_csv(filepath, sep="\t", index=False, na_rep="NA", float_format=float_format, lineterminator="\n")
            logger.info(f"Saved {len(df)} rows to {filepath}")
            return str(filepath)
        except Exception as e:
            logger.error(f"Error saving {filename}: {e}")
            raise


def _seed_sentence(tokens: List[str], parse: Optional[str], line_number: int) -> Sentence:
    if parse:
        try:
            return Sentence(tokens=tuple(tokens), tree=parse_tree(parse))
        except (TreeParseError, ValueError) as e:
            logger.warning(f"Line {line_number}: ignoring unusable parse ({e})")
    return Sentence(tokens=tuple(tokens))


def load_attack_seeds(path: str) -> List[Instance]:
    """Prototypes from a previous attack file: X1 becomes the premise, X2 the hypothesis."""
    instances: List[Instance] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                sentences = record["sentences"]
                parses = record.get("sentence_parses") or {}
            except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as e:
                raise CorpusFormatError(f"not an attack record ({e})", line_number) from e
            if "X1" not in sentences or "X2" not in sentences:
                continue
            instances.append(Instance(
                premise=_seed_sentence(sentences["X1"], parses.get("X1"), line_number),
                hypothesis=_seed_sentence(sentences["X2"], parses.get("X2"), line_number),
                label=Label.UNLABELED,
            ))
    logger.info(f"Loaded {len(instances)} attack seeds from {path}")
    return instances
