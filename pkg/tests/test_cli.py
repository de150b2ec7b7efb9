"""End-to-end tests for the command-line interface."""
import re

import numpy as np
import pytest

from app.cli.main import load_split, main, parse_overrides
from app.config import derive_seed, load_settings
from app.exceptions import ArgumentError
from app.services.scorer import load_checkpoint
from app.services.trainer import Trainer
from tests.conftest import RULES_PATH, make_nli_corpus, plain_instance, write_corpus

FAST = ["--epochs=2", "--finetune_epochs=2", "--batch_size=16", "--embedding_dim=8", "--hidden_dim=16"]
SEARCH = ["--search_pool_size=64", "--search_word_candidates=2", "--search_max_sites=2", "--search_tau=20"]


def run(command, files, out, *extra):
    return main([
        command,
        "--out", str(out),
        "--seed", "5",
        f"--train_path={files['train']}",
        f"--dev_path={files['dev']}",
        f"--rules_path={files['rules']}",
        *FAST,
        *SEARCH,
        *extra,
    ])


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    rules = root / "nli.rules"
    rules.write_text(RULES_PATH.read_text(encoding="utf-8"), encoding="utf-8")
    return {
        "train": str(write_corpus(root / "train.jsonl", make_nli_corpus(48, seed=11, source="train").instances)),
        "dev": str(write_corpus(root / "dev.jsonl", make_nli_corpus(24, seed=12, source="dev").instances)),
        "rules": str(rules),
    }


@pytest.fixture(scope="module")
def trained(files, tmp_path_factory):
    """Output directory of one training run."""
    out = tmp_path_factory.mktemp("trained")
    assert run("train", files, out) == 0
    return out


def test_parse_overrides():
    assert parse_overrides(["--search-tau=3", "--lambdas=0,0.1"]) == {"search_tau": "3", "lambdas": "0,0.1"}
    with pytest.raises(ArgumentError):
        parse_overrides(["epochs=3"])


class TestTrainCommand:
    """Tests for the train command."""

    def test_writes_artifacts(self, trained):
        for name in ("model.ckpt", "best.ckpt", "train.tsv", "lm.txt"):
            assert (trained / name).is_file()
        lines = (trained / "train.tsv").read_text().splitlines()
        assert len(lines) == 3
        assert lines[0].startswith("epoch\tdata_loss\tadv_loss\tdev_acc\tviol_r1")

    def test_rerun_is_bit_identical(self, files, trained, tmp_path):
        assert run("train", files, tmp_path) == 0
        assert (tmp_path / "model.ckpt").read_bytes() == (trained / "model.ckpt").read_bytes()
        assert (tmp_path / "lm.txt").read_bytes() == (trained / "lm.txt").read_bytes()

    def test_missing_corpus(self, files, tmp_path):
        assert run("train", files, tmp_path, f"--train_path={tmp_path / 'missing.jsonl'}") == 1

    def test_malformed_rules(self, files, tmp_path, capsys):
        """Test that a rule syntax error exits with 1 and names the line."""
        bad = tmp_path / "bad.rules"
        bad.write_text("# rules\nr1: foo(X1,X2) => ent(X1,X2)\n")
        assert run("train", files, tmp_path, f"--rules_path={bad}") == 1
        assert "line 2" in capsys.readouterr().err

    def test_unknown_argument(self, files, tmp_path):
        assert run("train", files, tmp_path, "stray") == 1

    def test_invalid_setting(self, files, tmp_path):
        assert run("train", files, tmp_path, "--audit_split=validation") == 1

    def test_misspelled_setting(self, files, tmp_path, capsys):
        """Test that a mistyped key fails instead of falling back to the default."""
        assert run("train", files, tmp_path, "--learning_rat=0.1") == 1
        assert "learning_rat" in capsys.readouterr().err
        assert not (tmp_path / "model.ckpt").exists()


class TestFinetuneCommand:
    """Tests for the finetune command."""

    def test_lambda_sweep(self, files, trained, tmp_path):
        """Test the per-lambda artifacts and that lambda 0 equals continued plain training."""
        ckpt = trained / "model.ckpt"
        code = run(
            "finetune", files, tmp_path,
            f"--checkpoint_path={ckpt}", f"--lm_path={trained / 'lm.txt'}", "--lambdas=0,0.1", "--n_adv=4",
        )
        assert code == 0
        for tag in ("0", "0.1"):
            assert (tmp_path / f"finetune_lambda_{tag}.ckpt").is_file()
            assert (tmp_path / f"finetune_lambda_{tag}.tsv").is_file()
        curve = (tmp_path / "violations_curve.tsv").read_text().splitlines()
        assert len(curve) == 1 + 2 * 4
        assert (tmp_path / "violations_curve.html").is_file()

        settings = load_settings(overrides={
            "seed": 5, "train_path": files["train"], "batch_size": 16, "finetune_epochs": 2,
        })
        params, vocab = load_checkpoint(ckpt)
        config = settings.train_config(
            rng_seed=derive_seed(5, "finetune", "shuffle"),
            search_seed=derive_seed(5, "finetune", "search"),
            epochs=2,
        )
        expected = Trainer(vocab).train(params, load_split(settings, "train"), None, config).params
        tuned, _ = load_checkpoint(tmp_path / "finetune_lambda_0.ckpt")
        for a, b in zip(expected, tuned):
            assert np.array_equal(a, b)

    def test_missing_checkpoint(self, files, tmp_path):
        assert run("finetune", files, tmp_path) == 1


class TestAttackCommand:
    """Tests for the attack command."""

    def test_writes_ranked_sets(self, files, trained, tmp_path):
        code = run("attack", files, tmp_path, f"--checkpoint_path={trained / 'model.ckpt'}", f"--lm_path={trained / 'lm.txt'}")
        assert code == 0
        assert (tmp_path / "attack.jsonl").read_text().strip()

    def test_strict_gate_writes_empty_file(self, files, trained, tmp_path):
        code = run(
            "attack", files, tmp_path,
            f"--checkpoint_path={trained / 'model.ckpt'}", f"--lm_path={trained / 'lm.txt'}", "--search_tau=0.000001",
        )
        assert code == 0
        assert (tmp_path / "attack.jsonl").read_text() == ""


class TestCraftCommand:
    """Tests for the craft command."""

    def test_top_k(self, files, trained, tmp_path):
        assert run("craft", files, tmp_path, f"--checkpoint_path={trained / 'model.ckpt'}", "--k", "5") == 0
        assert len((tmp_path / "crafted_k5.jsonl").read_text().splitlines()) == 10
        assert len((tmp_path / "crafted_k5.annotations.tsv").read_text().splitlines()) == 6

    def test_zero_k(self, files, trained, tmp_path):
        assert run("craft", files, tmp_path, f"--checkpoint_path={trained / 'model.ckpt'}", "--k", "0") == 1


class TestAuditAndEval:
    """Tests for the audit and eval commands."""

    def test_audit(self, files, trained, tmp_path, capsys):
        assert run("audit", files, tmp_path, f"--checkpoint_path={trained / 'model.ckpt'}") == 0
        lines = (tmp_path / "violations.tsv").read_text().splitlines()
        assert [line.split("\t")[0] for line in lines] == ["rule", "r1", "r2", "r3", "r4"]
        assert capsys.readouterr().out.startswith("r1\t")

    def test_eval(self, files, trained, tmp_path, capsys):
        assert run("eval", files, tmp_path, f"--checkpoint_path={trained / 'model.ckpt'}") == 0
        out = capsys.readouterr().out
        assert re.search(r"accuracy: \d+\.\d\d% \(\d+/24 labeled, 0 skipped\)", out)

    def test_eval_without_labels(self, files, trained, tmp_path):
        unlabeled = write_corpus(tmp_path / "test.jsonl", [plain_instance("a dog runs", "a cat sleeps").swapped()])
        code = run(
            "eval", files, tmp_path,
            f"--checkpoint_path={trained / 'model.ckpt'}", f"--test_path={unlabeled}", "--eval_split=test",
        )
        assert code == 1
