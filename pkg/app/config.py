"""Application configuration settings."""
import hashlib
from pathlib import Path
from typing import Dict, List, Mapping, Optional

from dotenv import dotenv_values
from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.exceptions import ArgumentError
from app.models.domain import Aggregation, PerturbationKind, ScorerConfig, SearchConfig, TrainConfig


class Settings(BaseSettings):
    """Experiment settings; field names double as config-file keys."""

    model_config = SettingsConfigDict(env_prefix="NLIADV_", env_file=".env", case_sensitive=False, extra="ignore")

    # Corpora and artifacts
    train_path: Optional[str] = None
    dev_path: Optional[str] = None
    test_path: Optional[str] = None
    rules_path: str = "rules/nli.rules"
    output_dir: str = "runs/default"
    checkpoint_path: Optional[str] = None
    lm_path: Optional[str] = None
    pretrained_embeddings: Optional[str] = None

    # Global seed, split per command and purpose
    seed: int = 13

    # Corpus handling
    lowercase: bool = True
    max_sentence_length: int = 64
    min_count: int = 1

    # Scorer
    embedding_dim: int = 32
    hidden_dim: int = 64
    init_scale: float = 0.1

    # Language model gate
    lm_order: int = 3
    lm_delta: float = 0.1

    # Training
    learning_rate: float = 0.05
    epochs: int = 10
    finetune_epochs: int = 10
    batch_size: int = 32
    lambdas: List[float] = [0.0, 0.1]
    n_adv: int = 8
    aggregation: Aggregation = Aggregation.SUM
    record_timing: bool = True

    # Adversarial search
    search_seeds_per_round: int = 32
    search_pool_size: int = 512
    search_tau: float = 7.0
    search_word_candidates: int = 5
    search_max_sites: int = 4
    search_enabled_kinds: List[PerturbationKind] = list(PerturbationKind)
    search_workers: int = 1

    # Crafting, auditing, attacks
    craft_k: int = 100
    craft_infer_swap_labels: bool = False
    audit_split: str = "dev"
    attack_split: str = "dev"
    craft_split: str = "dev"
    eval_split: str = "dev"
    attack_seeds_path: Optional[str] = None
    prediction_cache_size: int = 100_000

    log_level: str = "INFO"

    @field_validator("lambdas", "search_enabled_kinds", mode="before")
    @classmethod
    def _split_commas(cls, value):
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()]
        return value

    @field_validator("audit_split", "attack_split", "craft_split", "eval_split")
    @classmethod
    def _known_split(cls, value):
        if value not in ("train", "dev", "test"):
            raise ValueError(f"unknown split {value!r}")
        return value

    def split_path(self, split: str) -> Optional[str]:
        return {"train": self.train_path, "dev": self.dev_path, "test": self.test_path}[split]

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)

    def scorer_config(self, vocab_size: int, rng_seed: int) -> ScorerConfig:
        return ScorerConfig(
            embedding_dim=self.embedding_dim,
            hidden_dim=self.hidden_dim,
            vocab_size=vocab_size,
            rng_seed=rng_seed,
            init_scale=self.init_scale,
        )

    def search_config(self, rng_seed: int) -> SearchConfig:
        return SearchConfig(
            seeds_per_round=self.search_seeds_per_round,
            pool_size=self.search_pool_size,
            tau=self.search_tau,
            word_candidates_per_site=self.search_word_candidates,
            max_sites_per_sentence=self.search_max_sites,
            rng_seed=rng_seed,
            enabled_kinds=frozenset(self.search_enabled_kinds),
            workers=self.search_workers,
        )

    def train_config(self, rng_seed: int, search_seed: int, lam: float = 0.0, epochs: Optional[int] = None) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=epochs or self.epochs,
            batch_size=self.batch_size,
            lam=lam,
            n_adv=self.n_adv,
            rng_seed=rng_seed,
            aggregation=self.aggregation,
            search=self.search_config(search_seed),
            record_timing=self.record_timing,
        )


def load_settings(config_path: Optional[str] = None, overrides: Optional[Mapping[str, object]] = None) -> Settings:
    """Build settings from a key=value file plus overrides.

    Overrides win over the file, the file wins over the environment.

    Args:
        config_path: Optional path to a plain-text key=value file
        overrides: Values taken from the command line

    Returns:
        Validated Settings

    Raises:
        ArgumentError: A file key or override names no setting
    """
    values: Dict[str, object] = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {config_path}")
        file_values = {k.lower(): v for k, v in dotenv_values(path).items() if v is not None}
        _check_keys(file_values, f"config file {config_path}")
        values.update(file_values)
    if overrides:
        override_values = {k.lower(): v for k, v in overrides.items() if v is not None}
        _check_keys(override_values, "command line")
        values.update(override_values)
    return Settings(**values)


def _check_keys(values: Mapping[str, object], source: str) -> None:
    unknown = sorted(set(values) - set(Settings.model_fields))
    if unknown:
        raise ArgumentError(f"unknown setting(s) in {source}: {', '.join(unknown)}")


def derive_seed(global_seed: int, command: str, purpose: str) -> int:
    """Derive a reproducible sub-seed for one command and purpose."""
    digest = hashlib.sha256(f"{global_seed}:{command}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2 ** 32)
