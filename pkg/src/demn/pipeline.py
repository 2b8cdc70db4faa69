"""End-to-end glue: splits, description pool, memory, train-then-evaluate."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .corpus import Episode, split_dataset
from .embedder import GROUND_TRUTH, DescriptionPool, EmbedderParams, retrieval_accuracy, train_embedder
from .evaluation import Metrics, evaluate
from .memory import StoryMemory, build_memory
from .qa import AblationMode, QAConfig, train_qa


@dataclass
class Splits:
    train: list
    val: list
    test: list

    @property
    def all(self) -> list:
        return self.train + self.val + self.test

    def get(self, name: str) -> list:
        if name not in ("train", "val", "test", "all"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


def make_splits(episodes: Sequence[Episode]) -> Splits:
    return Splits(*split_dataset(episodes))


POOL_SCOPES = ("train", "all")


def description_pool(splits: Splits, scope: str = "train") -> DescriptionPool:
    """The external description set used for retrieval.

    ``train`` holds only training-split descriptions, so held-out stories are
    told with the nearest description the model has seen; ``all`` adds the
    held-out episodes' own descriptions.
    """
    if scope not in POOL_SCOPES:
        raise ValueError(f"pool scope must be one of {POOL_SCOPES}, got {scope!r}")
    return DescriptionPool.from_episodes(splits.train if scope == "train" else splits.all)


def memory_for(mode: AblationMode, episodes, embedder: EmbedderParams | None = None,
               pool: DescriptionPool | None = None) -> StoryMemory | None:
    if not mode.has_story:
        return None
    return build_memory(episodes, embedder, pool, mode.description_source or GROUND_TRUTH)


def embedder_accuracy(params: EmbedderParams, splits: Splits):
    """Top-1 retrieval on train pairs (train pool) and held-out pairs (val+test pool)."""
    held = splits.val + splits.test
    train_acc = retrieval_accuracy([p for e in splits.train for p in e.pairs],
                                   DescriptionPool.from_episodes(splits.train), params)
    held_acc = retrieval_accuracy([p for e in held for p in e.pairs],
                                  DescriptionPool.from_episodes(held), params) if held else None
    return train_acc, held_acc


def fit_embedder(splits: Splits, config=None):
    return train_embedder(splits.train, config)


@dataclass
class RunResult:
    metrics: Metrics
    predictions: list
    log: list
    model: object


def train_and_evaluate(splits: Splits, mode: AblationMode, qa_config: QAConfig,
                       embedder: EmbedderParams | None = None, pool: DescriptionPool | None = None,
                       split: str = "test") -> RunResult:
    """Train a QA model on the train split in ``mode`` and score it on ``split``."""
    model, log = train_qa(splits.train, qa_config, mode, embedder, pool)
    episodes = splits.get(split)
    mem = memory_for(mode, episodes, embedder, pool)
    metrics, preds = evaluate(model, episodes, mem, mode, qa_config.attention, seed=qa_config.seed)
    return RunResult(metrics, preds, log, model)
