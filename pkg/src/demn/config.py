"""Run configuration: defaults, flat key=value files, and a provenance hash."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .corpus import FeatureConfig, stable_hash
from .embedder import EmbedderConfig
from .errors import ParseError
from .qa import AblationMode, QAConfig


@dataclass
class RunConfig:
    seed: int = 7
    episodes: int = 50
    pairs: int = 8
    questions: int = 5
    dim_v: int = 32
    dim_l: int = 48
    dim_e: int = 48
    d_emb: int = 32
    hidden: int = 32
    lr_embed: float = 0.2
    lr_qa: float = 0.1
    epochs_embed: int = 100
    epochs_qa: int = 20
    negatives: int = 8
    gamma_u: float = 1.0
    gamma_s: float = 1.0
    gamma_a: float = 1.0
    mode: str = "Q+L+V+E"
    attention: bool = True
    story_form: str = "story"
    emb_scale: float = 5.0
    pool: str = "train"
    corpus: str = "demn_corpus.tsv"
    ckpt_embed: str = "embedder.demn"
    ckpt_qa: str = "qa.demn"
    report: str = ""

    def __post_init__(self):
        for name in ("episodes", "pairs", "questions", "dim_v", "dim_l", "dim_e", "d_emb", "hidden", "negatives"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("epochs_embed", "epochs_qa"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("lr_embed", "lr_qa", "gamma_u", "gamma_s", "gamma_a", "emb_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        AblationMode.parse(self.mode)
        if self.pool not in ("train", "all"):
            raise ValueError(f"pool must be 'train' or 'all', got {self.pool!r}")
        if self.story_form not in ("story", "question_dialogue"):
            raise ValueError(f"unknown story_form {self.story_form!r}")

    @property
    def ablation_mode(self) -> AblationMode:
        return AblationMode.parse(self.mode)

    def features(self) -> FeatureConfig:
        return FeatureConfig(self.dim_v, self.dim_l, self.dim_e, seed=self.seed)

    def embedder(self) -> EmbedderConfig:
        return EmbedderConfig(lr=self.lr_embed, epochs=self.epochs_embed, negatives=self.negatives,
                              seed=self.seed, gamma_u=self.gamma_u)

    def qa(self, attention: bool | None = None, seed: int | None = None) -> QAConfig:
        return QAConfig(lr=self.lr_qa, epochs=self.epochs_qa, seed=self.seed if seed is None else seed,
                        d_emb=self.d_emb, hidden=self.hidden,
                        attention=self.attention if attention is None else attention,
                        gamma_s=self.gamma_s, gamma_a=self.gamma_a, story_form=self.story_form,
                        emb_scale=self.emb_scale)

    def to_text(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self))

    def hash(self) -> str:
        # paths and the report target do not change results
        skip = {"corpus", "ckpt_embed", "ckpt_qa", "report"}
        return stable_hash("".join(
            f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self) if f.name not in skip
        ))

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    return repr(value) if isinstance(value, float) else str(value)


def coerce(name: str, text: str):
    """Convert ``text`` to the type of RunConfig field ``name``."""
    types = {f.name: f.type for f in fields(RunConfig)}
    if name not in types:
        raise KeyError(name)
    kind = types[name]
    if kind in ("bool", bool):
        low = text.strip().lower()
        if low in ("on", "true", "1", "yes"):
            return True
        if low in ("off", "false", "0", "no"):
            return False
        raise ValueError(f"{name}: expected on/off, got {text!r}")
    if kind in ("int", int):
        return int(text)
    if kind in ("float", float):
        return float(text)
    return text.strip()


def read_config_file(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment line."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError("expected key=value", lineno, path)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        try:
            out[key] = coerce(key, value)
        except KeyError:
            raise ParseError(f"unknown key {key!r}", lineno, path) from None
        except ValueError as exc:
            raise ParseError(str(exc), lineno, path) from None
    return out


def resolve(config_file=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then explicit overrides."""
    values = {}
    if config_file:
        values.update(read_config_file(config_file))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values)
