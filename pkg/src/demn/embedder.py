"""Scene/dialogue joint embedding and story reconstruction.

Two linear maps are learned one after the other with a dot-product hinge
rank loss: ``M1`` pulls a scene vector toward its own dialogue vector, then
``M2`` (with ``M1`` frozen) pulls the combined scene+dialogue vector toward
the pair's ground-truth description vector.  At inference the combined
vector retrieves the nearest description from a pool, and the story is
that description followed by the dialogue.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .checkpoint import read_container, write_container
from .corpus import Episode, ScenePair
from .errors import ContractError, ParseError, RetrievalError, ShapeError, TrainingDivergenceError
from .numcore import ParamGroup, as_matrix, as_vector, l2_normalize, mat_vec_left, sgd_step

RETRIEVED = "retrieved"
GROUND_TRUTH = "ground_truth"


@dataclass
class EmbedderParams:
    M1: np.ndarray
    M2: np.ndarray
    gamma_u: float = 1.0

    def __post_init__(self):
        self.M1 = as_matrix(self.M1)
        self.M2 = as_matrix(self.M2)
        if self.M1.shape[1] != self.M2.shape[0]:
            raise ShapeError(f"M1 {self.M1.shape} and M2 {self.M2.shape} disagree on the dialogue dimension")
        if not self.gamma_u > 0:
            raise ValueError("gamma_u must be positive")

    @property
    def dims(self):
        return self.M1.shape[0], self.M1.shape[1], self.M2.shape[1]

    def copy(self):
        return EmbedderParams(self.M1.copy(), self.M2.copy(), self.gamma_u)


@dataclass
class EmbedderConfig:
    lr: float = 0.2
    epochs: int = 100
    epochs_phase2: int | None = None  # None reuses ``epochs``
    negatives: int = 8
    seed: int = 7
    gamma_u: float = 1.0


@dataclass
class Story:
    description_tokens: list[str]
    dialogue_tokens: list[str]
    source_pair_index: int

    @property
    def tokens(self) -> list[str]:
        return list(self.description_tokens) + list(self.dialogue_tokens)


class Retrieval(NamedTuple):
    index: int
    tokens: list[str]
    score: float


class DescriptionPool:
    """Candidate descriptions with their feature vectors stacked row-wise."""

    def __init__(self, tokens: Sequence[Sequence[str]], features):
        if len(tokens) == 0:
            raise RetrievalError("description pool is empty")
        self.tokens = [list(t) for t in tokens]
        self.features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if self.features.shape[0] != len(self.tokens):
            raise ShapeError("pool tokens and features differ in length")

    @classmethod
    def from_candidates(cls, candidates):
        candidates = list(candidates)
        if not candidates:
            raise RetrievalError("description pool is empty")
        return cls([c[0] for c in candidates], np.stack([as_vector(c[1]) for c in candidates]))

    @classmethod
    def from_episodes(cls, episodes: Sequence[Episode]):
        pairs = [p for ep in episodes for p in ep.pairs]
        if not pairs:
            raise RetrievalError("description pool is empty")
        return cls([p.description for p in pairs], np.stack([p.description_feature for p in pairs]))

    def __len__(self):
        return len(self.tokens)


def embed_scene(v, M1) -> np.ndarray:
    return mat_vec_left(v, M1)


def combine(v, l, M1) -> np.ndarray:
    """Unit-normalized ``v^T M1 + l``."""
    l = as_vector(l)
    s = embed_scene(v, M1)
    if s.shape != l.shape:
        raise ShapeError(f"embedded scene has length {s.size}, dialogue vector {l.size}")
    return l2_normalize(s + l)


def hinge_rank_loss(anchor, positive, negatives, M, gamma: float = 1.0):
    """Sum over negatives of ``max(0, gamma - a^T M p + a^T M n_j)`` and its gradient in ``M``."""
    a = as_vector(anchor)
    p = as_vector(positive)
    M = as_matrix(M)
    negs = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if negs.size == 0 or len(negatives) == 0:
        raise ContractError("hinge rank loss needs at least one negative")
    if a.size != M.shape[0] or p.size != M.shape[1] or negs.shape[1] != M.shape[1]:
        raise ShapeError(f"anchor {a.size}, positive {p.size}, negatives {negs.shape} vs M {M.shape}")
    aM = a @ M
    pos_score = aM @ p
    margins = gamma - pos_score + negs @ aM
    active = margins > 0
    loss = float(margins[active].sum())
    n_active = int(active.sum())
    if n_active:
        # d/dM of a^T M (n_j - p) summed over active terms
        direction = negs[active].sum(axis=0) - n_active * p
        grad = np.outer(a, direction)
    else:
        grad = np.zeros_like(M)
    return loss, grad


def init_embedder(dim_v: int, dim_l: int, dim_e: int, seed: int, gamma_u: float = 1.0) -> EmbedderParams:
    rng = np.random.default_rng([seed, 1])
    b1 = 1.0 / np.sqrt(dim_v)
    b2 = 1.0 / np.sqrt(dim_l)
    return EmbedderParams(
        rng.uniform(-b1, b1, size=(dim_v, dim_l)),
        rng.uniform(-b2, b2, size=(dim_l, dim_e)),
        gamma_u,
    )


def _negative_candidates(keys):
    keys = np.asarray(keys, dtype=object)
    return [np.flatnonzero(keys != k) for k in keys]


def _train_phase(anchors, positives, keys, group, rng, cfg, epochs, gamma):
    """SGD over (anchor, positive, sampled negatives) triples for one matrix."""
    n = anchors.shape[0]
    candidates = _negative_candidates(keys)
    log = []
    for _ in range(epochs):
        total = 0.0
        for i in rng.permutation(n):
            cand = candidates[i]
            if cand.size == 0:
                continue
            k = min(cfg.negatives, cand.size)
            neg_idx = rng.choice(cand, size=k, replace=False)
            loss, grad = hinge_rank_loss(anchors[i], positives[i], positives[neg_idx], group.value, gamma)
            if not np.isfinite(loss):
                raise TrainingDivergenceError(f"non-finite hinge loss while training {group.name}")
            total += loss
            group.gradient += grad
            sgd_step([group], cfg.lr)
        log.append(total / max(n, 1))
    return log


def train_embedder(train_episodes: Sequence[Episode], config: EmbedderConfig | None = None,
                   init: EmbedderParams | None = None):
    """Two-phase training; returns ``(params, log)`` with per-epoch mean losses per phase."""
    cfg = config or EmbedderConfig()
    pairs = [p for ep in train_episodes for p in ep.pairs]
    if not pairs:
        raise ContractError("no training pairs")
    V = np.stack([p.scene_feature for p in pairs])
    L = np.stack([p.dialogue_feature for p in pairs])
    E = np.stack([p.description_feature for p in pairs])
    if init is None:
        init = init_embedder(V.shape[1], L.shape[1], E.shape[1], cfg.seed, cfg.gamma_u)
    params = init.copy()
    rng = np.random.default_rng([cfg.seed, 2])

    m1 = ParamGroup("M1", params.M1)
    log1 = _train_phase(V, L, [" ".join(p.dialogue) for p in pairs], m1, rng, cfg, cfg.epochs, params.gamma_u)

    C = np.stack([combine(v, l, m1.value) for v, l in zip(V, L)])
    m2 = ParamGroup("M2", params.M2)
    epochs2 = cfg.epochs if cfg.epochs_phase2 is None else cfg.epochs_phase2
    log2 = _train_phase(C, E, [" ".join(p.description) for p in pairs], m2, rng, cfg, epochs2, params.gamma_u)

    return EmbedderParams(m1.value, m2.value, params.gamma_u), {"phase1": log1, "phase2": log2}


def retrieve_description(c, candidates, M2) -> Retrieval:
    """Candidate maximizing ``(c^T M2) . e``; ties go to the lowest index."""
    pool = candidates if isinstance(candidates, DescriptionPool) else DescriptionPool.from_candidates(candidates)
    query = mat_vec_left(c, M2)
    if pool.features.shape[1] != query.size:
        raise ShapeError(f"pool features have length {pool.features.shape[1]}, query {query.size}")
    scores = pool.features @ query
    best = int(np.argmax(scores))  # first maximum
    return Retrieval(best, pool.tokens[best], float(scores[best]))


def reconstruct_story(pair: ScenePair, candidate_pool, params: EmbedderParams | None,
                      mode: str = RETRIEVED, source_pair_index: int = 0) -> Story:
    if mode == GROUND_TRUTH:
        desc = list(pair.description)
    elif mode == RETRIEVED:
        if candidate_pool is None or len(candidate_pool) == 0:
            raise RetrievalError("retrieved mode needs a nonempty description pool")
        if params is None:
            raise ContractError("retrieved mode needs trained embedder parameters")
        c = combine(pair.scene_feature, pair.dialogue_feature, params.M1)
        desc = list(retrieve_description(c, candidate_pool, params.M2).tokens)
    else:
        raise ContractError(f"unknown reconstruction mode {mode!r}")
    return Story(desc, list(pair.dialogue), source_pair_index)


def retrieval_accuracy(pairs: Sequence[ScenePair], pool: DescriptionPool, params: EmbedderParams) -> float:
    """Fraction of pairs whose retrieved description equals their own, token for token."""
    hits = 0
    for p in pairs:
        c = combine(p.scene_feature, p.dialogue_feature, params.M1)
        hits += retrieve_description(c, pool, params.M2).tokens == p.description
    return hits / len(pairs)


def save_embedder(params: EmbedderParams, path, config_hash: str = "") -> None:
    blocks = {"M1": params.M1, "M2": params.M2, "gamma_u": np.array([params.gamma_u])}
    if config_hash:
        blocks["config_hash"] = config_hash
    write_container(path, params.dims, blocks)


def load_embedder(path) -> EmbedderParams:
    dims, blocks = read_container(path)
    try:
        params = EmbedderParams(blocks["M1"], blocks["M2"], float(blocks["gamma_u"][0]))
    except KeyError as exc:
        raise ParseError(f"embedder checkpoint lacks block {exc}", path=path) from None
    if params.dims != tuple(dims):
        raise ParseError(f"header dims {dims} disagree with matrices {params.dims}", path=path)
    return params
