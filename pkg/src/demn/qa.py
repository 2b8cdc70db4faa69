"""Two-stage question answering over story memory.

Story selection scores every story of the question's episode with ``G``;
the question is fused with the best story; answer selection scores the
five candidate answers against the fused sequence with ``H``.  Both
scorers are trained together with a summed two-part hinge rank loss.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .checkpoint import read_container, write_container
from .corpus import N_ANSWERS, SEP, Episode, QAItem, Vocab, build_vocab
from .embedder import GROUND_TRUTH, RETRIEVED, DescriptionPool, EmbedderParams, Story, reconstruct_story
from .errors import ContractError, ParseError, SupervisionError, TrainingDivergenceError
from .memory import StoryMemory, read_stories
from .numcore import sgd_step
from .scorer import PARAM_NAMES, ScorerParams, init_scorer, score_candidates, score_candidates_backward


class AblationMode(enum.Enum):
    Q = "Q"
    QL = "Q+L"
    QV = "Q+V"
    QE = "Q+E"
    QVE = "Q+V+E"
    QLV = "Q+L+V"
    QLE = "Q+L+E"
    QLVE = "Q+L+V+E"

    @classmethod
    def parse(cls, text: str) -> "AblationMode":
        key = text.strip().upper().replace(" ", "")
        for m in cls:
            if m.value == key:
                return m
        raise ValueError(f"unknown mode {text!r}; expected one of {[m.value for m in cls]}")

    @property
    def parts(self) -> set:
        return set(self.value.split("+"))

    @property
    def uses_dialogue(self) -> bool:
        return "L" in self.parts

    @property
    def description_source(self) -> str | None:
        """Ground truth whenever E is present, retrieved for V alone, none otherwise."""
        if "E" in self.parts:
            return GROUND_TRUTH
        if "V" in self.parts:
            return RETRIEVED
        return None

    @property
    def has_story(self) -> bool:
        return self is not AblationMode.Q

    def __str__(self):
        return self.value


ALL_MODES = tuple(AblationMode)  # report column order


@dataclass
class StoryView:
    """The parts of a stored story a mode is allowed to see."""

    description: list[str]
    dialogue: list[str]
    source_pair_index: int

    @property
    def tokens(self) -> list[str]:
        return self.description + self.dialogue


def view_story(story: Story, mode: AblationMode) -> StoryView:
    desc = list(story.description_tokens) if mode.description_source else []
    dial = list(story.dialogue_tokens) if mode.uses_dialogue else []
    return StoryView(desc, dial, story.source_pair_index)


def fuse(q_tokens: Sequence[str], story: StoryView | None) -> list[str]:
    """``q SEP description SEP dialogue``; absent parts and their separators are dropped."""
    if not q_tokens:
        raise ContractError("question must be nonempty")
    fused = list(q_tokens)
    if story is None:
        return fused
    for part in (story.description, story.dialogue):
        if part:
            fused += [SEP] + list(part)
    return fused


def story_rank(scores, gold: int) -> int:
    """1-based rank of ``gold``; equal-scored competitors count as ahead of it."""
    scores = np.asarray(scores)
    return 1 + int(np.sum(np.delete(scores, gold) >= scores[gold]))


@dataclass
class StorySelection:
    index: int
    scores: np.ndarray
    rank: int | None = None
    traces: list = field(default_factory=list)


def select_story(q_tokens, stories, g_params: ScorerParams, attention_on: bool = True,
                 gold: int | None = None) -> StorySelection:
    """Argmax of ``G(q, s_i)`` over the episode's stories (lowest index on ties)."""
    if len(stories) == 0:
        raise ContractError("no stories to select from")
    seqs = [s.tokens if hasattr(s, "tokens") else s for s in stories]
    res = score_candidates(q_tokens, seqs, g_params, attention_on)
    rank = story_rank(res.scores, gold) if gold is not None else None
    return StorySelection(int(np.argmax(res.scores)), res.scores, rank, res.traces)


def select_answer(fused_tokens, answers, h_params: ScorerParams, attention_on: bool = True):
    """Argmax of ``H(s_a, a_r)`` over exactly five answers; returns ``(index, scores, traces)``."""
    if len(answers) != N_ANSWERS:
        raise ContractError(f"expected {N_ANSWERS} answers, got {len(answers)}")
    res = score_candidates(fused_tokens, answers, h_params, attention_on)
    return int(np.argmax(res.scores)), res.scores, res.traces


@dataclass
class QAConfig:
    lr: float = 0.1
    epochs: int = 20
    seed: int = 7
    d_emb: int = 32
    hidden: int = 32
    attention: bool = True
    gamma_s: float = 1.0
    gamma_a: float = 1.0
    # "story": s_i = description || dialogue; "question_dialogue": s_i = q || l_i
    story_form: str = "story"
    emb_scale: float = 5.0  # large token embeddings keep answer candidates separable early


@dataclass
class QAModelParams:
    g_params: ScorerParams
    h_params: ScorerParams
    vocab: Vocab
    gamma_s: float = 1.0
    gamma_a: float = 1.0
    attention: bool = True
    story_form: str = "story"

    def __post_init__(self):
        if not (self.gamma_s > 0 and self.gamma_a > 0):
            raise ValueError("margins must be positive")

    @property
    def param_groups(self):
        return self.g_params.param_groups + self.h_params.param_groups

    def zero_grad(self):
        self.g_params.zero_grad()
        self.h_params.zero_grad()

    def copy(self) -> "QAModelParams":
        return QAModelParams(self.g_params.copy(), self.h_params.copy(), self.vocab,
                             self.gamma_s, self.gamma_a, self.attention, self.story_form)


def init_model(vocab: Vocab, config: QAConfig) -> QAModelParams:
    g = init_scorer(len(vocab), config.d_emb, config.hidden, seed=config.seed * 2 + 1, vocab=vocab,
                    emb_scale=config.emb_scale)
    h = init_scorer(len(vocab), config.d_emb, config.hidden, seed=config.seed * 2 + 2, vocab=vocab,
                    emb_scale=config.emb_scale)
    return QAModelParams(g, h, vocab, config.gamma_s, config.gamma_a, config.attention, config.story_form)


@dataclass
class Prediction:
    episode_id: str
    question_id: str
    mode: AblationMode
    story_index: int | None
    fused_sequence: list[str]
    answer_index: int
    story_scores: np.ndarray | None
    answer_scores: np.ndarray
    gold_story: int
    gold_answer: int
    story_rank: int | None
    story_traces: list = field(default_factory=list, repr=False)
    answer_traces: list = field(default_factory=list, repr=False)

    @property
    def correct(self) -> bool:
        return self.answer_index == self.gold_answer


def _g_sequence(q_tokens, view: StoryView, story_form: str):
    if story_form == "question_dialogue":
        return list(q_tokens) + (view.dialogue or view.description)
    return view.tokens


def episode_views(episode: Episode, mode: AblationMode, mem: StoryMemory | None) -> list[StoryView]:
    if not mode.has_story:
        return []
    if mem is None:
        raise ContractError(f"mode {mode} needs a story memory")
    if mode.description_source and mem.source not in (None, mode.description_source):
        raise ContractError(f"mode {mode} needs {mode.description_source} stories, memory holds {mem.source}")
    return [view_story(s, mode) for s in read_stories(mem, episode.id)]


def answer_question(episode: Episode, q_item: QAItem, mem: StoryMemory | None, model: QAModelParams,
                    mode: AblationMode, attention_on: bool | None = None,
                    views: list[StoryView] | None = None) -> Prediction:
    """Read stories, pick one with ``G``, fuse, pick an answer with ``H``."""
    att = model.attention if attention_on is None else attention_on
    if views is None:
        views = episode_views(episode, mode, mem)
    if mode.has_story:
        seqs = [_g_sequence(q_item.question, v, model.story_form) for v in views]
        sel = select_story(q_item.question, seqs, model.g_params, att, gold=q_item.relevant_pair_index)
        fused = fuse(q_item.question, views[sel.index])
        s_idx, s_scores, rank, s_traces = sel.index, sel.scores, sel.rank, sel.traces
    else:
        fused = fuse(q_item.question, None)
        s_idx = s_scores = rank = None
        s_traces = []
    a_idx, a_scores, a_traces = select_answer(fused, q_item.answers, model.h_params, att)
    return Prediction(
        episode.id, q_item.id, mode, s_idx, fused, a_idx, s_scores, a_scores,
        q_item.relevant_pair_index, q_item.correct_answer_index, rank, s_traces, a_traces,
    )


@dataclass
class Triplets:
    story: list      # (q tokens, story tokens, label)
    answer: list     # (fused tokens, answer tokens, label)


def build_triplets(episode: Episode, q_item: QAItem, mode: AblationMode,
                   views: list[StoryView] | None = None, embedder: EmbedderParams | None = None,
                   pool: DescriptionPool | None = None, story_form: str = "story") -> Triplets:
    """Supervised triplets for one question; ``s_a`` is built from the labelled story."""
    if q_item.relevant_pair_index is None or q_item.correct_answer_index is None:
        raise SupervisionError(f"{q_item.id} lacks story/answer labels")
    c = q_item.relevant_pair_index
    if views is None and mode.has_story:
        source = mode.description_source or GROUND_TRUTH
        views = [view_story(reconstruct_story(p, pool, embedder, source, i), mode)
                 for i, p in enumerate(episode.pairs)]
    if mode.has_story:
        story = [(q_item.question, _g_sequence(q_item.question, v, story_form), int(i == c))
                 for i, v in enumerate(views)]
        fused = fuse(q_item.question, views[c])
    else:
        story = []
        fused = fuse(q_item.question, None)
    answer = [(fused, a, int(r == q_item.correct_answer_index)) for r, a in enumerate(q_item.answers)]
    if story and sum(t[2] for t in story) != 1:
        raise SupervisionError("story triplets must contain exactly one positive")
    if sum(t[2] for t in answer) != 1:
        raise SupervisionError("answer triplets must contain exactly one positive")
    return Triplets(story, answer)


def hinge_terms(scores, gold: int, gamma: float):
    """Loss ``sum_{j != gold} max(0, gamma - s_gold + s_j)`` and its gradient w.r.t. the scores."""
    scores = np.asarray(scores, dtype=np.float64)
    margins = gamma - scores[gold] + scores
    margins[gold] = 0.0
    active = margins > 0
    active[gold] = False
    dscores = active.astype(np.float64)
    dscores[gold] = -float(active.sum())
    return float(margins[active].sum()), dscores


def _single_positive(triplets, what):
    labels = [t[2] for t in triplets]
    if sum(labels) != 1:
        raise SupervisionError(f"{what} triplets need exactly one positive label")
    return labels.index(1)


def joint_loss(triplets: Triplets, model: QAModelParams, attention_on: bool | None = None,
               backward: bool = True):
    """Summed story+answer hinge loss; gradients accumulate into the model's groups.

    Returns ``(loss, grads)`` where ``grads`` maps ``"G/<name>"`` / ``"H/<name>"``
    to the accumulated gradient arrays.
    """
    att = model.attention if attention_on is None else attention_on
    loss = 0.0
    if triplets.story:
        gold = _single_positive(triplets.story, "story")
        q = triplets.story[0][0]
        res = score_candidates(q, [t[1] for t in triplets.story], model.g_params, att, keep_cache=backward)
        part, ds = hinge_terms(res.scores, gold, model.gamma_s)
        loss += part
        if backward and part > 0:
            score_candidates_backward(res, ds, model.g_params)
    gold = _single_positive(triplets.answer, "answer")
    fused = triplets.answer[0][0]
    res = score_candidates(fused, [t[1] for t in triplets.answer], model.h_params, att, keep_cache=backward)
    part, ds = hinge_terms(res.scores, gold, model.gamma_a)
    loss += part
    if backward and part > 0:
        score_candidates_backward(res, ds, model.h_params)
    if not np.isfinite(loss):
        raise TrainingDivergenceError("non-finite joint loss")
    grads = {f"G/{k}": g.gradient for k, g in model.g_params.groups.items()}
    grads.update({f"H/{k}": g.gradient for k, g in model.h_params.groups.items()})
    return loss, grads


def training_views(episodes: Sequence[Episode], mode: AblationMode, embedder=None, pool=None):
    """Story views for training: ground truth when E is in the mode, retrieved for V alone."""
    out = {}
    if not mode.has_story:
        return out
    source = mode.description_source or GROUND_TRUTH
    for ep in episodes:
        out[ep.id] = [view_story(reconstruct_story(p, pool, embedder, source, i), mode)
                      for i, p in enumerate(ep.pairs)]
    return out


def _encoded_triplets(tr: Triplets, vocab: Vocab) -> Triplets:
    enc = vocab.encode
    return Triplets(
        [(enc(q), enc(s), y) for q, s, y in tr.story],
        [(enc(f), enc(a), y) for f, a, y in tr.answer],
    )


def train_qa(train_episodes: Sequence[Episode], config: QAConfig | None = None, mode: AblationMode = AblationMode.QLVE,
             embedder: EmbedderParams | None = None, pool: DescriptionPool | None = None,
             init: QAModelParams | None = None, callback=None):
    """Per-question SGD on the joint loss in a seeded shuffled order.

    Returns ``(model, log)``; ``log`` holds the mean training loss per epoch.
    ``callback(epoch, model)`` runs after each epoch and may return True to stop.
    """
    cfg = config or QAConfig()
    if mode.description_source == RETRIEVED and (embedder is None or pool is None):
        raise ContractError(f"mode {mode} trains on retrieved descriptions and needs an embedder and pool")
    vocab = init.vocab if init is not None else build_vocab(train_episodes)
    model = init.copy() if init is not None else init_model(vocab, cfg)
    views = training_views(train_episodes, mode, embedder, pool)
    items = []
    for ep in train_episodes:
        for qa in ep.qa_items:
            tr = build_triplets(ep, qa, mode, views.get(ep.id), story_form=model.story_form)
            items.append(_encoded_triplets(tr, vocab))
    rng = np.random.default_rng([cfg.seed, 3])
    groups = model.param_groups
    log = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for k in rng.permutation(len(items)):
            loss, _ = joint_loss(items[k], model, cfg.attention)
            total += loss
            sgd_step(groups, cfg.lr)
        log.append(total / max(len(items), 1))
        if callback is not None and callback(epoch, model):
            break
    return model, log


# -- checkpoints -------------------------------------------------------------

def save_qa(model: QAModelParams, path, mode: AblationMode | None = None, config_hash: str = "") -> None:
    blocks = {"kind": "qa", "vocab": "\n".join(model.vocab.itos)}
    for tag, sp in (("G", model.g_params), ("H", model.h_params)):
        for name in PARAM_NAMES:
            blocks[f"{tag}/{name}"] = sp[name]
    blocks["gamma_s"] = np.array([model.gamma_s])
    blocks["gamma_a"] = np.array([model.gamma_a])
    blocks["attention"] = "on" if model.attention else "off"
    blocks["story_form"] = model.story_form
    if mode is not None:
        blocks["mode"] = mode.value
    if config_hash:
        blocks["config_hash"] = config_hash
    g = model.g_params
    write_container(path, (len(model.vocab), g["embedding"].shape[1], g.hidden), blocks)


def load_qa(path):
    """Return ``(model, mode)``; ``mode`` is None when the checkpoint does not record it."""
    _, blocks = read_container(path)
    if blocks.get("kind") != "qa":
        raise ParseError("not a QA checkpoint", path=path)
    try:
        itos = blocks["vocab"].split("\n")
        vocab = Vocab(itos[3:])
        if vocab.itos != itos:
            raise ParseError("vocabulary block is corrupt", path=path)
        g = ScorerParams({n: blocks[f"G/{n}"] for n in PARAM_NAMES}, vocab)
        h = ScorerParams({n: blocks[f"H/{n}"] for n in PARAM_NAMES}, vocab)
        model = QAModelParams(g, h, vocab, float(blocks["gamma_s"][0]), float(blocks["gamma_a"][0]),
                              blocks["attention"] == "on", blocks["story_form"])
    except KeyError as exc:
        raise ParseError(f"QA checkpoint lacks block {exc}", path=path) from None
    mode = AblationMode.parse(blocks["mode"]) if "mode" in blocks else None
    return model, mode
