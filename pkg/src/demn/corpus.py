"""Synthetic story corpora: generation, tokenization, toy features, splits and files.

The generator builds cartoon-style episodes from a small template grammar
(characters x actions x locations, plus an object mentioned in the dialogue).
Scene and sentence features are deterministic seeded stand-ins for
pretrained extractors; all of them are unit length.
"""
from __future__ import annotations

import hashlib
import string
import zlib
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorpusError, DegenerateVectorError, GenerationError, ParseError, SplitError
from .numcore import l2_normalize

PAD, UNK, SEP = "<pad>", "<unk>", "<sep>"
SPECIALS = (PAD, UNK, SEP)

CHARACTERS = ("pororo", "crong", "poby", "loopy", "eddy", "petty", "harry", "rody", "tongtong", "tutu")
ACTIONS = (
    "eating", "running", "dancing", "sleeping", "singing", "skiing",
    "fishing", "painting", "reading", "swimming", "cooking", "jumping",
)
LOCATIONS = ("forest", "house", "lake", "ground", "hill", "snowfield", "beach", "garden")
OBJECTS = (
    "cookies", "ball", "fish", "book", "sled", "shoes",
    "box", "cake", "hat", "kite", "paint", "present",
)

DESCRIPTION_TEMPLATES = (
    "{char} is {action} in the {location}.",
    "in the {location} {char} is {action}.",
)
DIALOGUE_TEMPLATES = (
    "look at the {object} in the {location}!",
    "i found a {object} near the {location}.",
    "do you like my {object}?",
)
QUESTION_TEMPLATES = {
    "action": "what is {char} doing in the {location}?",
    "object": "what does {char} show in the {location}?",
}
ANSWER_TEMPLATES = {
    "action": "{char} is {value}.",
    "object": "{char} shows the {value}.",
}

N_ANSWERS = 5
FORMAT_VERSION = 1
CORPUS_MAGIC = "DEMN-CORPUS"


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace and strip trailing punctuation from each token."""
    tokens = []
    for raw in text.lower().split():
        tok = raw.rstrip(string.punctuation)
        if tok:
            tokens.append(tok)
    return tokens


class Vocab:
    """Dense token ids; the three specials always occupy ids 0..2."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    @property
    def pad_id(self):
        return 0

    @property
    def unk_id(self):
        return 1

    @property
    def sep_id(self):
        return 2

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        unk = self.unk_id
        return np.array([self.stoi.get(t, unk) for t in tokens], dtype=np.int64)

    def decode(self, ids) -> list[str]:
        return [self.itos[i] for i in ids]


@dataclass(frozen=True)
class FeatureConfig:
    dim_v: int = 32
    dim_l: int = 48
    dim_e: int = 48
    seed: int = 0
    decay: float = 0.95

    def __post_init__(self):
        for name in ("dim_v", "dim_l", "dim_e"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")


_KIND_CODES = {"character": 1, "action": 2, "location": 3}
_SPACE_CODES = {"dialogue": 11, "description": 12}


_ATTRIBUTE_OFFSETS = {"character": 0, "action": len(CHARACTERS), "location": len(CHARACTERS) + len(ACTIONS)}
N_ATTRIBUTES = len(CHARACTERS) + len(ACTIONS) + len(LOCATIONS)


@lru_cache(maxsize=None)
def _orthonormal_table(seed: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 99])
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    table = q[:N_ATTRIBUTES].copy()
    table.setflags(write=False)
    return table


@lru_cache(maxsize=None)
def _attribute_basis(seed: int, dim: int, kind: str, idx: int) -> np.ndarray:
    # orthonormal rows when the whole inventory fits, seeded Gaussians otherwise
    if N_ATTRIBUTES <= dim and 0 <= idx < len(_inventory(kind)):
        return _orthonormal_table(seed, dim)[_ATTRIBUTE_OFFSETS[kind] + idx]
    rng = np.random.default_rng([seed, _KIND_CODES[kind], idx])
    v = rng.standard_normal(dim) / np.sqrt(dim)
    v.setflags(write=False)
    return v


def _inventory(kind):
    return {"character": CHARACTERS, "action": ACTIONS, "location": LOCATIONS}[kind]


@lru_cache(maxsize=None)
def _token_embedding(seed: int, dim: int, space: str, token: str) -> np.ndarray:
    rng = np.random.default_rng([seed, _SPACE_CODES[space], zlib.crc32(token.encode("utf-8"))])
    v = rng.standard_normal(dim) / np.sqrt(dim)
    v.setflags(write=False)
    return v


def frame_basis(frame, config: FeatureConfig) -> np.ndarray:
    char, action, location = frame
    return (
        _attribute_basis(config.seed, config.dim_v, "character", int(char))
        + _attribute_basis(config.seed, config.dim_v, "action", int(action))
        + _attribute_basis(config.seed, config.dim_v, "location", int(location))
    )


def featurize_scene(scene_spec, config: FeatureConfig) -> np.ndarray:
    """Mean of per-frame attribute vectors, unit-normalized."""
    frames = list(scene_spec)
    if not frames:
        raise DegenerateVectorError("scene has no frames")
    pooled = np.mean([frame_basis(f, config) for f in frames], axis=0)
    return l2_normalize(pooled)


def featurize_sentence(tokens: Sequence[str], config: FeatureConfig, space: str = "dialogue") -> np.ndarray:
    """Decay-weighted average of seeded token vectors, unit-normalized.

    ``space`` selects the dialogue (dim_l) or description (dim_e) space; the
    two spaces use unrelated token vectors.
    """
    if not tokens:
        raise DegenerateVectorError("cannot featurize an empty sentence")
    if space not in _SPACE_CODES:
        raise ValueError(f"unknown sentence space {space!r}")
    dim = config.dim_l if space == "dialogue" else config.dim_e
    weights = config.decay ** np.arange(len(tokens))
    vecs = np.stack([_token_embedding(config.seed, dim, space, t) for t in tokens])
    return l2_normalize(weights @ vecs / weights.sum())


def _array_eq(a, b):
    return a.shape == b.shape and np.array_equal(a, b)


@dataclass(eq=False)
class ScenePair:
    scene_spec: list[tuple[int, int, int]]
    dialogue: list[str]
    description: list[str]
    scene_feature: np.ndarray
    dialogue_feature: np.ndarray
    description_feature: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, ScenePair):
            return NotImplemented
        return (
            [tuple(f) for f in self.scene_spec] == [tuple(f) for f in other.scene_spec]
            and self.dialogue == other.dialogue
            and self.description == other.description
            and _array_eq(self.scene_feature, other.scene_feature)
            and _array_eq(self.dialogue_feature, other.dialogue_feature)
            and _array_eq(self.description_feature, other.description_feature)
        )


@dataclass
class QAItem:
    id: str
    question: list[str]
    answers: list[list[str]]
    correct_answer_index: int
    relevant_pair_index: int

    def __post_init__(self):
        if len(self.answers) != N_ANSWERS:
            raise CorpusError(f"{self.id}: expected {N_ANSWERS} answers, got {len(self.answers)}")
        if not 0 <= self.correct_answer_index < N_ANSWERS:
            raise CorpusError(f"{self.id}: correct answer index {self.correct_answer_index} out of range")


@dataclass
class Episode:
    id: str
    pairs: list[ScenePair]
    qa_items: list[QAItem] = field(default_factory=list)

    def __post_init__(self):
        if not self.pairs:
            raise CorpusError(f"episode {self.id} has no scene-dialogue pairs")
        for qa in self.qa_items:
            if not 0 <= qa.relevant_pair_index < len(self.pairs):
                raise CorpusError(f"{qa.id}: relevant pair {qa.relevant_pair_index} out of range")


def build_vocab(episodes: Sequence[Episode]) -> Vocab:
    if not episodes:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    tokens = set()
    for ep in episodes:
        for p in ep.pairs:
            tokens.update(p.dialogue)
            tokens.update(p.description)
        for qa in ep.qa_items:
            tokens.update(qa.question)
            for a in qa.answers:
                tokens.update(a)
    tokens.difference_update(SPECIALS)
    return Vocab(sorted(tokens))


def make_pair(scene_spec, dialogue_text: str, description_text: str, config: FeatureConfig) -> ScenePair:
    dialogue = tokenize(dialogue_text)
    description = tokenize(description_text)
    return ScenePair(
        scene_spec=[tuple(int(x) for x in f) for f in scene_spec],
        dialogue=dialogue,
        description=description,
        scene_feature=featurize_scene(scene_spec, config),
        dialogue_feature=featurize_sentence(dialogue, config, "dialogue"),
        description_feature=featurize_sentence(description, config, "description"),
    )


def _scene_frames(rng, char, action, location):
    n_frames = int(rng.integers(3, 6))
    frames = []
    for k in range(n_frames):
        if k > 0 and rng.random() < 0.15:
            # a passing companion shares the shot
            other = int(rng.integers(len(CHARACTERS)))
            frames.append((other, action, location))
        else:
            frames.append((char, action, location))
    return frames


def generate_corpus(
    seed: int,
    n_episodes: int,
    pairs_per_episode: int,
    questions_per_episode: int,
    config: FeatureConfig | None = None,
) -> list[Episode]:
    """Template-grammar episodes whose questions each have exactly one evidence pair.

    Within an episode every pair has a distinct action, a distinct object and a
    distinct (character, location) combination, which is what makes the planted
    answer recoverable from exactly one story.
    """
    config = config or FeatureConfig()
    if min(n_episodes, pairs_per_episode, questions_per_episode) < 1:
        raise GenerationError("episode, pair and question counts must all be >= 1")
    capacity = min(len(ACTIONS), len(OBJECTS), len(CHARACTERS) * len(LOCATIONS))
    if pairs_per_episode > capacity:
        raise GenerationError(
            f"templates support at most {capacity} distinct pairs per episode, asked for {pairs_per_episode}"
        )
    rng = np.random.default_rng(seed)
    combos = [(c, l) for c in range(len(CHARACTERS)) for l in range(len(LOCATIONS))]
    episodes = []
    for e in range(n_episodes):
        ep_id = f"ep{e:04d}"
        picks = rng.choice(len(combos), size=pairs_per_episode, replace=False)
        actions = rng.choice(len(ACTIONS), size=pairs_per_episode, replace=False)
        objects = rng.choice(len(OBJECTS), size=pairs_per_episode, replace=False)
        facts = []
        pairs = []
        for i in range(pairs_per_episode):
            char, loc = combos[int(picks[i])]
            act, obj = int(actions[i]), int(objects[i])
            words = dict(char=CHARACTERS[char], action=ACTIONS[act], location=LOCATIONS[loc], object=OBJECTS[obj])
            desc = DESCRIPTION_TEMPLATES[int(rng.integers(len(DESCRIPTION_TEMPLATES)))].format(**words)
            dial = DIALOGUE_TEMPLATES[int(rng.integers(len(DIALOGUE_TEMPLATES)))].format(**words)
            pairs.append(make_pair(_scene_frames(rng, char, act, loc), dial, desc, config))
            facts.append(dict(words, action_id=act, object_id=obj))

        qa_items = []
        order = rng.permutation(pairs_per_episode)
        for q in range(questions_per_episode):
            rel = int(order[q % pairs_per_episode])
            kind = ("action", "object")[int(rng.integers(2))]
            if q >= pairs_per_episode:
                # repeated pair: alternate the question kind deterministically
                kind = "object" if kind == "action" else "action"
            fact = facts[rel]
            key = fact[kind]
            pool = [f[kind] for j, f in enumerate(facts) if j != rel]
            if len(pool) < N_ANSWERS - 1:
                universe = ACTIONS if kind == "action" else OBJECTS
                used = {f[kind] for f in facts}
                pool += [w for w in universe if w not in used]
            if len(pool) < N_ANSWERS - 1:
                raise GenerationError("not enough distinct distractor values")
            chosen = [pool[int(i)] for i in rng.choice(len(pool), size=N_ANSWERS - 1, replace=False)]
            correct = int(rng.integers(N_ANSWERS))
            values = chosen[:correct] + [key] + chosen[correct:]
            answers = [tokenize(ANSWER_TEMPLATES[kind].format(char=fact["char"], value=v)) for v in values]
            question = tokenize(QUESTION_TEMPLATES[kind].format(char=fact["char"], location=fact["location"]))
            qa_items.append(QAItem(f"{ep_id}-q{q}", question, answers, correct, rel))
        episodes.append(Episode(ep_id, pairs, qa_items))
    return episodes


def split_dataset(episodes: Sequence[Episode], ratios=(0.6, 0.2, 0.2)):
    """Episode-level split in id order; floor allocation, remainder to train.

    Every split with a nonzero ratio receives at least one episode.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must be three nonnegative numbers summing to 1, got {ratios}")
    n = len(episodes)
    nonzero = sum(r > 0 for r in ratios)
    if n < nonzero:
        raise SplitError(f"{n} episodes cannot fill {nonzero} nonempty splits")
    ordered = sorted(episodes, key=lambda ep: ep.id)
    n_val = int(np.floor(n * ratios[1] + 1e-9))
    n_test = int(np.floor(n * ratios[2] + 1e-9))
    if ratios[1] > 0:
        n_val = max(n_val, 1)
    if ratios[2] > 0:
        n_test = max(n_test, 1)
    n_train = n - n_val - n_test
    if ratios[0] > 0 and n_train < 1:
        raise SplitError(f"{n} episodes leave no training episodes")
    return ordered[:n_train], ordered[n_train:n_train + n_val], ordered[n_train + n_val:]


# -- on-disk format ---------------------------------------------------------

def _fmt_vec(v) -> str:
    return ",".join(format(float(x), ".17g") for x in v)


def _parse_vec(text, dim, lineno, path):
    try:
        v = np.array([float(x) for x in text.split(",")], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"bad feature vector: {exc}", lineno, path) from None
    if v.size != dim:
        raise ParseError(f"feature vector has {v.size} entries, expected {dim}", lineno, path)
    return v


def _fmt_scene(spec) -> str:
    return ";".join(",".join(str(int(x)) for x in f) for f in spec)


def _parse_scene(text, lineno, path):
    try:
        frames = [tuple(int(x) for x in f.split(",")) for f in text.split(";")]
    except ValueError:
        raise ParseError("bad scene spec", lineno, path) from None
    if not frames or any(len(f) != 3 for f in frames):
        raise ParseError("scene frames must be (character, action, location) triples", lineno, path)
    return frames


def _tokens_field(tokens) -> str:
    return " ".join(tokens)


def corpus_dims(episodes: Sequence[Episode]):
    p = episodes[0].pairs[0]
    return p.scene_feature.size, p.dialogue_feature.size, p.description_feature.size


def header_fields(line: str, magic: str, path):
    parts = line.rstrip("\n").split("\t")
    if not parts or parts[0] != magic:
        raise ParseError(f"missing {magic} header", 1, path)
    meta = {}
    for item in parts[1:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise ParseError(f"bad header field {item!r}", 1, path)
        meta[key] = value
    return meta


def write_corpus(episodes: Sequence[Episode], path, config_hash: str = "") -> None:
    if not episodes:
        raise CorpusError("refusing to write an empty corpus")
    dim_v, dim_l, dim_e = corpus_dims(episodes)
    lines = [
        "\t".join([
            CORPUS_MAGIC, f"version={FORMAT_VERSION}", f"dim_v={dim_v}", f"dim_l={dim_l}",
            f"dim_e={dim_e}", f"episodes={len(episodes)}", f"config={config_hash}",
        ])
    ]
    for ep in episodes:
        lines.append(f"EP\t{ep.id}\t{len(ep.pairs)}\t{len(ep.qa_items)}")
        for i, p in enumerate(ep.pairs):
            lines.append("\t".join([
                "PAIR", ep.id, str(i), _fmt_scene(p.scene_spec), _tokens_field(p.dialogue),
                _tokens_field(p.description), _fmt_vec(p.scene_feature),
                _fmt_vec(p.dialogue_feature), _fmt_vec(p.description_feature),
            ]))
        for qa in ep.qa_items:
            lines.append("\t".join(
                ["QA", ep.id, qa.id, _tokens_field(qa.question)]
                + [_tokens_field(a) for a in qa.answers]
                + [str(qa.correct_answer_index), str(qa.relevant_pair_index)]
            ))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_corpus(path) -> list[Episode]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file", 1, path)
    meta = header_fields(lines[0], CORPUS_MAGIC, path)
    try:
        if int(meta.get("version", -1)) != FORMAT_VERSION:
            raise ParseError(f"unsupported version {meta.get('version')}", 1, path)
        dim_v, dim_l, dim_e = (int(meta[k]) for k in ("dim_v", "dim_l", "dim_e"))
        n_episodes = int(meta["episodes"])
    except (KeyError, ValueError):
        raise ParseError("header lacks version/dims/episodes", 1, path) from None

    episodes: list[Episode] = []
    current = None  # (id, n_pairs, n_qa, pairs, qas, lineno)

    def close(lineno):
        if current is None:
            return
        ep_id, n_pairs, n_qa, pairs, qas, start = current
        if len(pairs) != n_pairs or len(qas) != n_qa:
            raise ParseError(
                f"episode {ep_id} declares {n_pairs} pairs/{n_qa} questions, found {len(pairs)}/{len(qas)}",
                lineno, path,
            )
        try:
            episodes.append(Episode(ep_id, pairs, qas))
        except CorpusError as exc:
            raise ParseError(str(exc), start, path) from None

    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        tag = fields[0]
        if tag == "EP":
            if len(fields) != 4:
                raise ParseError("EP record needs 4 fields", lineno, path)
            close(lineno)
            try:
                current = (fields[1], int(fields[2]), int(fields[3]), [], [], lineno)
            except ValueError:
                raise ParseError("bad EP counts", lineno, path) from None
        elif tag == "PAIR":
            if current is None or len(fields) != 9 or fields[1] != current[0]:
                raise ParseError("PAIR record out of place or wrong field count", lineno, path)
            if fields[2] != str(len(current[3])):
                raise ParseError(f"PAIR index {fields[2]} out of order", lineno, path)
            dialogue, description = fields[4].split(), fields[5].split()
            if not dialogue or not description:
                raise ParseError("empty dialogue or description", lineno, path)
            current[3].append(ScenePair(
                _parse_scene(fields[3], lineno, path), dialogue, description,
                _parse_vec(fields[6], dim_v, lineno, path),
                _parse_vec(fields[7], dim_l, lineno, path),
                _parse_vec(fields[8], dim_e, lineno, path),
            ))
        elif tag == "QA":
            if current is None or len(fields) != 4 + N_ANSWERS + 2 or fields[1] != current[0]:
                raise ParseError("QA record out of place or wrong field count", lineno, path)
            try:
                qa = QAItem(
                    fields[2], fields[3].split(), [f.split() for f in fields[4:4 + N_ANSWERS]],
                    int(fields[-2]), int(fields[-1]),
                )
            except (ValueError, CorpusError) as exc:
                raise ParseError(f"bad QA record: {exc}", lineno, path) from None
            current[4].append(qa)
        else:
            raise ParseError(f"unknown record tag {tag!r}", lineno, path)
    close(len(lines) + 1)
    if len(episodes) != n_episodes:
        raise ParseError(
            f"header declares {n_episodes} episodes, found {len(episodes)} (truncated file?)",
            len(lines) + 1, path,
        )
    return episodes


def stable_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
