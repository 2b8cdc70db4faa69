"""Long-term story memory: one ordered story table per episode."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

from .corpus import Episode, FORMAT_VERSION, header_fields
from .embedder import GROUND_TRUTH, DescriptionPool, EmbedderParams, Story, reconstruct_story
from .errors import MissingEpisodeError, ParseError

MEMORY_MAGIC = "DEMN-MEMORY"


class StoryMemory:
    """Append-only per-episode story lists.

    ``source`` records how descriptions were obtained (``"ground_truth"`` or
    ``"retrieved"``) so the QA side can refuse a memory built the wrong way.
    """

    def __init__(self, source: str | None = None):
        self.entries: dict[str, list[Story]] = {}
        self.source = source

    def __eq__(self, other):
        return isinstance(other, StoryMemory) and self.entries == other.entries and self.source == other.source

    def __contains__(self, episode_id):
        return episode_id in self.entries

    def __len__(self):
        return len(self.entries)

    def n_stories(self) -> int:
        return sum(len(v) for v in self.entries.values())


def write_story(mem: StoryMemory, episode_id: str, story: Story) -> StoryMemory:
    mem.entries.setdefault(episode_id, []).append(story)
    return mem


def read_stories(mem: StoryMemory, episode_id: str) -> list[Story]:
    try:
        stories = mem.entries[episode_id]
    except KeyError:
        raise MissingEpisodeError(f"episode {episode_id!r} is not in memory") from None
    return list(stories)


def ingest_episode(mem: StoryMemory, episode: Episode, embedder: EmbedderParams | None = None,
                   pool: DescriptionPool | None = None, source: str = GROUND_TRUTH) -> StoryMemory:
    """Reconstruct one story per scene-dialogue pair, in pair order."""
    if mem.source is None:
        mem.source = source
    elif mem.source != source:
        raise ValueError(f"memory holds {mem.source} stories, refusing to add {source} ones")
    mem.entries[episode.id] = []
    for i, pair in enumerate(episode.pairs):
        write_story(mem, episode.id, reconstruct_story(pair, pool, embedder, source, i))
    return mem


def build_memory(episodes: Sequence[Episode], embedder=None, pool=None, source: str = GROUND_TRUTH) -> StoryMemory:
    mem = StoryMemory(source)
    for ep in episodes:
        ingest_episode(mem, ep, embedder, pool, source)
    return mem


def persist_memory(mem: StoryMemory, path) -> None:
    lines = ["\t".join([
        MEMORY_MAGIC, f"version={FORMAT_VERSION}", f"episodes={len(mem.entries)}",
        f"stories={mem.n_stories()}", f"source={mem.source or ''}",
    ])]
    for ep_id, stories in mem.entries.items():
        for s in stories:
            lines.append("\t".join([
                "STORY", ep_id, str(s.source_pair_index),
                " ".join(s.description_tokens), " ".join(s.dialogue_tokens),
            ]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_memory(path) -> StoryMemory:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file", 1, path)
    meta = header_fields(lines[0], MEMORY_MAGIC, path)
    try:
        n_episodes, n_stories = int(meta["episodes"]), int(meta["stories"])
    except (KeyError, ValueError):
        raise ParseError("header lacks episode/story counts", 1, path) from None
    mem = StoryMemory(meta.get("source") or None)
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if fields[0] != "STORY" or len(fields) != 5:
            raise ParseError("expected a 5-field STORY record", lineno, path)
        try:
            idx = int(fields[2])
        except ValueError:
            raise ParseError("bad source pair index", lineno, path) from None
        write_story(mem, fields[1], Story(fields[3].split(), fields[4].split(), idx))
    if len(mem.entries) != n_episodes or mem.n_stories() != n_stories:
        raise ParseError(
            f"header declares {n_episodes} episodes/{n_stories} stories, found "
            f"{len(mem.entries)}/{mem.n_stories()} (truncated file?)", len(lines) + 1, path,
        )
    return mem
