import dataclasses

import pytest

from demn.corpus import generate_corpus
from demn.embedder import GROUND_TRUTH, RETRIEVED, DescriptionPool, Story, init_embedder
from demn.errors import MissingEpisodeError, ParseError
from demn.memory import (
    StoryMemory, build_memory, ingest_episode, load_memory, persist_memory, read_stories, write_story,
)


def story(i):
    return Story([f"d{i}"], [f"l{i}", "ok"], i)


def test_write_and_read_order():
    mem = StoryMemory()
    write_story(mem, "a", story(0))
    assert len(read_stories(mem, "a")) == 1
    for i in range(1, 5):
        write_story(mem, "a", story(i))
    assert [s.source_pair_index for s in read_stories(mem, "a")] == list(range(5))


def test_interleaved_ids_are_independent():
    mem = StoryMemory()
    for i in range(6):
        write_story(mem, "ab"[i % 2], story(i))
    assert [s.source_pair_index for s in read_stories(mem, "a")] == [0, 2, 4]
    assert [s.source_pair_index for s in read_stories(mem, "b")] == [1, 3, 5]


def test_read_is_pure_and_unknown_id_errors():
    mem = StoryMemory()
    write_story(mem, "a", story(0))
    first = read_stories(mem, "a")
    first.append(story(9))
    assert read_stories(mem, "a") == read_stories(mem, "a") == [story(0)]
    with pytest.raises(MissingEpisodeError):
        read_stories(mem, "zzz")


def test_ingest_has_one_story_per_pair_in_order(small_corpus):
    mem = build_memory(small_corpus)
    for ep in small_corpus:
        stories = read_stories(mem, ep.id)
        assert len(stories) == len(ep.pairs)
        for i, (s, p) in enumerate(zip(stories, ep.pairs)):
            assert s.source_pair_index == i
            assert s.tokens == p.description + p.dialogue


def test_ingest_retrieved(small_corpus):
    pool = DescriptionPool.from_episodes(small_corpus)
    mem = build_memory(small_corpus, init_embedder(32, 48, 48, 1), pool, RETRIEVED)
    assert mem.source == RETRIEVED
    assert mem.n_stories() == sum(len(e.pairs) for e in small_corpus)
    with pytest.raises(ValueError):
        ingest_episode(mem, small_corpus[0], source=GROUND_TRUTH)


def test_reingest_replaces_rather_than_appends(small_corpus):
    mem = build_memory(small_corpus[:1])
    ingest_episode(mem, small_corpus[0])
    assert len(read_stories(mem, small_corpus[0].id)) == len(small_corpus[0].pairs)


def test_round_trip(tmp_path, small_corpus):
    mem = build_memory(small_corpus)
    persist_memory(mem, tmp_path / "m.tsv")
    assert load_memory(tmp_path / "m.tsv") == mem
    empty = StoryMemory()
    persist_memory(empty, tmp_path / "e.tsv")
    back = load_memory(tmp_path / "e.tsv")
    assert len(back) == 0 and back == empty


def test_truncated_and_malformed(tmp_path, small_corpus):
    persist_memory(build_memory(small_corpus), tmp_path / "m.tsv")
    lines = (tmp_path / "m.tsv").read_text().splitlines()
    (tmp_path / "t.tsv").write_text("\n".join(lines[:-2]) + "\n")
    with pytest.raises(ParseError):
        load_memory(tmp_path / "t.tsv")
    lines[3] = "STORY\tonly-two"
    (tmp_path / "b.tsv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as err:
        load_memory(tmp_path / "b.tsv")
    assert err.value.line == 4


def test_corpus_scale_memory(tmp_path):
    eps = generate_corpus(11, 2008, 8, 1)
    eps.append(dataclasses.replace(generate_corpus(12, 1, 2, 1)[0], id="ep9999"))
    mem = build_memory(eps)
    assert mem.n_stories() == 16066
    persist_memory(mem, tmp_path / "big.tsv")
    back = load_memory(tmp_path / "big.tsv")
    assert back.n_stories() == 16066 and back == mem
