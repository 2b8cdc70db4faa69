import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from demn.checkpoint import read_container, write_container
from demn.embedder import (
    GROUND_TRUTH, RETRIEVED, DescriptionPool, EmbedderConfig, EmbedderParams, combine, embed_scene,
    hinge_rank_loss, init_embedder, load_embedder, reconstruct_story, retrieval_accuracy,
    retrieve_description, save_embedder, train_embedder,
)
from demn.errors import ContractError, DegenerateVectorError, ParseError, RetrievalError, ShapeError
from demn.numcore import finite_diff_grad, l2_normalize, mat_vec_left, relative_error


def unit(rng, n):
    return l2_normalize(rng.normal(size=n))


def exhaustive_argmax(c, feats, M2):
    """Independent scan: score every candidate by explicit loops, keep the first strict maximum."""
    q = [sum(c[i] * M2[i, j] for i in range(M2.shape[0])) for j in range(M2.shape[1])]
    best, best_score = 0, None
    for k, e in enumerate(feats):
        s = sum(qj * ej for qj, ej in zip(q, e))
        if best_score is None or s > best_score:
            best, best_score = k, s
    return best


def test_embed_scene_examples(rng):
    v = unit(rng, 5)
    np.testing.assert_array_equal(embed_scene(v, np.eye(5)), v)
    np.testing.assert_array_equal(embed_scene(v, np.zeros((5, 3))), np.zeros(3))
    M = rng.normal(size=(5, 4))
    np.testing.assert_allclose(embed_scene(v, M), [sum(v[i] * M[i, j] for i in range(5)) for j in range(4)])


def test_combine_examples(rng):
    l = unit(rng, 6)
    np.testing.assert_allclose(combine(unit(rng, 4), l, np.zeros((4, 6))), l, atol=1e-15)
    np.testing.assert_allclose(combine(l, l, np.eye(6)), l, atol=1e-15)
    for _ in range(20):
        c = combine(unit(rng, 4), unit(rng, 6), rng.normal(size=(4, 6)))
        assert abs(np.linalg.norm(c) - 1) < 1e-9
    with pytest.raises(DegenerateVectorError):
        combine(l, -l, np.eye(6))
    with pytest.raises(ShapeError):
        combine(unit(rng, 4), unit(rng, 5), np.zeros((4, 6)))


def test_hinge_examples():
    # positive score 2.0, negative 0.5 -> satisfied margin
    M = np.eye(2)
    a = np.array([1.0, 0.0])
    loss, grad = hinge_rank_loss(a, [2.0, 0.0], [[0.5, 0.0]], M)
    assert loss == 0.0
    np.testing.assert_array_equal(grad, 0)
    loss, _ = hinge_rank_loss(a, [0.3, 0.0], [[0.4, 0.0]], M)
    assert loss == pytest.approx(1.1)
    with pytest.raises(ContractError):
        hinge_rank_loss(a, [1.0, 0.0], [], M)


def test_hinge_gradient_matches_finite_differences(rng):
    for _ in range(20):
        dv, dl, k = rng.integers(2, 7), rng.integers(2, 7), rng.integers(1, 6)
        a, p = unit(rng, dv), unit(rng, dl)
        negs = np.stack([unit(rng, dl) for _ in range(k)])
        M = rng.normal(size=(dv, dl))
        margins = 1 - (a @ M) @ p + negs @ (a @ M)
        if np.min(np.abs(margins)) < 1e-3:
            continue  # too close to the kink for a central difference
        _, grad = hinge_rank_loss(a, p, negs, M)
        num = finite_diff_grad(lambda: hinge_rank_loss(a, p, negs, M)[0], [M], 1e-5)[0]
        assert relative_error(grad, num) < 1e-4


small = arrays(np.float64, 4, elements=st.floats(-1, 1))


@settings(max_examples=50)
@given(small, small, st.lists(small, min_size=1, max_size=5), st.randoms(use_true_random=False))
def test_hinge_floor_and_permutation(a, p, negs, rnd):
    M = np.eye(4) * 1.5
    loss, _ = hinge_rank_loss(a, p, negs, M)
    assert loss >= 0
    pos = a @ M @ p
    satisfied = all(a @ M @ n <= pos - 1.0 for n in negs)
    assert (loss == 0) == satisfied or abs(min(1 - pos + a @ M @ n for n in negs)) < 1e-12
    shuffled = list(negs)
    rnd.shuffle(shuffled)
    assert hinge_rank_loss(a, p, shuffled, M)[0] == pytest.approx(loss, abs=1e-12)


def test_retrieve_examples(rng):
    c = unit(rng, 4)
    assert retrieve_description(c, [(["only"], unit(rng, 4))], np.eye(4)).tokens == ["only"]
    r = retrieve_description(c, [(["neg"], -c), (["pos"], c)], np.eye(4))
    assert r.tokens == ["pos"] and r.index == 1
    with pytest.raises(RetrievalError):
        retrieve_description(c, [], np.eye(4))


def test_retrieve_ties_go_to_lowest_index(rng):
    c = unit(rng, 4)
    e = unit(rng, 4)
    cands = [(["x"], -e), (["a"], e), (["b"], e), (["c"], e)]
    for _ in range(5):
        assert retrieve_description(c, cands, np.eye(4)).index == (1 if c @ e > 0 else 0)


def test_retrieve_matches_exhaustive_scan_on_1000_sets(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 12))
        c, M2 = unit(rng, 3), rng.normal(size=(3, 4))
        feats = np.stack([unit(rng, 4) for _ in range(n)])
        if rng.random() < 0.2:
            feats[-1] = feats[0]  # planted tie
        pool = DescriptionPool([[str(k)] for k in range(n)], feats)
        assert retrieve_description(c, pool, M2).index == exhaustive_argmax(c, feats, M2)


@settings(max_examples=30)
@given(st.floats(0.01, 100))
def test_retrieval_invariant_to_positive_scaling(alpha):
    r = np.random.default_rng(5)
    c, M2 = unit(r, 3), r.normal(size=(3, 4))
    pool = DescriptionPool([[str(k)] for k in range(9)], np.stack([unit(r, 4) for _ in range(9)]))
    assert retrieve_description(c, pool, alpha * M2).index == retrieve_description(c, pool, M2).index
    e = pool.features[0]
    assert mat_vec_left(c, alpha * M2) @ e == pytest.approx(alpha * (mat_vec_left(c, M2) @ e))


def test_reconstruct_story(small_corpus, rng):
    pair = small_corpus[0].pairs[1]
    s = reconstruct_story(pair, None, None, GROUND_TRUTH, 1)
    assert s.tokens == pair.description + pair.dialogue and s.source_pair_index == 1
    params = init_embedder(32, 48, 48, 0)
    single = DescriptionPool([pair.description], pair.description_feature[None])
    assert reconstruct_story(pair, single, params, RETRIEVED).tokens == pair.description + pair.dialogue
    pool = DescriptionPool.from_episodes(small_corpus)
    got = reconstruct_story(pair, pool, params, RETRIEVED)
    c = combine(pair.scene_feature, pair.dialogue_feature, params.M1)
    assert got.description_tokens == pool.tokens[exhaustive_argmax(c, pool.features, params.M2)]
    with pytest.raises(RetrievalError):
        reconstruct_story(pair, None, params, RETRIEVED)
    with pytest.raises(ContractError):
        reconstruct_story(pair, pool, params, "other")


def test_zero_epochs_returns_initialization(small_corpus):
    init = init_embedder(32, 48, 48, 3)
    params, log = train_embedder(small_corpus, EmbedderConfig(epochs=0), init)
    np.testing.assert_array_equal(params.M1, init.M1)
    np.testing.assert_array_equal(params.M2, init.M2)
    assert log == {"phase1": [], "phase2": []}


def test_training_is_deterministic(small_corpus):
    cfg = EmbedderConfig(epochs=3)
    a, _ = train_embedder(small_corpus, cfg)
    b, _ = train_embedder(small_corpus, cfg)
    assert a.M1.tobytes() == b.M1.tobytes() and a.M2.tobytes() == b.M2.tobytes()


@pytest.fixture(scope="module")
def trained(default_splits):
    params, log = train_embedder(default_splits[0])
    return params, log


def test_training_reduces_loss(trained):
    _, log = trained
    for phase in ("phase1", "phase2"):
        assert log[phase][-1] < 0.5 * log[phase][0]


def test_train_retrieval_accuracy(trained, default_splits):
    params, _ = trained
    train = default_splits[0]
    pool = DescriptionPool.from_episodes(train)
    acc = retrieval_accuracy([p for e in train for p in e.pairs], pool, params)
    assert acc >= 0.90


def test_phase1_ranks_own_dialogue_higher_on_held_out(trained, default_splits):
    params, _ = trained
    held = [p for part in default_splits[1:] for e in part for p in e.pairs]
    L = np.stack([p.dialogue_feature for p in held])
    pos, neg = [], []
    for i, p in enumerate(held):
        s = embed_scene(p.scene_feature, params.M1) @ L.T
        pos.append(s[i])
        neg.append(np.delete(s, i).mean())
    assert np.mean(pos) > np.mean(neg)


def test_checkpoint_round_trip(tmp_path, rng):
    params = EmbedderParams(rng.normal(size=(3, 5)), rng.normal(size=(5, 2)), 1.0)
    save_embedder(params, tmp_path / "e.demn", "h1")
    back = load_embedder(tmp_path / "e.demn")
    assert back.M1.tobytes() == params.M1.tobytes() and back.M2.tobytes() == params.M2.tobytes()
    assert back.dims == (3, 5, 2)
    raw = (tmp_path / "e.demn").read_bytes()
    assert raw[:4] == b"DEMN"
    for cut in (3, 30, len(raw) - 1):
        (tmp_path / "t.demn").write_bytes(raw[:cut])
        with pytest.raises(ParseError):
            load_embedder(tmp_path / "t.demn")
    (tmp_path / "x.demn").write_bytes(raw + b"\0")
    with pytest.raises(ParseError):
        load_embedder(tmp_path / "x.demn")


def test_container_blocks(tmp_path, rng):
    blocks = {"A": rng.normal(size=(2, 3)), "v": rng.normal(size=4), "note": "héllo"}
    write_container(tmp_path / "c.demn", (1, 2, 3), blocks)
    dims, back = read_container(tmp_path / "c.demn")
    assert tuple(dims) == (1, 2, 3)
    assert back["note"] == "héllo"
    for k in ("A", "v"):
        assert back[k].tobytes() == blocks[k].tobytes() and back[k].shape == blocks[k].shape


def test_params_validation(rng):
    with pytest.raises(ShapeError):
        EmbedderParams(np.zeros((2, 3)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        EmbedderParams(np.zeros((2, 3)), np.zeros((3, 2)), 0.0)
