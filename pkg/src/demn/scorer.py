"""Word-level attention BiLSTM matcher used for story and answer scoring.

``X`` side: token vectors from a bidirectional LSTM, averaged into a
sentence vector.  ``Y`` side: each token vector is scaled by a softmax
weight computed from ``tanh(W_a h_y(t) + W_q X)`` and ``w_ms``, then the
scaled vectors are averaged.  The match score is the cosine of the two
sentence vectors.

Everything is plain numpy with hand-written backward passes.  Sequences
are processed in right-padded batches: one ``X`` sequence against any
number of ``Y`` candidates, all sharing one parameter set.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Vocab
from .errors import DegenerateVectorError, ShapeError
from .numcore import NORM_EPS, ParamGroup, softmax

LSTM_DIRECTIONS = ("fwd", "bwd")
PARAM_NAMES = (
    "embedding",
    "fwd_Wx", "fwd_Wh", "fwd_b",
    "bwd_Wx", "bwd_Wh", "bwd_b",
    "W_a", "W_q", "w_ms",
)


class ScorerParams:
    """Parameter groups for one scoring function.

    LSTM gate blocks are laid out ``[input, forget, output, candidate]``
    along the last axis of ``*_Wx``, ``*_Wh`` and ``*_b``.
    """

    def __init__(self, arrays: dict, vocab: Vocab | None = None):
        missing = set(PARAM_NAMES) - set(arrays)
        if missing:
            raise ShapeError(f"missing scorer parameters: {sorted(missing)}")
        self.groups = {name: ParamGroup(name, np.array(arrays[name], dtype=np.float64)) for name in PARAM_NAMES}
        self.vocab = vocab
        self._check_shapes()

    def _check_shapes(self):
        V, d = self["embedding"].shape
        H = self.hidden
        for direction in LSTM_DIRECTIONS:
            if self[f"{direction}_Wx"].shape != (d, 4 * H):
                raise ShapeError(f"{direction}_Wx must be {(d, 4 * H)}")
            if self[f"{direction}_Wh"].shape != (H, 4 * H):
                raise ShapeError(f"{direction}_Wh must be {(H, 4 * H)}")
            if self[f"{direction}_b"].shape != (4 * H,):
                raise ShapeError(f"{direction}_b must be {(4 * H,)}")
        A = self["w_ms"].shape[0]
        if self["W_a"].shape != (A, 2 * H) or self["W_q"].shape != (A, 2 * H):
            raise ShapeError(f"W_a and W_q must be {(A, 2 * H)}")
        if self.vocab is not None and len(self.vocab) != V:
            raise ShapeError(f"vocab has {len(self.vocab)} tokens, embedding table {V} rows")

    def __getitem__(self, name) -> np.ndarray:
        return self.groups[name].value

    @property
    def hidden(self) -> int:
        return self["fwd_Wh"].shape[0]

    @property
    def param_groups(self) -> list[ParamGroup]:
        return list(self.groups.values())

    def zero_grad(self):
        for g in self.groups.values():
            g.zero_grad()

    def copy(self) -> "ScorerParams":
        return ScorerParams({k: g.value.copy() for k, g in self.groups.items()}, self.vocab)

    def arrays(self) -> dict:
        return {k: g.value for k, g in self.groups.items()}

    def ids(self, tokens) -> np.ndarray:
        """Token ids for a list of strings (unknown tokens map to UNK) or an id array."""
        if len(tokens) and isinstance(tokens[0], str):
            if self.vocab is None:
                raise ShapeError("string tokens need a vocabulary")
            return self.vocab.encode(tokens)
        return np.asarray(tokens, dtype=np.int64)


def init_scorer(vocab_size: int, d_emb: int = 32, hidden: int = 32, attn_dim: int | None = None,
                seed: int = 0, vocab: Vocab | None = None, emb_scale: float = 0.5) -> ScorerParams:
    rng = np.random.default_rng(seed)
    H = hidden
    A = attn_dim or 2 * H
    arrays = {"embedding": rng.normal(0.0, emb_scale, size=(vocab_size, d_emb))}
    for direction in LSTM_DIRECTIONS:
        s = 1.0 / np.sqrt(H)
        arrays[f"{direction}_Wx"] = rng.uniform(-s, s, size=(d_emb, 4 * H))
        arrays[f"{direction}_Wh"] = rng.uniform(-s, s, size=(H, 4 * H))
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # forget gate starts open
        arrays[f"{direction}_b"] = b
    s = 1.0 / np.sqrt(2 * H)
    arrays["W_a"] = rng.uniform(-s, s, size=(A, 2 * H))
    arrays["W_q"] = rng.uniform(-s, s, size=(A, 2 * H))
    arrays["w_ms"] = rng.uniform(-1.0 / np.sqrt(A), 1.0 / np.sqrt(A), size=A)
    return ScorerParams(arrays, vocab)


# -- unidirectional LSTM over a right-padded batch ---------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_forward(X, Wx, Wh, b):
    """Run an LSTM over ``X`` of shape (B, T, d) from zero states.

    Padded tail positions are computed and later ignored; they cannot
    influence earlier positions.
    """
    B, T, _ = X.shape
    H = Wh.shape[0]
    pre = X @ Wx + b
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.empty((B, T, H))
    gates = np.empty((B, T, 4 * H))
    cs = np.empty((B, T, H))
    tcs = np.empty((B, T, H))
    h_prev = np.empty((B, T, H))
    c_prev = np.empty((B, T, H))
    for t in range(T):
        h_prev[:, t] = h
        c_prev[:, t] = c
        a = pre[:, t] + h @ Wh
        g = np.empty_like(a)
        g[:, :3 * H] = _sigmoid(a[:, :3 * H])
        g[:, 3 * H:] = np.tanh(a[:, 3 * H:])
        c = g[:, H:2 * H] * c + g[:, :H] * g[:, 3 * H:]
        tc = np.tanh(c)
        h = g[:, 2 * H:3 * H] * tc
        gates[:, t] = g
        cs[:, t] = c
        tcs[:, t] = tc
        hs[:, t] = h
    return hs, (X, Wx, Wh, gates, tcs, h_prev, c_prev)


def lstm_backward(dhs, cache):
    """Return ``(dX, dWx, dWh, db)`` given the gradient w.r.t. every output state."""
    X, Wx, Wh, gates, tcs, h_prev, c_prev = cache
    B, T, H = dhs.shape
    dpre = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g = gates[:, t]
        i, f, o, cand = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = tcs[:, t]
        dh = dhs[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = dpre[:, t]
        da[:, :H] = dc * cand * i * (1.0 - i)
        da[:, H:2 * H] = dc * c_prev[:, t] * f * (1.0 - f)
        da[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        da[:, 3 * H:] = dc * i * (1.0 - cand * cand)
        dc_next = dc * f
        dh_next = da @ Wh.T
    dWh = np.einsum("bth,btk->hk", h_prev, dpre)
    dWx = np.einsum("btd,btk->dk", X, dpre)
    db = dpre.sum(axis=(0, 1))
    dX = dpre @ Wx.T
    return dX, dWx, dWh, db


# -- bidirectional encoder ----------------------------------------------------

def _pad(id_seqs):
    lengths = np.array([len(s) for s in id_seqs], dtype=np.int64)
    if lengths.size == 0 or lengths.min() < 1:
        raise ShapeError("cannot encode an empty token sequence")
    B, T = len(id_seqs), int(lengths.max())
    ids = np.zeros((B, T), dtype=np.int64)
    for k, s in enumerate(id_seqs):
        ids[k, :len(s)] = s
    mask = np.arange(T)[None, :] < lengths[:, None]
    # reversal within each sequence's own length; padding maps to itself
    t = np.arange(T)[None, :]
    rev = np.where(mask, lengths[:, None] - 1 - t, t)
    return ids, lengths, mask, rev


def encode_batch(id_seqs: Sequence[np.ndarray], params: ScorerParams):
    """Encode several sequences at once; returns ``(states, mask, cache)``.

    ``states[b, t]`` is the forward state at ``t`` concatenated with the
    backward state at ``t``; entries past a sequence's length are garbage
    and masked out by ``mask``.
    """
    ids, lengths, mask, rev = _pad(id_seqs)
    E = params["embedding"]
    if ids.max() >= E.shape[0] or ids.min() < 0:
        raise ShapeError("token id outside the embedding table")
    X = E[ids]
    rows = np.arange(len(id_seqs))[:, None]
    hf, cache_f = lstm_forward(X, params["fwd_Wx"], params["fwd_Wh"], params["fwd_b"])
    hb_rev, cache_b = lstm_forward(X[rows, rev], params["bwd_Wx"], params["bwd_Wh"], params["bwd_b"])
    states = np.concatenate([hf, hb_rev[rows, rev]], axis=2)
    return states, mask, (ids, rev, cache_f, cache_b)


def encode_batch_backward(dstates, cache, params: ScorerParams):
    ids, rev, cache_f, cache_b = cache
    H = params.hidden
    rows = np.arange(ids.shape[0])[:, None]
    dX_f, dWx, dWh, db = lstm_backward(dstates[:, :, :H], cache_f)
    grads = params.groups
    grads["fwd_Wx"].gradient += dWx
    grads["fwd_Wh"].gradient += dWh
    grads["fwd_b"].gradient += db
    dX_b_rev, dWx, dWh, db = lstm_backward(dstates[:, :, H:][rows, rev], cache_b)
    grads["bwd_Wx"].gradient += dWx
    grads["bwd_Wh"].gradient += dWh
    grads["bwd_b"].gradient += db
    dX = dX_f + dX_b_rev[rows, rev]
    np.add.at(grads["embedding"].gradient, ids.reshape(-1), dX.reshape(-1, dX.shape[-1]))


def encode_sequence(tokens, params: ScorerParams) -> np.ndarray:
    """(T, 2H) array of bidirectional token vectors for one sequence."""
    ids = params.ids(tokens)
    if ids.size == 0:
        raise ShapeError("cannot encode an empty token sequence")
    states, _, _ = encode_batch([ids], params)
    return states[0]


def pool_average(hidden_states) -> np.ndarray:
    hs = np.asarray(hidden_states, dtype=np.float64)
    if hs.ndim != 2 or hs.shape[0] == 0:
        raise ShapeError("pool_average needs a nonempty list of vectors")
    return hs.mean(axis=0)


@dataclass
class AttentionTrace:
    m_vectors: np.ndarray
    weights: np.ndarray
    updated_tokens: np.ndarray


def attend(hidden_y, X_vec, params: ScorerParams):
    """Unbatched attention over one Y sequence; returns ``(Y_vec, trace)``."""
    hy = np.asarray(hidden_y, dtype=np.float64)
    X_vec = np.asarray(X_vec, dtype=np.float64)
    if hy.ndim != 2 or hy.shape[0] == 0:
        raise ShapeError("attend needs a nonempty list of token vectors")
    if hy.shape[1] != params["W_a"].shape[1] or X_vec.shape != (params["W_q"].shape[1],):
        raise ShapeError("token or sentence vector length does not match W_a/W_q")
    m = np.tanh(hy @ params["W_a"].T + params["W_q"] @ X_vec)
    o = softmax(m @ params["w_ms"])
    updated = hy * o[:, None]
    return pool_average(updated), AttentionTrace(m, o, updated)


def _cosine(X, Y):
    nx = np.linalg.norm(X)
    ny = np.linalg.norm(Y)
    if nx <= NORM_EPS or ny <= NORM_EPS:
        raise DegenerateVectorError("zero-norm sentence vector; cosine undefined")
    # rounding can push |cos| a hair past 1
    return float(np.clip(X @ Y / (nx * ny), -1.0, 1.0)), nx, ny


@dataclass
class ScoreResult:
    scores: np.ndarray
    traces: list = field(default_factory=list)
    cache: tuple | None = None


def score_candidates(x_tokens, y_candidates, params: ScorerParams, attention_on: bool = True,
                     keep_cache: bool = False) -> ScoreResult:
    """Cosine scores of one X sequence against each Y candidate."""
    x_ids = params.ids(x_tokens)
    y_ids = [params.ids(y) for y in y_candidates]
    if not y_ids:
        raise ShapeError("no Y candidates to score")
    states, mask, enc_cache = encode_batch([x_ids] + y_ids, params)
    Lx = len(x_ids)
    X = states[0, :Lx].mean(axis=0)
    Hy = states[1:]
    my = mask[1:]
    Ly = my.sum(axis=1).astype(np.float64)
    n = len(y_ids)

    if attention_on:
        W_a, W_q, w_ms = params["W_a"], params["W_q"], params["w_ms"]
        m = np.tanh(Hy @ W_a.T + (W_q @ X)[None, None, :])
        z = np.where(my, m @ w_ms, -np.inf)
        z = z - z.max(axis=1, keepdims=True)
        o = np.where(my, np.exp(z), 0.0)
        o /= o.sum(axis=1, keepdims=True)
        Y = np.einsum("nt,ntk->nk", o, Hy) / Ly[:, None]
    else:
        m = o = None
        Y = np.einsum("nt,ntk->nk", my.astype(np.float64), Hy) / Ly[:, None]

    scores = np.empty(n)
    norms = np.empty((n, 2))
    for j in range(n):
        scores[j], norms[j, 0], norms[j, 1] = _cosine(X, Y[j])

    traces = []
    for j in range(n):
        L = int(Ly[j])
        if attention_on:
            w = o[j, :L].copy()
            traces.append(AttentionTrace(m[j, :L].copy(), w, Hy[j, :L] * w[:, None]))
        else:
            traces.append(None)

    cache = None
    if keep_cache:
        cache = (enc_cache, states, mask, Lx, X, Hy, my, Ly, m, o, Y, scores, norms, attention_on)
    return ScoreResult(scores, traces, cache)


def score_candidates_backward(result: ScoreResult, dscores, params: ScorerParams) -> None:
    """Accumulate d(loss)/d(params) into ``params`` gradients given d(loss)/d(scores)."""
    enc_cache, states, mask, Lx, X, Hy, my, Ly, m, o, Y, scores, norms, attention_on = result.cache
    ds = np.asarray(dscores, dtype=np.float64)
    nx = norms[0, 0]
    ny = norms[:, 1]
    # cosine: d s / dX = Y/(|X||Y|) - s X/|X|^2, symmetric in Y
    dX = ((ds / (nx * ny))[:, None] * Y).sum(axis=0) - (ds * scores).sum() * X / (nx * nx)
    dY = (ds / (nx * ny))[:, None] * X[None, :] - (ds * scores / (ny * ny))[:, None] * Y

    dstates = np.zeros_like(states)
    if attention_on:
        W_a, W_q, w_ms = params["W_a"], params["W_q"], params["w_ms"]
        dYs = dY / Ly[:, None]
        dstates[1:] += o[:, :, None] * dYs[:, None, :]
        do = np.einsum("ntk,nk->nt", Hy, dYs)
        dz = o * (do - (o * do).sum(axis=1, keepdims=True))
        dz = np.where(my, dz, 0.0)
        groups = params.groups
        groups["w_ms"].gradient += np.einsum("nt,nta->a", dz, m)
        du = dz[:, :, None] * w_ms[None, None, :] * (1.0 - m * m)
        groups["W_a"].gradient += np.einsum("nta,ntk->ak", du, Hy)
        du_sum = du.sum(axis=(0, 1))
        groups["W_q"].gradient += np.outer(du_sum, X)
        dstates[1:] += du @ W_a
        dX = dX + W_q.T @ du_sum
    else:
        dstates[1:] += my[:, :, None] * (dY / Ly[:, None])[:, None, :]
    dstates[0, :Lx] += dX / Lx
    encode_batch_backward(dstates, enc_cache, params)


def score_pair(x_tokens, y_tokens, params: ScorerParams, attention_on: bool = True):
    """Cosine match of two sequences; returns ``(score, trace)``."""
    res = score_candidates(x_tokens, [y_tokens], params, attention_on)
    return float(res.scores[0]), res.traces[0]
