"""Finite-difference self-check of every hand-derived gradient."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Vocab
from .embedder import hinge_rank_loss
from .numcore import finite_diff_grad, relative_error
from .qa import QAModelParams, Triplets, hinge_terms, joint_loss
from .scorer import PARAM_NAMES, init_scorer, score_candidates

TOLERANCE = 1e-4


@dataclass
class GradCheckReport:
    errors: dict       # group name -> max relative error over configurations
    n_configs: int

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE

    def lines(self) -> list[str]:
        return [f"{name}\t{err:.3e}\t{'ok' if err < TOLERANCE else 'FAIL'}" for name, err in self.errors.items()]


def _hinge_errors(rng, eps):
    """Hinge loss for one random matrix with margins kept away from the kink."""
    dv, dl = rng.integers(2, 7, size=2)
    M = rng.normal(size=(dv, dl))
    a = rng.normal(size=dv)
    p = rng.normal(size=dl)
    negs = rng.normal(size=(int(rng.integers(1, 5)), dl))
    gamma = 1.0
    margins = gamma - (a @ M) @ p + negs @ (a @ M)
    # nudge any margin sitting near zero so the numeric derivative is smooth
    for j in np.flatnonzero(np.abs(margins) < 0.05):
        negs[j] += 0.2 * np.sign(margins[j] or 1.0) * (a @ M) / max(np.linalg.norm(a @ M) ** 2, 1e-9)
    _, grad = hinge_rank_loss(a, p, negs, M, gamma)
    num = finite_diff_grad(lambda: hinge_rank_loss(a, p, negs, M, gamma)[0], [M], eps)[0]
    return relative_error(grad, num)


def _random_model(rng, vocab_size, d_emb, hidden, attention):
    vocab = Vocab([f"w{i}" for i in range(vocab_size - 3)])
    seed = int(rng.integers(1 << 30))
    g = init_scorer(vocab_size, d_emb, hidden, seed=seed, vocab=vocab, emb_scale=1.0)
    h = init_scorer(vocab_size, d_emb, hidden, seed=seed + 1, vocab=vocab, emb_scale=1.0)
    # bias terms start at fixed values; randomize them so their gradients are exercised
    for sp in (g, h):
        for name in ("fwd_b", "bwd_b"):
            sp[name][...] = rng.normal(0.0, 0.5, size=sp[name].shape)
    return QAModelParams(g, h, vocab, 1.0, 1.0, attention, "story")


def _random_triplets(rng, vocab_size, max_len=6):
    def seq():
        return rng.integers(3, vocab_size, size=int(rng.integers(1, max_len + 1)))
    n_stories = int(rng.integers(2, 5))
    gold_s = int(rng.integers(n_stories))
    gold_a = int(rng.integers(5))
    q = seq()
    fused = seq()
    return Triplets(
        [(q, seq(), int(i == gold_s)) for i in range(n_stories)],
        [(fused, seq(), int(r == gold_a)) for r in range(5)],
    )


def _joint_errors(rng, eps, attention):
    H = int(rng.integers(2, 9))
    d = int(rng.integers(2, 7))
    V = 12
    model = _random_model(rng, V, d, H, attention)
    # large margins keep every hinge term active and away from its kink
    model.gamma_s = model.gamma_a = 10.0
    tr = _random_triplets(rng, V)
    model.zero_grad()
    joint_loss(tr, model, attention, backward=True)
    # a G parameter only moves the story term and an H parameter only the answer term
    parts = {"G": (model.g_params, tr.story, model.gamma_s), "H": (model.h_params, tr.answer, model.gamma_a)}
    out = {}
    for tag, (sp, trip, gamma) in parts.items():
        gold = [t[2] for t in trip].index(1)

        def part_loss():
            res = score_candidates(trip[0][0], [t[1] for t in trip], sp, attention)
            return hinge_terms(res.scores, gold, gamma)[0]

        for name in PARAM_NAMES:
            if not attention and name in ("W_a", "W_q", "w_ms"):
                continue
            grp = sp.groups[name]
            analytic = grp.gradient.copy()
            num = finite_diff_grad(part_loss, [grp.value], eps)[0]
            out[f"{tag}/{name}"] = relative_error(analytic, num)
    model.zero_grad()
    return out


def run_gradcheck(seed: int = 7, n_configs: int = 20, eps: float = 1e-5) -> GradCheckReport:
    """Check the embedder hinge loss and the joint QA loss on ``n_configs`` random setups.

    Every other configuration runs with attention off, so both scorer
    paths are covered.
    """
    rng = np.random.default_rng([seed, 99])
    errors: dict[str, float] = {}

    def keep(name, err):
        errors[name] = max(errors.get(name, 0.0), err)

    for k in range(n_configs):
        keep("M1", _hinge_errors(rng, eps))
        keep("M2", _hinge_errors(rng, eps))
        for name, err in _joint_errors(rng, eps, attention=(k % 2 == 0)).items():
            keep(name, err)
    return GradCheckReport(errors, n_configs)
