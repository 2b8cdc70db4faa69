"""Accuracy, MRR, prediction dumps and ablation tables."""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import Episode
from .errors import ContractError, ParseError, ShapeError
from .memory import StoryMemory
from .qa import ALL_MODES, AblationMode, Prediction, QAModelParams, answer_question, episode_views


def accuracy(predicted: Sequence[int], gold: Sequence[int]) -> float:
    if len(predicted) != len(gold):
        raise ShapeError(f"{len(predicted)} predictions vs {len(gold)} gold labels")
    if not predicted:
        raise ShapeError("accuracy of an empty prediction list")
    return sum(int(p == g) for p, g in zip(predicted, gold)) / len(predicted)


def mrr(story_ranks: Sequence[int]) -> float:
    if not story_ranks:
        raise ShapeError("MRR of an empty rank list")
    if any(r < 1 for r in story_ranks):
        raise ContractError("ranks are 1-based")
    return sum(1.0 / r for r in story_ranks) / len(story_ranks)


@dataclass
class Metrics:
    accuracy: float
    mrr: float | None
    n_questions: int
    mode: AblationMode
    seed: int | None = None
    attention: bool | None = None


def metrics_from_predictions(preds: Sequence[Prediction], mode: AblationMode, seed=None, attention=None) -> Metrics:
    acc = accuracy([p.answer_index for p in preds], [p.gold_answer for p in preds])
    ranks = [p.story_rank for p in preds if p.story_rank is not None]
    return Metrics(acc, mrr(ranks) if (mode.has_story and ranks) else None, len(preds), mode, seed, attention)


def eval_threads() -> int:
    try:
        return max(1, int(os.environ.get("DEMN_THREADS", "1")))
    except ValueError:
        return 1


def predict_all(model: QAModelParams, episodes: Sequence[Episode], mem: StoryMemory | None,
                mode: AblationMode, attention_on: bool | None = None) -> list[Prediction]:
    """Answer every question in ``episodes``; output order is corpus order regardless of threading."""
    jobs = []
    for ep in episodes:
        views = episode_views(ep, mode, mem)
        jobs += [(ep, qa, views) for qa in ep.qa_items]

    def run(job):
        ep, qa, views = job
        return answer_question(ep, qa, mem, model, mode, attention_on, views=views)

    threads = eval_threads()
    if threads == 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, jobs))


def evaluate(model: QAModelParams, episodes: Sequence[Episode], mem: StoryMemory | None,
             mode: AblationMode, attention_on: bool | None = None, seed=None):
    """Return ``(Metrics, predictions)``; MRR is None for the question-only mode."""
    preds = predict_all(model, episodes, mem, mode, attention_on)
    att = model.attention if attention_on is None else attention_on
    return metrics_from_predictions(preds, mode, seed, att), preds


# -- prediction dump -----------------------------------------------------------

DUMP_FIELDS = ("episode_id", "question_id", "mode", "story_index", "answer_index",
               "gold_story", "gold_answer", "story_rank")


def write_predictions(preds: Sequence[Prediction], path, config_hash: str = "") -> None:
    buf = io.StringIO()
    buf.write(f"# config={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DUMP_FIELDS)
    for p in preds:
        w.writerow([
            p.episode_id, p.question_id, p.mode.value,
            "" if p.story_index is None else p.story_index, p.answer_index,
            p.gold_story, p.gold_answer, "" if p.story_rank is None else p.story_rank,
        ])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


@dataclass
class DumpRow:
    episode_id: str
    question_id: str
    mode: AblationMode
    story_index: int | None
    answer_index: int
    gold_story: int
    gold_answer: int
    story_rank: int | None


def read_predictions(path) -> list[DumpRow]:
    rows = []
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    body = [(i, l) for i, l in enumerate(lines, start=1) if not l.startswith("#")]
    if not body or tuple(next(csv.reader([body[0][1]]))) != DUMP_FIELDS:
        raise ParseError("missing prediction-dump column header", body[0][0] if body else 1, path)

    def opt(x):
        return None if x == "" else int(x)

    for lineno, line in body[1:]:
        f = next(csv.reader([line]))
        if len(f) != len(DUMP_FIELDS):
            raise ParseError(f"expected {len(DUMP_FIELDS)} fields, got {len(f)}", lineno, path)
        try:
            rows.append(DumpRow(f[0], f[1], AblationMode.parse(f[2]), opt(f[3]), int(f[4]),
                                int(f[5]), int(f[6]), opt(f[7])))
        except ValueError as exc:
            raise ParseError(str(exc), lineno, path) from None
    return rows


def metrics_from_dump(rows: Sequence[DumpRow]) -> Metrics:
    if not rows:
        raise ShapeError("empty prediction dump")
    mode = rows[0].mode
    acc = accuracy([r.answer_index for r in rows], [r.gold_answer for r in rows])
    ranks = [r.story_rank for r in rows if r.story_rank is not None]
    return Metrics(acc, mrr(ranks) if (mode.has_story and ranks) else None, len(rows), mode)


# -- ablation tables -------------------------------------------------------------

def variant_name(attention: bool) -> str:
    return "DEMN" if attention else "DEMN w/o attn."


@dataclass
class AblationTable:
    records: list      # one dict per (variant, mode[, seed])
    text: str

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "mode", "seed", "n_questions", "accuracy", "mrr"])
        for r in self.records:
            w.writerow([r["variant"], r["mode"], "" if r["seed"] is None else r["seed"], r["n_questions"],
                        repr(r["accuracy"]), "" if r["mrr"] is None else repr(r["mrr"])])
        return buf.getvalue()


def _cell(acc, mrr_value):
    s = f"{100.0 * acc:.1f}"
    if mrr_value is not None:
        s += f" ({mrr_value:.2f})"
    return s


def ablation_report(results: Sequence[Metrics], title: str = "Accuracies(%) with MRR in parentheses") -> AblationTable:
    """Records for every result plus a text table with Q ... Q+L+V+E as columns.

    Results sharing (variant, mode) across seeds are averaged in the text table.
    """
    if not results:
        raise ContractError("ablation report needs at least one evaluated mode")
    records = [
        {"variant": variant_name(bool(m.attention)), "mode": m.mode.value, "seed": m.seed,
         "n_questions": m.n_questions, "accuracy": m.accuracy, "mrr": m.mrr}
        for m in results
    ]
    modes = [m for m in ALL_MODES if any(r.mode is m for r in results)]
    variants = [v for v in (variant_name(False), variant_name(True)) if any(r["variant"] == v for r in records)]
    cells = {}
    for v in variants:
        for mode in modes:
            rs = [r for r in records if r["variant"] == v and r["mode"] == mode.value]
            if not rs:
                cells[v, mode] = ""
                continue
            acc = sum(r["accuracy"] for r in rs) / len(rs)
            mrrs = [r["mrr"] for r in rs if r["mrr"] is not None]
            cells[v, mode] = _cell(acc, sum(mrrs) / len(mrrs) if mrrs else None)
    name_w = max(len("Method"), *(len(v) for v in variants))
    col_w = {m: max(len(m.value), *(len(cells[v, m]) for v in variants)) for m in modes}
    lines = [title]
    lines.append("  ".join(["Method".ljust(name_w)] + [m.value.rjust(col_w[m]) for m in modes]))
    for v in variants:
        lines.append("  ".join([v.ljust(name_w)] + [cells[v, m].rjust(col_w[m]) for m in modes]))
    return AblationTable(records, "\n".join(lines) + "\n")
