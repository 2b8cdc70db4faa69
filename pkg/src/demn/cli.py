"""``demn`` command line: data generation, training, evaluation, ablation."""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import plotting
from .config import RunConfig, resolve
from .corpus import generate_corpus, load_corpus, write_corpus
from .embedder import RETRIEVED, load_embedder, save_embedder
from .errors import ContractError, DEMNError
from .evaluation import ablation_report, evaluate, write_predictions
from .gradcheck import run_gradcheck
from .pipeline import description_pool, embedder_accuracy, fit_embedder, make_splits, memory_for, train_and_evaluate
from .qa import ALL_MODES, AblationMode, answer_question, load_qa, save_qa, train_qa


def _dims(text: str):
    try:
        dv, dl, de = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--dims expects dv,dl,de, got {text!r}") from None
    return dv, dl, de


def _modes(text: str):
    if text.strip().lower() == "all":
        return list(ALL_MODES)
    try:
        return [AblationMode.parse(t) for t in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _mode(text: str) -> str:
    try:
        return AblationMode.parse(text).value
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value file (overridden by flags)")
    common.add_argument("--seed", type=int)
    common.add_argument("--corpus")
    common.add_argument("--ckpt-embed", dest="ckpt_embed")
    common.add_argument("--ckpt-qa", dest="ckpt_qa")
    common.add_argument("--mode", type=_mode)
    common.add_argument("--attention", choices=("on", "off"))
    common.add_argument("--epochs", type=int, help="epochs for the stage being trained")
    common.add_argument("--lr", type=float, help="learning rate for the stage being trained")
    common.add_argument("--negatives", type=int)
    common.add_argument("--dims", type=_dims, help="dim_v,dim_l,dim_e")
    common.add_argument("--report", help="report path; figures and records are written beside it")

    p = argparse.ArgumentParser(prog="demn", description="Story memory QA over synthetic video episodes.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate a synthetic corpus")
    g.add_argument("--episodes", type=int)
    g.add_argument("--pairs", type=int)
    g.add_argument("--questions", type=int)

    sub.add_parser("train-embedder", parents=[common], help="two-phase scene/dialogue/description embedding")
    sub.add_parser("train-qa", parents=[common], help="train story and answer selection")

    e = sub.add_parser("eval", parents=[common], help="evaluate a QA checkpoint")
    e.add_argument("--split", default="test", choices=("train", "val", "test", "all"))

    a = sub.add_parser("answer", parents=[common], help="answer one question with attention traces")
    a.add_argument("--question", required=True, help="question id, e.g. ep0042-q1")

    gc = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient self-check")
    gc.add_argument("--configs", type=int, default=20)

    ab = sub.add_parser("ablate", parents=[common], help="train and evaluate across ablation modes")
    ab.add_argument("--modes", type=_modes, default=list(ALL_MODES), help="'all' or comma-separated modes")
    ab.add_argument("--seeds", type=int, default=1, help="number of seeds, counting up from --seed")
    ab.add_argument("--split", default="test", choices=("val", "test"))
    return p


def _overrides(args) -> dict:
    ov = {k: getattr(args, k, None) for k in ("seed", "corpus", "ckpt_embed", "ckpt_qa", "mode", "negatives",
                                              "report", "episodes", "pairs", "questions")}
    if args.attention is not None:
        ov["attention"] = args.attention == "on"
    if args.dims is not None:
        ov["dim_v"], ov["dim_l"], ov["dim_e"] = args.dims
    stage = "embed" if args.command == "train-embedder" else "qa"
    ov[f"epochs_{stage}"] = args.epochs
    ov[f"lr_{stage}"] = args.lr
    return ov


def _side(report: str, suffix: str) -> Path:
    return Path(report).with_suffix(suffix)


def _load_corpus(cfg: RunConfig):
    episodes = load_corpus(cfg.corpus)
    dims = (cfg.dim_v, cfg.dim_l, cfg.dim_e)
    got = episodes[0].pairs[0]
    found = (got.scene_feature.size, got.dialogue_feature.size, got.description_feature.size)
    if found != dims:
        # the corpus is authoritative for feature sizes
        cfg = cfg.replace(dim_v=found[0], dim_l=found[1], dim_e=found[2])
    return episodes, cfg


def _embedder_if_needed(mode: AblationMode, cfg: RunConfig, splits, required: bool = True):
    if mode.description_source != RETRIEVED:
        return None, None
    pool = description_pool(splits, cfg.pool)
    if Path(cfg.ckpt_embed).exists():
        return load_embedder(cfg.ckpt_embed), pool
    if required:
        raise ContractError(f"mode {mode} needs an embedder checkpoint at {cfg.ckpt_embed} (run train-embedder)")
    params, _ = fit_embedder(splits, cfg.embedder())
    return params, pool


def cmd_gen_data(cfg: RunConfig, args) -> int:
    episodes = generate_corpus(cfg.seed, cfg.episodes, cfg.pairs, cfg.questions, cfg.features())
    write_corpus(episodes, cfg.corpus, cfg.hash())
    n_q = sum(len(e.qa_items) for e in episodes)
    print(f"gen-data\tepisodes={len(episodes)}\tpairs={sum(len(e.pairs) for e in episodes)}\t"
          f"questions={n_q}\tpath={cfg.corpus}\tconfig={cfg.hash()}")
    return 0


def _write_loss_report(cfg, curves: dict, title: str, summary: str):
    if not cfg.report:
        return
    Path(cfg.report).write_text(f"# config={cfg.hash()}\n{summary}\n", encoding="utf-8")
    lines = [f"# config={cfg.hash()}", "curve,epoch,loss"]
    for name, values in curves.items():
        lines += [f"{name},{i + 1},{v!r}" for i, v in enumerate(values)]
    _side(cfg.report, ".csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    plotting.plot_loss_curves(curves, _side(cfg.report, ".png"), title)


def cmd_train_embedder(cfg: RunConfig, args) -> int:
    episodes, cfg = _load_corpus(cfg)
    splits = make_splits(episodes)
    t0 = time.perf_counter()
    params, log = fit_embedder(splits, cfg.embedder())
    save_embedder(params, cfg.ckpt_embed, cfg.hash())
    train_acc, held_acc = embedder_accuracy(params, splits)
    held = "n/a" if held_acc is None else f"{held_acc:.4f}"
    summary = (f"train-embedder\ttrain_top1={train_acc:.4f}\theldout_top1={held}\t"
               f"phase1_loss={log['phase1'][-1] if log['phase1'] else float('nan'):.4f}\t"
               f"phase2_loss={log['phase2'][-1] if log['phase2'] else float('nan'):.4f}\t"
               f"seconds={time.perf_counter() - t0:.1f}\tpath={cfg.ckpt_embed}\tconfig={cfg.hash()}")
    print(summary)
    _write_loss_report(cfg, {"M1": log["phase1"], "M2": log["phase2"]}, "embedder hinge loss", summary)
    return 0


def cmd_train_qa(cfg: RunConfig, args) -> int:
    episodes, cfg = _load_corpus(cfg)
    splits = make_splits(episodes)
    mode = cfg.ablation_mode
    embedder, pool = _embedder_if_needed(mode, cfg, splits)
    t0 = time.perf_counter()
    model, log = train_qa(splits.train, cfg.qa(), mode, embedder, pool)
    save_qa(model, cfg.ckpt_qa, mode, cfg.hash())
    mem = memory_for(mode, splits.val, embedder, pool)
    val, _ = evaluate(model, splits.val, mem, mode) if splits.val else (None, None)
    val_txt = "n/a" if val is None else f"{val.accuracy:.4f}"
    summary = (f"train-qa\tmode={mode}\tattention={'on' if cfg.attention else 'off'}\tepochs={len(log)}\t"
               f"final_loss={log[-1] if log else float('nan'):.4f}\tval_accuracy={val_txt}\t"
               f"seconds={time.perf_counter() - t0:.1f}\tpath={cfg.ckpt_qa}\tconfig={cfg.hash()}")
    print(summary)
    _write_loss_report(cfg, {f"{mode} joint": log}, "QA joint hinge loss", summary)
    return 0


def _load_model(cfg: RunConfig, args):
    model, saved_mode = load_qa(cfg.ckpt_qa)
    # an explicit --mode wins; otherwise use the mode the checkpoint was trained in
    mode = AblationMode.parse(args.mode) if args.mode else (saved_mode or cfg.ablation_mode)
    return model, mode


def cmd_eval(cfg: RunConfig, args) -> int:
    episodes, cfg = _load_corpus(cfg)
    splits = make_splits(episodes)
    model, mode = _load_model(cfg, args)
    att = model.attention if args.attention is None else cfg.attention
    embedder, pool = _embedder_if_needed(mode, cfg, splits)
    target = splits.get(args.split)
    metrics, preds = evaluate(model, target, memory_for(mode, target, embedder, pool), mode, att)
    mrr_txt = "n/a" if metrics.mrr is None else f"{metrics.mrr:.4f}"
    print(f"eval\tsplit={args.split}\tmode={mode}\tattention={'on' if att else 'off'}\t"
          f"questions={metrics.n_questions}\taccuracy={metrics.accuracy:.4f}\tmrr={mrr_txt}\tconfig={cfg.hash()}")
    if cfg.report:
        write_predictions(preds, _side(cfg.report, ".csv"), cfg.hash())
        table = ablation_report([metrics])
        Path(cfg.report).write_text(f"# config={cfg.hash()}\n{table.text}", encoding="utf-8")
        plotting.plot_ablation(table.records, _side(cfg.report, ".png"))
    return 0


def cmd_answer(cfg: RunConfig, args) -> int:
    episodes, cfg = _load_corpus(cfg)
    splits = make_splits(episodes)
    model, mode = _load_model(cfg, args)
    att = model.attention if args.attention is None else cfg.attention
    ep_id = args.question.rsplit("-q", 1)[0]
    ep = next((e for e in episodes if e.id == ep_id), None)
    qa = next((q for q in ep.qa_items if q.id == args.question), None) if ep else None
    if qa is None:
        raise ContractError(f"no question {args.question!r} in {cfg.corpus}")
    embedder, pool = _embedder_if_needed(mode, cfg, splits)
    pred = answer_question(ep, qa, memory_for(mode, [ep], embedder, pool), model, mode, att)
    print(f"question\t{' '.join(qa.question)}")
    if pred.story_index is not None:
        print(f"story\t{pred.story_index}\t(gold {pred.gold_story}, rank {pred.story_rank})")
    print(f"fused\t{' '.join(pred.fused_sequence)}")
    for r, (ans, s) in enumerate(zip(qa.answers, pred.answer_scores)):
        mark = "*" if r == pred.answer_index else " "
        gold = "gold" if r == pred.gold_answer else ""
        print(f"{mark} a{r}\t{s:+.4f}\t{' '.join(ans)}\t{gold}")
        if att and pred.answer_traces:
            w = pred.answer_traces[r].weights
            print("\tattention\t" + " ".join(f"{t}:{x:.2f}" for t, x in zip(ans, w)))
    print(f"answer\tcorrect={pred.correct}\tconfig={cfg.hash()}")
    return 0


def cmd_grad_check(cfg: RunConfig, args) -> int:
    report = run_gradcheck(cfg.seed, args.configs)
    print(f"# config={cfg.hash()}\tconfigurations={report.n_configs}")
    print("group\tmax_rel_error\tstatus")
    for line in report.lines():
        print(line)
    print(f"grad-check\tmax={report.max_error:.3e}\t{'PASS' if report.passed else 'FAIL'}")
    return 0 if report.passed else 1


def cmd_ablate(cfg: RunConfig, args) -> int:
    episodes, cfg = _load_corpus(cfg)
    splits = make_splits(episodes)
    variants = [cfg.attention] if args.attention is not None else [False, True]
    needs_embedder = any(m.description_source == RETRIEVED for m in args.modes)
    embedder = pool = None
    if needs_embedder:
        embedder, pool = _embedder_if_needed(AblationMode.QV, cfg, splits, required=False)
    results, failures = [], 0
    for seed in range(cfg.seed, cfg.seed + args.seeds):
        for att in variants:
            for mode in args.modes:
                t0 = time.perf_counter()
                try:
                    run = train_and_evaluate(splits, mode, cfg.qa(attention=att, seed=seed), embedder, pool, args.split)
                except DEMNError as exc:
                    failures += 1
                    print(f"ablate\tseed={seed}\tmode={mode}\tattention={'on' if att else 'off'}\tERROR\t{exc}",
                          file=sys.stderr)
                    continue
                m = run.metrics
                results.append(m)
                print(f"ablate\tseed={seed}\tmode={mode}\tattention={'on' if att else 'off'}\t"
                      f"accuracy={m.accuracy:.4f}\tmrr={'n/a' if m.mrr is None else f'{m.mrr:.4f}'}\t"
                      f"seconds={time.perf_counter() - t0:.1f}", flush=True)
    if not results:
        raise ContractError("every ablation run failed")
    table = ablation_report(results)
    print(table.text, end="")
    report = cfg.report or "ablation.txt"
    Path(report).write_text(f"# config={cfg.hash()}\n{table.text}", encoding="utf-8")
    _side(report, ".csv").write_text(f"# config={cfg.hash()}\n{table.csv()}", encoding="utf-8")
    plotting.plot_ablation(table.records, _side(report, ".png"))
    print(f"ablate\trows={len(table.records)}\treport={report}\tconfig={cfg.hash()}")
    return 1 if failures else 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-embedder": cmd_train_embedder,
    "train-qa": cmd_train_qa,
    "eval": cmd_eval,
    "answer": cmd_answer,
    "grad-check": cmd_grad_check,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args.config, _overrides(args))
    except (ValueError, OSError, DEMNError) as exc:
        parser.print_usage(sys.stderr)
        print(f"demn: error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg, args)
    except (DEMNError, OSError, ValueError) as exc:
        print(f"demn {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
