import numpy as np
import pytest

from demn.cli import main
from demn.config import RunConfig, read_config_file, resolve
from demn.corpus import load_corpus
from demn.errors import ParseError
from demn.plotting import plot_ablation, plot_loss_curves


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# comment\nseed = 3\nlr_qa=0.05\nattention=off\nmode=Q+L\n")
    cfg = resolve(cfg_file, {"seed": 11, "mode": None})
    assert cfg.seed == 11          # flag beats file
    assert cfg.lr_qa == 0.05       # file beats default
    assert cfg.attention is False
    assert cfg.mode == "Q+L"
    assert cfg.epochs_qa == RunConfig().epochs_qa
    assert cfg.gamma_s == cfg.gamma_a == cfg.gamma_u == 1.0


def test_config_file_errors(tmp_path):
    (tmp_path / "a.cfg").write_text("nonsense\n")
    with pytest.raises(ParseError):
        read_config_file(tmp_path / "a.cfg")
    (tmp_path / "b.cfg").write_text("seed=1\nwho=me\n")
    with pytest.raises(ParseError) as err:
        read_config_file(tmp_path / "b.cfg")
    assert err.value.line == 2
    with pytest.raises(ValueError):
        RunConfig(mode="Q+Z")


def test_config_hash_ignores_paths():
    a = RunConfig()
    assert a.hash() == RunConfig(corpus="elsewhere.tsv", report="x.txt").hash()
    assert a.hash() != RunConfig(seed=8).hash()
    assert "seed=7" in a.to_text()


def test_gen_data(tmp_path, capsys):
    path = tmp_path / "c.tsv"
    code, out, _ = run(capsys, "gen-data", "--seed", "7", "--episodes", "30", "--corpus", str(path))
    assert code == 0
    assert len(load_corpus(path)) == 30
    assert "episodes=30" in out and "config=" in out
    assert "config=" in path.read_text().splitlines()[0]


def test_identical_commands_give_identical_artifacts(tmp_path, capsys):
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        assert run(capsys, "gen-data", "--episodes", "5", "--corpus", str(d / "c.tsv"))[0] == 0
        assert run(capsys, "train-embedder", "--epochs", "3", "--corpus", str(d / "c.tsv"),
                   "--ckpt-embed", str(d / "e.demn"), "--report", str(d / "e.txt"))[0] == 0
        assert run(capsys, "ablate", "--modes", "Q,Q+V", "--epochs", "1", "--corpus", str(d / "c.tsv"),
                   "--ckpt-embed", str(d / "e.demn"), "--report", str(d / "abl.txt"))[0] == 0
    for f in ("c.tsv", "e.demn", "e.csv", "e.png", "abl.txt", "abl.csv", "abl.png"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_pipeline_round_trip(tmp_path, capsys):
    c, e, q = tmp_path / "c.tsv", tmp_path / "e.demn", tmp_path / "q.demn"
    assert run(capsys, "gen-data", "--episodes", "10", "--corpus", str(c))[0] == 0
    code, out, _ = run(capsys, "train-embedder", "--epochs", "5", "--corpus", str(c), "--ckpt-embed", str(e))
    assert code == 0 and "train_top1=" in out
    code, out, _ = run(capsys, "train-qa", "--mode", "Q+L+V", "--epochs", "1", "--corpus", str(c),
                       "--ckpt-embed", str(e), "--ckpt-qa", str(q), "--report", str(tmp_path / "qa.txt"))
    assert code == 0 and "mode=Q+L+V" in out
    assert (tmp_path / "qa.png").stat().st_size > 0
    rep = tmp_path / "ev.txt"
    code, out, _ = run(capsys, "eval", "--corpus", str(c), "--ckpt-embed", str(e), "--ckpt-qa", str(q),
                       "--report", str(rep))
    assert code == 0 and "mode=Q+L+V" in out and "mrr=" in out
    dump = (tmp_path / "ev.csv").read_text().splitlines()
    assert dump[0].startswith("# config=") and dump[1].startswith("episode_id,question_id")
    assert len(dump) == 2 + 10  # two test episodes x five questions
    code, out, _ = run(capsys, "answer", "--question", "ep0009-q2", "--corpus", str(c), "--ckpt-embed", str(e),
                       "--ckpt-qa", str(q))
    assert code == 0 and "attention" in out and out.count(" a") >= 5


def test_usage_errors_exit_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["bogus"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["train-qa", "--mode", "Q+X"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["gen-data", "--dims", "1,2"])
    assert e.value.code == 2
    assert run(capsys, "gen-data", "--episodes", "0", "--corpus", str(tmp_path / "c.tsv"))[0] == 2
    assert run(capsys, "gen-data", "--config", str(tmp_path / "missing.cfg"))[0] == 2


def test_pipeline_failures_exit_1(tmp_path, capsys):
    code, _, err = run(capsys, "eval", "--corpus", str(tmp_path / "none.tsv"))
    assert code == 1 and "none.tsv" in err
    c = tmp_path / "c.tsv"
    run(capsys, "gen-data", "--episodes", "5", "--corpus", str(c))
    code, _, err = run(capsys, "train-qa", "--mode", "Q+V", "--corpus", str(c),
                       "--ckpt-embed", str(tmp_path / "nope.demn"))
    assert code == 1 and "train-embedder" in err


def test_grad_check_command(capsys):
    code, out, _ = run(capsys, "grad-check", "--configs", "2")
    assert code == 0
    rows = [l.split("\t") for l in out.splitlines() if l.startswith(("M1", "M2", "G/", "H/"))]
    assert {r[0] for r in rows} >= {"M1", "M2", "G/embedding", "H/w_ms", "G/W_q"}
    assert all(float(r[1]) < 1e-4 for r in rows)
    assert "PASS" in out


def test_plots_are_written(tmp_path):
    plot_loss_curves({"a": [3, 2, 1], "b": [2.5, 1.0]}, tmp_path / "l.png")
    recs = [{"variant": "DEMN", "mode": "Q", "accuracy": 0.4, "mrr": None},
            {"variant": "DEMN w/o attn.", "mode": "Q+L", "accuracy": 0.5, "mrr": 0.9}]
    plot_ablation(recs, tmp_path / "a.png")
    for f in ("l.png", "a.png"):
        assert (tmp_path / f).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
