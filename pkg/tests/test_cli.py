import json

import pytest

from multitune.cli import build_parser, main
from multitune.data.corpus import save_corpus

from conftest import tiny_run_config, toy_setup


@pytest.fixture
def corpus_dir(tmp_path):
    corpora, _, _ = toy_setup(("aa", "bb"), n_train=4)
    return save_corpus(tmp_path / "corpus", list(corpora.values()))


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--help"])
    out = capsys.readouterr().out
    for cmd in ("tokenizer-train", "train", "generate", "score", "exp1", "exp2", "exp3", "report"):
        assert cmd in out


@pytest.mark.parametrize("strategy", ["PLF", "MPS_adapter"])
def test_train_generate_score_chain(tmp_path, corpus_dir, strategy, capsys):
    tok = tmp_path / "tok.txt"
    assert main(["tokenizer-train", "--corpus", str(corpus_dir), "--vocab-size", "300", "--out", str(tok)]) == 0
    run = tmp_path / "run"
    overrides = ["max_src_len=40", "max_tgt_len=12", "adapter_dim=2"]
    args = ["train", "--corpus", str(corpus_dir), "--tokenizer", str(tok), "--strategy", strategy,
            "--epochs", "1", "--batch-size", "2", "--out", str(run)]
    for o in overrides:
        args += ["--set", o]
    assert main(args) == 0
    expected = ["aa.ckpt", "bb.ckpt"] if strategy == "PLF" else ["aa.private.ckpt", "bb.private.ckpt", "model.ckpt"]
    assert sorted(p.name for p in run.glob("*.ckpt")) == expected
    assert json.loads((run / "train_config.json").read_text())["strategy"]["kind"] == strategy
    gens = tmp_path / "gens.jsonl"
    assert main(["generate", "--corpus", str(corpus_dir), "--tokenizer", str(tok), "--run", str(run),
                 "--beam-size", "2", "--max-len", "6", "--max-src-len", "40", "--out", str(gens)]) == 0
    lines = [json.loads(l) for l in gens.read_text().splitlines()]
    assert len(lines) == 4 and set(lines[0]) == {"id", "lang", "hypothesis", "score", "truncated"}
    assert main(["score", str(gens), str(corpus_dir / "aa" / "test.jsonl"), "--out", str(tmp_path / "s.csv")]) == 0
    assert "average" in capsys.readouterr().out


def test_experiment_and_report_commands(tmp_path, capsys):
    cfg = tiny_run_config(tmp_path / "out", strategies=["PLF", "MPF"])
    path = tmp_path / "exp3.json"
    d = cfg.to_dict()
    d.pop("output_dir")
    path.write_text(json.dumps(d))
    assert main(["exp3", "--config", str(path), "--out", str(tmp_path / "out"), "--set", "max_test=1"]) == 0
    assert (tmp_path / "out" / "exp3" / "table3.csv").exists()
    assert main(["report", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "report.md").exists()


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["exp3", "--set", "bogus=1", "--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "empty")]) == 2
