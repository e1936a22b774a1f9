import csv
import json

import pytest

from multitune.errors import ConfigError
from multitune.experiments import (budget_check, exp1_schedule, load_run_config, prepare, report, run_exp1,
                                   run_exp2, run_exp3, score_files, train_config_for)
from multitune.model import ModelConfig
from multitune.strategies import Kind

from conftest import tiny_run_config


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_schedule_bookkeeping():
    cells = exp1_schedule(["xx"], [5, 50, 3000], ["prefix", "adapter"], [0, 1, 2])
    per = {(s, m): sum(1 for c in cells if c[1:3] == (s, m)) for s in (5, 50, 3000) for m in ("prefix", "adapter")}
    assert per == {(5, "prefix"): 3, (5, "adapter"): 3, (50, "prefix"): 3, (50, "adapter"): 3,
                   (3000, "prefix"): 1, (3000, "adapter"): 1}


def test_load_run_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"experiment": "exp1_scaling", "sizes": [5]}))
    cfg = load_run_config(p, ["train.epochs=2", "decode.beam_size=1", "max_test=3"], output_dir=str(tmp_path))
    assert cfg.train == {"epochs": 2} and cfg.decode["beam_size"] == 1 and cfg.max_test == 3
    assert cfg.config_hash() == load_run_config(p, ["train.epochs=2", "decode.beam_size=1", "max_test=3"],
                                                output_dir=str(tmp_path)).config_hash()
    for bad in (["bogus=1"], ["sizes=[7]"], ["experiment=\"exp9\""], ["noequals"]):
        with pytest.raises(ConfigError):
            load_run_config(p, bad)


def test_budget_check_default_config():
    b = budget_check(ModelConfig(), 45)
    assert 0.075 <= b["MPE_adapter"]["per_language"] <= 0.085
    assert 0.075 <= b["MPE_prefix"]["per_language"] <= 0.085
    assert 0.875 <= b["MPS_adapter"]["aggregate"] <= 0.925
    assert 0.875 <= b["MPS_prefix"]["aggregate"] <= 0.925


def test_train_config_for_presets(tmp_path):
    cfg = tiny_run_config(tmp_path, train={})
    tc = train_config_for(cfg, "prefix", 5, Kind.MPE_prefix)
    assert (tc.learning_rate, tc.batch_size, tc.prefix_len) == (3e-4, 2, None)  # dims solved from the budget
    tc = train_config_for(tiny_run_config(tmp_path, use_preset_dims=True), "adapter", 5000, Kind.MPS_adapter)
    assert tc.strategy.adapter_dim == 1200 and tc.epochs == 1  # run-level train overrides win


def test_prepare_is_cached(tmp_path):
    cfg = tiny_run_config(tmp_path)
    a = prepare(cfg)
    b = prepare(cfg)
    assert a.dir == b.dir and (a.dir / "base.ckpt").exists()
    assert a.base.hash_group("shared") == b.base.hash_group("shared")
    assert sorted(a.corpora) == ["grk", "lat_hi", "lat_lo"]


def test_exp1_tables(tmp_path):
    cfg = tiny_run_config(tmp_path, experiment="exp1_scaling", languages=["lat_hi"], strategies=["adapter", "plm"],
                          sizes=[5, 50])
    paths = run_exp1(cfg)
    scores = _rows(paths["scores"])
    assert scores[0] == ["lang", "size", "strategy", "seed", "R1", "R2", "RL"]
    assert len(scores) - 1 == 2 * (3 + 3)
    curves = _rows(paths["curves"])
    assert curves[0] == ["lang", "strategy", "size", "log10_size", "n_seeds", "R1", "R2", "RL"]
    assert {tuple(r[1:3]) + (r[4],) for r in curves[1:]} == {
        ("adapter", "5", "3"), ("adapter", "50", "3"), ("plm", "5", "3"), ("plm", "50", "3")}
    assert _rows(tmp_path / "exp1" / "failures.csv") == [["lang", "size", "strategy", "seed", "error"]]
    manifest = json.loads((tmp_path / "exp1" / "manifest.json").read_text())
    assert manifest["cells"] == 12 and manifest["seeds"] == [0, 1, 2]


def test_exp2_and_exp3_tables_deterministic(tmp_path):
    outs = []
    for run, workers in (("a", 1), ("b", 2)):
        d = tmp_path / run
        t1 = run_exp2(tiny_run_config(d, experiment="exp2_transfer", workers=workers))["table"]
        t3 = run_exp3(tiny_run_config(d, workers=workers))
        outs.append((t1.read_bytes(), t3["table"].read_bytes(), t3["delta_r2"].read_bytes()))
        r = report(d)
        assert "Supervised transfer" in r.read_text() and "Six settings" in r.read_text()
    assert outs[0] == outs[1]
    table1 = _rows(tmp_path / "a" / "exp2" / "table1.csv")
    assert table1[0][0] == "language" and len(table1[0]) == 13
    assert [r[0] for r in table1[1:]] == ["grk", "lat_lo"]
    table3 = _rows(tmp_path / "a" / "exp3" / "table3.csv")
    assert table3[0] == ["language", "PLF", "MPE_adapter", "MPE_prefix", "MPF", "MPS_adapter", "MPS_prefix"]
    assert [r[0] for r in table3[1:]] == ["grk", "lat_hi", "lat_lo", "average"]
    assert all(len(cell.split("/")) == 3 for r in table3[1:] for cell in r[1:])
    budget = json.loads((tmp_path / "a" / "exp3" / "budget.json").read_text())
    assert set(budget["run"]) == set(table3[0][1:])


def test_score_files(tmp_path):
    hyp = tmp_path / "h.jsonl"
    ref = tmp_path / "r.jsonl"
    hyp.write_text('{"id": "1", "lang": "xx", "hypothesis": "a b"}\n{"id": "9", "lang": "xx", "hypothesis": "z"}\n')
    ref.write_text('{"id": "1", "summary": "a b c"}\n')
    rep = score_files(hyp, ref, tmp_path / "s.csv")
    assert rep.per_lang["xx"]["R1"] == pytest.approx(0.8)
    assert _rows(tmp_path / "s.csv")[1][:2] == ["xx", "1"]
