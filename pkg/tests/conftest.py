import numpy as np
import pytest

from multitune.autodiff import Tensor
from multitune.model import ModelConfig, init_model
from multitune.params import ParamStore


def tiny_config(**kw) -> ModelConfig:
    base = dict(d_model=8, n_layers_enc=1, n_layers_dec=1, n_heads=2, d_ff=12, vocab_size=11,
                max_seq_len=24, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def scaled_store(config: ModelConfig, seed: int = 0, std: float = 0.4) -> ParamStore:
    """64-bit store with large random weights (including LN params) so gradients are well conditioned."""
    rng = np.random.default_rng(seed + 1000)
    store = init_model(config, seed).astype(np.float64)
    for name in store:
        t = store[name]
        if name.endswith(".g"):
            t.data[...] = 1.0 + 0.2 * rng.normal(size=t.shape)
        else:
            t.data[...] = std * rng.normal(size=t.shape)
    return store


def random_ids(rng, shape, vocab, low=3):
    return rng.integers(low, vocab, size=shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def toy_setup(names=("aa", "bb", "cc"), n_train=6, d_model=16, vocab_extra=60, seed=0):
    """Tiny synthetic corpora, a BPE tokenizer over them and a fresh backbone sized to match."""
    from multitune.data.synthetic import PseudoLanguage, make_synthetic_corpus
    from multitune.data.tokenizer import BASE_VOCAB, train_tokenizer

    suffixes = ["", "n", "s", "r", "l"]
    langs = [PseudoLanguage(n, n_train=n_train, n_dev=2, n_test=2, suffix=suffixes[i % 5], sentences=(1, 2))
             for i, n in enumerate(names)]
    corpora = {c.lang: c for c in make_synthetic_corpus(langs, seed)}
    texts = [t for c in corpora.values() for p in c.pairs for t in (p.text, p.summary)]
    tok = train_tokenizer(texts, vocab_size=BASE_VOCAB + vocab_extra)
    cfg = ModelConfig(d_model=d_model, n_layers_enc=1, n_layers_dec=1, n_heads=2, d_ff=2 * d_model,
                      vocab_size=tok.vocab_size, max_seq_len=96, dropout=0.0)
    return corpora, tok, init_model(cfg, seed)


def tiny_run_config(output_dir, experiment="exp3_joint", **kw):
    """Seconds-scale run config: three small pseudo-languages and a d=16 backbone."""
    from multitune.experiments import RunConfig

    base = dict(
        experiment=experiment, output_dir=str(output_dir),
        synthetic_languages=[
            dict(name="lat_hi", n_train=60, n_dev=2, n_test=3, sentences=[1, 2]),
            dict(name="lat_lo", n_train=6, n_dev=2, n_test=3, suffix="s", sentences=[1, 2]),
            dict(name="grk", n_train=20, n_dev=2, n_test=3, script="greek", sentences=[1, 2]),
        ],
        model=dict(d_model=16, n_layers_enc=1, n_layers_dec=1, n_heads=2, d_ff=32, max_seq_len=96),
        tokenizer={"vocab_size": 320}, pretrain=dict(epochs=1, steps_per_epoch=4, batch_size=4),
        train=dict(epochs=1, max_src_len=48, max_tgt_len=20, steps_per_epoch=3),
        decode={"beam_size": 2, "length_penalty": 0.6, "max_len": 8}, max_test=2, seeds=[0, 1, 2], sizes=[5],
    )
    base.update(kw)
    return RunConfig(**base)


# ---------------------------------------------------------------- acceptance summary

_CRITERIA: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when != "call" and report.outcome == "passed":
        return
    name = report.nodeid.split("::")[-1][len("test_criterion_"):]
    name, _, param = name.partition("[")
    num, _, label = name.partition("_")
    entry = _CRITERIA.setdefault(int(num), {"label": label.replace("_", " "), "failed": []})
    if report.outcome != "passed":
        entry["failed"].append(param.rstrip("]") or report.when)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        e = _CRITERIA[num]
        verdict = "FAIL" if e["failed"] else "PASS"
        detail = f"  (failed: {', '.join(e['failed'])})" if e["failed"] else ""
        terminalreporter.write_line(f"criterion {num:2d}: {verdict}  {e['label']}{detail}")
