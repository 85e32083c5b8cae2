"""Acceptance suite: one or more tests per criterion, summarized as PASS/FAIL lines.

Run with ``pytest tests/test_acceptance.py`` or ``python3 tests/test_acceptance.py``.
The summary section at the end of the pytest report prints one line per
criterion together with the measured numbers.

Criteria 5, 6, 9 and 10 share the full ``reproduce-trend`` run (seed 7); the
determinism check runs it a second time, so the whole file takes a few minutes
on one CPU.
"""
import math
import random
import re
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from sha_asr import cli, lm, model, pipeline, trainer
from sha_asr import numeric as nm
from sha_asr.config import RunConfig
from sha_asr.decoder import DecodeConfig, decode

from conftest import randomize
from test_decoder import exhaustive_best, random_instance
from test_lm import naive_counts, random_corpus
from test_numeric import OPS, _model_loss_case, gradcheck

SEED = 7
TREND_BUDGET_S = 600.0


def criterion(n):
    return pytest.mark.criterion(n)


# --------------------------------------------------------------------------
# 1. finite-difference gradients


@criterion(1)
def test_gradient_suite(record_property):
    tiny = model.ModelConfig(feature_dim=4, hidden_dim=5, num_chenones=6, num_shared_blocks=2, lookahead=2, attention_dim=3)
    start = time.process_time()
    cases = 0
    for seed in range(6):
        for name in sorted(OPS):
            build, shapes, kw = OPS[name]
            gradcheck(build, shapes, seed, **kw)
            cases += 1
        teacher = np.random.default_rng(100 + seed).dirichlet(np.ones(5), size=3)
        gradcheck(lambda a, t=teacher: nm.kl_divergence(t, nm.log_softmax(a)), [(3, 5)], seed)
        cases += 1
    for seed in range(4):
        for stage in ("single", "split", "full", "distill"):
            _model_loss_case(tiny, seed, stage)
            cases += 1
    elapsed = time.process_time() - start
    record_property("detail", f"{cases} cases, all rel err < 1e-4, {elapsed:.1f}s CPU")
    assert cases >= 100
    assert elapsed < 60.0


# --------------------------------------------------------------------------
# 2. convexity identity after splitting


@criterion(2)
def test_split_matches_singlehead(record_property):
    cfg = model.ModelConfig()
    single = randomize(model.init_singlehead(cfg, seed=21), seed=22, scale=0.2)
    sha = model.split_from_single(single, seed=23)
    rng = np.random.default_rng(24)
    # non-uniform attention weights, so the identity is not trivially 0.5/0.5
    for name in ("attention.out.W", "attention.out.b"):
        sha.params[name].data = rng.standard_normal(sha.params[name].shape)
    worst = 0.0
    for chunk in rng.standard_normal((1000, cfg.lookahead + 1, cfg.feature_dim)):
        diff = np.abs(model.forward_singlehead(single, chunk) - model.forward_sha(sha, chunk))
        worst = max(worst, float(diff.max()))
    record_property("detail", f"max |diff| {worst:.2e} over 1000 chunks")
    assert worst <= 1e-9


# --------------------------------------------------------------------------
# 3. freezing and routing


def _sha(cfg, seed):
    return randomize(model.split_from_single(model.init_singlehead(cfg, seed), seed), seed + 1, scale=0.1)


@criterion(3)
def test_attention_only_freezes_everything_else(small_model_cfg, small_corpora, record_property):
    sha = _sha(small_model_cfg, 5)
    res = trainer.train_stage(sha, small_corpora, trainer.StagePlan("attention_only", epochs=2, batch_size=3, lr=1e-2), seed=6)
    moved = [n for n, p in sha.params.items() if not np.array_equal(p.data, res.model.params[n].data)]
    assert moved and all(sha.group_of(n) == "attention" for n in moved)
    record_property("detail", f"attention_only moved {len(moved)} attention tensors only")


@criterion(3)
def test_split_on_english_gives_zero_hindi_gradients(small_model_cfg, small_corpora, record_property):
    sha = _sha(small_model_cfg, 8)
    sha.set_requires_grad(trainer.StagePlan("split").trainable_groups(sha))
    batches = 0
    for start in range(0, len(small_corpora["en"]), 2):
        batch = trainer.make_batch(small_corpora["en"][start:start + 2], small_model_cfg.lookahead)
        for p in sha.parameters():
            p.grad = None
        with nm.Tape() as tape:
            tape.backward(trainer.batch_loss(sha, batch, "split"))
        for name, p in sha.params.items():
            if sha.group_of(name) == "tower-hi":
                assert p.grad is None or not np.any(p.grad), name
        batches += 1
    record_property("detail", f"tower-hi grads exactly zero on {batches} en batches")


# --------------------------------------------------------------------------
# 4. distillation loss identities


@criterion(4)
def test_distillation_identities(record_property):
    rng = np.random.default_rng(40)
    worst_ce, worst_self = 0.0, 0.0
    for _ in range(20):
        lp = nm.log_softmax(rng.standard_normal((7, 5)))
        labels = rng.integers(0, 5, 7)
        teacher = rng.dirichlet(np.ones(5), size=7)
        ce = nm.cross_entropy(lp, labels).item()
        worst_ce = max(worst_ce, abs(trainer.distill_loss(lp, labels, teacher, 0.0).item() - ce))
        own = np.exp(lp.data)
        own /= own.sum(axis=1, keepdims=True)
        worst_self = max(worst_self, abs(trainer.distill_loss(lp, labels, own, 1.0).item()))
    student, teach, label = [0.6, 0.3, 0.1], [0.2, 0.5, 0.3], 2
    hand = 0.05 * -math.log(student[label]) + 0.95 * sum(t * math.log(t / s) for t, s in zip(teach, student))
    got = trainer.distill_loss(nm.Tensor(np.log([student])), [label], np.array([teach]), 0.95).item()
    record_property("detail", f"w=0 gap {worst_ce:.1e}, self-teacher {worst_self:.1e}, 1-frame gap {abs(got - hand):.1e}")
    assert worst_ce <= 1e-12 and worst_self <= 1e-12
    assert abs(got - hand) <= 1e-12


# --------------------------------------------------------------------------
# shared reproduce-trend runs


def _run_trend(out_dir):
    """Run ``reproduce-trend`` through the CLI; returns (result, stdout text, CPU seconds)."""
    captured = {}
    original = pipeline.reproduce_trend

    def keep(cfg, out=None):
        captured["result"] = original(cfg, out)
        return captured["result"]

    pipeline.reproduce_trend = keep
    try:
        import contextlib
        import io

        buf = io.StringIO()
        start = time.process_time()
        with contextlib.redirect_stdout(buf):
            code = cli.main(["reproduce-trend", "--seed", str(SEED), "--out", str(out_dir)])
        elapsed = time.process_time() - start
    finally:
        pipeline.reproduce_trend = original
    assert code == 0
    return captured["result"], buf.getvalue(), elapsed


@pytest.fixture(scope="module")
def trend_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("trend_a")
    result, text, elapsed = _run_trend(out)
    return out, result, text, elapsed


# --------------------------------------------------------------------------
# 5. WER trend


@criterion(5)
def test_runtime_budget(trend_run, record_property):
    elapsed = trend_run[3]
    record_property("detail", f"reproduce-trend {elapsed:.0f}s CPU")
    assert elapsed < TREND_BUDGET_S


@criterion(5)
@pytest.mark.parametrize("key", ["a", "b", "c", "d"])
def test_wer_trend(trend_run, key, record_property):
    ok, msg = pipeline.trend_checks(trend_run[1])[key]
    record_property("detail", f"({key}) {msg}")
    assert ok, msg


# --------------------------------------------------------------------------
# 6. attention weights as a language identifier


@criterion(6)
@pytest.mark.parametrize("lang", ["en", "hi"])
def test_attention_acts_as_lid(trend_run, lang, record_property):
    info = trend_run[1].lid[lang]
    fit = info["fit"]
    record_property("detail", f"{lang}: mean w {info['mean']:.3f}, GMM dominant mean {fit.dominant_mean:.3f}")
    assert info["mean"] > 0.8
    assert fit.dominant_mean > 0.8
    assert len(fit.restart_histories) == 5
    for hist in fit.restart_histories:
        for a, b in zip(hist, hist[1:]):
            assert b >= a - 1e-9 * max(1.0, abs(a))


# --------------------------------------------------------------------------
# 7. language model oracles


@criterion(7)
def test_ngram_counts_match_rescan():
    rng = random.Random(70)
    for _ in range(50):
        text = random_corpus(rng)
        order = rng.randint(1, 4)
        got = lm.count_ngrams(text, order)
        assert {g: c for table in got.counts for g, c in table.items()} == naive_counts(text, order)


def _max_norm_gap(m, contexts):
    return max(abs(sum(m.prob(w, h) for w in m.predictable) - 1.0) for h in contexts)


@pytest.fixture(scope="module")
def workbench():
    return pipeline.build_workbench(RunConfig(seed=SEED))


@criterion(7)
def test_lm_normalization_and_arpa_round_trip(workbench, tmp_path, record_property):
    wb = workbench
    path = tmp_path / "hi.arpa"
    lm.export_arpa(wb.lm_hi, path)
    back = lm.import_arpa(path)
    gaps = {
        "estimated": _max_norm_gap(wb.lm_hi, wb.lm_hi.contexts()),
        "interpolated": _max_norm_gap(wb.hinglish, wb.hinglish.contexts()[:300]),
        "arpa": _max_norm_gap(back, back.contexts()),
    }
    drift = max(abs(wb.lm_hi.logprob(w, h) - back.logprob(w, h)) for h in wb.lm_hi.contexts() for w in wb.lm_hi.predictable)
    record_property("detail", "sum gaps " + ", ".join(f"{k} {v:.1e}" for k, v in gaps.items()) + f", ARPA drift {drift:.1e}")
    assert max(gaps.values()) <= 1e-6
    assert drift <= 1e-9


@criterion(7)
def test_interpolated_perplexity(workbench, record_property):
    wb = workbench
    en_test = [u.words for u in wb.test["en"]]
    hi_test = [u.words for u in wb.test["hi"]]
    hi_en, hi_mix = lm.perplexity(wb.lm_en, hi_test), lm.perplexity(wb.hinglish, hi_test)
    en_en, en_mix = lm.perplexity(wb.lm_en, en_test), lm.perplexity(wb.hinglish, en_test)
    rise = 100.0 * (en_mix / en_en - 1.0)
    record_property("detail", f"hi ppl {hi_en:.0f} -> {hi_mix:.1f}, en ppl {en_en:.2f} -> {en_mix:.2f} ({rise:+.2f}%)")
    assert hi_mix < hi_en
    assert rise <= 5.0


# --------------------------------------------------------------------------
# 8. decoder against exhaustive search


@criterion(8)
def test_decoder_matches_exhaustive_search(record_property):
    rng = np.random.default_rng(80)
    n = 200
    for _ in range(n):
        logpost, lexicon, m, cfg = random_instance(rng)
        got = decode(logpost, lexicon, m, cfg, is_log=True)
        want = exhaustive_best(logpost, lexicon, m, cfg)
        if want == -math.inf:
            assert got.score == -math.inf
        else:
            assert abs(got.score - want) <= 1e-9
    record_property("detail", f"{n} exhaustive instances")


@criterion(8)
def test_beam_monotonicity(record_property):
    rng = np.random.default_rng(81)
    for _ in range(100):
        logpost, lexicon, m, cfg = random_instance(rng, max_words=6, max_frames=12, K=5)
        scores = [
            decode(logpost, lexicon, m, DecodeConfig(beam=b, lm_scale=cfg.lm_scale, insertion_penalty=cfg.insertion_penalty), is_log=True).score
            for b in (1, 2, 4, 8, None)
        ]
        assert all(a <= b + 1e-12 for a, b in zip(scores, scores[1:])), scores
    record_property("detail", "100 instances, beams 1/2/4/8/inf")


# --------------------------------------------------------------------------
# 9. parameter accounting


@criterion(9)
def test_parameter_overhead_is_tower_plus_attention(trend_run, record_property):
    _, result, text, _ = trend_run
    single, sha = result.models["single"], result.models["full"]
    extra = model.param_count(sha) - model.param_count(single)
    assert extra == sha.tower_size("hi") + sha.attention_size()
    assert extra == result.params["tower"] + result.params["attention"]
    m = re.search(r"overhead ratio ([0-9.]+)%", text)
    assert m is not None, "CLI did not report the overhead ratio"
    assert float(m.group(1)) == pytest.approx(100 * extra / model.param_count(single), abs=0.01)
    record_property("detail", f"+{extra} params, CLI overhead ratio {m.group(1)}%")


# --------------------------------------------------------------------------
# 10. determinism


def _artifacts(d):
    # config.ini records the run directory itself, so it differs by design
    return sorted(p.name for p in Path(d).iterdir() if p.suffix in (".csv", ".ckpt", ".json", ".arpa", ".txt"))


@criterion(10)
def test_same_seed_gives_identical_artifacts(trend_run, tmp_path_factory, record_property):
    first = trend_run[0]
    second = tmp_path_factory.mktemp("trend_b")
    _run_trend(second)
    names = _artifacts(first)
    assert names == _artifacts(second)
    assert any(n.endswith(".ckpt") for n in names) and "wer_table.csv" in names
    differ = [n for n in names if (first / n).read_bytes() != (second / n).read_bytes()]
    record_property("detail", f"{len(names)} files compared, {len(differ)} differ")
    assert not differ, differ


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
