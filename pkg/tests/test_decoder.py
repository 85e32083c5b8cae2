import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sha_asr import corpus, decoder, lm
from sha_asr.errors import DataError, InventoryError, ParameterError


def alignments(seq, start, end):
    """Every monotone alignment of ``seq`` onto frames start..end-1 (each unit >= 1 frame)."""
    n = end - start
    m = len(seq)
    for cuts in itertools.combinations(range(1, n), m - 1):
        bounds = (0,) + cuts + (n,)
        yield [c for c, a, b in zip(seq, bounds, bounds[1:]) for _ in range(b - a)]


def exhaustive_best(logpost, lexicon, model, cfg):
    """Best total score over every word sequence and every segmentation."""
    T = logpost.shape[0]
    ctx = max(model.order - 1, 0)
    words = [w for w in lexicon.words if w in model.vocab]
    seqs = dict(zip(lexicon.words, lexicon.seqs))
    best = -math.inf

    def lm_score(w, hist):
        h = tuple(hist[-ctx:]) if ctx else ()
        lp = model.logprob(w, h)
        return -math.inf if lp == -math.inf else cfg.lm_scale * lp

    def walk(pos, hist, score):
        nonlocal best
        if pos == T:
            best = max(best, score + lm_score(lm.EOS, hist))
            return
        for end in range(pos + 1, T + 1):
            for w in words:
                if len(seqs[w]) > end - pos:
                    continue
                ac = max(sum(logpost[pos + i, c] for i, c in enumerate(path)) for path in alignments(seqs[w], pos, end))
                walk(end, hist + [w], score + cfg.acoustic_scale * ac + lm_score(w, hist) + cfg.insertion_penalty)

    walk(0, [lm.BOS], 0.0)
    return best


def random_instance(rng, max_words=3, max_frames=6, K=4):
    V = int(rng.integers(1, max_words + 1))
    names = [f"w{i}" for i in range(V)]
    entries = {}
    for w in names:
        L = int(rng.integers(1, 3))
        entries[w] = tuple(int(c) for c in rng.integers(0, K, L))
    lexicon = decoder.Lexicon(entries, K)
    text = [[names[int(i)] for i in rng.integers(0, V, int(rng.integers(1, 4)))] for _ in range(6)]
    model = lm.estimate(lm.count_ngrams(text, int(rng.integers(1, 4))))
    T = int(rng.integers(1, max_frames + 1))
    logpost = np.log(rng.dirichlet(np.ones(K), size=T))
    cfg = decoder.DecodeConfig(beam=None, lm_scale=float(rng.uniform(0.2, 1.5)), insertion_penalty=float(rng.uniform(-1, 1)))
    return logpost, lexicon, model, cfg


def test_unbounded_beam_equals_exhaustive_search():
    rng = np.random.default_rng(0)
    for _ in range(150):
        logpost, lexicon, model, cfg = random_instance(rng)
        got = decoder.decode(logpost, lexicon, model, cfg, is_log=True)
        want = exhaustive_best(logpost, lexicon, model, cfg)
        if want == -math.inf:
            assert got.words == [] and got.score == -math.inf
        else:
            assert got.score == pytest.approx(want, abs=1e-9)


def test_beam_width_monotonicity():
    rng = np.random.default_rng(1)
    for _ in range(100):
        logpost, lexicon, model, cfg = random_instance(rng, max_words=6, max_frames=12, K=5)
        scores = []
        for beam in (1, 2, 4, 8, None):
            c = decoder.DecodeConfig(beam=beam, lm_scale=cfg.lm_scale, insertion_penalty=cfg.insertion_penalty)
            scores.append(decoder.decode(logpost, lexicon, model, c, is_log=True).score)
        assert all(a <= b + 1e-12 for a, b in zip(scores, scores[1:])), scores


def test_oracle_posteriors_recover_reference(small_spec, small_corpora):
    lexicon = decoder.Lexicon(corpus.decoding_lexicon(small_spec), small_spec.num_chenones)
    utts = small_corpora["en"]
    model = lm.estimate(lm.count_ngrams([u.words for u in utts], 2))
    rows = decoder.evaluate_testset(decoder.oracle_posteriors(small_spec.num_chenones), None, utts, lexicon, model)
    assert rows["en"].wer == 0.0


def test_max_word_frames_limits_spans():
    lexicon = decoder.Lexicon({"a": (0,)}, 2)
    model = lm.estimate(lm.count_ngrams([["a"], ["a", "a"]], 1))
    post = np.full((4, 2), 1e-6)
    post[:, 0] = 1.0
    short = decoder.decode(post, lexicon, model, decoder.DecodeConfig(max_word_frames=2))
    assert len(short.words) >= 2
    with pytest.raises(ParameterError):
        decoder.DecodeConfig(max_word_frames=0)


def test_decode_errors():
    lexicon = decoder.Lexicon({"a": (0, 5)})
    model = lm.estimate(lm.count_ngrams([["a"]], 1))
    with pytest.raises(InventoryError):
        decoder.decode(np.full((3, 4), 0.25), lexicon, model)
    with pytest.raises(DataError):
        decoder.decode(np.zeros((0, 4)), lexicon, model)
    with pytest.raises(DataError):
        decoder.Lexicon({})
    with pytest.raises(ParameterError):
        decoder.DecodeConfig(beam=0)


def test_too_short_input_gives_empty_hypothesis():
    lexicon = decoder.Lexicon({"abc": (0, 1, 2)}, 3)
    model = lm.estimate(lm.count_ngrams([["abc"]], 1))
    res = decoder.decode(np.full((2, 3), 1 / 3), lexicon, model)
    assert res.words == [] and res.score == -math.inf


def test_wer_counts():
    r = decoder.wer("a b c d".split(), "a x c d e".split())
    assert (r.substitutions, r.deletions, r.insertions) == (1, 0, 1)
    assert r.wer == pytest.approx(50.0)
    assert decoder.wer(["a"], []).wer == 100.0
    assert decoder.wer(["a", "b"], ["a", "b"]).wer == 0.0


def test_report_csv(tmp_path):
    row = decoder.WerRow("I", "hi")
    row.add(decoder.wer(["a", "b"], ["a"]))
    path = tmp_path / "wer.csv"
    decoder.write_report([row], path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == decoder.REPORT_FIELDS
    assert lines[1].startswith("I,hi,50")


def _levenshtein(a, b):
    d = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        prev, d[0] = d[0], i
        for j, y in enumerate(b, 1):
            prev, d[j] = d[j], min(d[j] + 1, d[j - 1] + 1, prev + (x != y))
    return d[-1]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("abcd"), min_size=1, max_size=8), st.lists(st.sampled_from("abcd"), max_size=8))
def test_wer_matches_levenshtein_and_is_symmetric(ref, hyp):
    r = decoder.wer(ref, hyp)
    assert r.errors == _levenshtein(ref, hyp)
    assert len(ref) - r.deletions + r.insertions == len(hyp)
    if hyp:
        s = decoder.wer(hyp, ref)
        assert (s.substitutions, s.deletions, s.insertions) == (r.substitutions, r.insertions, r.deletions)
