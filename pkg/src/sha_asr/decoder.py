"""Toy hybrid decoder and WER scoring.

Search runs over word boundaries. For every word and frame span the best
within-word alignment (one chenone per frame, self-loops allowed) comes from
:func:`sha_asr.kernels.segment_scores`; hypotheses at each boundary are
recombined by LM state (the last ``order - 1`` words) and pruned to ``beam``.
With ``beam=None`` the search is exact.

A hypothesis score is

    acoustic_scale * sum(log posterior) + sum_words(lm_scale * ln p_LM + insertion_penalty)
    + lm_scale * ln p_LM(</s> | history)
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DataError, InventoryError, ParameterError
from .lm import BOS, EOS

LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class DecodeConfig:
    beam: int = 16  # None: unbounded
    acoustic_scale: float = 1.0
    lm_scale: float = 0.5
    insertion_penalty: float = 0.0
    max_word_frames: int = None  # longest span one word may cover; None: unbounded

    def __post_init__(self):
        if self.beam is not None and self.beam < 1:
            raise ParameterError("beam must be >= 1 (or None for unbounded)")
        if self.max_word_frames is not None and self.max_word_frames < 1:
            raise ParameterError("max_word_frames must be >= 1")
        if self.acoustic_scale < 0 or self.lm_scale < 0:
            raise ParameterError("acoustic and LM scales must be >= 0")


class Lexicon:
    def __init__(self, entries, num_chenones=None):
        if not entries:
            raise DataError("lexicon needs at least one word")
        self.words = list(entries)
        self.seqs = [tuple(int(c) for c in entries[w]) for w in self.words]
        for w, s in zip(self.words, self.seqs):
            if not s:
                raise DataError(f"empty chenone sequence for {w!r}")
            if min(s) < 0 or (num_chenones is not None and max(s) >= num_chenones):
                raise InventoryError(f"chenone out of range in {w!r}")
        self.max_chenone = max(max(s) for s in self.seqs)

    def __len__(self):
        return len(self.words)

    def restrict(self, vocab):
        keep = {w: s for w, s in zip(self.words, self.seqs) if w in vocab}
        return Lexicon(keep)

    def packed(self):
        offsets = np.zeros(len(self.seqs) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([len(s) for s in self.seqs])
        return np.fromiter((c for s in self.seqs for c in s), dtype=np.int64), offsets


@dataclass
class DecodeResult:
    words: list
    score: float


class SearchGraph:
    """LM-state bookkeeping shared across utterances for one (lexicon, LM) pair."""

    def __init__(self, lexicon, lm):
        self.lexicon = lexicon
        self.lm = lm
        self.ctx = max(lm.order - 1, 0)
        self.states = {}
        self.histories = []
        self._lm_vec = {}
        self._next = {}
        self._final = {}
        self.start = self.state_id((BOS,) if self.ctx else ())

    def state_id(self, hist):
        sid = self.states.get(hist)
        if sid is None:
            sid = self.states[hist] = len(self.histories)
            self.histories.append(hist)
        return sid

    def lm_vector(self, sid):
        vec = self._lm_vec.get(sid)
        if vec is None:
            hist = self.histories[sid]
            vec = np.array([self.lm.logprob(w, hist) for w in self.lexicon.words])
            self._lm_vec[sid] = vec
        return vec

    def next_states(self, sid):
        nxt = self._next.get(sid)
        if nxt is None:
            hist = self.histories[sid]
            if self.ctx:
                nxt = np.array([self.state_id((hist + (w,))[-self.ctx:]) for w in self.lexicon.words], dtype=np.int64)
            else:
                nxt = np.zeros(len(self.lexicon), dtype=np.int64)
            self._next[sid] = nxt
        return nxt

    def final(self, sid):
        v = self._final.get(sid)
        if v is None:
            v = self._final[sid] = self.lm.logprob(EOS, self.histories[sid])
        return v


def _prepare(posteriors, is_log):
    post = np.asarray(posteriors, dtype=np.float64)
    if post.ndim != 2 or post.shape[0] < 1:
        raise DataError("posteriors must be a non-empty (T, K) array")
    if is_log:
        return post
    return np.log(np.maximum(post, LOG_FLOOR))


def _scale(x, c):
    # keeps -inf at -inf when c == 0 (0 * -inf is nan)
    return np.where(np.isneginf(x), -np.inf, c * x)


def decode(posteriors, lexicon, lm, cfg=None, is_log=False, graph=None):
    """Best word sequence for a ``(T, K)`` posterior matrix.

    Only lexicon words in the LM vocabulary are searched: the LM vocabulary is
    the decoding vocabulary.
    """
    cfg = cfg or DecodeConfig()
    logpost = _prepare(posteriors, is_log)
    T, K = logpost.shape
    if graph is None:
        vocab = getattr(lm, "vocab", None)
        lex = lexicon.restrict(vocab) if vocab is not None else lexicon
        graph = SearchGraph(lex, lm)
    lex = graph.lexicon
    if lex.max_chenone >= K:
        raise InventoryError(f"lexicon uses chenone {lex.max_chenone} but posteriors have K={K}")
    seqs, offsets = lex.packed()
    seg = kernels.segment_scores(logpost, seqs, offsets)
    a, b, pen = cfg.acoustic_scale, cfg.lm_scale, cfg.insertion_penalty
    seg = _scale(seg, a)
    V = len(lex)

    # per boundary: scores, state ids, backpointers (prev boundary, prev index, word)
    kept = [None] * (T + 1)
    kept[0] = (np.array([0.0]), np.array([graph.start]), np.array([-1]), np.array([-1]), np.array([-1]))
    for end in range(1, T + 1):
        cand_s, cand_id, cand_e, cand_i, cand_w = [], [], [], [], []
        lo = 0 if cfg.max_word_frames is None else max(0, end - cfg.max_word_frames)
        for start in range(lo, end):
            if kept[start] is None:
                continue
            scores, sids, *_ = kept[start]
            span = seg[:, start, end]
            if not np.isfinite(span).any():
                continue
            lm_mat = np.stack([graph.lm_vector(s) for s in sids])
            nxt = np.stack([graph.next_states(s) for s in sids])
            c = scores[:, None] + span[None, :] + _scale(lm_mat, b) + pen
            n = len(sids)
            cand_s.append(c.ravel())
            cand_id.append(nxt.ravel())
            cand_e.append(np.full(n * V, start))
            cand_i.append(np.repeat(np.arange(n), V))
            cand_w.append(np.tile(np.arange(V), n))
        if not cand_s:
            continue
        s = np.concatenate(cand_s)
        ids = np.concatenate(cand_id)
        ok = np.isfinite(s)
        if not ok.any():
            continue
        sel = np.flatnonzero(ok)
        # recombine: best candidate per LM state (stable: earliest wins ties)
        order = sel[np.lexsort((-s[sel], ids[sel]))]
        first = np.ones(len(order), dtype=bool)
        first[1:] = ids[order][1:] != ids[order][:-1]
        best = order[first]
        # prune: highest scores first, state id breaks ties
        rank = np.lexsort((ids[best], -s[best]))
        if cfg.beam is not None:
            rank = rank[: cfg.beam]
        best = best[rank]
        e_all = np.concatenate(cand_e)
        i_all = np.concatenate(cand_i)
        w_all = np.concatenate(cand_w)
        kept[end] = (s[best], ids[best], e_all[best], i_all[best], w_all[best])

    if kept[T] is None:
        return DecodeResult([], -math.inf)
    scores, sids, *_ = kept[T]
    final = scores + _scale(np.array([graph.final(x) for x in sids]), b)
    j = int(np.argmax(final))
    best_score = float(final[j])
    words = []
    pos = T
    while pos > 0:
        _, _, prev_e, prev_i, w = kept[pos]
        words.append(lex.words[int(w[j])])
        pos, j = int(prev_e[j]), int(prev_i[j])
    return DecodeResult(words[::-1], best_score)


# --------------------------------------------------------------------------
# scoring


@dataclass
class WerResult:
    wer: float
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int

    @property
    def errors(self):
        return self.substitutions + self.deletions + self.insertions


def wer(reference, hypothesis):
    """Levenshtein word alignment: ``(wer%, S, D, I)`` with the ref length."""
    reference = list(reference)
    hypothesis = list(hypothesis)
    if not reference:
        raise DataError("reference must be non-empty")
    ids = {}
    r = [ids.setdefault(w, len(ids)) for w in reference]
    h = [ids.setdefault(w, len(ids)) for w in hypothesis]
    e, s, d, i = kernels.edit_ops(r, h)
    return WerResult(100.0 * e / len(reference), s, d, i, len(reference))


@dataclass
class WerRow:
    system: str
    testset: str
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_words: int = 0
    utts: int = 0
    hypotheses: list = field(default_factory=list, repr=False)

    @property
    def wer(self):
        return 100.0 * (self.substitutions + self.deletions + self.insertions) / self.ref_words if self.ref_words else 0.0

    def add(self, res):
        self.substitutions += res.substitutions
        self.deletions += res.deletions
        self.insertions += res.insertions
        self.ref_words += res.ref_words
        self.utts += 1

    def as_record(self):
        return {
            "system": self.system,
            "testset": self.testset,
            "wer": f"{self.wer:.2f}",
            "sub": self.substitutions,
            "del": self.deletions,
            "ins": self.insertions,
            "utts": self.utts,
        }


REPORT_FIELDS = ["system", "testset", "wer", "sub", "del", "ins", "utts"]


def oracle_posteriors(num_chenones, confidence=1.0 - 1e-6):
    """Posterior function putting ``confidence`` on each frame's true label."""

    def fn(utt):
        T = utt.num_frames
        p = np.full((T, num_chenones), (1.0 - confidence) / (num_chenones - 1))
        p[np.arange(T), utt.labels] = confidence
        return np.log(p)

    return fn


def uniform_posteriors(num_chenones):
    def fn(utt):
        return np.full((utt.num_frames, num_chenones), -math.log(num_chenones))

    return fn


def evaluate_testset(model, mode, corpus, lexicon, lm, cfg=None, system="system", keep_hypotheses=False):
    """Decode every utterance; WER aggregated per utterance language tag.

    ``model`` is an :class:`~sha_asr.model.AcousticModel` (evaluated in
    ``mode``) or any callable mapping an utterance to ``(T, K)`` log posteriors.
    """
    from .model import AcousticModel, utterance_log_posteriors

    if isinstance(model, AcousticModel):
        def post_fn(u):
            return utterance_log_posteriors(model, u.frames, mode=mode)[0]
    else:
        post_fn = model
    cfg = cfg or DecodeConfig()
    graph = SearchGraph(lexicon.restrict(lm.vocab) if hasattr(lm, "vocab") else lexicon, lm)
    rows = {}
    for u in corpus:
        res = decode(post_fn(u), lexicon, lm, cfg, is_log=True, graph=graph)
        row = rows.setdefault(u.lang, WerRow(system, u.lang))
        row.add(wer(u.words, res.words))
        if keep_hypotheses:
            row.hypotheses.append((u.id, res.words))
    return rows


def write_report(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.as_record())
