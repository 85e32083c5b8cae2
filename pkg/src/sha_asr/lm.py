"""Backoff n-gram language models, linear interpolation and ARPA I/O.

Estimation uses interpolated Witten-Bell smoothing, stored in backoff form so
that the model is exactly an ARPA model: for a context ``h`` with ``c(h)``
continuation tokens of ``T(h)`` distinct types,

    p(w | h) = (c(h, w) + T(h) * p(w | h')) / (c(h) + T(h))    if c(h, w) > 0
    p(w | h) = bow(h) * p(w | h'),  bow(h) = T(h) / (c(h) + T(h))  otherwise

where ``h'`` drops the oldest word. Unigrams interpolate with the uniform
distribution over the vocabulary, so every vocabulary word (including
``<unk>``) has non-zero probability. Scores are kept as log10 internally.
"""
import math
from collections import defaultdict
from dataclasses import dataclass, field

from .errors import DataError, ModelError, ParameterError, ParseError

BOS, EOS, UNK = "<s>", "</s>", "<unk>"
LOG10_ZERO = -99.0
LN10 = math.log(10.0)


def tokenize(line):
    return line.lower().split()


def _as_tokens(sentence):
    return tokenize(sentence) if isinstance(sentence, str) else list(sentence)


@dataclass
class NGramCounts:
    order: int
    counts: list = field(default_factory=list)  # counts[k - 1]: {k-gram tuple: count}

    def __getitem__(self, ngram):
        ngram = tuple(ngram)
        return self.counts[len(ngram) - 1].get(ngram, 0)

    def __len__(self):
        return sum(len(c) for c in self.counts)

    def merge(self, other):
        if other.order != self.order:
            raise ParameterError("cannot merge count tables of different order")
        for mine, theirs in zip(self.counts, other.counts):
            for g, c in theirs.items():
                mine[g] = mine.get(g, 0) + c
        return self


def count_ngrams(corpus, order):
    """Counts of every k-gram (k <= order) over ``<s> sentence </s>``."""
    if order < 1:
        raise ParameterError("n-gram order must be >= 1")
    counts = [defaultdict(int) for _ in range(order)]
    for sentence in corpus:
        toks = [BOS] + _as_tokens(sentence) + [EOS]
        n = len(toks)
        for k in range(1, order + 1):
            table = counts[k - 1]
            for i in range(n - k + 1):
                table[tuple(toks[i:i + k])] += 1
    return NGramCounts(order, [dict(c) for c in counts])


class NGramModel:
    """Backoff model: ``logp[k-1][ngram]`` and ``bow[k-1][context]`` in log10."""

    def __init__(self, order, vocab, logp, bow, smoothing="witten_bell"):
        self.order = order
        self.vocab = frozenset(vocab)
        self.logp = logp
        self.bow = bow
        self.smoothing = smoothing

    @property
    def predictable(self):
        return sorted(self.vocab - {BOS})

    def _map(self, w):
        return w if w in self.vocab else UNK

    def _log10(self, w, h):
        total = 0.0
        while True:
            k = len(h) + 1
            lp = self.logp[k - 1].get(h + (w,))
            if lp is not None:
                return total + lp
            if not h:
                return None
            total += self.bow[k - 2].get(h, 0.0)
            h = h[1:]

    def log10prob(self, word, history=()):
        w = self._map(word)
        hist = tuple(self._map(x) for x in history)
        if self.order > 1:
            hist = hist[len(hist) - (self.order - 1):] if len(hist) > self.order - 1 else hist
        else:
            hist = ()
        lp = self._log10(w, hist)
        return LOG10_ZERO if lp is None else lp

    def prob(self, word, history=()):
        lp = self.log10prob(word, history)
        return 0.0 if lp <= LOG10_ZERO else 10.0 ** lp

    def logprob(self, word, history=()):
        """Natural-log probability (``-inf`` for impossible events)."""
        lp = self.log10prob(word, history)
        return -math.inf if lp <= LOG10_ZERO else lp * LN10

    def contexts(self):
        """Every history with its own distribution (``()`` plus stored backoff contexts)."""
        out = [()]
        for table in self.bow:
            out.extend(sorted(table))
        return out


def estimate(counts, smoothing="witten_bell", vocab=None):
    """Witten-Bell backoff model from a count table.

    ``vocab`` optionally widens the vocabulary beyond the observed words (the
    Hinglish setup estimates both components over the union vocabulary).
    """
    if smoothing != "witten_bell":
        raise ParameterError(f"unsupported smoothing {smoothing!r}")
    N = counts.order
    uni = counts.counts[0] if counts.counts else {}
    words = {g[0] for g in uni} | set(vocab or ()) | {UNK, EOS, BOS}
    pred = sorted(words - {BOS})
    total = sum(c for g, c in uni.items() if g[0] != BOS)
    if total == 0:
        raise DataError("cannot estimate a model from zero counts")

    logp = [dict() for _ in range(N)]
    bow = [dict() for _ in range(N - 1)]
    seen = sum(1 for w in pred if uni.get((w,), 0) > 0)
    uniform = 1.0 / len(pred)
    prob1 = {}
    for w in pred:
        p = (uni.get((w,), 0) + seen * uniform) / (total + seen)
        prob1[w] = p
        logp[0][(w,)] = math.log10(p)
    logp[0][(BOS,)] = LOG10_ZERO

    model = NGramModel(N, words, logp, bow, smoothing)
    for k in range(2, N + 1):
        by_ctx = defaultdict(dict)
        for g, c in counts.counts[k - 1].items():
            by_ctx[g[:-1]][g[-1]] = c
        for h in sorted(by_ctx):
            cont = by_ctx[h]
            c_h = sum(cont.values())
            t_h = len(cont)
            denom = c_h + t_h
            for w in sorted(cont):
                p_low = 10.0 ** model._log10(w, h[1:])
                logp[k - 1][h + (w,)] = math.log10((cont[w] + t_h * p_low) / denom)
            bow[k - 2][h] = math.log10(t_h / denom)
    return model


class InterpolatedLM:
    """Linear mixture of component LMs over the union vocabulary.

    A component that lacks a union word shares its ``<unk>`` mass evenly
    between ``<unk>`` and every union word it does not know, so each
    component stays normalised over the union and so does the mixture.
    """

    def __init__(self, components, weights):
        if len(components) != len(weights) or not components:
            raise ParameterError("need one weight per component")
        if any(w <= 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-12:
            raise ParameterError("interpolation weights must be positive and sum to 1")
        self.components = list(components)
        self.weights = [float(w) for w in weights]
        self.vocab = frozenset().union(*(c.vocab for c in components)) | {UNK, BOS, EOS}
        self.order = max(c.order for c in components)
        self._missing = [len((self.vocab - c.vocab) - {UNK}) for c in components]

    @property
    def predictable(self):
        return sorted(self.vocab - {BOS})

    def prob(self, word, history=()):
        w = word if word in self.vocab else UNK
        total = 0.0
        for lm, lam, miss in zip(self.components, self.weights, self._missing):
            if w in lm.vocab and w != UNK:
                p = lm.prob(w, history)
            else:
                p = lm.prob(UNK, history) / (1 + miss)
            total += lam * p
        return total

    def logprob(self, word, history=()):
        p = self.prob(word, history)
        return math.log(p) if p > 0 else -math.inf

    def log10prob(self, word, history=()):
        p = self.prob(word, history)
        return math.log10(p) if p > 0 else LOG10_ZERO

    def contexts(self):
        ctx = set()
        for lm in self.components:
            ctx.update(lm.contexts())
        return sorted(ctx, key=lambda h: (len(h), h))


def interpolate(lm_en, lm_hi, lambda_en=0.9):
    if not 0.0 < lambda_en < 1.0:
        raise ParameterError("lambda_en must lie strictly between 0 and 1")
    return InterpolatedLM([lm_en, lm_hi], [lambda_en, 1.0 - lambda_en])


def perplexity(lm, corpus):
    logsum = 0.0
    n = 0
    for sentence in corpus:
        toks = _as_tokens(sentence) + [EOS]
        hist = [BOS]
        for w in toks:
            lp = lm.logprob(w, hist)
            if lp == -math.inf:
                raise ModelError(f"zero probability for {w!r} after {hist[-(lm.order - 1):] if lm.order > 1 else []}")
            logsum += lp
            n += 1
            hist.append(w)
    if n == 0:
        raise DataError("empty test corpus")
    return math.exp(-logsum / n)


# --------------------------------------------------------------------------
# ARPA


def export_arpa(lm, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\\data\\\n")
        for k in range(1, lm.order + 1):
            fh.write(f"ngram {k}={len(lm.logp[k - 1])}\n")
        for k in range(1, lm.order + 1):
            fh.write(f"\n\\{k}-grams:\n")
            bows = lm.bow[k - 1] if k < lm.order else {}
            for g in sorted(lm.logp[k - 1]):
                line = f"{lm.logp[k - 1][g]!r}\t{' '.join(g)}"
                if g in bows:
                    line += f"\t{bows[g]!r}"
                fh.write(line + "\n")
        fh.write("\n\\end\\\n")


def import_arpa(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    i = 0
    n_lines = len(lines)

    def skip_blank(i):
        while i < n_lines and not lines[i].strip():
            i += 1
        return i

    i = skip_blank(i)
    if i >= n_lines or lines[i].strip() != "\\data\\":
        raise ParseError("expected \\data\\ header", i + 1)
    i += 1
    declared = {}
    while i < n_lines and lines[i].strip().startswith("ngram "):
        spec = lines[i].strip()[6:]
        try:
            k, c = spec.split("=")
            declared[int(k)] = int(c)
        except ValueError as exc:
            raise ParseError(f"bad count line {lines[i]!r}", i + 1) from exc
        i += 1
    if not declared or sorted(declared) != list(range(1, len(declared) + 1)):
        raise ParseError("missing or non-contiguous ngram counts", i + 1)
    order = len(declared)
    logp = [dict() for _ in range(order)]
    bow = [dict() for _ in range(order - 1)]
    ended = False
    while True:
        i = skip_blank(i)
        if i >= n_lines:
            break
        head = lines[i].strip()
        if head == "\\end\\":
            ended = True
            break
        if not (head.startswith("\\") and head.endswith("-grams:")):
            raise ParseError(f"unexpected line {head!r}", i + 1)
        try:
            k = int(head[1:-7])
        except ValueError as exc:
            raise ParseError(f"bad section header {head!r}", i + 1) from exc
        if not 1 <= k <= order:
            raise ParseError(f"section {k}-grams beyond declared order {order}", i + 1)
        i += 1
        while i < n_lines and lines[i].strip() and not lines[i].startswith("\\"):
            fields_ = lines[i].strip().split("\t")
            if len(fields_) == 1:
                fields_ = lines[i].split()
                fields_ = [fields_[0], " ".join(fields_[1:k + 1])] + fields_[k + 1:]
            if len(fields_) not in (2, 3):
                raise ParseError(f"bad {k}-gram entry", i + 1)
            g = tuple(fields_[1].split())
            if len(g) != k:
                raise ParseError(f"expected {k} tokens, got {len(g)}", i + 1)
            try:
                logp[k - 1][g] = float(fields_[0])
                if len(fields_) == 3:
                    if k == order:
                        raise ParseError("backoff weight on highest-order n-gram", i + 1)
                    bow[k - 1][g] = float(fields_[2])
            except ValueError as exc:
                raise ParseError(f"non-numeric score: {exc}", i + 1) from exc
            i += 1
    if not ended:
        raise ParseError("missing \\end\\ marker", n_lines)
    for k, c in declared.items():
        if len(logp[k - 1]) != c:
            raise ParseError(f"declared {c} {k}-grams, found {len(logp[k - 1])}")
    vocab = {g[0] for g in logp[0]}
    return NGramModel(order, vocab, logp, bow)


def read_text(path):
    with open(path, encoding="utf-8") as fh:
        return [tokenize(line) for line in fh if line.strip()]
