"""Synthetic bilingual acoustic corpora with frame-level chenone labels.

Both languages draw their labels from one chenone inventory. A frame for
chenone ``c`` spoken in language ``lang`` is

    means[accent_map[lang][c]] + offsets[lang] + stds[c] * N(0, I)

so ``offsets`` controls how separable the languages are and ``accent_map``
controls how often a Hindi chenone sounds like a different English one.
``twin_fraction`` of the Hindi words get an English near-homophone whose
chenones are the accented realisation of the Hindi word's chenones.
Hindi words are generated in Devanagari and carried into Latin script through
the ground-truth transliteration table, the way the alignment pipeline
transliterates Hindi before aligning it with the English model.
"""
import base64
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError, CoverageError, DataError, ParseError, SpecError
from .translit import ContextRule, TranslitTable, transliterate_tokens

LANG_CODES = {"en": 1, "hi": 2, "mix": 3}

# Devanagari consonants / vowel signs with unambiguous Latin renderings
_HI_CONSONANTS = [
    ("क", "k"), ("ग", "g"), ("च", "ch"), ("ज", "j"), ("त", "t"), ("द", "d"),
    ("न", "n"), ("प", "p"), ("ब", "b"), ("म", "m"), ("य", "y"), ("र", "r"),
    ("ल", "l"), ("व", "v"), ("स", "s"), ("ह", "h"),
]
_HI_VOWELS = [("", "a"), ("ा", "aa"), ("ि", "i"), ("ी", "ee"), ("ु", "u"), ("ू", "oo"), ("े", "e"), ("ो", "o")]
_EN_ONSETS = ["b", "bl", "br", "c", "cl", "cr", "d", "dr", "f", "fl", "fr", "g", "gl", "gr", "pl", "pr", "sc", "sk", "sl", "sm", "sn", "sp", "st", "str", "sw", "tr", "tw", "w", "wh", "z"]
_EN_NUCLEI = ["a", "e", "i", "o", "u", "ea", "ai", "ow"]
_EN_CODAS = ["ck", "ft", "lk", "lt", "mp", "nd", "nk", "nt", "pt", "rk", "rt", "sk", "st", "x", "zz"]
_SPELLING_VARIANTS = [("aa", "a"), ("ee", "i"), ("oo", "u"), ("e", "ay"), ("i", "ee"), ("u", "oo"), ("o", "oh"), ("a", "ah")]


@dataclass(frozen=True)
class SynthConfig:
    num_chenones: int = 64
    feature_dim: int = 16
    accent_dims: int = 2
    vocab_size: int = 40
    word_len_min: int = 2
    word_len_max: int = 4
    frames_per_chenone_min: int = 1
    frames_per_chenone_max: int = 3
    utt_words_min: int = 3
    utt_words_max: int = 6
    mean_scale: float = 1.0
    noise: float = 0.6
    offset: float = 5.0
    accent_fraction: float = 0.35
    branching: int = 3
    homographs: int = 2
    twin_fraction: float = 0.15

    def __post_init__(self):
        if self.num_chenones < 2 or self.feature_dim < 2:
            raise SpecError("need at least 2 chenones and 2 feature dims")
        if not 1 <= self.accent_dims < self.feature_dim:
            raise SpecError("accent_dims must lie in [1, feature_dim)")
        if self.vocab_size < 2:
            raise SpecError("vocab_size must be >= 2")
        for lo, hi in (("word_len_min", "word_len_max"), ("frames_per_chenone_min", "frames_per_chenone_max"), ("utt_words_min", "utt_words_max")):
            if not 1 <= getattr(self, lo) <= getattr(self, hi):
                raise SpecError(f"need 1 <= {lo} <= {hi}")
        if self.noise < 0 or self.mean_scale <= 0 or self.offset < 0:
            raise SpecError("noise/offset must be >= 0 and mean_scale > 0")
        if not 0 <= self.accent_fraction <= 1:
            raise SpecError("accent_fraction must lie in [0, 1]")
        if not 0 <= self.twin_fraction <= 1:
            raise SpecError("twin_fraction must lie in [0, 1]")
        if self.branching < 1 or self.homographs < 0:
            raise SpecError("branching must be >= 1, homographs >= 0")


@dataclass
class SynthSpec:
    """Everything needed to generate utterances deterministically."""

    num_chenones: int
    vocab: dict
    lexicon: dict
    means: np.ndarray
    stds: np.ndarray = None
    offsets: dict = None
    accent_map: dict = None
    start: dict = None
    trans: dict = None
    translit: TranslitTable = None
    frames_per_chenone: tuple = (1, 3)
    utt_words: tuple = (3, 6)
    config: SynthConfig = None

    def __post_init__(self):
        K = self.num_chenones
        self.means = np.asarray(self.means, dtype=np.float64)
        if self.means.ndim != 2 or self.means.shape[0] != K:
            raise SpecError(f"means must be ({K}, feature_dim)")
        F = self.means.shape[1]
        self.stds = np.zeros_like(self.means) if self.stds is None else np.broadcast_to(np.asarray(self.stds, dtype=np.float64), self.means.shape).copy()
        if np.any(self.stds < 0):
            raise SpecError("emission standard deviations must be non-negative")
        self.offsets = {lang: np.asarray((self.offsets or {}).get(lang, np.zeros(F)), dtype=np.float64) for lang in ("en", "hi")}
        ident = np.arange(K)
        self.accent_map = {lang: np.asarray((self.accent_map or {}).get(lang, ident), dtype=np.int64) for lang in ("en", "hi")}
        self.translit = self.translit or TranslitTable()
        self.start = dict(self.start or {})
        self.trans = dict(self.trans or {})
        for lang, words in self.vocab.items():
            if not words:
                raise SpecError(f"empty vocabulary for {lang!r}")
            lex = self.lexicon.get(lang, {})
            missing = [w for w in words if w not in lex]
            if missing:
                raise SpecError(f"lexicon for {lang!r} misses {missing[:5]}")
            for w in words:
                seq = lex[w]
                if len(seq) == 0 or min(seq) < 0 or max(seq) >= K:
                    raise SpecError(f"bad chenone sequence for {w!r}")
            V = len(words)
            self.start.setdefault(lang, np.full(V, 1.0 / V))
            self.trans.setdefault(lang, np.full((V, V), 1.0 / V))

    @property
    def feature_dim(self):
        return self.means.shape[1]

    def emission_mean(self, lang, chenone):
        return self.means[self.accent_map[lang][chenone]] + self.offsets[lang]


# --------------------------------------------------------------------------
# random world construction


def _hi_word(rng):
    n = rng.integers(2, 4)
    src, lat = "", ""
    for _ in range(n):
        c_src, c_lat = _HI_CONSONANTS[rng.integers(len(_HI_CONSONANTS))]
        v_src, v_lat = _HI_VOWELS[rng.integers(len(_HI_VOWELS))]
        src += c_src + v_src
        lat += c_lat + v_lat
    return src, lat


def _en_word(rng):
    w = _EN_ONSETS[rng.integers(len(_EN_ONSETS))] + _EN_NUCLEI[rng.integers(len(_EN_NUCLEI))]
    if rng.random() < 0.5:
        w += _EN_CODAS[rng.integers(len(_EN_CODAS))]
    else:
        w += _EN_ONSETS[rng.integers(len(_EN_ONSETS))][0] + _EN_NUCLEI[rng.integers(len(_EN_NUCLEI))]
    return w


def _variant(latin, taken):
    for old, new in _SPELLING_VARIANTS:
        if old in latin:
            cand = new.join(latin.rsplit(old, 1))
            if cand not in taken:
                return cand
    cand = latin + "h"
    while cand in taken:
        cand += "h"
    return cand


def _bigram(rng, V, branching):
    start = rng.dirichlet(np.ones(V))
    trans = np.full((V, V), 0.02 / V)
    for i in range(V):
        succ = rng.choice(V, size=min(branching, V), replace=False)
        trans[i, succ] += 0.98 * rng.dirichlet(np.ones(len(succ)))
    trans /= trans.sum(axis=1, keepdims=True)
    return start, trans


def make_spec(config=None, seed=0):
    """Random bilingual world: vocabularies, lexicons, emissions, generators."""
    cfg = config or SynthConfig()
    rng = np.random.default_rng([seed, 0x5EED])
    K, F, A = cfg.num_chenones, cfg.feature_dim, cfg.accent_dims

    en_words, hi_src, hi_lat = [], [], []
    taken = set()
    while len(en_words) < cfg.vocab_size:
        w = _en_word(rng)
        if w not in taken:
            taken.add(w)
            en_words.append(w)
    while len(hi_src) < cfg.vocab_size:
        s, lat = _hi_word(rng)
        if s not in hi_src and lat not in taken:
            taken.add(lat)
            hi_src.append(s)
            hi_lat.append(lat)

    seqs = set()
    n_twins = int(round(cfg.twin_fraction * cfg.vocab_size)) if round(cfg.accent_fraction * K) >= 2 else 0
    # English words outside the twin pairs use every chenone at least once
    # (when there are enough slots), so an English-only model has heard them all
    unseen = [int(c) for c in rng.permutation(K)]

    def new_seq(cover=False):
        while True:
            n = int(rng.integers(cfg.word_len_min, cfg.word_len_max + 1))
            seq = [int(c) for c in rng.integers(0, K, size=n)]
            take = min(n, len(unseen)) if cover else 0
            seq[:take] = unseen[len(unseen) - take:]
            if tuple(seq) not in seqs:
                del unseen[len(unseen) - take:]
                seqs.add(tuple(seq))
                return tuple(seq)

    lexicon = {
        "en": {w: new_seq(cover=i >= n_twins) for i, w in enumerate(en_words)},
        "hi": {w: new_seq() for w in hi_src},
    }

    means = np.zeros((K, F))
    means[:, : F - A] = rng.normal(0.0, cfg.mean_scale, size=(K, F - A))
    direction = np.zeros(F)
    direction[F - A:] = 1.0 / np.sqrt(A)
    offsets = {"en": 0.5 * cfg.offset * direction, "hi": -0.5 * cfg.offset * direction}
    perm = np.arange(K)
    n_accent = int(round(cfg.accent_fraction * K))
    moved = np.zeros(0, dtype=np.int64)
    if n_accent >= 2:
        moved = rng.choice(K, size=n_accent, replace=False)
        perm[moved] = moved[np.roll(np.arange(n_accent), 1)]
    accent_map = {"en": np.arange(K), "hi": perm}

    # cross-language near-homophones: an English word that sounds exactly like
    # an accented Hindi word, distinguishable only through the accent
    for j in range(n_twins):
        hw, ew = hi_src[j], en_words[j]
        seqs.discard(lexicon["hi"][hw])
        seqs.discard(lexicon["en"][ew])
        seq = list(lexicon["hi"][hw])
        while True:
            seq[int(rng.integers(len(seq)))] = int(rng.choice(moved))
            twin = tuple(int(perm[c]) for c in seq)
            if tuple(seq) not in seqs and twin not in seqs:
                break
        lexicon["hi"][hw] = tuple(seq)
        lexicon["en"][ew] = twin
        seqs.update((tuple(seq), twin))

    start, trans = {}, {}
    for lang in ("en", "hi"):
        start[lang], trans[lang] = _bigram(rng, cfg.vocab_size, cfg.branching)

    # homographs: a Hindi word whose Latin spelling depends on the previous word
    table = dict(zip(hi_src, hi_lat))
    rules = []
    V = cfg.vocab_size
    picks = rng.choice(V, size=min(2 * cfg.homographs, V), replace=False)
    for h in range(min(cfg.homographs, len(picks) // 2)):
        word, trigger = int(picks[2 * h]), int(picks[2 * h + 1])
        alt = _variant(hi_lat[word], taken)
        taken.add(alt)
        rules.append(ContextRule(hi_src[word], alt, "prev", hi_src[trigger]))
        # make the trigger context common so both spellings are well attested
        row = trans["hi"][trigger]
        row *= 0.5
        row[word] += 0.5
    translit = TranslitTable(table, rules)

    return SynthSpec(
        num_chenones=K,
        vocab={"en": en_words, "hi": hi_src},
        lexicon=lexicon,
        means=means,
        stds=np.full((K, F), cfg.noise),
        offsets=offsets,
        accent_map=accent_map,
        start=start,
        trans=trans,
        translit=translit,
        frames_per_chenone=(cfg.frames_per_chenone_min, cfg.frames_per_chenone_max),
        utt_words=(cfg.utt_words_min, cfg.utt_words_max),
        config=cfg,
    )


# --------------------------------------------------------------------------
# generation


@dataclass
class Utterance:
    id: str
    lang: str
    words: list
    frames: np.ndarray
    labels: np.ndarray
    tags: list
    source: list = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.tags = list(self.tags)
        if not (len(self.labels) == len(self.frames) == len(self.tags)):
            raise DataError(f"{self.id}: frames/labels/tags length mismatch")

    @property
    def num_frames(self):
        return len(self.labels)


def _sample_sentence(spec, lang, rng, num_words=None):
    words = spec.vocab[lang]
    n = num_words or int(rng.integers(spec.utt_words[0], spec.utt_words[1] + 1))
    idx = [int(rng.choice(len(words), p=spec.start[lang]))]
    for _ in range(n - 1):
        idx.append(int(rng.choice(len(words), p=spec.trans[lang][idx[-1]])))
    return [words[i] for i in idx]


def generate_text(spec, lang, num_sentences, seed, switch_fraction=0.0):
    """Source-script token sequences from the language's bigram generator.

    With ``switch_fraction > 0`` that share of the sentences is drawn from the
    other language instead, like English sentences turning up in Hindi text.
    """
    if lang not in spec.vocab:
        raise SpecError(f"no vocabulary for {lang!r}")
    if not 0 <= switch_fraction < 1:
        raise SpecError("switch_fraction must lie in [0, 1)")
    other = "hi" if lang == "en" else "en"
    rng = np.random.default_rng([seed, LANG_CODES[lang], 0x7E47])
    out = []
    for _ in range(num_sentences):
        switch = switch_fraction > 0 and rng.random() < switch_fraction
        out.append(_sample_sentence(spec, other if switch else lang, rng))
    return out


def _realise(spec, lang, source_words, rng):
    """Latin words, frames, labels for one single-language segment."""
    if lang == "hi":
        latin, _ = transliterate_tokens(source_words, spec.translit, contextual=True)
    else:
        latin = list(source_words)
    lo, hi = spec.frames_per_chenone
    labels = []
    for w in source_words:
        for c in spec.lexicon[lang][w]:
            labels.extend([c] * int(rng.integers(lo, hi + 1)))
    labels = np.asarray(labels, dtype=np.int64)
    mean = spec.means[spec.accent_map[lang][labels]] + spec.offsets[lang]
    frames = mean + spec.stds[labels] * rng.standard_normal(mean.shape)
    return latin, frames, labels


def synthesize_language(spec, lang, num_utts, seed):
    if num_utts <= 0:
        raise SpecError("num_utts must be positive")
    if lang not in ("en", "hi"):
        raise SpecError(f"unknown language {lang!r}")
    if not spec.vocab.get(lang):
        raise SpecError(f"empty vocabulary for {lang!r}")
    utts = []
    for i in range(num_utts):
        rng = np.random.default_rng([seed, LANG_CODES[lang], i])
        src = _sample_sentence(spec, lang, rng)
        latin, frames, labels = _realise(spec, lang, src, rng)
        utts.append(Utterance(f"{lang}-{seed}-{i:05d}", lang, latin, frames, labels, [lang] * len(labels), src))
    return utts


def synthesize_codemix(spec, ratio_hi, num_utts, seed):
    """Utterances alternating English and Hindi segments.

    Segment languages follow a running frame quota so the corpus-level share
    of Hindi frames tracks ``ratio_hi``; every utterance holds both languages.
    """
    if not 0 < ratio_hi < 1:
        raise SpecError("ratio_hi must lie strictly between 0 and 1")
    if num_utts <= 0:
        raise SpecError("num_utts must be positive")
    hi_frames = total = 0
    utts = []
    for i in range(num_utts):
        rng = np.random.default_rng([seed, LANG_CODES["mix"], i])
        target = int(rng.integers(max(2, spec.utt_words[0]), max(2, spec.utt_words[1]) + 1))
        parts, langs_used, n_words = [], set(), 0
        while n_words < target or len(langs_used) < 2:
            if n_words >= target:
                lang = ({"en", "hi"} - langs_used).pop()
            elif total == 0:
                lang = "hi" if rng.random() < ratio_hi else "en"
            else:
                lang = "hi" if hi_frames / total < ratio_hi else "en"
            k = int(rng.integers(1, 3))
            src = _sample_sentence(spec, lang, rng, num_words=k)
            latin, frames, labels = _realise(spec, lang, src, rng)
            parts.append((lang, src, latin, frames, labels))
            langs_used.add(lang)
            n_words += k
            total += len(labels)
            if lang == "hi":
                hi_frames += len(labels)
        utts.append(Utterance(
            id=f"mix-{seed}-{i:05d}",
            lang="mix",
            words=[w for p in parts for w in p[2]],
            frames=np.concatenate([p[3] for p in parts]),
            labels=np.concatenate([p[4] for p in parts]),
            tags=[p[0] for p in parts for _ in range(len(p[4]))],
            source=[w for p in parts for w in p[1]],
        ))
    return utts


def transliterate_lexicon(hi_lexicon, provider):
    """Re-key a source-script lexicon by Latin form; chenones untouched.

    ``provider`` is a :class:`~sha_asr.translit.TranslitProvider` or a plain
    mapping of source word to Latin word.
    """
    lookup = provider.get if isinstance(provider, dict) else provider.word
    out, origin, missing = {}, {}, []
    for src, seq in hi_lexicon.items():
        lat = lookup(src)
        if not lat:
            missing.append(src)
            continue
        if lat in out and origin[lat] != src:
            raise CoverageError(f"Latin form {lat!r} produced by both {origin[lat]!r} and {src!r}", [origin[lat], src])
        out[lat] = tuple(seq)
        origin[lat] = src
    if missing:
        raise CoverageError(f"no transliteration for {len(missing)} word(s): {missing}", missing)
    return out


def decoding_lexicon(spec):
    """Latin-keyed lexicon over both languages, including contextual spellings."""
    lex = dict(spec.lexicon["en"])
    for src, seq in spec.lexicon["hi"].items():
        forms = spec.translit.latin_forms(src) if src in spec.translit.table else [src]
        for lat in forms:
            if lat in lex and lex[lat] != seq:
                raise CoverageError(f"Latin form {lat!r} collides across languages", [lat])
            lex[lat] = tuple(seq)
    return lex


def nearest_mean_language_accuracy(spec, utts):
    """Frame-language accuracy of a nearest-mean rule that knows the chenone."""
    correct = n = 0
    for u in utts:
        d = {}
        for lang in ("en", "hi"):
            mu = spec.means[spec.accent_map[lang][u.labels]] + spec.offsets[lang]
            d[lang] = ((u.frames - mu) ** 2).sum(axis=1)
        guess = np.where(d["en"] <= d["hi"], "en", "hi")
        correct += int((guess == np.asarray(u.tags)).sum())
        n += u.num_frames
    return correct / n


# --------------------------------------------------------------------------
# files


def _encode_frames(frames):
    arr = np.ascontiguousarray(frames, dtype="<f8")
    return {"shape": list(arr.shape), "f64le": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode_frames(obj):
    raw = base64.b64decode(obj["f64le"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).astype(np.float64)


def write_corpus(utts, path):
    with open(path, "w", encoding="utf-8") as fh:
        for u in utts:
            rec = {
                "id": u.id,
                "lang": u.lang,
                "words": list(u.words),
                "source": list(u.source),
                "labels": [int(x) for x in u.labels],
                "tags": list(u.tags),
                "frames": _encode_frames(u.frames),
            }
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def read_corpus(path):
    utts = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                utts.append(Utterance(rec["id"], rec["lang"], rec["words"], _decode_frames(rec["frames"]), rec["labels"], rec["tags"], rec.get("source", [])))
            except (KeyError, ValueError) as exc:
                raise ParseError(f"bad corpus record: {exc}", n) from exc
    return utts


def write_lexicon(lexicon, path):
    with open(path, "w", encoding="utf-8") as fh:
        for w, seq in lexicon.items():
            fh.write(f"{w}\t{','.join(str(int(c)) for c in seq)}\n")


def read_lexicon(path):
    lex = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected 'word TAB chenone,chenone,...'", n)
            try:
                seq = tuple(int(c) for c in parts[1].split(","))
            except ValueError as exc:
                raise ParseError(f"bad chenone list {parts[1]!r}", n) from exc
            lex[parts[0]] = seq
    return lex


def spec_to_json(spec):
    """Serialisable form of a spec (used for run snapshots and `synth`)."""
    return {
        "num_chenones": spec.num_chenones,
        "vocab": spec.vocab,
        "lexicon": {lang: {w: list(s) for w, s in lex.items()} for lang, lex in spec.lexicon.items()},
        "means": spec.means.tolist(),
        "stds": spec.stds.tolist(),
        "offsets": {k: v.tolist() for k, v in spec.offsets.items()},
        "accent_map": {k: v.tolist() for k, v in spec.accent_map.items()},
        "start": {k: np.asarray(v).tolist() for k, v in spec.start.items()},
        "trans": {k: np.asarray(v).tolist() for k, v in spec.trans.items()},
        "translit": {"table": spec.translit.table, "rules": [[r.source, r.latin, r.to_field()] for r in spec.translit.rules]},
        "frames_per_chenone": list(spec.frames_per_chenone),
        "utt_words": list(spec.utt_words),
        "config": asdict(spec.config) if spec.config else None,
    }


def spec_from_json(d):
    from .translit import parse_predicate

    rules = []
    for src, lat, pred in d["translit"]["rules"]:
        kind, tok = parse_predicate(pred)
        rules.append(ContextRule(src, lat, kind, tok))
    cfg = None
    if d.get("config"):
        known = {f.name for f in fields(SynthConfig)}
        if set(d["config"]) - known:
            raise ConfigError("unknown synth config keys in spec file")
        cfg = SynthConfig(**d["config"])
    return SynthSpec(
        num_chenones=d["num_chenones"],
        vocab=d["vocab"],
        lexicon={lang: {w: tuple(s) for w, s in lex.items()} for lang, lex in d["lexicon"].items()},
        means=np.asarray(d["means"]),
        stds=np.asarray(d["stds"]),
        offsets={k: np.asarray(v) for k, v in d["offsets"].items()},
        accent_map={k: np.asarray(v) for k, v in d["accent_map"].items()},
        start={k: np.asarray(v) for k, v in d["start"].items()},
        trans={k: np.asarray(v) for k, v in d["trans"].items()},
        translit=TranslitTable(d["translit"]["table"], rules),
        frames_per_chenone=tuple(d["frames_per_chenone"]),
        utt_words=tuple(d["utt_words"]),
        config=cfg,
    )
