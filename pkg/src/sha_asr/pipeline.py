"""End-to-end toy experiment: synthesis, staged training, LMs, decoding, WER table.

Systems (rows of the WER table):

======  ==========================================  ==========
row     acoustic model                              LM
======  ==========================================  ==========
I       English-only SingleHead                     English
II      English-only SingleHead                     Hinglish
II-w    English-only SingleHead                     Hinglish built with word-based transliteration
III     pooled SingleHead                           Hinglish
IV      SplitHead, each test set on its own head    Hinglish
V       SHA after attention-only training           Hinglish
VI      SHA after full training                     Hinglish
VII     SHA after distillation                      Hinglish
======  ==========================================  ==========

``IV-hi-head`` and ``IV-en-head`` decode the Hindi test set through one head.
"""
import json
import logging
import os
from dataclasses import dataclass, field

from . import analysis, corpus, decoder, lm, model, trainer
from .translit import TranslitProvider, transliterate_tokens

log = logging.getLogger(__name__)

TABLE_ORDER = ["I", "II", "II-w", "III", "IV", "IV-hi-head", "IV-en-head", "V", "VI", "VII"]


@dataclass
class Workbench:
    """Everything built before acoustic training."""

    spec: corpus.SynthSpec
    train: dict
    test: dict
    lexicon: decoder.Lexicon
    lm_en: lm.NGramModel
    lm_hi: lm.NGramModel
    lm_hi_word: lm.NGramModel
    hinglish: lm.InterpolatedLM
    hinglish_word: lm.InterpolatedLM


@dataclass
class TrendResult:
    rows: list
    models: dict
    lid: dict
    params: dict
    frame_accuracy: dict = field(default_factory=dict)

    def wer(self, system, testset):
        for r in self.rows:
            if r.system == system and r.testset == testset:
                return r.wer
        raise KeyError((system, testset))


def hindi_lm_text(spec, sentences, how):
    """Latin-script LM text from Hindi source sentences, per ``how`` (contextual|word).

    Tokens outside the table (English words in the Hindi text) pass through.
    """
    out = []
    for s in sentences:
        latin, _ = transliterate_tokens(s, spec.translit, contextual=(how == "contextual"))
        out.append(latin)
    return out


def build_workbench(cfg):
    spec = corpus.make_spec(cfg.synth, cfg.seed_for("spec"))
    d = cfg.data
    train = {
        "en": corpus.synthesize_language(spec, "en", d.train_en, cfg.seed_for("train.en")),
        "hi": corpus.synthesize_language(spec, "hi", d.train_hi, cfg.seed_for("train.hi")),
        "mix": corpus.synthesize_codemix(spec, d.mix_ratio_hi, d.train_mix, cfg.seed_for("train.mix")),
    }
    test = {
        "en": corpus.synthesize_language(spec, "en", d.test_en, cfg.seed_for("test.en")),
        "hi": corpus.synthesize_language(spec, "hi", d.test_hi, cfg.seed_for("test.hi")),
    }
    en_text = corpus.generate_text(spec, "en", d.lm_sentences, cfg.seed_for("lmtext.en"))
    hi_src = corpus.generate_text(spec, "hi", d.lm_sentences, cfg.seed_for("lmtext.hi"), d.lm_hi_en_fraction)
    order = cfg.lm.order
    lm_en = lm.estimate(lm.count_ngrams(en_text, order), cfg.lm.smoothing)
    lm_hi = lm.estimate(lm.count_ngrams(hindi_lm_text(spec, hi_src, cfg.lm.transliteration), order), cfg.lm.smoothing)
    lm_hi_word = lm.estimate(lm.count_ngrams(hindi_lm_text(spec, hi_src, "word"), order), cfg.lm.smoothing)
    lexicon = decoder.Lexicon(corpus.decoding_lexicon(spec), spec.num_chenones)
    return Workbench(
        spec, train, test, lexicon, lm_en, lm_hi, lm_hi_word,
        lm.interpolate(lm_en, lm_hi, cfg.lm.lambda_en),
        lm.interpolate(lm_en, lm_hi_word, cfg.lm.lambda_en),
    )


def _stage(name, m, wb, cfg, out_dir):
    res = trainer.train_stage(m, wb.train, cfg.stages[name], seed=cfg.seed_for(f"stage.{name}"))
    _save(res, name, out_dir)
    log.info("stage %s: loss %.4f -> %.4f", name, res.history[0][2], res.history[-1][2])
    return res.model


def _save(res, name, out_dir):
    if out_dir is not None:
        res.write_csv(os.path.join(out_dir, f"loss_{name}.csv"))
        model.save_checkpoint(res.model, os.path.join(out_dir, f"model_{name}.ckpt"))


def train_all(wb, cfg, out_dir=None):
    """Baseline English AM plus stages 1-4 and distillation; returns models by name."""
    mc = cfg.model
    models = {}
    models["baseline"] = _stage("baseline", model.init_singlehead(mc, cfg.seed_for("init.baseline")), wb, cfg, out_dir)
    models["single"] = _stage("single", model.init_singlehead(mc, cfg.seed_for("init.single")), wb, cfg, out_dir)
    split = model.split_from_single(models["single"], cfg.seed_for("init.attention"))
    models["split"] = _stage("split", split, wb, cfg, out_dir)
    models["attention_only"] = _stage("attention_only", models["split"], wb, cfg, out_dir)
    models["full"] = _stage("full", models["attention_only"], wb, cfg, out_dir)
    # teacher: frozen stage-4 SHA, once with full-utterance context and once streaming
    frozen = models["full"].copy()
    teacher = trainer.ensemble_teacher_fn(frozen, frozen, cfg.distill.teacher_weights)
    res = trainer.distill(models["full"], teacher, wb.train, cfg.distill, cfg.stages["distill"], seed=cfg.seed_for("stage.distill"))
    _save(res, "distill", out_dir)
    models["distill"] = res.model
    return models


def evaluate_systems(wb, models, cfg):
    dc = cfg.decode
    graphs = {}

    def run(system, am, mode, lm_, testset):
        key = id(lm_)
        if key not in graphs:
            graphs[key] = decoder.SearchGraph(wb.lexicon.restrict(lm_.vocab), lm_)
        row = decoder.WerRow(system, testset)
        for u in wb.test[testset]:
            lp, _ = model.utterance_log_posteriors(am, u.frames, mode=mode)
            res = decoder.decode(lp, wb.lexicon, lm_, dc, is_log=True, graph=graphs[key])
            row.add(decoder.wer(u.words, res.words))
        log.info("%s/%s: WER %.2f", system, testset, row.wer)
        return row

    plan = [
        ("I", models["baseline"], {"en": "single", "hi": "single"}, wb.lm_en),
        ("II", models["baseline"], {"en": "single", "hi": "single"}, wb.hinglish),
        ("II-w", models["baseline"], {"en": "single", "hi": "single"}, wb.hinglish_word),
        ("III", models["single"], {"en": "single", "hi": "single"}, wb.hinglish),
        ("IV", models["split"], {"en": "head-en", "hi": "head-hi"}, wb.hinglish),
        ("IV-hi-head", models["split"], {"hi": "head-hi"}, wb.hinglish),
        ("IV-en-head", models["split"], {"hi": "head-en"}, wb.hinglish),
        ("V", models["attention_only"], {"en": "sha", "hi": "sha"}, wb.hinglish),
        ("VI", models["full"], {"en": "sha", "hi": "sha"}, wb.hinglish),
        ("VII", models["distill"], {"en": "sha", "hi": "sha"}, wb.hinglish),
    ]
    rows = []
    for system, am, modes, lm_ in plan:
        for testset in ("en", "hi"):
            if testset in modes:
                rows.append(run(system, am, modes[testset], lm_, testset))
    return rows


def trend_checks(result):
    """Directional checks on the WER table: name -> (passed, detail)."""
    w = result.wer
    base_en, base_hi = w("I", "en"), w("I", "hi")
    out = {}
    out["a"] = (base_hi >= 60.0, f"row I hi WER {base_hi:.2f} >= 60")
    for key, system, need in (("b", "II", 30.0), ("c", "VII", 50.0)):
        rel = 100.0 * (base_hi - w(system, "hi")) / base_hi if base_hi else 0.0
        reg = w(system, "en") - base_en
        out[key] = (rel >= need and reg <= 1.0, f"row {system}: hi WERR {rel:.1f}% (need >= {need:.0f}), en regression {reg:+.2f} (need <= 1)")
    hi_head, en_head = w("IV-hi-head", "hi"), w("IV-en-head", "hi")
    out["d"] = (hi_head < en_head, f"hi test: hi-head {hi_head:.2f} < en-head {en_head:.2f}")
    return out


def param_report(models):
    single = model.param_count(models["single"])
    sha = model.param_count(models["full"])
    m = models["full"]
    return {
        "singlehead": single,
        "sha": sha,
        "overhead": sha - single,
        "tower": m.tower_size("hi"),
        "attention": m.attention_size(),
        "overhead_ratio": (sha - single) / single,
    }


def lid_report(m, test, cfg, out_dir=None, tag="VII"):
    samples = analysis.collect_weights(m, test["en"] + test["hi"])
    summary = analysis.lid_summary(samples, k=cfg.analysis.components, seed=cfg.seed_for("gmm"), restarts=cfg.analysis.restarts)
    if out_dir is not None:
        by_lang = analysis.weights_by_language(samples)
        for lang, vals in by_lang.items():
            analysis.export_histogram(vals, cfg.analysis.bins, os.path.join(out_dir, f"lid_hist_{tag}_{lang}.csv"))
        analysis.write_fits({k: v["fit"] for k, v in summary.items()}, os.path.join(out_dir, f"lid_gmm_{tag}.csv"))
    return summary


def reproduce_trend(cfg, out_dir=None):
    """Run everything; writes artifacts into ``out_dir`` when given."""
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        cfg.write(os.path.join(out_dir, "config.ini"))
    wb = build_workbench(cfg)
    if out_dir is not None:
        with open(os.path.join(out_dir, "spec.json"), "w", encoding="utf-8") as fh:
            json.dump(corpus.spec_to_json(wb.spec), fh, sort_keys=True, ensure_ascii=False)
        lm.export_arpa(wb.lm_en, os.path.join(out_dir, "lm_en.arpa"))
        lm.export_arpa(wb.lm_hi, os.path.join(out_dir, "lm_hi.arpa"))
        corpus.write_lexicon(dict(zip(wb.lexicon.words, wb.lexicon.seqs)), os.path.join(out_dir, "lexicon.txt"))
    models = train_all(wb, cfg, out_dir)
    rows = evaluate_systems(wb, models, cfg)
    lid = lid_report(models["distill"], wb.test, cfg, out_dir)
    acc = {}
    for name, mode in (("baseline", "single"), ("single", "single"), ("full", "sha"), ("distill", "sha")):
        acc[name] = trainer.evaluate_frame_accuracy(models[name], wb.test["en"] + wb.test["hi"], mode)
    result = TrendResult(rows, models, lid, param_report(models), acc)
    if out_dir is not None:
        decoder.write_report(rows, os.path.join(out_dir, "wer_table.csv"))
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(summary_dict(result), fh, indent=2, sort_keys=True)
    return result


def summary_dict(result):
    checks = trend_checks(result)
    return {
        "wer": [r.as_record() for r in result.rows],
        "trend": {k: {"passed": bool(ok), "detail": msg} for k, (ok, msg) in checks.items()},
        "lid": {
            lang: {
                "mean_weight": v["mean"],
                "frames": v["frames"],
                "gmm_means": [float(x) for x in v["fit"].means],
                "gmm_weights": [float(x) for x in v["fit"].weights],
                "dominant_mean": v["fit"].dominant_mean,
            }
            for lang, v in result.lid.items()
        },
        "params": result.params,
        "frame_accuracy": result.frame_accuracy,
    }


def format_table(rows):
    by = {}
    for r in rows:
        by.setdefault(r.system, {})[r.testset] = r.wer
    lines = [f"{'system':<12}{'en':>8}{'hi':>8}"]
    for s in TABLE_ORDER:
        if s in by:
            cells = [f"{by[s][t]:8.2f}" if t in by[s] else f"{'-':>8}" for t in ("en", "hi")]
            lines.append(f"{s:<12}" + "".join(cells))
    return "\n".join(lines)

