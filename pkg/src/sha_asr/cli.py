"""``sha-asr`` command line.

Every subcommand reads ``--config`` (INI, optional), applies ``--seed`` and
``--out`` overrides and writes its artifacts under the run directory.
Exit codes: 0 success, 2 configuration error, 3 data/model/I-O error,
4 remote service error, 1 anything else from this package.
"""
import argparse
import csv
import json
import logging
import os
import sys

from . import analysis, corpus, decoder, lm, model, pipeline, trainer
from .config import load_config
from .errors import ConfigError, DataError, ShaAsrError
from .translit import RemoteConfig, TranslitProvider, read_table

log = logging.getLogger("sha_asr")

TRAIN_STAGES = ("baseline", "single", "split", "attention_only", "full")


def _out(cfg, *parts):
    os.makedirs(cfg.out, exist_ok=True)
    return os.path.join(cfg.out, *parts)


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh if line.strip()]


def _write_lines(path, sentences):
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(" ".join(s) + "\n")


def _load_corpora(data_dir, names):
    out = {}
    for name in names:
        path = os.path.join(data_dir, f"{name}.jsonl")
        if os.path.exists(path):
            out[name] = corpus.read_corpus(path)
    if not out:
        raise DataError(f"no corpora found in {data_dir}")
    return out


def _load_lm(args):
    lm_en = lm.import_arpa(args.lm)
    if getattr(args, "lm_hi", None):
        return lm.interpolate(lm_en, lm.import_arpa(args.lm_hi), args.lambda_en)
    return lm_en


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg, args):
    wb_spec = corpus.make_spec(cfg.synth, cfg.seed_for("spec"))
    d = cfg.data
    parts = {
        "train_en": corpus.synthesize_language(wb_spec, "en", d.train_en, cfg.seed_for("train.en")),
        "train_hi": corpus.synthesize_language(wb_spec, "hi", d.train_hi, cfg.seed_for("train.hi")),
        "train_mix": corpus.synthesize_codemix(wb_spec, d.mix_ratio_hi, d.train_mix, cfg.seed_for("train.mix")),
        "test_en": corpus.synthesize_language(wb_spec, "en", d.test_en, cfg.seed_for("test.en")),
        "test_hi": corpus.synthesize_language(wb_spec, "hi", d.test_hi, cfg.seed_for("test.hi")),
    }
    for name, utts in parts.items():
        corpus.write_corpus(utts, _out(cfg, f"{name}.jsonl"))
    with open(_out(cfg, "spec.json"), "w", encoding="utf-8") as fh:
        json.dump(corpus.spec_to_json(wb_spec), fh, sort_keys=True, ensure_ascii=False)
    corpus.write_lexicon(corpus.decoding_lexicon(wb_spec), _out(cfg, "lexicon.txt"))
    _write_lines(_out(cfg, "lm_text_en.txt"), corpus.generate_text(wb_spec, "en", d.lm_sentences, cfg.seed_for("lmtext.en")))
    _write_lines(_out(cfg, "lm_text_hi_src.txt"), corpus.generate_text(wb_spec, "hi", d.lm_sentences, cfg.seed_for("lmtext.hi"), d.lm_hi_en_fraction))
    table = wb_spec.translit
    from .translit import write_table

    write_table(table, _out(cfg, "translit_table.tsv"), _out(cfg, "translit_rules.tsv"))
    cfg.write(_out(cfg, "config.ini"))
    print(f"wrote {sum(len(u) for u in parts.values())} utterances to {cfg.out}")


def _train_corpora(args, cfg):
    data = args.data or cfg.out
    got = _load_corpora(data, ["train_en", "train_hi", "train_mix"])
    return {k.split("_")[1]: v for k, v in got.items()}


def cmd_train(cfg, args):
    corpora = _train_corpora(args, cfg)
    name = args.stage
    plan = cfg.stages[name]
    if name in ("baseline", "single"):
        m = model.init_singlehead(cfg.model, cfg.seed_for(f"init.{name}"))
    else:
        if not args.init:
            raise ConfigError(f"stage {name!r} needs --init CHECKPOINT")
        m = model.load_checkpoint(args.init)
        if name == "split":
            m = model.split_from_single(m, cfg.seed_for("init.attention"))
    res = trainer.train_stage(m, corpora, plan, seed=cfg.seed_for(f"stage.{name}"))
    res.write_csv(_out(cfg, f"loss_{name}.csv"))
    model.save_checkpoint(res.model, _out(cfg, f"model_{name}.ckpt"))
    cfg.write(_out(cfg, "config.ini"))
    print(f"{name}: loss {res.history[0][2]:.4f} -> {res.history[-1][2]:.4f}" if res.history else f"{name}: no updates")


def cmd_distill(cfg, args):
    corpora = _train_corpora(args, cfg)
    student = model.load_checkpoint(args.student)
    teacher_model = model.load_checkpoint(args.teacher) if args.teacher else student.copy()
    teacher = trainer.ensemble_teacher_fn(teacher_model, student.copy(), cfg.distill.teacher_weights)
    res = trainer.distill(student, teacher, corpora, cfg.distill, cfg.stages["distill"], seed=cfg.seed_for("stage.distill"))
    res.write_csv(_out(cfg, "loss_distill.csv"))
    model.save_checkpoint(res.model, _out(cfg, "model_distill.ckpt"))
    print(f"distill: loss {res.history[0][2]:.4f} -> {res.history[-1][2]:.4f}" if res.history else "distill: no updates")


def cmd_lm_build(cfg, args):
    text = _read_lines(args.text)
    m = lm.estimate(lm.count_ngrams(text, args.order or cfg.lm.order), cfg.lm.smoothing)
    path = args.output or _out(cfg, os.path.splitext(os.path.basename(args.text))[0] + ".arpa")
    lm.export_arpa(m, path)
    print(f"wrote {path}")


def cmd_lm_interp(cfg, args):
    lam = cfg.lm.lambda_en if args.lambda_en is None else args.lambda_en
    lm_en = lm.import_arpa(args.en)
    lm_hi = lm.import_arpa(args.hi)
    mix = lm.interpolate(lm_en, lm_hi, lam)
    rows = []
    for label, path in (("en", args.test_en), ("hi", args.test_hi)):
        if path:
            text = _read_lines(path)
            rows.append((label, lm.perplexity(lm_en, text), lm.perplexity(mix, text)))
    with open(_out(cfg, "perplexity.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["testset", "ppl_en_lm", "ppl_interpolated"])
        for label, a, b in rows:
            w.writerow([label, f"{a:.4f}", f"{b:.4f}"])
    with open(_out(cfg, "interpolated_lm.json"), "w", encoding="utf-8") as fh:
        json.dump({"components": [os.path.abspath(args.en), os.path.abspath(args.hi)], "weights": [lam, 1.0 - lam]}, fh, indent=2)
    for label, a, b in rows:
        print(f"{label}: en-only ppl {a:.3f}  interpolated ppl {b:.3f}")


def cmd_translit(cfg, args):
    table = read_table(args.table, args.rules) if args.table else None
    if args.mode == "remote":
        provider = TranslitProvider("remote", remote=RemoteConfig(args.url, cache_path=args.cache))
    else:
        provider = TranslitProvider("word_table" if args.mode == "word" else "contextual_rules", table=table)
    sentences = [" ".join(s) for s in _read_lines(args.input)]
    out = provider.transliterate_many(sentences)
    path = args.output or _out(cfg, "translit.txt")
    with open(path, "w", encoding="utf-8") as fh:
        for r in out:
            fh.write(r.text + "\n")
    misses = sorted({m for r in out for m in r.misses})
    print(f"wrote {len(out)} sentences to {path}; {len(misses)} untransliterated token types")


def _posterior_fn(args, num_chenones):
    if args.oracle:
        return decoder.oracle_posteriors(num_chenones)
    m = model.load_checkpoint(args.model)

    def fn(u):
        return model.utterance_log_posteriors(m, u.frames, mode=args.mode)[0]

    return fn


def _decode_setup(cfg, args):
    lexicon = decoder.Lexicon(corpus.read_lexicon(args.lexicon), cfg.model.num_chenones)
    lm_ = _load_lm(args)
    if not args.oracle and not args.model:
        raise ConfigError("give --model CHECKPOINT or --oracle")
    return lexicon, lm_, _posterior_fn(args, cfg.model.num_chenones)


def cmd_decode(cfg, args):
    lexicon, lm_, post = _decode_setup(cfg, args)
    graph = decoder.SearchGraph(lexicon.restrict(lm_.vocab), lm_)
    path = args.output or _out(cfg, "hypotheses.txt")
    with open(path, "w", encoding="utf-8") as fh:
        for cpath in args.corpus:
            for u in corpus.read_corpus(cpath):
                res = decoder.decode(post(u), lexicon, lm_, cfg.decode, is_log=True, graph=graph)
                fh.write(f"{u.id}\t{' '.join(res.words)}\n")
    print(f"wrote {path}")


def cmd_eval(cfg, args):
    lexicon, lm_, post = _decode_setup(cfg, args)
    system = args.system or ("oracle" if args.oracle else os.path.basename(args.model))
    rows = []
    for cpath in args.corpus:
        found = decoder.evaluate_testset(post, None, corpus.read_corpus(cpath), lexicon, lm_, cfg.decode, system)
        rows.extend(found.values())
    path = args.output or _out(cfg, "wer.csv")
    decoder.write_report(rows, path)
    for r in rows:
        print(f"{r.system}\t{r.testset}\tWER {r.wer:.2f}  (S={r.substitutions} D={r.deletions} I={r.insertions}, {r.utts} utts)")


def cmd_analyze(cfg, args):
    m = model.load_checkpoint(args.model)
    utts = [u for p in args.corpus for u in corpus.read_corpus(p)]
    samples = analysis.collect_weights(m, utts)
    summary = analysis.lid_summary(samples, k=cfg.analysis.components, seed=cfg.seed_for("gmm"), restarts=cfg.analysis.restarts)
    for lang, vals in analysis.weights_by_language(samples).items():
        analysis.export_histogram(vals, cfg.analysis.bins, _out(cfg, f"lid_hist_{lang}.csv"))
    analysis.write_fits({k: v["fit"] for k, v in summary.items()}, _out(cfg, "lid_gmm.csv"))
    for lang, v in summary.items():
        print(f"{lang}: mean w_{lang} {v['mean']:.4f} over {v['frames']} frames; dominant GMM mean {v['fit'].dominant_mean:.4f}")


def cmd_reproduce(cfg, args):
    result = pipeline.reproduce_trend(cfg, cfg.out)
    print(pipeline.format_table(result.rows))
    print()
    for key, (ok, msg) in pipeline.trend_checks(result).items():
        print(f"({key}) {'PASS' if ok else 'FAIL'}  {msg}")
    for lang, v in result.lid.items():
        print(f"LID {lang}: mean weight {v['mean']:.4f}, dominant GMM mean {v['fit'].dominant_mean:.4f}")
    p = result.params
    print(f"parameters: SingleHead {p['singlehead']}, SHA {p['sha']} (+{p['overhead']} = tower {p['tower']} + attention {p['attention']}), overhead ratio {100 * p['overhead_ratio']:.2f}%")
    print(f"artifacts in {cfg.out}")


# --------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", help="run directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="sha-asr", description="Bilingual SHA acoustic model workbench")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="generate synthetic corpora, lexicon and LM text")

    s = sub.add_parser("train", parents=[common], help="run one training stage")
    s.add_argument("--stage", choices=TRAIN_STAGES, required=True)
    s.add_argument("--data", help="directory holding train_*.jsonl (default: run directory)")
    s.add_argument("--init", help="input checkpoint for split/attention_only/full")

    s = sub.add_parser("distill", parents=[common], help="teacher-student fine-tuning of an SHA model")
    s.add_argument("--student", required=True)
    s.add_argument("--teacher", help="non-streaming teacher checkpoint (default: frozen copy of the student)")
    s.add_argument("--data")

    s = sub.add_parser("lm-build", parents=[common], help="estimate an ARPA n-gram LM from text")
    s.add_argument("--text", required=True)
    s.add_argument("--order", type=int)
    s.add_argument("--output")

    s = sub.add_parser("lm-interp", parents=[common], help="interpolate two LMs and compare perplexities")
    s.add_argument("--en", required=True)
    s.add_argument("--hi", required=True)
    s.add_argument("--lambda-en", type=float, dest="lambda_en")
    s.add_argument("--test-en")
    s.add_argument("--test-hi")

    s = sub.add_parser("translit", parents=[common], help="transliterate source-script text to Latin")
    s.add_argument("--input", required=True)
    s.add_argument("--mode", choices=("word", "contextual", "remote"), default="contextual")
    s.add_argument("--table")
    s.add_argument("--rules")
    s.add_argument("--url")
    s.add_argument("--cache")
    s.add_argument("--output")

    for name, helptext in (("decode", "decode corpora to word hypotheses"), ("eval", "decode and score WER")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--model")
        s.add_argument("--oracle", action="store_true", help="use oracle posteriors instead of a model")
        s.add_argument("--mode", choices=model.MODES)
        s.add_argument("--lexicon", required=True)
        s.add_argument("--lm", required=True, help="ARPA LM (English component when --lm-hi is given)")
        s.add_argument("--lm-hi", dest="lm_hi")
        s.add_argument("--lambda-en", type=float, dest="lambda_en", default=0.9)
        s.add_argument("--corpus", nargs="+", required=True)
        s.add_argument("--output")
        if name == "eval":
            s.add_argument("--system")

    s = sub.add_parser("analyze", parents=[common], help="attention-weight histograms and GMM fits")
    s.add_argument("--model", required=True)
    s.add_argument("--corpus", nargs="+", required=True)

    sub.add_parser("reproduce-trend", parents=[common], help="run the whole toy experiment and print the WER table")
    return p


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "distill": cmd_distill,
    "lm-build": cmd_lm_build,
    "lm-interp": cmd_lm_interp,
    "translit": cmd_translit,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "reproduce-trend": cmd_reproduce,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, out=args.out)
        COMMANDS[args.command](cfg, args)
    except ShaAsrError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [I/O]: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
