"""Staged training of SingleHead / SplitHead / SHA models and distillation.

Stages and what they update:

==============  =========================================  =====================
stage           trainable groups                           default data
==============  =========================================  =====================
single          shared, tower-single                       pooled (en + hi)
split           shared, tower-en, tower-hi                 pooled
attention_only  attention                                  pooled + mix
full            everything                                 pooled + mix
distill         everything                                 pooled + mix
==============  =========================================  =====================

In ``split`` each frame's loss goes through the tower of its language, so the
shared layers see all data while a tower only sees its own language.
Minibatches hold utterances of one corpus language and are shuffled at the
batch level.
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from .errors import ConfigError, DataError, InventoryError, PlanError
from .model import LANGS, AcousticModel, full_context_chunks, streaming_chunks, utterance_log_posteriors

STAGES = ("single", "split", "attention_only", "full", "distill")
DATA_SELECTORS = ("en-only", "hi-only", "pooled", "pooled+mix")
_DEFAULT_DATA = {"single": "pooled", "split": "pooled", "attention_only": "pooled+mix", "full": "pooled+mix", "distill": "pooled+mix"}


@dataclass(frozen=True)
class StagePlan:
    stage: str
    epochs: int = 5
    batch_size: int = 8
    lr: float = 1e-3
    data: str = None
    full_context: bool = False  # attention sees the rest of the utterance (non-streaming)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise PlanError(f"unknown stage {self.stage!r}")
        if self.data is None:
            object.__setattr__(self, "data", _DEFAULT_DATA[self.stage])
        if self.data not in DATA_SELECTORS:
            raise PlanError(f"unknown data selector {self.data!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise PlanError("epochs >= 0, batch_size >= 1 and lr > 0 required")

    def trainable_groups(self, model):
        groups = set(model.param_groups())
        if self.stage == "split":
            return groups - {"attention"}
        if self.stage == "attention_only":
            return {"attention"}
        return groups

    def check_model(self, model):
        want = "single" if self.stage == "single" else "sha"
        if model.kind != want:
            raise PlanError(f"stage {self.stage!r} needs a {want} model, got {model.kind}")


@dataclass(frozen=True)
class DistillConfig:
    w_kld: float = 0.95
    teacher_weights: tuple = (0.4, 0.6)  # (non-streaming, streaming SHA)

    def __post_init__(self):
        object.__setattr__(self, "teacher_weights", tuple(float(w) for w in self.teacher_weights))
        if not 0.0 <= self.w_kld <= 1.0:
            raise ConfigError("w_kld must lie in [0, 1]")
        if len(self.teacher_weights) != 2 or min(self.teacher_weights) < 0 or abs(sum(self.teacher_weights) - 1.0) > 1e-12:
            raise ConfigError("teacher ensemble weights must be two non-negative numbers summing to 1")


@dataclass
class TrainResult:
    model: AcousticModel
    history: list = field(default_factory=list)  # (epoch, batch, loss)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "batch", "loss"])
            for e, b, loss in self.history:
                w.writerow([e, b, repr(loss)])


# --------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    lang: str
    frames: np.ndarray
    labels: np.ndarray
    tags: np.ndarray
    index: np.ndarray
    mask: np.ndarray
    teacher: np.ndarray = None


def make_batch(utts, lookahead, teacher=None, full_context=False):
    frames, labels, tags, idx, mask, teach = [], [], [], [], [], []
    offset = 0
    width = max(u.num_frames for u in utts) if full_context else lookahead + 1
    for k, u in enumerate(utts):
        T = u.num_frames
        if full_context:
            i, m = full_context_chunks(T)
            pad = width - i.shape[1]
            i = np.pad(i, ((0, 0), (0, pad)), mode="edge")
            m = np.pad(m, ((0, 0), (0, pad)), constant_values=False)
        else:
            i, m = streaming_chunks(T, lookahead)
        frames.append(u.frames)
        labels.append(u.labels)
        tags.extend(u.tags)
        idx.append(i + offset)
        mask.append(m)
        if teacher is not None:
            teach.append(teacher[k])
        offset += T
    langs = {u.lang for u in utts}
    return Batch(
        lang=langs.pop() if len(langs) == 1 else "mix",
        frames=np.concatenate(frames),
        labels=np.concatenate(labels),
        tags=np.asarray(tags),
        index=np.concatenate(idx),
        mask=np.concatenate(mask),
        teacher=np.concatenate(teach) if teacher is not None else None,
    )


def select_data(corpora, selector):
    """``corpora`` maps ``en``/``hi``/``mix`` to utterance lists."""
    keys = {"en-only": ["en"], "hi-only": ["hi"], "pooled": ["en", "hi"], "pooled+mix": ["en", "hi", "mix"]}[selector]
    out = []
    for k in keys:
        out.extend(corpora.get(k, []))
    if not out:
        raise DataError(f"no training data for selector {selector!r}")
    return out


def iterate_batches(utts, batch_size, rng, teacher=None):
    """Language-homogeneous batches in shuffled order; yields (utterances, teacher rows)."""
    by_lang = {}
    for i, u in enumerate(utts):
        by_lang.setdefault(u.lang, []).append(i)
    batches = []
    for lang in sorted(by_lang):
        ids = np.asarray(by_lang[lang])
        ids = ids[rng.permutation(len(ids))]
        for s in range(0, len(ids), batch_size):
            batches.append(ids[s:s + batch_size])
    for b in rng.permutation(len(batches)):
        sel = batches[b]
        yield [utts[i] for i in sel], (None if teacher is None else [teacher[i] for i in sel])


# --------------------------------------------------------------------------
# losses


def distill_loss(log_probs, labels, teacher, w_kld):
    """``(1 - w_kld) * CE(labels) + w_kld * KL(teacher || student)``."""
    ce = nm.cross_entropy(log_probs, labels)
    kld = nm.kl_divergence(teacher, log_probs)
    return nm.mul(ce, 1.0 - w_kld) + nm.mul(kld, w_kld)


def batch_loss(model, batch, stage, w_kld=None):
    if stage == "single":
        lp, _ = model.forward(batch.frames, batch.index, batch.mask, mode="single")
        return nm.cross_entropy(lp, batch.labels)
    if stage == "split":
        hidden = model.shared_hidden(batch.frames)
        loss = None
        n = len(batch.labels)
        for lang in LANGS:
            rows = np.flatnonzero(batch.tags == lang)
            if rows.size == 0:
                continue
            target = nm.take_rows(hidden, batch.index[rows, 0])
            lp = nm.log_softmax(model.tower_logits(lang, target))
            part = nm.mul(nm.cross_entropy(lp, batch.labels[rows]), rows.size / n)
            loss = part if loss is None else loss + part
        return loss
    lp, _ = model.forward(batch.frames, batch.index, batch.mask, mode="sha")
    if stage == "distill":
        return distill_loss(lp, batch.labels, batch.teacher, w_kld)
    return nm.cross_entropy(lp, batch.labels)


def train_step(model, batch, stage, optimizer, w_kld=None):
    """One forward/backward/update; leaves gradients in ``param.grad``."""
    optimizer.zero_grad()
    with nm.Tape() as tape:
        loss = batch_loss(model, batch, stage, w_kld)
        value = loss.item()
        tape.backward(loss)
    optimizer.step()
    return value


def _run(model, utts, plan, seed, teacher=None, w_kld=None):
    plan.check_model(model)
    model = model.copy()
    groups = plan.trainable_groups(model)
    model.set_requires_grad(groups)
    params = [p for name, p in model.params.items() if model.group_of(name) in groups]
    opt = nm.Adam(params, lr=plan.lr)
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(plan.epochs):
        for b, (chunk, teach) in enumerate(iterate_batches(utts, plan.batch_size, rng, teacher)):
            batch = make_batch(chunk, model.config.lookahead, teacher=teach, full_context=plan.full_context)
            history.append((epoch, b, train_step(model, batch, plan.stage, opt, w_kld)))
    model.set_requires_grad(set())
    for p in model.parameters():
        p.grad = None
    return TrainResult(model, history)


def train_stage(model, corpora, plan, seed=0):
    if plan.stage == "distill":
        raise PlanError("use distill() for the distillation stage")
    return _run(model, select_data(corpora, plan.data), plan, seed)


# --------------------------------------------------------------------------
# distillation


def ensemble_teacher(non_streaming_model, sha_model, weights, chunk_full_context, chunk_streaming):
    """Per-frame teacher posterior for one target frame.

    ``chunk_full_context`` runs from the target frame to the end of the
    utterance and feeds the non-streaming model; ``chunk_streaming`` holds the
    target plus ``lookahead`` frames for the SHA model.
    """
    weights = DistillConfig(teacher_weights=weights).teacher_weights
    if non_streaming_model.config.num_chenones != sha_model.config.num_chenones:
        raise InventoryError("teacher models disagree on the chenone inventory")
    full = np.asarray(chunk_full_context, dtype=np.float64)
    stream = np.asarray(chunk_streaming, dtype=np.float64)
    lp_ns, _ = non_streaming_model.forward(full, np.arange(full.shape[0])[None, :])
    lp_st, _ = sha_model.forward(stream, np.arange(stream.shape[0])[None, :])
    return weights[0] * np.exp(lp_ns.data[0]) + weights[1] * np.exp(lp_st.data[0])


def ensemble_teacher_fn(non_streaming_model, sha_model, weights=(0.4, 0.6)):
    """Utterance-level teacher: full-context non-streaming + streaming SHA."""
    weights = DistillConfig(teacher_weights=weights).teacher_weights
    if non_streaming_model.config.num_chenones != sha_model.config.num_chenones:
        raise InventoryError("teacher models disagree on the chenone inventory")
    ns = non_streaming_model.copy()
    st = sha_model.copy()

    def fn(utt):
        lp_ns, _ = utterance_log_posteriors(ns, utt.frames, full_context=True)
        lp_st, _ = utterance_log_posteriors(st, utt.frames)
        return weights[0] * np.exp(lp_ns) + weights[1] * np.exp(lp_st)

    return fn


def distill(student, teacher_fn, corpus, cfg=None, plan=None, seed=0):
    """Fine-tune ``student`` on ``corpus`` with the teacher-student loss."""
    cfg = cfg or DistillConfig()
    plan = plan or StagePlan("distill")
    if plan.stage != "distill":
        raise PlanError("distill() needs a 'distill' stage plan")
    if isinstance(corpus, dict):
        corpus = select_data(corpus, plan.data)
    teacher = [nm.check_distribution(teacher_fn(u)) for u in corpus]
    return _run(student, corpus, plan, seed, teacher=teacher, w_kld=cfg.w_kld)


# --------------------------------------------------------------------------
# evaluation


def evaluate_frame_accuracy(model, corpus, mode=None):
    """Fraction of frames whose arg-max posterior equals the label.

    Returns ``{"overall": ..., "en": ..., "hi": ...}`` keyed by frame tag
    (absent tags are omitted). ``model`` may be a callable returning log
    posteriors for an utterance.
    """
    if not corpus:
        raise DataError("empty corpus")
    hits = {}
    for u in corpus:
        if isinstance(model, AcousticModel):
            lp, _ = utterance_log_posteriors(model, u.frames, mode=mode)
        else:
            lp = model(u)
        ok = np.argmax(lp, axis=1) == u.labels
        tags = np.asarray(u.tags)
        for key, sel in [("overall", slice(None))] + [(lang, tags == lang) for lang in LANGS]:
            h, n = hits.get(key, (0, 0))
            hits[key] = (h + int(ok[sel].sum()), n + int(np.asarray(ok[sel]).size))
    return {k: h / n for k, (h, n) in hits.items() if n}
