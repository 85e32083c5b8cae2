"""SingleHead, SplitHead and SplitHead-with-Attention acoustic models.

All three share one parameter layout::

    input.{W,b}                 feature_dim -> hidden_dim, ReLU
    shared.{i}.{W,b}            residual ReLU blocks (num_shared_blocks - split_depth)
    tower.{lang}.block.{j}.*    language-specific residual blocks (split_depth)
    tower.{lang}.proj.{W,b}     hidden_dim -> num_chenones
    attention.{Wq,Wk}           single-query dot-product pooling over the chunk
    attention.out.{W,b}         pooled hidden -> one logit per language

A SingleHead model has one tower named ``single`` and no attention head. The
SHA model has towers ``en`` and ``hi`` that both emit logits over the same
chenone inventory; their logits are mixed with per-frame language weights
before the final softmax.
"""
import io
import json
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import numeric as nm
from .errors import ChunkError, ConfigError, DataError, DimensionError, LanguageError, ModelError, NumericError

LANGS = ("en", "hi")
MODES = ("single", "sha", "head-en", "head-hi")
MASK_NEG = -1e30

CHECKPOINT_MAGIC = b"SHAM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 16
    hidden_dim: int = 32
    num_chenones: int = 64
    num_shared_blocks: int = 3
    split_depth: int = 0
    lookahead: int = 4
    attention_dim: int = 8
    languages: tuple = LANGS

    def __post_init__(self):
        object.__setattr__(self, "languages", tuple(self.languages))
        self.validate()

    def validate(self):
        for name in ("feature_dim", "hidden_dim", "num_chenones", "num_shared_blocks", "attention_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be positive")
        if self.lookahead < 0:
            raise ConfigError("model.lookahead must be >= 0")
        if not 0 <= self.split_depth <= self.num_shared_blocks:
            raise ConfigError("model.split_depth must lie in [0, num_shared_blocks]")
        if self.languages != LANGS:
            raise ConfigError(f"model.languages is fixed to {list(LANGS)}")

    def to_dict(self):
        d = asdict(self)
        d["languages"] = list(self.languages)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def _glorot(rng, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


class AcousticModel:
    """Parameter container plus batched forward passes.

    ``kind`` is ``"single"`` (one projection tower) or ``"sha"`` (two language
    towers and an attention head). Build instances with :func:`init_singlehead`,
    :func:`init_sha` or :func:`split_from_single`.
    """

    def __init__(self, kind, config, params):
        if kind not in ("single", "sha"):
            raise ModelError(f"unknown model kind {kind!r}")
        self.kind = kind
        self.config = config
        self.params = params

    # -- parameter bookkeeping ------------------------------------------------

    @property
    def tower_names(self):
        return ("single",) if self.kind == "single" else self.config.languages

    def parameters(self):
        return list(self.params.values())

    def param_groups(self):
        """Freezable groups: shared, tower-<name>..., attention."""
        groups = {"shared": []}
        for t in self.tower_names:
            groups[f"tower-{t}"] = []
        if self.kind == "sha":
            groups["attention"] = []
        for name, p in self.params.items():
            head = name.split(".")[0]
            if head in ("input", "shared"):
                groups["shared"].append(p)
            elif head == "tower":
                groups[f"tower-{name.split('.')[1]}"].append(p)
            else:
                groups["attention"].append(p)
        return groups

    def group_of(self, name):
        head = name.split(".")[0]
        if head in ("input", "shared"):
            return "shared"
        if head == "tower":
            return f"tower-{name.split('.')[1]}"
        return "attention"

    def copy(self):
        params = {k: nm.Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k) for k, v in self.params.items()}
        return AcousticModel(self.kind, self.config, params)

    def snapshot(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def set_requires_grad(self, groups=None):
        """Enable gradients for the named groups only (all when ``None``)."""
        for name, p in self.params.items():
            p.requires_grad = groups is None or self.group_of(name) in groups

    def tower_size(self, name=None):
        name = name or self.tower_names[0]
        return sum(p.size for k, p in self.params.items() if k.startswith(f"tower.{name}."))

    def attention_size(self):
        return sum(p.size for k, p in self.params.items() if k.startswith("attention."))

    # -- forward pieces -------------------------------------------------------

    def _p(self, name):
        return self.params[name]

    def shared_hidden(self, frames):
        x = nm.as_tensor(frames)
        if x.data.ndim != 2 or x.shape[1] != self.config.feature_dim:
            raise DimensionError(f"frames must be (N, {self.config.feature_dim}), got {x.shape}")
        h = nm.relu(nm.affine(x, self._p("input.W"), self._p("input.b")))
        for i in range(self.config.num_shared_blocks - self.config.split_depth):
            h = h + nm.relu(nm.affine(h, self._p(f"shared.{i}.W"), self._p(f"shared.{i}.b")))
        return h

    def tower_logits(self, name, hidden):
        if name not in self.tower_names:
            raise LanguageError(f"model has no tower {name!r}")
        h = hidden
        for j in range(self.config.split_depth):
            pre = f"tower.{name}.block.{j}"
            h = h + nm.relu(nm.affine(h, self._p(pre + ".W"), self._p(pre + ".b")))
        return nm.affine(h, self._p(f"tower.{name}.proj.W"), self._p(f"tower.{name}.proj.b"))

    def attention_logits(self, hidden, chunk_index, mask=None):
        """Per-target language logits ``(N, 2)``.

        ``chunk_index[i]`` lists the rows of ``hidden`` forming target ``i``'s
        chunk, target frame first. ``mask`` marks valid chunk positions.
        """
        if self.kind != "sha":
            raise ModelError("attention requires an SHA model")
        idx = np.asarray(chunk_index, dtype=np.int64)
        N, C = idx.shape
        A = self.config.attention_dim
        q = nm.take_rows(nm.matmul(hidden, self._p("attention.Wq")), idx[:, 0])
        keys = nm.take_rows(nm.matmul(hidden, self._p("attention.Wk")), idx)
        values = nm.take_rows(hidden, idx)
        scores = nm.reshape(nm.matmul(nm.reshape(q, (N, 1, A)), nm.swap_last(keys)), (N, C))
        scores = nm.mul(scores, 1.0 / np.sqrt(A))
        if mask is not None:
            scores = scores + np.where(np.asarray(mask, dtype=bool), 0.0, MASK_NEG)
        alpha = nm.softmax(scores)
        pooled = nm.reshape(nm.matmul(nm.reshape(alpha, (N, 1, C)), values), (N, self.config.hidden_dim))
        return nm.affine(pooled, self._p("attention.out.W"), self._p("attention.out.b"))

    def forward(self, frames, chunk_index, mask=None, mode=None, weights=None):
        """Log posteriors ``(N, K)`` for the target frames of each chunk.

        Returns ``(log_probs, lang_weights)`` where ``lang_weights`` is the
        ``(N, 2)`` weight tensor in ``sha`` mode and ``None`` otherwise.
        ``weights`` forces the language weights (array ``(N, 2)`` or pair).
        """
        mode = mode or ("single" if self.kind == "single" else "sha")
        if mode not in MODES:
            raise LanguageError(f"unknown mode {mode!r}")
        idx = np.asarray(chunk_index, dtype=np.int64)
        hidden = self.shared_hidden(frames)
        target = nm.take_rows(hidden, idx[:, 0])
        if mode == "single":
            if self.kind != "single":
                raise ModelError("mode 'single' needs a SingleHead model")
            return nm.log_softmax(self.tower_logits("single", target)), None
        if self.kind != "sha":
            raise ModelError(f"mode {mode!r} needs an SHA model")
        if mode.startswith("head-"):
            return nm.log_softmax(self.tower_logits(mode[5:], target)), None
        z_en = self.tower_logits("en", target)
        z_hi = self.tower_logits("hi", target)
        if weights is None:
            w = nm.softmax(self.attention_logits(hidden, idx, mask))
        else:
            w = nm.Tensor(np.broadcast_to(np.asarray(weights, dtype=np.float64), (idx.shape[0], 2)))
        mixed = nm.select(w, (slice(None), slice(0, 1))) * z_en + nm.select(w, (slice(None), slice(1, 2))) * z_hi
        return nm.log_softmax(mixed), w


# --------------------------------------------------------------------------
# construction


def _block_params(rng, prefix, d_in, d_out):
    return {
        f"{prefix}.W": nm.Tensor(_glorot(rng, d_in, d_out), name=f"{prefix}.W"),
        f"{prefix}.b": nm.Tensor(np.zeros(d_out), name=f"{prefix}.b"),
    }


def _tower_params(rng, cfg, name):
    params = {}
    for j in range(cfg.split_depth):
        params.update(_block_params(rng, f"tower.{name}.block.{j}", cfg.hidden_dim, cfg.hidden_dim))
    params.update(_block_params(rng, f"tower.{name}.proj", cfg.hidden_dim, cfg.num_chenones))
    return params


def _attention_params(rng, cfg):
    H, A = cfg.hidden_dim, cfg.attention_dim
    return {
        "attention.Wq": nm.Tensor(_glorot(rng, H, A), name="attention.Wq"),
        "attention.Wk": nm.Tensor(_glorot(rng, H, A), name="attention.Wk"),
        # zero output layer: initial language weights are exactly (0.5, 0.5)
        "attention.out.W": nm.Tensor(np.zeros((H, len(cfg.languages))), name="attention.out.W"),
        "attention.out.b": nm.Tensor(np.zeros(len(cfg.languages)), name="attention.out.b"),
    }


def _shared_params(rng, cfg):
    params = _block_params(rng, "input", cfg.feature_dim, cfg.hidden_dim)
    for i in range(cfg.num_shared_blocks - cfg.split_depth):
        params.update(_block_params(rng, f"shared.{i}", cfg.hidden_dim, cfg.hidden_dim))
    return params


def init_singlehead(config=None, seed=0):
    cfg = config or ModelConfig()
    rng = np.random.default_rng(seed)
    params = _shared_params(rng, cfg)
    params.update(_tower_params(rng, cfg, "single"))
    return AcousticModel("single", cfg, params)


def init_sha(config=None, seed=0):
    cfg = config or ModelConfig()
    rng = np.random.default_rng(seed)
    params = _shared_params(rng, cfg)
    for lang in cfg.languages:
        params.update(_tower_params(rng, cfg, lang))
    params.update(_attention_params(rng, cfg))
    return AcousticModel("sha", cfg, params)


def split_from_single(single, seed=0):
    """SHA model whose shared layers and both towers copy ``single``."""
    if single.kind != "single":
        raise ModelError("split_from_single expects a SingleHead model")
    cfg = single.config
    params = {}
    for name, p in single.params.items():
        if not name.startswith("tower."):
            params[name] = nm.Tensor(p.data.copy(), name=name)
    for lang in cfg.languages:
        for name, p in single.params.items():
            if name.startswith("tower.single."):
                new = "tower." + lang + name[len("tower.single"):]
                params[new] = nm.Tensor(p.data.copy(), name=new)
    params.update(_attention_params(np.random.default_rng(seed), cfg))
    return AcousticModel("sha", cfg, params)


def param_count(model):
    return int(sum(p.size for p in model.parameters()))


def expected_param_count(cfg, kind):
    """Closed-form parameter count from the config shapes."""
    F, H, K, A = cfg.feature_dim, cfg.hidden_dim, cfg.num_chenones, cfg.attention_dim
    block = H * H + H
    tower = cfg.split_depth * block + H * K + K
    shared = F * H + H + (cfg.num_shared_blocks - cfg.split_depth) * block
    if kind == "single":
        return shared + tower
    attention = 2 * H * A + H * len(cfg.languages) + len(cfg.languages)
    return shared + len(cfg.languages) * tower + attention


# --------------------------------------------------------------------------
# chunk helpers and single-chunk API


def streaming_chunks(num_frames, lookahead):
    """Chunk index and mask for every frame of one utterance.

    Chunk ``t`` covers frames ``t .. t+lookahead``; positions past the end of
    the utterance are masked out.
    """
    t = np.arange(num_frames)[:, None]
    j = np.arange(lookahead + 1)[None, :]
    raw = t + j
    mask = raw < num_frames
    return np.minimum(raw, num_frames - 1), mask


def full_context_chunks(num_frames):
    """Chunks spanning from each frame to the end of the utterance."""
    return streaming_chunks(num_frames, num_frames - 1)


def _check_chunk(model, chunk):
    arr = np.asarray(chunk.data if isinstance(chunk, nm.Tensor) else chunk, dtype=np.float64)
    L = model.config.lookahead
    if arr.ndim != 2 or arr.shape[0] != L + 1:
        raise ChunkError(f"chunk must have lookahead+1 = {L + 1} frames, got shape {arr.shape}")
    if arr.shape[1] != model.config.feature_dim:
        raise DimensionError(f"chunk feature dim {arr.shape[1]} != {model.config.feature_dim}")
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite chunk values")
    return arr, np.arange(L + 1)[None, :]


def forward_singlehead(model, chunk):
    arr, idx = _check_chunk(model, chunk)
    lp, _ = model.forward(arr, idx, mode="single")
    return np.exp(lp.data[0])


def forward_sha(model, chunk, weights=None):
    arr, idx = _check_chunk(model, chunk)
    lp, _ = model.forward(arr, idx, mode="sha", weights=None if weights is None else np.asarray(weights)[None, :])
    return np.exp(lp.data[0])


def forward_splithead(model, chunk, lang):
    if lang not in LANGS:
        raise LanguageError(f"unknown language tag {lang!r}")
    arr, idx = _check_chunk(model, chunk)
    lp, _ = model.forward(arr, idx, mode=f"head-{lang}")
    return np.exp(lp.data[0])


def attention_weights(model, hidden_chunk):
    """``(w_en, w_hi)`` for the first frame of a chunk of shared hidden vectors."""
    h = np.asarray(hidden_chunk.data if isinstance(hidden_chunk, nm.Tensor) else hidden_chunk, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite hidden values")
    if h.ndim != 2 or h.shape[1] != model.config.hidden_dim:
        raise DimensionError(f"hidden chunk must be (L+1, {model.config.hidden_dim})")
    idx = np.arange(h.shape[0])[None, :]
    w = nm.softmax(model.attention_logits(nm.Tensor(h), idx)).data[0]
    return float(w[0]), float(w[1])


def utterance_log_posteriors(model, frames, mode=None, full_context=False, weights=None):
    """Frame log posteriors ``(T, K)`` and language weights (or ``None``)."""
    frames = np.asarray(frames, dtype=np.float64)
    T = frames.shape[0]
    if T == 0:
        raise DataError("empty utterance")
    idx, mask = full_context_chunks(T) if full_context else streaming_chunks(T, model.config.lookahead)
    lp, w = model.forward(frames, idx, mask, mode=mode, weights=weights)
    return lp.data, (None if w is None else w.data)


# --------------------------------------------------------------------------
# checkpoint file


def save_checkpoint(model, path):
    header = {
        "kind": model.kind,
        "config": model.config.to_dict(),
        "params": [[name, list(p.shape)] for name, p in model.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHI", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for p in model.params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = io.BytesIO(raw)
    head = buf.read(10)
    if len(head) != 10:
        raise ModelError(f"{path}: truncated checkpoint")
    magic, version, hlen = struct.unpack("<4sHI", head)
    if magic != CHECKPOINT_MAGIC:
        raise ModelError(f"{path}: bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ModelError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(buf.read(hlen).decode("utf-8"))
    cfg = ModelConfig.from_dict(header["config"])
    params = {}
    for name, shape in header["params"]:
        n = int(np.prod(shape)) if shape else 1
        data = buf.read(8 * n)
        if len(data) != 8 * n:
            raise ModelError(f"{path}: truncated parameter {name}")
        params[name] = nm.Tensor(np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64), name=name)
    if buf.read(1):
        raise ModelError(f"{path}: trailing bytes after parameters")
    return AcousticModel(header["kind"], cfg, params)
