"""Run configuration: a sectioned INI file mapped onto the module configs.

Every random draw in a run comes from one global seed through named
sub-seeds::

    sub_seed(seed, name) = first 8 bytes (little endian) of sha256(f"{seed}:{name}"), top bit cleared

so adding a new consumer never shifts the streams of existing ones.
"""
import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields, replace

from .corpus import SynthConfig
from .decoder import DecodeConfig
from .errors import ConfigError
from .model import ModelConfig
from .trainer import DistillConfig, StagePlan

STAGE_NAMES = ("baseline", "single", "split", "attention_only", "full", "distill")


def sub_seed(seed, name):
    digest = hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


@dataclass(frozen=True)
class DataConfig:
    train_en: int = 300
    train_hi: int = 300
    train_mix: int = 150
    mix_ratio_hi: float = 0.5
    test_en: int = 60
    test_hi: int = 60
    lm_sentences: int = 2000
    lm_hi_en_fraction: float = 0.1  # English sentences inside the Hindi LM text

    def __post_init__(self):
        for f in fields(self):
            if isinstance(f.default, int) and getattr(self, f.name) < 1:
                raise ConfigError(f"data.{f.name} must be >= 1")
        if not 0 < self.mix_ratio_hi < 1:
            raise ConfigError("data.mix_ratio_hi must lie strictly between 0 and 1")
        if not 0 <= self.lm_hi_en_fraction < 1:
            raise ConfigError("data.lm_hi_en_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class LmConfig:
    order: int = 3
    smoothing: str = "witten_bell"
    lambda_en: float = 0.9
    transliteration: str = "contextual"

    def __post_init__(self):
        if self.order < 1:
            raise ConfigError("lm.order must be >= 1")
        if self.smoothing != "witten_bell":
            raise ConfigError("lm.smoothing supports only witten_bell")
        if not 0 < self.lambda_en < 1:
            raise ConfigError("lm.lambda_en must lie strictly between 0 and 1")
        if self.transliteration not in ("contextual", "word"):
            raise ConfigError("lm.transliteration must be 'contextual' or 'word'")


@dataclass(frozen=True)
class AnalysisConfig:
    components: int = 2
    restarts: int = 5
    bins: int = 20

    def __post_init__(self):
        if min(self.components, self.restarts, self.bins) < 1:
            raise ConfigError("analysis settings must be >= 1")


def default_stages():
    return {
        "baseline": StagePlan("single", epochs=5, batch_size=8, lr=3e-3, data="en-only"),
        "single": StagePlan("single", epochs=5, batch_size=8, lr=3e-3),
        "split": StagePlan("split", epochs=5, batch_size=8, lr=3e-3),
        "attention_only": StagePlan("attention_only", epochs=20, batch_size=8, lr=3e-3),
        "full": StagePlan("full", epochs=15, batch_size=8, lr=3e-3),
        "distill": StagePlan("distill", epochs=2, batch_size=8, lr=1e-3),
    }


def default_decode():
    return DecodeConfig(beam=16, acoustic_scale=1.0, lm_scale=2.0, insertion_penalty=0.0, max_word_frames=12)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    out: str = "runs/default"
    synth: SynthConfig = field(default_factory=SynthConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    stages: dict = field(default_factory=default_stages)
    distill: DistillConfig = field(default_factory=DistillConfig)
    lm: LmConfig = field(default_factory=LmConfig)
    decode: DecodeConfig = field(default_factory=default_decode)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    def __post_init__(self):
        missing = set(STAGE_NAMES) - set(self.stages)
        if missing:
            raise ConfigError(f"missing stage sections: {sorted(missing)}")
        if self.model.num_chenones != self.synth.num_chenones or self.model.feature_dim != self.synth.feature_dim:
            raise ConfigError("model and synth disagree on num_chenones / feature_dim")
        if self.stages["baseline"].stage != "single" or self.stages["single"].stage != "single":
            raise ConfigError("baseline and single stages must be of kind 'single'")
        for name in STAGE_NAMES[2:]:
            if self.stages[name].stage != name:
                raise ConfigError(f"stage section {name!r} must have stage = {name}")

    def seed_for(self, name):
        return sub_seed(self.seed, name)

    def with_overrides(self, seed=None, out=None):
        return replace(self, seed=self.seed if seed is None else seed, out=self.out if out is None else out)

    # -- INI round trip --------------------------------------------------------

    def to_ini(self):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["run"] = {"seed": str(self.seed), "out": self.out}
        for name in ("synth", "data", "model", "distill", "lm", "decode", "analysis"):
            cp[name] = {f.name: _fmt(getattr(getattr(self, name), f.name)) for f in fields(getattr(self, name))}
        for name in STAGE_NAMES:
            plan = self.stages[name]
            cp[f"stage.{name}"] = {f.name: _fmt(getattr(plan, f.name)) for f in fields(plan)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_ini())


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw, default, where):
    raw = raw.strip()
    try:
        if raw.lower() == "none":
            return None
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int) or default is None:
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from exc


def _section(cp, name, cls, base):
    if name not in cp:
        return base
    defaults = {f.name: getattr(base, f.name) for f in fields(cls)}
    values = dict(defaults)
    for key, raw in cp[name].items():
        if key not in defaults:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        values[key] = _parse(raw, defaults[key], f"[{name}] {key}")
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def parse_ini(text, source="<string>"):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    base = RunConfig()
    known = {"run", "synth", "data", "model", "distill", "lm", "decode", "analysis"} | {f"stage.{s}" for s in STAGE_NAMES}
    unknown = [s for s in cp.sections() if s not in known]
    if unknown:
        raise ConfigError(f"unknown sections: {unknown}")
    run = {"seed": base.seed, "out": base.out}
    if "run" in cp:
        for key, raw in cp["run"].items():
            if key not in run:
                raise ConfigError(f"unknown key {key!r} in [run]")
            run[key] = _parse(raw, run[key], f"[run] {key}")
    stages = {name: _section(cp, f"stage.{name}", StagePlan, plan) for name, plan in base.stages.items()}
    return RunConfig(
        seed=run["seed"],
        out=run["out"],
        synth=_section(cp, "synth", SynthConfig, base.synth),
        data=_section(cp, "data", DataConfig, base.data),
        model=_section(cp, "model", ModelConfig, base.model),
        stages=stages,
        distill=_section(cp, "distill", DistillConfig, base.distill),
        lm=_section(cp, "lm", LmConfig, base.lm),
        decode=_section(cp, "decode", DecodeConfig, base.decode),
        analysis=_section(cp, "analysis", AnalysisConfig, base.analysis),
    )


def load_config(path=None):
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_ini(text, source=str(path))
