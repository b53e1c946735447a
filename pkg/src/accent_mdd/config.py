"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment.  Keys are ``seed``,
``synth.<field>`` (see :class:`SynthSpec`), ``model.<field>`` (see
:class:`ModelConfig`) and ``paths.data`` / ``paths.out``.  A top-level
``seed`` seeds both the corpus and the model unless ``synth.seed`` or
``model.seed`` is given explicitly.  Unknown keys are an error.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .model import ConfigError, ModelConfig
from .synth import SynthSpec

PATH_KEYS = ("data", "out")


def _types(cls) -> dict[str, type]:
    inst = cls()
    return {f.name: type(getattr(inst, f.name)) for f in fields(cls)}


def _convert(key: str, typ: type, raw: str):
    try:
        if typ is bool:
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if typ is int:
            return int(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


@dataclass
class RunConfig:
    synth: SynthSpec = field(default_factory=SynthSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    paths: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        # keep the model's vocabulary and feature size in step with the corpus
        self.model.n_phones = self.synth.n_phones
        self.model.n_accents = self.synth.n_accents
        self.model.feat_dim = self.synth.feat_dim

    @classmethod
    def schema(cls) -> dict[str, tuple[type, object]]:
        """Every accepted key with its type and default value."""
        out: dict[str, tuple[type, object]] = {"seed": (int, 0)}
        for prefix, c in (("synth", SynthSpec), ("model", ModelConfig)):
            inst = c()
            for k, t in _types(c).items():
                out[f"{prefix}.{k}"] = (t, getattr(inst, k))
        for k in PATH_KEYS:
            out[f"paths.{k}"] = (str, None)
        return out

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        schema = cls.schema()
        values: dict[str, object] = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{n}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in schema:
                raise ConfigError(f"{source}:{n}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
            values[key] = _convert(key, schema[key][0], raw)
        return cls.from_values(values)

    @classmethod
    def from_values(cls, values: dict) -> "RunConfig":
        synth_kw = {k[6:]: v for k, v in values.items() if k.startswith("synth.")}
        model_kw = {k[6:]: v for k, v in values.items() if k.startswith("model.")}
        seed = values.get("seed")
        if seed is not None:
            synth_kw.setdefault("seed", seed)
            model_kw.setdefault("seed", seed)
        for k in ("n_phones", "n_accents", "feat_dim"):
            if k in model_kw and k in synth_kw and model_kw[k] != synth_kw[k]:
                raise ConfigError(f"model.{k} and synth.{k} disagree")
            if k in model_kw:
                synth_kw.setdefault(k, model_kw[k])
        paths = {k[6:]: v for k, v in values.items() if k.startswith("paths.")}
        cfg = cls(SynthSpec(**synth_kw), ModelConfig(**model_kw), paths, seed)
        try:
            cfg.synth.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        cfg.model.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        return cls.parse(p.read_text(encoding="utf-8"), str(p))

    def set_seed(self, seed: int) -> None:
        self.seed = seed
        self.synth.seed = seed
        self.model.seed = seed

    def to_text(self) -> str:
        lines = [] if self.seed is None else [f"seed = {self.seed}"]
        lines += [f"synth.{k} = {v}" for k, v in asdict(self.synth).items()]
        lines += [f"model.{k} = {v}" for k, v in asdict(self.model).items()]
        lines += [f"paths.{k} = {v}" for k, v in sorted(self.paths.items())]
        return "\n".join(lines) + "\n"


def describe_schema() -> str:
    """Key listing for ``--help``."""
    return "\n".join(f"  {k} = {d}" for k, (_, d) in RunConfig.schema().items())
