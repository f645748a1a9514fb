"""Plain-text run configuration: INI sections with ``key = value`` lines."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .attacks import AttackSpec, default_suite
from .attention import AasParams, CasParams
from .optimize import CXR_WEIGHTS, FUNDUS_WEIGHTS, EmbedConfig
from .tensorio import ValidationError

ABLATION_MODES = ("full", "no_cas", "no_aas", "no_tv", "no_pre")
PRESETS = {"cxr": CXR_WEIGHTS, "fundus": FUNDUS_WEIGHTS}


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    workers: int = 1
    k: int = 48
    train_steps: int = 8000
    mode: str = "full"

    def __post_init__(self):
        if self.workers < 1:
            raise ValidationError(f"workers must be >= 1, got {self.workers}")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.train_steps < 0:
            raise ValidationError(f"train_steps must be >= 0, got {self.train_steps}")
        if self.mode not in ABLATION_MODES:
            raise ValidationError(f"mode must be one of {ABLATION_MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class RunConfig:
    cas: CasParams = CasParams()
    aas: AasParams = AasParams()
    embed: EmbedConfig = EmbedConfig()
    attacks: tuple = field(default_factory=lambda: tuple(default_suite()))
    paths: dict = field(default_factory=dict)
    run: RunSettings = RunSettings()

    def to_json(self) -> dict:
        return {
            "cas": asdict(self.cas),
            "aas": asdict(self.aas),
            "embed": asdict(self.embed),
            "attacks": [str(a) for a in self.attacks],
            "paths": dict(sorted(self.paths.items())),
            "run": asdict(self.run),
        }


PATH_KEYS = ("corpus", "model", "out")


def _coerce(cls, section: str, items: dict):
    types = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        if key not in types:
            raise ValidationError(f"unknown key {key!r} in [{section}]; allowed: {sorted(types)}")
        kind = types[key] if isinstance(types[key], str) else types[key].__name__
        try:
            if kind == "int":
                kwargs[key] = int(raw)
            elif kind == "float":
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw.strip()
        except ValueError:
            raise ValidationError(f"[{section}] {key} = {raw!r} is not a valid {kind}") from None
    return kwargs


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse INI text into a :class:`RunConfig`; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(
        interpolation=None, default_section="__none__", inline_comment_prefixes=(";", "#")
    )
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ValidationError(f"{source}: {exc}") from None
    allowed = {"cas", "aas", "embed", "attacks", "paths", "run"}
    unknown = set(parser.sections()) - allowed
    if unknown:
        raise ValidationError(f"unknown section(s) {sorted(unknown)} in {source}")
    cfg = RunConfig()
    try:
        if parser.has_section("cas"):
            cfg = replace(cfg, cas=CasParams(**_coerce(CasParams, "cas", dict(parser["cas"]))))
        if parser.has_section("aas"):
            cfg = replace(cfg, aas=AasParams(**_coerce(AasParams, "aas", dict(parser["aas"]))))
        if parser.has_section("embed"):
            items = dict(parser["embed"])
            preset = items.pop("preset", None)
            base = {}
            if preset is not None:
                if preset not in PRESETS:
                    raise ValidationError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
                base = dict(PRESETS[preset])
            base.update(_coerce(EmbedConfig, "embed", items))
            cfg = replace(cfg, embed=EmbedConfig(**base))
        if parser.has_section("attacks"):
            items = dict(parser["attacks"])
            extra = set(items) - {"suite"}
            if extra:
                raise ValidationError(f"unknown key(s) {sorted(extra)} in [attacks]; allowed: ['suite']")
            if "suite" in items:
                specs = [AttackSpec.parse(p) for p in items["suite"].replace("|", ",").split(",") if p.strip()]
                if not specs:
                    raise ValidationError("[attacks] suite is empty")
                cfg = replace(cfg, attacks=tuple(specs))
        if parser.has_section("paths"):
            items = dict(parser["paths"])
            extra = set(items) - set(PATH_KEYS)
            if extra:
                raise ValidationError(f"unknown key(s) {sorted(extra)} in [paths]; allowed: {list(PATH_KEYS)}")
            cfg = replace(cfg, paths={k: v.strip() for k, v in items.items()})
        if parser.has_section("run"):
            cfg = replace(cfg, run=RunSettings(**_coerce(RunSettings, "run", dict(parser["run"]))))
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{source}: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"config file not found: {p}")
    return parse_config(p.read_text(), source=str(p))

