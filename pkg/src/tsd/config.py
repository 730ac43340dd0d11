"""Run configuration: one YAML document, overridable from the command line."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from tsd.core import Hyperparams, PreprocessSpec
from tsd.graph import GraphParams
from tsd.synth import SynthSpec


@dataclass(frozen=True)
class CVOptions:
    folds: int = 5
    grid_size: int = 64
    blocked: bool = False
    # explicit grid: list of Hyperparams overrides; replaces the random sample
    grid: tuple | None = None


@dataclass(frozen=True)
class CompareOptions:
    methods: tuple = ("tsd", "lr_nmf", "dksvd", "ridge")
    test_fraction: float = 0.2


@dataclass(frozen=True)
class DiagnoseOptions:
    n_bins: int = 20
    max_pairs: int = 1_000_000


@dataclass(frozen=True)
class RunConfig:
    input: str | None = None
    target: str | None = None
    out: str = "out"
    seed: int = 0
    threads: int | None = None
    model: str | None = None
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    graph: GraphParams = field(default_factory=GraphParams)
    cv: CVOptions = field(default_factory=CVOptions)
    compare: CompareOptions = field(default_factory=CompareOptions)
    diagnose: DiagnoseOptions = field(default_factory=DiagnoseOptions)
    synth: SynthSpec = field(default_factory=SynthSpec)

    SECTIONS = {
        "preprocess": PreprocessSpec,
        "hyperparams": Hyperparams,
        "graph": GraphParams,
        "cv": CVOptions,
        "compare": CompareOptions,
        "diagnose": DiagnoseOptions,
        "synth": SynthSpec,
    }

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name in self.SECTIONS:
                value = {k: _plain(v) for k, v in dataclasses.asdict(value).items()}
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        d = dict(d or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for name, value in d.items():
            if name in cls.SECTIONS:
                section = cls.SECTIONS[name]
                fields = {f.name for f in dataclasses.fields(section)}
                bad = set(value or {}) - fields
                if bad:
                    raise ValueError(f"unknown keys in [{name}]: {sorted(bad)}")
                value = section(**{k: _tupled(v) for k, v in (value or {}).items()})
            kwargs[name] = value
        return cls(**kwargs)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def load(cls, path) -> RunConfig:
        return cls.from_dict(yaml.safe_load(Path(path).read_text(encoding="utf-8")))

    def override(self, **flags) -> RunConfig:
        """Apply command-line values (``None`` means "not given"); the single
        ``seed`` is pushed into every seeded section."""
        top = {k: v for k, v in flags.items() if v is not None and k in {"input", "target", "out", "seed", "threads", "model"}}
        cfg = dataclasses.replace(self, **top)
        h = cfg.hyperparams
        if flags.get("k") is not None:
            h = h.replace(k_sources=int(flags["k"]))
        h = h.replace(seed=cfg.seed)
        return dataclasses.replace(cfg, hyperparams=h, synth=dataclasses.replace(cfg.synth, seed=cfg.seed))


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def _tupled(v):
    if isinstance(v, list):
        return tuple(_tupled(x) if not isinstance(x, dict) else x for x in v)
    return v
