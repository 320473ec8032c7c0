"""Run configuration: profiles, defaults, JSON config files, overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .frontend import FrontendConfig
from .model import WiringDescriptor
from .nn.optim import ScheduleConfig
from .tones import ToneCorpusConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything a pipeline stage needs, resolvable before any compute."""

    profile: str = "toy"
    seed: int = 0
    wiring_kind: str = "mt_cascade"
    lambda_rate: float = 0.5
    steps: int = 600
    batch_size: int = 6
    peak_lr: float = 2e-3
    warmup_steps: int = 60
    floor_lr: float = 1e-4
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    corpus: ToneCorpusConfig = field(default_factory=ToneCorpusConfig)
    model: dict = field(default_factory=dict)   # WiringDescriptor overrides

    def wiring(self, kind=None) -> WiringDescriptor:
        base = _PROFILES[self.profile].copy()
        base.update(self.model)
        base["feature_dim"] = self.frontend.feature_dim
        base["vocab_size"] = self.corpus.vocab_size
        base["lambda_rate"] = self.lambda_rate
        return WiringDescriptor(kind=kind or self.wiring_kind, **base)

    def schedule(self) -> ScheduleConfig:
        return ScheduleConfig(warmup_steps=self.warmup_steps, peak_lr=self.peak_lr,
                              total_steps=self.steps, floor_lr=self.floor_lr)


# Model geometry per profile. "paper" mirrors the full-scale recipe
# (17x512 audio, 8x512 mask, 2048 label encoder, 640 joint, 30K warmup at
# peak 5e-4); "toy" is the desk-scale configuration the tests exercise.
_PROFILES = {
    "paper": dict(
        model_dim=512, audio_layers=17, mask_layers=8, heads=8,
        pred_embed_dim=128, pred_hidden=2048, pred_layers=2, joint_dim=640,
        max_positions=2048,
    ),
    "toy": dict(
        model_dim=32, audio_layers=2, mask_layers=2, heads=2, ff_mult=2,
        pred_embed_dim=16, pred_hidden=64, pred_layers=1, joint_dim=48,
        max_positions=512,
    ),
}

_PAPER_SCHEDULE = dict(warmup_steps=30_000, peak_lr=5e-4, floor_lr=0.0)


def default_config(profile: str = "toy") -> RunConfig:
    if profile not in _PROFILES:
        raise ConfigError(f"unknown profile: {profile!r} (have {sorted(_PROFILES)})")
    cfg = RunConfig(profile=profile)
    if profile == "paper":
        cfg = replace(cfg, frontend=FrontendConfig(sample_rate=16000),
                      corpus=ToneCorpusConfig(sample_rate=16000),
                      **_PAPER_SCHEDULE)
    return cfg


def load_config(path=None, profile=None, overrides=None) -> RunConfig:
    """Config file first, then explicit overrides; flags always win.

    The file is flat JSON; nested frontend/corpus settings live under
    "frontend" and "corpus" keys. Unknown keys are errors, caught before
    any compute starts.
    """
    file_data = {}
    if path is not None:
        try:
            file_data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    merged = dict(file_data)
    if profile is not None:
        merged["profile"] = profile
    cfg = default_config(merged.get("profile", "toy"))
    merged.update(overrides or {})
    merged.pop("profile", None)

    simple = {f.name: f.type for f in fields(RunConfig)
              if f.name not in ("frontend", "corpus", "model", "profile")}
    for key, value in merged.items():
        if key == "frontend":
            cfg = replace(cfg, frontend=_sub_config(FrontendConfig, cfg.frontend, value))
        elif key == "corpus":
            cfg = replace(cfg, corpus=_sub_config(ToneCorpusConfig, cfg.corpus, value))
        elif key == "model":
            if not isinstance(value, dict):
                raise ConfigError("'model' must be an object of wiring overrides")
            cfg = replace(cfg, model={**cfg.model, **value})
        elif key in simple:
            cfg = replace(cfg, **{key: value})
        else:
            raise ConfigError(f"unknown config key: {key!r}")
    # Fail fast on inconsistent values.
    cfg.frontend.validate()
    cfg.wiring()
    cfg.schedule()
    return cfg


def _sub_config(cls, current, value):
    if not isinstance(value, dict):
        raise ConfigError(f"'{cls.__name__}' section must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(value) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return replace(current, **value)


def config_to_dict(cfg: RunConfig) -> dict:
    out = asdict(cfg)
    return out
