"""Run configuration: a flat mapping of dotted keys with typed defaults.

Config files are line oriented::

    # comment
    steps = 2000
    skip.k = 256
    [model]
    d_model = 64        # section headers prefix the keys that follow

Strings may be bare or double-quoted. ``""`` stands for "unset" on
optional keys.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from skim.dataserver import SkipConfig
from skim.model import ModelConfig

MODES = ("pretrain", "pretrain_short", "finetune", "eval", "qa_gen", "qa_eval", "traverse", "plot", "synth_corpus")

# key -> (default, type); type None means optional string
SCHEMA: dict[str, tuple[object, type | None]] = {
    "mode": ("pretrain", str),
    "seed": (0, int),
    "steps": (2000, int),
    "batch_size": (8, int),
    "lr": (3e-3, float),
    "warmup": (100, int),
    "clip": (1.0, float),
    "checkpoint_every": (0, int),
    "out_dir": ("runs/default", str),
    "init_checkpoint": (None, None),
    "checkpoint": (None, None),
    "model.n_layers": (4, int),
    "model.d_model": (128, int),
    "model.n_heads": (4, int),
    "model.d_ff": (512, int),
    "model.max_window": (256, int),
    "skip.k": (0, int),
    "skip.alpha": (2.0, float),
    "skip.pooling": ("average", str),
    "skip.decay": (0.9, float),
    "skip.c_min": (1e-6, float),
    "memory.enabled": (False, bool),
    "memory.capacity": (256, int),
    "memory.k_retrieve": (32, int),
    "corpus.path": (None, None),
    "corpus.kind": ("text", str),
    "corpus.min_tokens": (4000, int),
    "eval.path": (None, None),
    "eval.min_tokens": (4000, int),
    "eval.max_docs": (0, int),
    "synth.n_docs": (64, int),
    "synth.min_len": (4000, int),
    "synth.max_len": (12000, int),
    "synth.template_pool": (16, int),
    "synth.block_len": (512, int),
    "synth.noisy_fraction": (0.3, float),
    "synth.noise_rate": (0.7, float),
    "synth.span_min": (8, int),
    "synth.span_max": (40, int),
    "qa.path": (None, None),
    "qa.n_examples": (200, int),
    "qa.distractors": (40, int),
    "qa.answer_passages": (3, int),
    "qa.min_evidence": (8192, int),
    "qa.entity_len": (6, int),
    "qa.answer_len": (4, int),
    "qa.k_infer": (0, int),
    "qa.grid_path": (None, None),
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw):
    default, typ = SCHEMA[key]
    if isinstance(raw, str):
        text = raw.strip()
        if len(text) >= 2 and text[0] == text[-1] == '"':
            text = json.loads(text)
    else:
        text = raw
    if typ is None:
        return None if text in (None, "", "none", "None") else str(text)
    if typ is bool:
        if isinstance(text, bool):
            return text
        if str(text).lower() in ("1", "true", "yes", "on"):
            return True
        if str(text).lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if typ is int:
            value = float(text)
            if value != int(value):
                raise ValueError
            return int(value)
        return typ(text)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from None


def _unknown(key: str) -> ConfigError:
    return ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(SCHEMA))}")


def parse_lines(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        value = value.strip()
        if not value.startswith('"') and " #" in value:
            value = value.split(" #", 1)[0].strip()
        key = key.strip()
        values[f"{section}.{key}" if section else key] = value
    return values


def parse_override(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, _, value = item.partition("=")
    return key.strip(), value.strip()


class RunConfig(dict):
    """Fully-typed flat configuration. Item access by dotted key."""

    @classmethod
    def build(cls, file_values=None, overrides=None, env=None) -> "RunConfig":
        cfg = cls({k: d for k, (d, _) in SCHEMA.items()})
        for layer in (file_values or {}, overrides or {}):
            for key, raw in layer.items():
                if key not in SCHEMA:
                    raise _unknown(key)
                cfg[key] = _coerce(key, raw)
        env = os.environ if env is None else env
        if env.get("SKIM_SEED"):
            cfg["seed"] = _coerce("seed", env["SKIM_SEED"])
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, overrides=None, env=None) -> "RunConfig":
        path = Path(path)
        return cls.build(parse_lines(path.read_text(), str(path)), overrides, env)

    def replace(self, **updates) -> "RunConfig":
        new = RunConfig(self)
        for key, value in updates.items():
            key = key.replace("__", ".")
            if key not in SCHEMA:
                raise _unknown(key)
            new[key] = _coerce(key, value) if isinstance(value, str) else value
        new.validate()
        return new

    def validate(self) -> None:
        if self["mode"] not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self['mode']!r}")
        if self["corpus.kind"] not in ("text", "qa"):
            raise ConfigError("corpus.kind must be 'text' or 'qa'")
        if self["mode"] == "finetune" and not self["init_checkpoint"]:
            raise ConfigError("finetune requires init_checkpoint")
        if self["mode"] in ("eval", "qa_eval") and not self["checkpoint"]:
            raise ConfigError(f"{self['mode']} requires checkpoint")
        self.model_config()
        self.skip_config()

    def model_config(self) -> ModelConfig:
        try:
            return ModelConfig(
                n_layers=self["model.n_layers"], d_model=self["model.d_model"],
                n_heads=self["model.n_heads"], d_ff=self["model.d_ff"],
                max_window=self["model.max_window"], seed=self["seed"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def skip_config(self, L: int | None = None, K: int | None = None) -> SkipConfig:
        try:
            return SkipConfig(
                K=self["skip.k"] if K is None else K, alpha=self["skip.alpha"],
                L=self["model.max_window"] if L is None else L,
                pooling=self["skip.pooling"], decay=self["skip.decay"], c_min=self["skip.c_min"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def dumps(self) -> str:
        lines = []
        for key in sorted(SCHEMA):
            value = self[key]
            if value is None:
                text = '""'
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, str):
                text = json.dumps(value)
            else:
                text = repr(value)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    def write_resolved(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "config.resolved"
        path.write_text(self.dumps())
        return path
