"""Run configuration: dotted-key text files plus command-line overrides.

Grammar: one ``key = value`` pair per line; blank lines and ``#`` comments
are ignored. Keys mirror the dataclass fields they configure
(``model.d_model``, ``train.adv_lr``, ...). Precedence, lowest to highest:
built-in defaults, config file, ``--set`` overrides. The fully resolved
configuration is echoed into every output directory.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from .encoder import ModelSpec
from .training import TrainConfig


class ConfigError(ValueError):
    """Unknown key, bad value, or unusable combination."""


# model.vocab_size is always derived from the training data
_MODEL_KEYS = {
    f.name: f.type
    for f in dataclasses.fields(ModelSpec)
    if f.name != "vocab_size"
}
_TRAIN_KEYS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}

_EXTRA_KEYS = {
    "data.train_csv": "str?",
    "data.valid_csv": "str?",
    "data.input_csv": "str?",
    "data.valid_fraction": "float",
    "data.min_count": "int",
    "cv.k": "int",
    "ablate.seeds": "int_list",
    "ablate.full_grid": "bool",
    "predict.checkpoint": "str?",
    "predict.round": "bool",
    "synth.n": "int",
    "synth.seed": "int",
    "out.dir": "str?",
}

ENV_OUT_ROOT = "RUBRIC_OUT_ROOT"


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)  # ModelSpec kwargs minus vocab_size
    train: TrainConfig = field(default_factory=TrainConfig)
    train_csv: str | None = None
    valid_csv: str | None = None
    input_csv: str | None = None
    valid_fraction: float = 0.2
    min_count: int = 1
    cv_k: int = 5
    ablate_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    ablate_full_grid: bool = True
    predict_checkpoint: str | None = None
    predict_round: bool = False
    synth_n: int = 300
    synth_seed: int = 0
    out_dir: str | None = None

    def model_spec(self, vocab_size: int) -> ModelSpec:
        return ModelSpec(vocab_size=vocab_size, **self.model)

    def resolved_out_dir(self, command: str) -> str:
        if self.out_dir:
            return self.out_dir
        root = os.environ.get(ENV_OUT_ROOT, "runs")
        return os.path.join(root, command)


def _parse_typed(key: str, kind: str, raw: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "str":
            return raw
        if kind == "str?":
            return None if raw.lower() in ("", "none") else raw
        if kind == "float?":
            return None if raw.lower() in ("", "none") else float(raw)
        if kind == "int_list":
            return tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None
    raise ConfigError(f"unhandled value kind {kind!r} for {key}")


def _field_kind(annotation: str) -> str:
    text = str(annotation)
    if "int" in text:
        return "int"
    if "float | None" in text or "Optional[float]" in text:
        return "float?"
    if "float" in text:
        return "float"
    if "bool" in text:
        return "bool"
    return "str"


def parse_config_file(path: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, _, value = stripped.partition("=")
                pairs[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return pairs


def resolve_config(pairs: dict[str, str]) -> RunConfig:
    """Turn raw key/value strings into a validated RunConfig."""
    cfg = RunConfig()
    train_kwargs: dict = {}
    for key, raw in pairs.items():
        section, _, name = key.partition(".")
        if section == "model" and name in _MODEL_KEYS:
            cfg.model[name] = _parse_typed(key, _field_kind(_MODEL_KEYS[name]), raw)
        elif section == "train" and name in _TRAIN_KEYS:
            kind = _field_kind(_TRAIN_KEYS[name])
            if name in ("loss_kind", "adv_scope"):
                kind = "str"
            train_kwargs[name] = _parse_typed(key, kind, raw)
        elif key in _EXTRA_KEYS:
            value = _parse_typed(key, _EXTRA_KEYS[key], raw)
            attr = {
                "data.train_csv": "train_csv",
                "data.valid_csv": "valid_csv",
                "data.input_csv": "input_csv",
                "data.valid_fraction": "valid_fraction",
                "data.min_count": "min_count",
                "cv.k": "cv_k",
                "ablate.seeds": "ablate_seeds",
                "ablate.full_grid": "ablate_full_grid",
                "predict.checkpoint": "predict_checkpoint",
                "predict.round": "predict_round",
                "synth.n": "synth_n",
                "synth.seed": "synth_seed",
                "out.dir": "out_dir",
            }[key]
            setattr(cfg, attr, value)
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    try:
        cfg.train = TrainConfig(**train_kwargs)
        ModelSpec(vocab_size=2, **cfg.model)  # validate model fields early
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def render_config(cfg: RunConfig) -> str:
    """Echo every resolved key (defaults included) in sorted order."""
    pairs: dict[str, object] = {}
    spec_defaults = ModelSpec(vocab_size=2)
    for name in _MODEL_KEYS:
        pairs[f"model.{name}"] = cfg.model.get(name, getattr(spec_defaults, name))
    for name in _TRAIN_KEYS:
        pairs[f"train.{name}"] = getattr(cfg.train, name)
    pairs.update(
        {
            "data.train_csv": cfg.train_csv,
            "data.valid_csv": cfg.valid_csv,
            "data.input_csv": cfg.input_csv,
            "data.valid_fraction": cfg.valid_fraction,
            "data.min_count": cfg.min_count,
            "cv.k": cfg.cv_k,
            "ablate.seeds": ",".join(str(s) for s in cfg.ablate_seeds),
            "ablate.full_grid": cfg.ablate_full_grid,
            "predict.checkpoint": cfg.predict_checkpoint,
            "predict.round": cfg.predict_round,
            "synth.n": cfg.synth_n,
            "synth.seed": cfg.synth_seed,
            "out.dir": cfg.out_dir,
        }
    )
    lines = []
    for key in sorted(pairs):
        value = pairs[key]
        if value is None:
            rendered = "none"
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        else:
            rendered = str(value)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"


def load_run_config(config_path: str | None, overrides: list[str]) -> RunConfig:
    """Merge file pairs and ``key=value`` override strings, then resolve."""
    pairs: dict[str, str] = {}
    if config_path:
        pairs.update(parse_config_file(config_path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, value = item.partition("=")
        pairs[key.strip()] = value.strip()
    return resolve_config(pairs)
