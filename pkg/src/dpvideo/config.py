"""INI-style experiment configs.

Flat key/value pairs grouped in sections, checked into configs/ so experiment
setups diff cleanly. Overrides address options as "section.key=value"; a bare
"key=value" works when the key is unique across sections.
"""

from __future__ import annotations

import configparser
import os

from .trainer import PretrainConfig, TrainConfig


class ConfigError(ValueError):
    pass


def _parse_hidden(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise ConfigError(f"model.hidden must be a comma-separated list of widths, got {text!r}") from None


def _parse_norm(text: str) -> tuple[str, int]:
    text = text.strip()
    if text.startswith("group:"):
        try:
            return "group", int(text.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"model.norm group count must be an integer, got {text!r}") from None
    if text in ("layer", "none"):
        return text, 1
    raise ConfigError(f"model.norm must be 'layer', 'none' or 'group:<g>', got {text!r}")


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"{what} must be a comma-separated list of integers, got {text!r}") from None


class _Resolved:
    """Parsed config with overrides applied, typed accessors, and an echo."""

    def __init__(self, path: str, overrides: list[str] | None = None):
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            parser.read(path)
        except configparser.Error as e:
            raise ConfigError(f"cannot parse config {path}: {e}") from None
        self.parser = parser
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override must look like key=value, got {item!r}")
            key, value = item.split("=", 1)
            section, option = self._locate(key.strip())
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section, option, value.strip())

    def _locate(self, key: str) -> tuple[str, str]:
        if "." in key:
            section, option = key.split(".", 1)
            return section, option
        homes = [s for s in self.parser.sections() if self.parser.has_option(s, key)]
        if len(homes) == 1:
            return homes[0], key
        if not homes:
            raise ConfigError(f"override key {key!r} not found in any section; use section.key")
        raise ConfigError(f"override key {key!r} is ambiguous (in sections {homes}); use section.key")

    def get(self, section: str, option: str, default=None, required: bool = False) -> str | None:
        if self.parser.has_option(section, option):
            value = self.parser.get(section, option).strip()
            if value:
                return value
        if required:
            raise ConfigError(f"missing required config key {section}.{option}")
        return default

    def get_typed(self, section: str, option: str, kind, default=None, required: bool = False):
        raw = self.get(section, option, required=required)
        if raw is None:
            return default
        try:
            return kind(raw)
        except ValueError:
            raise ConfigError(
                f"config key {section}.{option} must be of type {kind.__name__}, got {raw!r}"
            ) from None


def _require_file(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise ConfigError(f"{what} does not exist: {path}")
    return path


def load_train_config(path: str, overrides: list[str] | None = None) -> TrainConfig:
    cfg = _Resolved(path, overrides)
    norm_kind, norm_groups = _parse_norm(cfg.get("model", "norm", default="layer"))
    checkpoint = cfg.get("train", "checkpoint")
    if checkpoint is not None:
        _require_file(checkpoint, "checkpoint")
    try:
        return TrainConfig(
            train_data=_require_file(cfg.get("data", "train", required=True), "train dataset"),
            eval_data=_require_file(cfg.get("data", "eval", required=True), "eval dataset"),
            hidden_dims=_parse_hidden(cfg.get("model", "hidden", default="")),
            norm_kind=norm_kind,
            norm_groups=norm_groups,
            scheme=cfg.get("train", "scheme", default="full"),
            bottleneck_dim=cfg.get_typed("train", "bottleneck_dim", int),
            clips_per_video=cfg.get_typed("train", "clips_per_video", int, default=1),
            target_epsilon=cfg.get_typed("privacy", "target_epsilon", float),
            noise_multiplier=cfg.get_typed("privacy", "noise_multiplier", float),
            delta=cfg.get_typed("privacy", "delta", float, default=1e-5),
            clip_norm=cfg.get_typed("privacy", "clip_norm", float, default=1.0),
            sampling_rate=cfg.get_typed("train", "sampling_rate", float, default=0.05),
            max_epochs=cfg.get_typed("train", "max_epochs", float, default=10.0),
            learning_rate=cfg.get_typed("train", "learning_rate", float, default=0.1),
            seed=cfg.get_typed("train", "seed", int, default=0),
            checkpoint=checkpoint,
            eval_every=cfg.get_typed("train", "eval_every", int, default=50),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


def load_sweep_lists(path: str, overrides: list[str] | None = None) -> tuple[list[int], list[int] | None]:
    cfg = _Resolved(path, overrides)
    clips_raw = cfg.get("sweep", "clips", required=True)
    seeds_raw = cfg.get("sweep", "seeds")
    clips = _parse_int_list(clips_raw, "sweep.clips")
    if not clips:
        raise ConfigError("sweep.clips must list at least one clip count")
    seeds = _parse_int_list(seeds_raw, "sweep.seeds") if seeds_raw else None
    return clips, seeds


def load_pretrain_config(path: str, overrides: list[str] | None = None) -> PretrainConfig:
    cfg = _Resolved(path, overrides)
    norm_kind, norm_groups = _parse_norm(cfg.get("model", "norm", default="layer"))
    try:
        return PretrainConfig(
            data=_require_file(cfg.get("pretrain", "data", required=True), "pretrain dataset"),
            out=cfg.get("pretrain", "out", required=True),
            hidden_dims=_parse_hidden(cfg.get("model", "hidden", default="")),
            norm_kind=norm_kind,
            norm_groups=norm_groups,
            epochs=cfg.get_typed("pretrain", "epochs", int, default=10),
            batch_size=cfg.get_typed("pretrain", "batch_size", int, default=32),
            learning_rate=cfg.get_typed("pretrain", "learning_rate", float, default=0.1),
            seed=cfg.get_typed("pretrain", "seed", int, default=0),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
