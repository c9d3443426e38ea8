"""Run configuration: flat ``section.key = value`` text with typed defaults.

Every setting has a schema entry (section.key, type, default) below; a key
or section outside the schema is a hard error, as is a value the type
parser rejects. The effective config (defaults, then file, then ``--set``
overrides, in that order) serializes back to text that re-parses to the
same values, which is what the CLI echoes into each output directory.

The model defaults describe the toy recipe (narrow encoder, decode width
32) so ``train-toy`` converges inside its CPU budget out of the box; the
library's own BlockConfig/DecoderConfig defaults are wider.
"""

from __future__ import annotations

import configparser
import io

from .blocks import BlockConfig
from .network import DecoderConfig
from .rng import resolve_seed


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_ints(text: str) -> tuple:
    return tuple(int(part) for part in text.split(","))


def _parse_floats(text: str) -> tuple:
    return tuple(float(part) for part in text.split(","))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


# section.key -> (parser, default). Order defines serialization order.
SCHEMA = {
    "run.seed": (lambda s: int(s, 0), 0),
    "run.out_dir": (str, "runs/out"),
    "model.num_classes": (int, 3),
    "model.encoder_channels": (_parse_ints, (24, 48, 96, 192)),
    "model.decode_channels": (int, 32),
    "model.window_size": (int, 4),
    "model.heads": (int, 4),
    "model.shuffle_groups": (int, 2),
    "model.eca_kernel": (int, 3),
    "model.sism_kernels": (_parse_ints, (5, 7, 7, 3)),
    "model.norm": (str, "batch"),
    "model.activation": (str, "relu"),
    "model.ffn_ratio": (int, 4),
    "model.aux_heads": (_parse_bool, True),
    "data.image_size": (int, 64),
    "data.train_count": (int, 200),
    "data.val_count": (int, 50),
    "data.mean": (_parse_floats, (0.5, 0.5, 0.5)),
    "data.std": (_parse_floats, (0.25, 0.25, 0.25)),
    "train.epochs": (int, 30),
    "train.batch_size": (int, 8),
    "train.encoder_lr": (float, 3e-3),
    "train.decoder_lr": (float, 9e-3),
    "train.lr_min": (float, 1e-4),
    "train.weight_decay": (float, 1e-2),
    "train.aux_weight": (float, 0.4),
    "train.augment": (_parse_bool, True),
    "train.stop_miou": (float, 0.95),
    "infer.window": (int, 1024),
    "infer.stride": (int, 512),
    "infer.save_logits": (_parse_bool, False),
    "analyze.batch": (int, 4),
    "analyze.height": (int, 128),
    "analyze.width": (int, 128),
}


class ConfigError(ValueError):
    """Unknown key/section or an unparseable value."""


class RunConfig:
    def __init__(self, values: dict | None = None):
        self.values = {key: default for key, (_, default) in SCHEMA.items()}
        if values:
            self.values.update(values)

    def __getitem__(self, key: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def set(self, key: str, text: str) -> None:
        """Assign from text through the schema parser; unknown key is an error."""
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r} (see `{key.split('.')[0]}` "
                              f"section of the documented defaults)")
        parser, _ = SCHEMA[key]
        try:
            self.values[key] = parser(text)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc

    def apply_overrides(self, pairs) -> None:
        """``--set section.key=value`` strings, applied in order."""
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} is not of the form section.key=value")
            key, _, text = pair.partition("=")
            self.set(key.strip(), text.strip())

    @property
    def seed(self) -> int:
        return resolve_seed(self["run.seed"])

    def block_config(self) -> BlockConfig:
        try:
            return BlockConfig(
                channels=self["model.decode_channels"],
                window_size=self["model.window_size"],
                heads=self["model.heads"],
                shuffle_groups=self["model.shuffle_groups"],
                eca_kernel=self["model.eca_kernel"],
                sism_kernels=self["model.sism_kernels"],
                norm=self["model.norm"],
                activation=self["model.activation"],
                ffn_ratio=self["model.ffn_ratio"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def decoder_config(self) -> DecoderConfig:
        try:
            return DecoderConfig(
                num_classes=self["model.num_classes"],
                encoder_channels=self["model.encoder_channels"],
                decode_channels=self["model.decode_channels"],
                block=self.block_config(),
                aux_heads=self["model.aux_heads"],
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_text(self) -> str:
        lines = []
        section = None
        for key in SCHEMA:
            sec, _, name = key.partition(".")
            if sec != section:
                if section is not None:
                    lines.append("")
                lines.append(f"[{sec}]")
                section = sec
            lines.append(f"{name} = {_fmt(self.values[key])}")
        return "\n".join(lines) + "\n"


def parse_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from exc
    for section in parser.sections():
        for name, value in parser.items(section):
            cfg.set(f"{section}.{name}", value)
    return cfg


def load(path=None, overrides=()) -> RunConfig:
    """Defaults, then the optional file, then overrides."""
    cfg = RunConfig()
    if path is not None:
        with io.open(path, "r", encoding="utf-8") as fh:
            parse_text(fh.read(), base=cfg)
    cfg.apply_overrides(overrides)
    return cfg
