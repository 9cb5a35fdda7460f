"""Run configuration: documented defaults, INI parsing, and echoing.

Config files are flat ``key = value`` text grouped into sections
([scattering], [model], [training], [run], [synth]). Precedence is
built-in defaults < file < command-line overrides. Unknown keys, type
mismatches, and out-of-range values are rejected with the offending key
named. The fully resolved config can be rendered back to INI text, and
that echo is itself a valid config file.

This module deliberately avoids numpy imports so the CLI can fix
threading environment variables before any numeric code loads.
"""

from __future__ import annotations

from dataclasses import dataclass
import configparser

__all__ = ["ConfigError", "RunConfig", "parse_config", "render_config", "CONFIG_SCHEMA"]


class ConfigError(ValueError):
    """Bad config file, key, type, or value."""


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v.strip()) for v in text.split(",") if v.strip())


def _parse_bool_list(text: str) -> tuple[bool, ...]:
    return tuple(_parse_bool(v) for v in text.split(",") if v.strip())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if value is None:
        return ""
    return str(value)


_PARSERS = {
    "int": int,
    "float": float,
    "bool": _parse_bool,
    "str": lambda s: s.strip(),
    "intlist": _parse_int_list,
    "boollist": _parse_bool_list,
    "optint": lambda s: int(s) if s.strip() else None,
    "optfloat": lambda s: float(s) if s.strip() else None,
    "optstr": lambda s: s.strip() or None,
}


@dataclass(frozen=True)
class _Key:
    section: str
    name: str
    field: str
    kind: str
    default: object
    check: object = None
    describe: str = ""


def _positive(v):
    return v > 0


def _non_negative(v):
    return v >= 0


CONFIG_SCHEMA: tuple[_Key, ...] = (
    _Key("scattering", "J", "J", "int", 2, _positive, "dyadic scales"),
    _Key("scattering", "L", "L", "int", 8, _positive, "orientations per scale"),
    _Key("scattering", "input_height", "input_height", "int", 180, _positive),
    _Key("scattering", "input_width", "input_width", "int", 300, _positive),
    _Key("model", "conv_filters", "conv_filters", "intlist", (16, 16, 32, 32),
         lambda v: len(v) > 0 and all(c > 0 for c in v)),
    _Key("model", "kernel", "kernel", "int", 3, _positive),
    _Key("model", "padding_mode", "padding_mode", "str", "same",
         lambda v: v in ("same", "valid")),
    _Key("model", "pool_after_block", "pool_after_block", "boollist", (True, True, True, False)),
    _Key("model", "pool_ceil_mode", "pool_ceil_mode", "boollist", (False, False, True, False)),
    _Key("model", "embedding_dim", "embedding_dim", "int", 128, _positive),
    _Key("model", "normalize_embeddings", "normalize_embeddings", "bool", True),
    _Key("training", "learning_rate", "learning_rate", "float", 0.0005, _positive),
    _Key("training", "batch_size", "batch_size", "int", 32, _positive),
    _Key("training", "epochs", "epochs", "int", 100, _non_negative),
    _Key("training", "margin", "margin", "float", 0.5, _non_negative),
    _Key("training", "negative_mix", "negative_mix", "float", 0.5, lambda v: 0.0 <= v <= 1.0),
    _Key("training", "triplets_per_epoch", "triplets_per_epoch", "int", 128, _positive),
    _Key("run", "seed", "seed", "int", 0, _non_negative),
    _Key("run", "threads", "threads", "int", 1, _positive),
    _Key("run", "output_dir", "output_dir", "str", "runs/default", lambda v: bool(v)),
    _Key("run", "data_root", "data_root", "optstr", None),
    _Key("run", "layout", "layout", "str", "sigcomp-dutch",
         lambda v: v in ("cedar", "sigcomp-dutch")),
    _Key("run", "train_writers", "train_writers", "int", 40, _positive),
    _Key("run", "weights", "weights", "optstr", None),
    _Key("run", "threshold", "threshold", "optfloat", None,
         lambda v: v is None or 0.0 <= v <= 1.0),
    _Key("run", "eval_cap", "eval_cap", "optint", None, lambda v: v is None or v > 0),
    _Key("run", "bins", "bins", "int", 50, _positive),
    _Key("synth", "writers", "synth_writers", "int", 15, _positive),
    _Key("synth", "train_writers", "synth_train_writers", "int", 10, _positive),
    _Key("synth", "genuine", "synth_genuine", "int", 12, _positive),
    _Key("synth", "forged", "synth_forged", "int", 12, _positive),
)

_BY_ADDRESS = {(k.section, k.name): k for k in CONFIG_SCHEMA}


@dataclass
class RunConfig:
    J: int
    L: int
    input_height: int
    input_width: int
    conv_filters: tuple[int, ...]
    kernel: int
    padding_mode: str
    pool_after_block: tuple[bool, ...]
    pool_ceil_mode: tuple[bool, ...]
    embedding_dim: int
    normalize_embeddings: bool
    learning_rate: float
    batch_size: int
    epochs: int
    margin: float
    negative_mix: float
    triplets_per_epoch: int
    seed: int
    threads: int
    output_dir: str
    data_root: str | None
    layout: str
    train_writers: int
    weights: str | None
    threshold: float | None
    eval_cap: int | None
    bins: int
    synth_writers: int
    synth_train_writers: int
    synth_genuine: int
    synth_forged: int

    def scattering_config(self):
        from .scattering import ScatteringConfig

        return ScatteringConfig(
            J=self.J, L=self.L, input_height=self.input_height, input_width=self.input_width
        )

    def model_config(self):
        from .model import ModelConfig

        return ModelConfig(
            scattering=self.scattering_config(),
            conv_filters=self.conv_filters,
            kernel=self.kernel,
            padding_mode=self.padding_mode,
            pool_after_block=self.pool_after_block,
            pool_ceil_mode=self.pool_ceil_mode,
            embedding_dim=self.embedding_dim,
            normalize_embeddings=self.normalize_embeddings,
        )

    def train_config(self):
        from .training import TrainConfig

        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            margin=self.margin,
            seed=self.seed,
            negative_mix=self.negative_mix,
            triplets_per_epoch=self.triplets_per_epoch,
            threads=self.threads,
        )


def _convert(key: _Key, raw: str):
    try:
        value = _PARSERS[key.kind](raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(
            f"bad value for {key.section}.{key.name}: {raw!r} ({exc})"
        ) from None
    if key.check is not None and not key.check(value):
        raise ConfigError(f"value out of range for {key.section}.{key.name}: {raw!r}")
    return value


def parse_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Resolve defaults, then a config file, then override flags.

    `overrides` maps "section.key" address strings to raw values, exactly
    as typed on the command line.
    """
    values = {k.field: k.default for k in CONFIG_SCHEMA}

    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keys are case-sensitive (J vs j)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from None
        for section in parser.sections():
            for name, raw in parser.items(section):
                key = _BY_ADDRESS.get((section, name))
                if key is None:
                    raise ConfigError(f"unknown config key {name!r} in section [{section}]")
                values[key.field] = _convert(key, raw)

    for address, raw in (overrides or {}).items():
        if "." not in address:
            raise ConfigError(f"override {address!r} must look like section.key")
        section, name = address.split(".", 1)
        key = _BY_ADDRESS.get((section, name))
        if key is None:
            raise ConfigError(f"unknown config key {address!r}")
        values[key.field] = _convert(key, raw)

    return RunConfig(**values)


def render_config(cfg: RunConfig) -> str:
    """INI echo of a resolved config; parse_config accepts the result."""
    lines: list[str] = []
    current = None
    for key in CONFIG_SCHEMA:
        if key.section != current:
            if current is not None:
                lines.append("")
            lines.append(f"[{key.section}]")
            current = key.section
        lines.append(f"{key.name} = {_fmt(getattr(cfg, key.field))}")
    lines.append("")
    return "\n".join(lines)
