"""Flat ``key = value`` config files with one section per component."""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

from .exceptions import ConfigError
from .model import EncoderConfig
from .sampler import SamplerConfig
from .trainer import TrainConfig

DATA_KEYS = {"graph": str, "split": str, "negatives": str, "fractions": str, "id_map": str}


def _coerce(value, typ, key):
    try:
        if typ is bool:
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
        if value.strip().lower() in ("", "none"):
            return None
        return value.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ.__name__}") from None


def _field_types(cls):
    out = {}
    for f in dataclasses.fields(cls):
        t = f.type if isinstance(f.type, type) else str(f.type)
        name = t if isinstance(t, str) else t.__name__
        out[f.name] = {"int": int, "float": float, "bool": bool}.get(name.split(" ")[0], str)
    return out


def _section(parser, name, cls, skip=()):
    if not parser.has_section(name):
        return {}
    types = _field_types(cls)
    values = {}
    for key, raw in parser.items(name):
        if key not in types or key in skip:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        values[key] = _coerce(raw, types[key], f"[{name}] {key}")
    return values


def load_config(path, seed=None):
    """Return ``(TrainConfig, data)`` where ``data`` holds the [data] paths resolved against the file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = set(parser.sections()) - {"data", "sampler", "encoder", "train"}
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    data = {}
    if parser.has_section("data"):
        for key, raw in parser.items("data"):
            if key not in DATA_KEYS:
                raise ConfigError(f"unknown key {key!r} in [data]")
            data[key] = raw.strip()
    for key in ("graph", "split", "negatives", "id_map"):
        if key in data and not Path(data[key]).is_absolute():
            data[key] = str(path.parent / data[key])
    sampler = _section(parser, "sampler", SamplerConfig)
    encoder = _section(parser, "encoder", EncoderConfig)
    train = _section(parser, "train", TrainConfig, skip=("sampler", "encoder"))
    if seed is not None:
        train["seed"] = seed
    s_seed = train.get("seed", 0)
    sampler.setdefault("seed", s_seed)
    sampler_cfg = SamplerConfig(**sampler)
    encoder.setdefault("n_max", max(sampler_cfg.budget, EncoderConfig.n_max))
    cfg = TrainConfig(**train, sampler=sampler_cfg, encoder=EncoderConfig(**encoder))
    return cfg, data


def dump_config(cfg, data=None):
    """Render a config back to the file format (round-trips through :func:`load_config`)."""
    parser = configparser.ConfigParser(interpolation=None)
    if data:
        parser["data"] = {k: str(v) for k, v in data.items()}
    parser["sampler"] = {k: str(v) for k, v in dataclasses.asdict(cfg.sampler).items()}
    parser["encoder"] = {k: str(v) for k, v in dataclasses.asdict(cfg.encoder).items()}
    parser["train"] = {f.name: str(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)
                       if f.name not in ("sampler", "encoder")}
    import io

    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
