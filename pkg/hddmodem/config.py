"""
Flat experiment config files: one `key = value` per line, `#` starts a comment.

Each key belongs to exactly one of the config dataclasses; `load_experiment` routes it there and
coerces the text to the field's type. Two keys pick presets instead of fields:
`profile = external` (HddProfile preset) and `workload = compile` (casual disk activity).
"""

import dataclasses
import logging
import types
from pathlib import Path
from typing import Any, Mapping, Union, get_args, get_origin, get_type_hints

from .acoustics import PROFILES, HddProfile
from .channel import WORKLOADS, ChannelConfig, with_workload
from .dsp import FrequencyBand
from .errors import ConfigError, ModemError
from .framing import BitString, FrameConfig
from .harness import ExperimentSpec, PayloadSource
from .modulation import SymbolTiming
from .receiver import ReceiverConfig

log = logging.getLogger(__name__)

# earlier classes win when a key appears in more than one
ROUTED = (FrameConfig, SymbolTiming, HddProfile, ChannelConfig, ReceiverConfig, ExperimentSpec)
PRESET_KEYS = ("profile", "workload")
TRUE = {"true", "yes", "on", "1"}
FALSE = {"false", "no", "off", "0"}


def read_config(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file doesn't exist: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def _split(value: str) -> list[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def _int_list(value: str) -> list[int]:
    """Comma list; `a..b` expands to the inclusive range"""
    numbers = []
    for part in _split(value):
        start, sep, stop = part.partition("..")
        numbers += range(int(start), int(stop) + 1) if sep else [int(part)]
    return numbers


def coerce(value: str, hint: Any) -> Any:
    origin = get_origin(hint)
    if origin in (Union, types.UnionType):
        if value.lower() in ("", "none"):
            return None
        inner = [arg for arg in get_args(hint) if arg is not type(None)]
        return coerce(value, inner[0])
    if origin is tuple:
        args = get_args(hint)
        if args and args[0] is int:
            return tuple(_int_list(value))
        item = args[0] if args else str
        return tuple(coerce(part, item) for part in _split(value))
    if hint is bool:
        if value.lower() in TRUE:
            return True
        if value.lower() in FALSE:
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if hint is FrequencyBand:
        return FrequencyBand(*(float(part) for part in _split(value)))
    if hint is PayloadSource:
        return PayloadSource.parse(value)
    if hint is BitString:
        return BitString(value)
    if hint in (int, float, str, Path):
        return hint(value)
    raise ConfigError(f"don't know how to read a {hint} from {value!r}")


def build(cls, values: Mapping[str, Any], base=None, **overrides):
    """
    Instantiate a config dataclass from text values. Non-string values (e.g. CLI flags) are taken
    as they are; None means "not given".
    """
    hints = get_type_hints(cls)
    kwargs = {}
    for key, value in {**values, **overrides}.items():
        if key not in hints:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        if value is None:
            continue
        try:
            kwargs[key] = coerce(value, hints[key]) if isinstance(value, str) else value
        except (ValueError, TypeError, ModemError) as e:
            raise ConfigError(f"bad value for {key!r}: {e}")
    try:
        return dataclasses.replace(base, **kwargs) if base is not None else cls(**kwargs)
    except ModemError as e:
        raise ConfigError(f"invalid {cls.__name__}: {e}")


def _owner(key: str):
    for cls in ROUTED:
        if key in get_type_hints(cls):
            return cls
    raise ConfigError(f"unknown config key {key!r}")


def load_experiment(path: str | Path | None = None, **overrides) -> ExperimentSpec:
    """File values, then overrides (None values ignored), routed to their dataclasses"""
    values: dict[str, Any] = dict(read_config(path)) if path is not None else {}
    values.update({key: value for key, value in overrides.items() if value is not None})

    profile_name = values.pop("profile", "desktop")
    if profile_name not in PROFILES:
        raise ConfigError(f"unknown profile {profile_name!r}; choose from {sorted(PROFILES)}")
    workload = values.pop("workload", None)
    if workload is not None and workload not in WORKLOADS:
        raise ConfigError(f"unknown workload {workload!r}; choose from {sorted(WORKLOADS)}")

    grouped: dict[type, dict[str, Any]] = {cls: {} for cls in ROUTED}
    for key, value in values.items():
        grouped[_owner(key)][key] = value

    channel_base = ChannelConfig()
    if workload is not None:
        channel_base = with_workload(channel_base, workload)
    parts = dict(
        frame=build(FrameConfig, grouped[FrameConfig]),
        timing=build(SymbolTiming, grouped[SymbolTiming]),
        profile=build(HddProfile, grouped[HddProfile], base=PROFILES[profile_name]),
        channel=build(ChannelConfig, grouped[ChannelConfig], base=channel_base),
        receiver=build(ReceiverConfig, grouped[ReceiverConfig]),
    )
    spec = build(ExperimentSpec, grouped[ExperimentSpec], **parts)
    log.debug("loaded experiment: %s", spec)
    return spec
