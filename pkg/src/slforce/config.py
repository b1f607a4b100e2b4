"""Key-value config files (INI sections) mapped onto the package's dataclasses.

Example::

    [scene]
    width = 192
    stiffness_n_per_m = 80

    [net]
    point_mlp_widths = 64, 64, 64, 128, 1024

Unknown keys and unparsable values raise ConfigError naming the key.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io

MISSING = dataclasses.MISSING


class ConfigError(ValueError):
    pass


def _convert(text: str, annotation: str, key: str):
    ann = annotation.replace(" ", "")
    optional = ann.endswith("|None") or ann.startswith("None|")
    ann = ann.replace("|None", "").replace("None|", "")
    raw = text.strip()
    if optional and raw.lower() in ("none", ""):
        return None
    try:
        if ann == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if ann == "int":
            return int(raw)
        if ann == "float":
            return float(raw)
        if ann == "str":
            return raw
        if ann.startswith("tuple[int"):
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if ann.startswith("tuple[float") or ann == "tuple":
            return tuple(float(v) for v in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {annotation}") from None
    raise ConfigError(f"{key}: unsupported field type {annotation}")


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as f:
            cp.read_file(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return cp


def build(cls, cp: configparser.ConfigParser | None, section: str, overrides=None, required=()):
    """Instantiate dataclass `cls` from `section`, falling back to field defaults.

    `required` names keys that must be present in the file even though the
    dataclass has defaults.
    """
    values = dict(cp[section]) if cp is not None and cp.has_section(section) else {}
    flds = {f.name: f for f in dataclasses.fields(cls) if f.init}
    for key in values:
        if key not in flds:
            raise ConfigError(f"[{section}] {key}: unknown key")
    kwargs = {}
    for name, f in flds.items():
        if name in values:
            kwargs[name] = _convert(values[name], str(f.type), f"[{section}] {name}")
        elif name in required or (f.default is MISSING and f.default_factory is MISSING):
            raise ConfigError(f"[{section}] {name}: missing required key")
    kwargs.update(overrides or {})
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def config_text(sections: dict) -> str:
    """Canonical INI text for {section: dataclass instance}; stable across runs."""
    cp = configparser.ConfigParser(interpolation=None)
    for name, obj in sections.items():
        cp[name] = {
            f.name: _format(getattr(obj, f.name))
            for f in dataclasses.fields(obj)
            if f.init and not isinstance(getattr(obj, f.name), (dict, list))
            and not dataclasses.is_dataclass(getattr(obj, f.name))
        }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_hash(sections: dict) -> str:
    return hashlib.sha256(config_text(sections).encode()).hexdigest()


def write_config(path, sections: dict):
    with open(path, "w") as f:
        f.write(config_text(sections))
