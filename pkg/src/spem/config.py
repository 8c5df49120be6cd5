"""Plain-text ``key=value`` experiment manifests.

Recognised prefixes::

    velostat.<field>   VelostatParams      circuit.<field>  CircuitParams
    timing.<field>     TimingConfig        mat.<field>      MatGeometry
    train.<field>      TrainConfig         model.<field>    ModelConfig
    scene.<class>.<patch>.<attr>           template override, attr one of
        weight x y a b mod_kind mod_period mod_duty mod_phase mod_low mod_depth
        sway_x sway_y sway_period

Blank lines and ``#`` comments are ignored. Values are converted to the type
of the field's default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

from .classifier import ModelConfig, TrainConfig
from .crossbar import CircuitParams
from .scan import TimingConfig
from .scene import TEMPLATES, LoadPatch, MatGeometry
from .velostat import VelostatParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Settings:
    velostat: VelostatParams = VelostatParams()
    circuit: CircuitParams | None = None  # None: noise follows velostat.noise_counts
    timing: TimingConfig = TimingConfig()
    geometry: MatGeometry = MatGeometry()
    train: TrainConfig = TrainConfig()
    model: dict = field(default_factory=dict)
    templates: dict = field(default_factory=lambda: dict(TEMPLATES))

    def circuit_params(self) -> CircuitParams:
        return self.circuit or CircuitParams(noise_counts=self.velostat.noise_counts)


_SECTIONS = {
    "velostat": VelostatParams,
    "circuit": CircuitParams,
    "timing": TimingConfig,
    "mat": MatGeometry,
    "train": TrainConfig,
    "model": ModelConfig,
}
_ATTR = {"velostat": "velostat", "circuit": "circuit", "timing": "timing", "mat": "geometry",
         "train": "train"}


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        entries[key.strip()] = value.strip()
    return entries


def read_config(path) -> dict[str, str]:
    """Parse a config file. ``OSError`` propagates for unreadable paths."""
    return parse_text(Path(path).read_text(encoding="utf-8"), str(path))


def _convert(key: str, value: str, default):
    try:
        if isinstance(default, bool):
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(type(default[0])(v) for v in value.split(","))
        if default is None:
            # optional field: "none", an int, a float, or an int tuple
            if value.lower() in ("none", ""):
                return None
            if "," in value:
                return tuple(int(v) for v in value.split(","))
            try:
                return int(value)
            except ValueError:
                return float(value)
        return value
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {value!r}") from exc


def _field_defaults(cls) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            out[f.name] = f.default_factory()
    return out


_PATCH_ATTRS = {"weight", "x", "y", "a", "b", "mod_kind", "mod_period", "mod_duty", "mod_phase",
                "mod_low", "mod_depth", "sway_x", "sway_y", "sway_period"}


def _override_patch(patch: LoadPatch, attr: str, value: str, key: str) -> LoadPatch:
    if attr not in _PATCH_ATTRS:
        raise ConfigError(f"{key}: unknown patch attribute {attr!r}")
    if attr == "mod_kind":
        if value not in ("const", "square", "sine"):
            raise ConfigError(f"{key}: modulation must be const, square or sine")
        return replace(patch, modulation=replace(patch.modulation, kind=value))
    num = _convert(key, value, 0.0)
    if attr == "weight":
        return replace(patch, weight_fraction=num)
    if attr in ("x", "y"):
        c = list(patch.center)
        c["xy".index(attr)] = num
        return replace(patch, center=tuple(c))
    if attr in ("a", "b"):
        s = list(patch.semi_axes)
        s["ab".index(attr)] = num
        return replace(patch, semi_axes=tuple(s))
    if attr.startswith("mod_"):
        return replace(patch, modulation=replace(patch.modulation, **{attr[4:]: num}))
    if attr == "sway_period":
        return replace(patch, sway_period=num)
    s = list(patch.sway)
    s["xy".index(attr[-1])] = num
    return replace(patch, sway=tuple(s))


def build_settings(entries: dict[str, str], base: Settings | None = None) -> Settings:
    """Apply ``entries`` on top of ``base`` (compiled defaults when omitted)."""
    base = base or Settings()
    grouped: dict[str, dict] = {}
    templates = {name: list(patches) for name, patches in base.templates.items()}
    for key, value in entries.items():
        section, _, rest = key.partition(".")
        if section == "scene":
            cls, _, tail = rest.partition(".")
            patch_name, _, attr = tail.partition(".")
            if cls not in templates:
                raise ConfigError(f"{key}: unknown class {cls!r}")
            names = [p.name for p in templates[cls]]
            if patch_name not in names:
                raise ConfigError(f"{key}: class {cls!r} has no patch {patch_name!r} (have {names})")
            k = names.index(patch_name)
            templates[cls][k] = _override_patch(templates[cls][k], attr, value, key)
            continue
        if section not in _SECTIONS or not rest:
            raise ConfigError(f"unknown config key {key!r}")
        defaults = _field_defaults(_SECTIONS[section])
        if rest not in defaults:
            raise ConfigError(f"unknown config key {key!r}")
        grouped.setdefault(section, {})[rest] = _convert(key, value, defaults[rest])

    updates = {"templates": templates}
    try:
        # velostat first: a default circuit takes its noise level from it
        for section in sorted(grouped, key=lambda s: s != "velostat"):
            values = grouped[section]
            if section == "model":
                updates["model"] = {**base.model, **values}
                continue
            attr = _ATTR[section]
            current = getattr(base, attr)
            if current is None:
                velostat = updates.get("velostat", base.velostat)
                current = CircuitParams(noise_counts=velostat.noise_counts)
            updates[attr] = replace(current, **values)
        settings = replace(base, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return settings


def load_settings(path=None) -> Settings:
    if path is None:
        return Settings()
    return build_settings(read_config(path))


__all__ = ["ConfigError", "Settings", "build_settings", "load_settings",
           "parse_text", "read_config"]
