"""Flat key=value config files and coercion into the config dataclasses.

One flat namespace covers every knob (field design, resampling, study
driver, synthetic population); the dataclasses have disjoint field names so
a single file configures a whole study. CLI flags override file values.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import get_args, get_origin, get_type_hints

from .errors import ConfigurationError
from .fieldsim import DesignConfig
from .harness import StudyConfig
from .oracle import AttributeSpec, SyntheticPopSpec
from .resampler import ResampleConfig

__all__ = [
    "parse_config_file",
    "dataclass_kwargs",
    "parse_attribute_specs",
    "design_config_from",
    "resample_config_from",
    "synthetic_spec_from",
    "study_config_from",
]

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config_file(path) -> dict[str, str]:
    """Read key=value lines; ``#`` starts a comment, blanks are skipped."""
    mapping: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"{path}:{line_no}: expected key=value")
        key, value = stripped.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def _coerce(annotation, raw: str, key: str):
    origin = get_origin(annotation)
    if origin is None:
        if annotation is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ConfigurationError(f"{key}: expected a boolean, got {raw!r}")
        if annotation in (int, float, str):
            try:
                return annotation(raw)
            except ValueError:
                raise ConfigurationError(
                    f"{key}: expected {annotation.__name__}, got {raw!r}"
                ) from None
        raise ConfigurationError(f"{key}: unsupported config field type {annotation}")
    args = get_args(annotation)
    if origin is type(None):  # pragma: no cover - not reachable via get_origin
        return None
    if str(origin) in ("typing.Union", "<class 'types.UnionType'>"):
        if raw.lower() in ("none", ""):
            return None
        inner = next(a for a in args if a is not type(None))
        return _coerce(inner, raw, key)
    if origin is tuple:
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], item, key) for item in items)
        if len(items) != len(args):
            raise ConfigurationError(f"{key}: expected {len(args)} items, got {len(items)}")
        return tuple(_coerce(a, item, key) for a, item in zip(args, items))
    raise ConfigurationError(f"{key}: unsupported config field type {annotation}")


def dataclass_kwargs(cls, mapping: dict[str, str]) -> dict:
    """Pick out and coerce the mapping entries that name fields of cls."""
    hints = get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in mapping:
            kwargs[f.name] = _coerce(hints[f.name], mapping[f.name], f.name)
    return kwargs


def parse_attribute_specs(raw: str) -> tuple[AttributeSpec, ...]:
    """Parse ``name:prevalence[:homophily]`` items separated by commas or
    semicolons."""
    specs = []
    for item in raw.replace(";", ",").split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) not in (2, 3):
            raise ConfigurationError(
                f"attribute spec {item!r} is not name:prevalence[:homophily]"
            )
        specs.append(
            AttributeSpec(
                name=parts[0],
                prevalence=float(parts[1]),
                homophily=float(parts[2]) if len(parts) == 3 else 0.0,
            )
        )
    return tuple(specs)


def design_config_from(mapping: dict[str, str], design: str | None = None) -> DesignConfig:
    kwargs = dataclass_kwargs(DesignConfig, mapping)
    if design is not None:
        return DesignConfig.for_design(design, **kwargs)
    return DesignConfig(**kwargs)


def resample_config_from(mapping: dict[str, str]) -> ResampleConfig:
    return ResampleConfig(**dataclass_kwargs(ResampleConfig, mapping))


def synthetic_spec_from(mapping: dict[str, str]) -> SyntheticPopSpec:
    kwargs = dataclass_kwargs(SyntheticPopSpec, mapping)
    kwargs.pop("attributes", None)
    if "attributes" in mapping:
        kwargs["attributes"] = parse_attribute_specs(mapping["attributes"])
    return SyntheticPopSpec(**kwargs)


_STUDY_STRUCTURED = ("synthetic", "field_base", "design_overrides", "resample")


def study_config_from(mapping: dict[str, str]) -> StudyConfig:
    flat = {k: v for k, v in mapping.items() if k not in _STUDY_STRUCTURED}
    kwargs = dataclass_kwargs(StudyConfig, flat)
    kwargs["field_base"] = design_config_from(flat)
    kwargs["resample"] = resample_config_from(flat)
    if mapping.get("synthetic", "").lower() in _TRUE:
        kwargs["synthetic"] = synthetic_spec_from(flat)
    return StudyConfig(**kwargs)
