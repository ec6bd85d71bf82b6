"""Configuration helpers: dataclass (de)serialisation, config files and flag overrides."""

import dataclasses
import os.path as osp

import yaml


class ConfigMixin:
    """Mixin for dataclass configs with strict ``from_dict``."""

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, mapping=None):
        if mapping is None:
            return cls()
        if not isinstance(mapping, dict):
            raise TypeError(f"{cls.__name__} must be built from a dict, not {type(mapping).__name__}")
        supported = [field.name for field in dataclasses.fields(cls)]
        unknown = sorted(set(mapping) - set(supported))
        if unknown:
            raise KeyError(
                f"unsupported {cls.__name__} option(s) {', '.join(unknown)}, "
                f"supported options are {', '.join(supported)}"
            )
        return cls(**mapping)

    def replace(self, **changes):
        merged = self.to_dict()
        merged.update(changes)
        return type(self).from_dict(merged)


def load_config_file(path):
    """Read a YAML (or JSON) config file into a dict.

    Args:
        path (str): config filename.

    Returns:
        dict: the parsed mapping, empty for an empty file.
    """
    if not osp.isfile(path):
        raise OSError(f"config file {path} not found")
    with open(path, encoding="utf-8") as fin:
        data = yaml.safe_load(fin)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise TypeError(f"config file {path} must hold a mapping, not {type(data).__name__}")
    return data


def parse_bool(text):
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f'cannot read "{text}" as a boolean')


def parse_floats(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(item) for item in text)
    return tuple(float(item) for item in str(text).split(","))


def parse_assignments(assignments):
    """Turn ``["train.epochs=5", ...]`` into ``{"train.epochs": "5", ...}``."""
    options = {}
    for item in assignments or []:
        name, sep, value = item.partition("=")
        if not sep or not name.strip():
            raise ValueError(f'override "{item}" must look like section.key=value')
        options[name.strip()] = value.strip()
    return options


class OverrideRules:
    """Validates and coerces ``section.key`` overrides given on the command line."""

    def __init__(self):
        self.rules = {}

    def add_rule(self, name, format_fn, choices=None):
        assert callable(format_fn)
        assert choices is None or isinstance(choices, list)
        self.rules[name] = (format_fn, choices)

    def add_config(self, section, config_cls, choices=None):
        """Add one rule per field of a dataclass config, coercing by the default's type."""
        choices = choices or {}
        for field in dataclasses.fields(config_cls):
            default = field.default
            if default is dataclasses.MISSING:
                continue
            if isinstance(default, bool):
                format_fn = parse_bool
            elif isinstance(default, int):
                format_fn = int
            elif isinstance(default, float):
                format_fn = float
            elif isinstance(default, tuple):
                format_fn = parse_floats
            else:
                format_fn = str
            self.add_rule(f"{section}.{field.name}", format_fn, choices.get(field.name))

    def apply(self, options):
        """Validate overrides.

        Args:
            options (dict): ``{"section.key": raw_value}``.

        Returns:
            dict: ``{section: {key: value}}`` with coerced values.
        """
        if options is None:
            return {}
        assert isinstance(options, dict)
        formatted = {}
        for name, val in options.items():
            if name not in self.rules:
                raise KeyError(f"unsupported option '{name}', supported options are {', '.join(self.rules.keys())}")
            format_fn, choices = self.rules[name]
            try:
                value = format_fn(val)
            except (TypeError, ValueError) as e:
                raise ValueError(f'option "{name}" got an invalid value "{val}": {e}') from None
            if isinstance(choices, list) and value not in choices:
                raise ValueError('option "{}" must be one of the following: {}'.format(name, ", ".join(choices)))
            section, _, key = name.partition(".")
            formatted.setdefault(section, {})[key] = value
        return formatted
