"""Flat ``section.key: value`` configuration files.

One file carries every section (``discrete_move``, ``vsn``, ``camera``,
``noise``, ``run``, ...). Keys may be written fully qualified::

    discrete_move.linear_velocity: 0.15
    vsn.target: chair
    remap: /mobile_base/commands/velocity /cmd_vel

or grouped under an unindented ``section:`` header with indented keys, which
keeps yaml-style files such as ``discrete_move.yaml`` readable. Unqualified
top-level keys fall into ``default_section`` when one is given.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


@dataclass
class FlatConfig:
    sections: dict[str, dict[str, str]] = field(default_factory=dict)
    remaps: list[tuple[str, str]] = field(default_factory=list)

    def section(self, name: str) -> dict[str, str]:
        return dict(self.sections.get(name, {}))

    def set(self, section: str, key: str, value: str) -> None:
        self.sections.setdefault(section, {})[key] = value


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].rstrip()


def parse_flat_config(text: str, default_section: str | None = None) -> FlatConfig:
    cfg = FlatConfig()
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw)
        if not line.strip():
            continue
        indented = line[0] in " \t"
        if ":" not in line:
            raise ConfigError(f"line {lineno}: expected 'key: value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split(":", 1))
        value = value.strip("\"'")
        if not key:
            raise ConfigError(f"line {lineno}: empty key")

        if key == "remap":
            parts = value.split()
            if len(parts) != 2:
                raise ConfigError(f"line {lineno}: remap needs '<from> <to>'")
            cfg.remaps.append((parts[0], parts[1]))
            continue
        if not indented:
            current = None
            if not value:
                current = key
                continue
        if indented and current is not None:
            section, name = current, key
        elif "." in key:
            section, name = key.split(".", 1)
        elif default_section is not None:
            section, name = default_section, key
        else:
            raise ConfigError(f"line {lineno}: key {key!r} has no section")
        cfg.set(section, name, value)
    return cfg


def parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")
