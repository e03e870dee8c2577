"""Run configuration: flat key = value text under section headers.

A config file fully determines a run together with the seed; the canonical
serialization (sorted sections and keys) is hashed into checkpoints so a
trained model records the exact configuration that produced it.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field

from .errors import ConfigError
from .models import NormalCoord, PriorSpec, UniformCoord
from .quantile import NetworkSpec, OptimizerSpec

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


@dataclass
class RunConfig:
    """Parsed configuration: sections of string key/value pairs.

    Typed access goes through the get_* helpers, which raise ConfigError
    with the offending section/key on bad or missing values.
    """

    sections: dict = field(default_factory=dict)

    # -- construction ------------------------------------------------------

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        parser = configparser.ConfigParser(
            interpolation=None, delimiters=("=",), comment_prefixes=("#", ";")
        )
        parser.optionxform = str
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
        sections = {
            name: dict(parser.items(name)) for name in parser.sections()
        }
        return cls(sections=sections)

    @classmethod
    def from_text(cls, text) -> "RunConfig":
        parser = configparser.ConfigParser(
            interpolation=None, delimiters=("=",), comment_prefixes=("#", ";")
        )
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config text: {exc}") from exc
        return cls(
            sections={name: dict(parser.items(name)) for name in parser.sections()}
        )

    # -- canonical form ----------------------------------------------------

    def canonical_text(self) -> str:
        """Deterministic serialization: sections and keys sorted."""
        lines = []
        for name in sorted(self.sections):
            lines.append(f"[{name}]")
            for key in sorted(self.sections[name]):
                lines.append(f"{key} = {self.sections[name][key]}")
            lines.append("")
        return "\n".join(lines)

    def config_hash(self) -> bytes:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).digest()

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.canonical_text())

    # -- typed access ------------------------------------------------------

    def has(self, section, key) -> bool:
        return section in self.sections and key in self.sections[section]

    def raw(self, section, key, default=None):
        if not self.has(section, key):
            if default is None:
                raise ConfigError(f"missing config key [{section}] {key}")
            return default
        return self.sections[section][key]

    def set(self, section, key, value) -> None:
        self.sections.setdefault(section, {})[key] = str(value)

    def get_str(self, section, key, default=None) -> str:
        return str(self.raw(section, key, default))

    def get_int(self, section, key, default=None) -> int:
        raw = self.raw(section, key, default)
        try:
            return int(str(raw))
        except ValueError as exc:
            raise ConfigError(
                f"config key [{section}] {key} must be an integer, got {raw!r}"
            ) from exc

    def get_float(self, section, key, default=None) -> float:
        raw = self.raw(section, key, default)
        try:
            return float(str(raw))
        except ValueError as exc:
            raise ConfigError(
                f"config key [{section}] {key} must be a number, got {raw!r}"
            ) from exc

    def get_bool(self, section, key, default=None) -> bool:
        raw = str(self.raw(section, key, default)).strip().lower()
        if raw in _TRUE:
            return True
        if raw in _FALSE:
            return False
        raise ConfigError(
            f"config key [{section}] {key} must be a boolean, got {raw!r}"
        )

    def get_floats(self, section, key, default=None) -> tuple:
        raw = str(self.raw(section, key, default))
        try:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        except ValueError as exc:
            raise ConfigError(
                f"config key [{section}] {key} must be comma-separated numbers, "
                f"got {raw!r}"
            ) from exc

    def get_ints(self, section, key, default=None) -> tuple:
        raw = str(self.raw(section, key, default))
        try:
            return tuple(int(v) for v in raw.split(",") if v.strip())
        except ValueError as exc:
            raise ConfigError(
                f"config key [{section}] {key} must be comma-separated integers, "
                f"got {raw!r}"
            ) from exc


_COORD_RE = re.compile(
    r"(uniform|normal)\(\s*([^\s,()]+)\s*,\s*([^\s,()]+)\s*\)", re.IGNORECASE
)


def parse_prior(text) -> PriorSpec:
    """Parse a prior description: whitespace-separated coordinate terms.

    Each term is ``uniform(lo,hi)`` or ``normal(mean,variance)``, e.g.
    ``normal(0,5)`` or ``uniform(3e-5,8e-5) uniform(1,20)``.
    """
    coords = []
    for match in _COORD_RE.finditer(text):
        kind = match.group(1).lower()
        try:
            a, b = float(match.group(2)), float(match.group(3))
        except ValueError as exc:
            raise ConfigError(f"bad prior term {match.group(0)!r}") from exc
        coords.append(UniformCoord(a, b) if kind == "uniform" else NormalCoord(a, b))
    leftover = re.sub(r"\s+", "", text)
    matched = sum(
        len(re.sub(r"\s+", "", m.group(0))) for m in _COORD_RE.finditer(text)
    )
    if not coords or matched != len(leftover):
        raise ConfigError(
            f"cannot parse prior {text!r}; expected terms like "
            "'normal(0,5)' or 'uniform(1,20)'"
        )
    return PriorSpec(tuple(coords))


def prior_from_config(cfg: RunConfig) -> PriorSpec:
    return parse_prior(cfg.get_str("prior", "theta"))


def simulator_params(cfg: RunConfig) -> dict:
    return dict(cfg.sections.get("simulator", {}))


def network_spec_from_config(cfg: RunConfig) -> NetworkSpec:
    return NetworkSpec(
        psi_hidden=cfg.get_ints("network", "psi_hidden", "64,64"),
        feature_dim=cfg.get_int("network", "feature_dim", 64),
        n_cos=cfg.get_int("network", "n_cos", 64),
        g_hidden=cfg.get_ints("network", "g_hidden", "64,64"),
    )


def optimizer_spec_from_config(cfg: RunConfig) -> OptimizerSpec:
    spec = OptimizerSpec(
        method=cfg.get_str("optimizer", "method", "adam"),
        lr=cfg.get_float("optimizer", "lr", 1e-3),
        momentum=cfg.get_float("optimizer", "momentum", 0.9),
        epochs=cfg.get_int("optimizer", "epochs", 300),
        batch_size=cfg.get_int("optimizer", "batch_size", 128),
        lr_schedule=cfg.get_str("optimizer", "lr_schedule", "step"),
        average_tail=cfg.get_float("optimizer", "average_tail", 0.2),
    )
    if spec.method not in ("adam", "sgd"):
        raise ConfigError(
            f"config key [optimizer] method must be adam or sgd, got {spec.method!r}"
        )
    if spec.lr_schedule not in ("step", "constant"):
        raise ConfigError(
            f"config key [optimizer] lr_schedule must be step or constant, "
            f"got {spec.lr_schedule!r}"
        )
    if spec.epochs < 1 or spec.batch_size < 1 or spec.lr <= 0:
        raise ConfigError("[optimizer] epochs, batch_size, lr must be positive")
    if not 0.0 <= spec.average_tail <= 1.0:
        raise ConfigError("[optimizer] average_tail must lie in [0, 1]")
    return spec
