"""Run configuration: an INI file that fully determines one experiment.

Example::

    [problem]
    name = rotation
    d = 2

    [scheme]
    scheme = L
    N = 5
    p = 5

    [metrics]
    eta = 0.1
    resolution = 201

    [run]
    seed = 0
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, fields

from .problems import PROBLEM_NAMES
from .schemes import SchemeConfig


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


_SCHEME_KEYS = {f.name: f.type for f in fields(SchemeConfig) if f.name != "seed"}


@dataclass
class RunConfig:
    problem: str = "rotation"
    d: int = 2
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    eta: float = 0.1
    resolution: int = 201
    seed: int = 0
    output_dir: str = ""
    threads: int = 1

    def __post_init__(self):
        if self.problem not in PROBLEM_NAMES:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {', '.join(PROBLEM_NAMES)}")
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if not (self.eta > 0):
            raise ConfigError("eta must be positive (use inf for global-only errors)")
        if self.resolution < 2:
            raise ConfigError("resolution must be >= 2")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        self.scheme.seed = self.seed

    # ------------------------------------------------------ serialisation

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["problem"] = {"name": self.problem, "d": str(self.d)}
        sch = {}
        for name in _SCHEME_KEYS:
            val = getattr(self.scheme, name)
            if val is not None:
                sch[name] = _to_str(val)
        cp["scheme"] = sch
        cp["metrics"] = {"eta": _to_str(self.eta), "resolution": str(self.resolution)}
        run = {"seed": str(self.seed), "threads": str(self.threads)}
        if self.output_dir:
            run["output_dir"] = self.output_dir
        cp["run"] = run
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        allowed = {
            "problem": {"name", "d"},
            "scheme": set(_SCHEME_KEYS),
            "metrics": {"eta", "resolution"},
            "run": {"seed", "output_dir", "threads"},
        }
        for section in cp.sections():
            if section not in allowed:
                raise ConfigError(f"unknown section [{section}]")
            for key in cp[section]:
                if key not in allowed[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
        get = lambda s, k, default: cp.get(s, k, fallback=default)  # noqa: E731
        try:
            kw = {}
            if cp.has_section("scheme"):
                for key, value in cp["scheme"].items():
                    kw[key] = _parse(key, value, _SCHEME_KEYS[key])
            seed = int(get("run", "seed", "0"))
            scheme = SchemeConfig(seed=seed, **kw)
            return cls(
                problem=get("problem", "name", "rotation"),
                d=int(get("problem", "d", "2")),
                scheme=scheme,
                eta=float(get("metrics", "eta", "0.1")),
                resolution=int(get("metrics", "resolution", "201")),
                seed=seed,
                output_dir=get("run", "output_dir", ""),
                threads=int(get("run", "threads", "1")),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())


def _to_str(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return "inf" if math.isinf(val) else repr(val)
    return str(val)


def _parse(key: str, value: str, annotation: str):
    value = value.strip()
    if "bool" in annotation:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if "int" in annotation:
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if "float" in annotation:
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    return value
