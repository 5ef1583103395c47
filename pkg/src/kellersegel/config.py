"""Plain-text run configuration: one dotted ``key = value`` per line.

Lines starting with ``#`` are comments.  Unknown keys are rejected.  Any
key can be overridden from the environment through ``KELLERSEGEL_`` plus
the key upper-cased with dots replaced by underscores (``grid.n`` becomes
``KELLERSEGEL_GRID_N``), and from the command line with ``--set key=value``.
The configuration hash is the SHA-256 of the normalized, fully resolved
key list, so equivalent files hash identically.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .errors import ConfigError

ENV_PREFIX = "KELLERSEGEL_"


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise ValueError("must be a positive integer")
    return v


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        t = text.strip().lower()
        if t not in options:
            raise ValueError(f"must be one of {options}")
        return t
    return parse


def _finite(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


# key -> (parser, default); None marks a required key
KEYS: dict[str, tuple[Callable[[str], object], object]] = {
    "grid.n": (_positive_int, 256),
    "grid.L": (_finite, None),
    "params.epsilon": (_finite, None),
    "params.alpha": (_finite, 0.0),
    "params.chemotaxis": (_bool, True),
    "init.kind": (_choice("gaussian", "profile"), "gaussian"),
    "init.mass": (_finite, None),
    "init.sigma": (_finite, 1.0),
    "init.v0": (_finite, 0.0),
    "solver.dt": (_finite, None),
    "solver.scheme": (_choice("etd1", "etd2", "imex-drift"), "etd2"),
    "solver.frame": (_choice("physical", "rescaled"), "physical"),
    "solver.t_end": (_finite, None),
    "output.every": (_positive_int, 10),
    "output.dir": (str, "runs"),
    "seed": (int, 0),
}

# default half-width depends on the frame
DEFAULT_HALF_WIDTH = {"physical": 20.0, "rescaled": 12.0}


def env_name(key: str) -> str:
    return ENV_PREFIX + key.upper().replace(".", "_")


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw key/value strings from config text; duplicates and unknown keys fail."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"{source}:{lineno}: empty value for {key!r}")
        out[key] = value
    return out


def parse_assignments(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = (s.strip() for s in item.split("=", 1))
        if k not in KEYS:
            raise ConfigError(f"unknown key {k!r}")
        out[k] = v
    return out


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    return {k: environ[env_name(k)] for k in KEYS if env_name(k) in environ}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run configuration."""

    values: Mapping[str, object]

    def __getitem__(self, key: str):
        return self.values[key]

    def normalized(self) -> str:
        lines = []
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, bool):
                text = "true" if v else "false"
            elif isinstance(v, float):
                text = repr(v)
            else:
                text = str(v)
            lines.append(f"{k} = {text}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.normalized().encode("utf-8")).hexdigest()

    @property
    def run_id(self) -> str:
        return self.hash[:12]


def resolve(raw: Mapping[str, str]) -> RunConfig:
    """Type-check raw strings, apply defaults and validate ranges."""
    values: dict[str, object] = {}
    for key, (parse, default) in KEYS.items():
        if key in raw:
            try:
                values[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        elif default is not None:
            values[key] = default
    if "grid.L" not in values:
        values["grid.L"] = DEFAULT_HALF_WIDTH[values["solver.frame"]]
    missing = [k for k in ("params.epsilon", "init.mass", "solver.dt", "solver.t_end")
               if k not in values]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    n = values["grid.n"]
    if n < 32 or n & (n - 1):
        raise ConfigError("grid.n must be a power of two >= 32")
    for k in ("grid.L", "params.epsilon", "init.mass", "init.sigma", "solver.dt", "solver.t_end"):
        if not values[k] > 0:
            raise ConfigError(f"{k} must be positive")
    for k in ("params.alpha", "init.v0"):
        if values[k] < 0:
            raise ConfigError(f"{k} must be non-negative")
    if values["init.kind"] == "profile" and values["solver.frame"] != "rescaled":
        raise ConfigError("init.kind = profile requires solver.frame = rescaled")
    return RunConfig(values)


def load(path, overrides: Sequence[str] = (), environ: Mapping[str, str] | None = None) -> RunConfig:
    """Read a config file, then apply environment and command-line overrides."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from None
    raw = parse_text(text, str(p))
    raw.update(env_overrides(environ))
    raw.update(parse_assignments(overrides))
    return resolve(raw)
