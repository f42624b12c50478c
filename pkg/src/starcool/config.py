"""Run configuration files.

Grammar, one statement per line::

    # comment (also allowed after a value)
    [section]
    key = value

Values are numbers, words, comma-separated lists, inclusive integer ranges
``a:b`` or ``a:b:step``, and the generators ``lin(start, stop, count)`` and
``geom(start, stop, count)``.  The pulse ``bands`` key takes
``target low high`` triples separated by ``;``.  Every key has a default;
unknown sections or keys are errors that name the offending line.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _number(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "infinity"):
        return math.inf
    return float(t)


def _to_int(text: str) -> int:
    v = _number(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text.strip()!r}")
    return int(v)


_GEN = re.compile(r"^(lin|geom)\((.*)\)$")


def _numlist(text: str) -> list[float]:
    out: list[float] = []
    # split on commas that are not inside parentheses
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    for part in parts:
        part = part.strip()
        if not part:
            raise ValueError("empty list element")
        gen = _GEN.match(part.replace(" ", ""))
        if gen:
            args = gen.group(2).split(",")
            if len(args) != 3:
                raise ValueError(f"{gen.group(1)}() takes start, stop, count")
            a, b, n = _number(args[0]), _number(args[1]), _to_int(args[2])
            if gen.group(1) == "lin":
                out.extend(np.linspace(a, b, n).tolist())
            else:
                if a <= 0 or b <= 0:
                    raise ValueError("geom() needs positive endpoints")
                out.extend(np.geomspace(a, b, n).tolist())
        elif ":" in part:
            bits = part.split(":")
            if len(bits) not in (2, 3):
                raise ValueError(f"bad range {part!r}")
            a, b = _to_int(bits[0]), _to_int(bits[1])
            step = _to_int(bits[2]) if len(bits) == 3 else 1
            if step <= 0:
                raise ValueError("range step must be positive")
            out.extend(float(v) for v in range(a, b + 1, step))
        else:
            out.append(_number(part))
    return out


def _intlist(text: str) -> list[int]:
    vals = _numlist(text)
    if any(v != int(v) for v in vals):
        raise ValueError("expected integers")
    return [int(v) for v in vals]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true/false, got {text.strip()!r}")


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {t!r}")
        return t
    return parse


def _optional_number(text: str):
    t = text.strip().lower()
    return None if t in ("", "auto", "none") else _number(t)


def _bands(text: str) -> list[tuple[float, float, str]]:
    out = []
    for chunk in text.split(";"):
        bits = chunk.split()
        if len(bits) != 3 or bits[0] not in ("invert", "preserve"):
            raise ValueError(f"band must be 'invert|preserve low high', got {chunk.strip()!r}")
        out.append((_number(bits[1]), _number(bits[2]), bits[0]))
    return out


def _positive(parse):
    def wrapped(text):
        v = parse(text)
        if not v > 0:
            raise ValueError(f"must be positive, got {text.strip()!r}")
        return v
    return wrapped


def _nonneg(parse):
    def wrapped(text):
        v = parse(text)
        if v < 0:
            raise ValueError(f"must be non-negative, got {text.strip()!r}")
        return v
    return wrapped


# section -> key -> (parser, default value as text)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], str]]] = {
    "system": {
        "n_reset": (_positive(_to_int), "36"),
        "gamma": (_nonneg(_number), "5.03"),
        "t1_comp": (_positive(_number), "120"),
        "t1_reset": (_positive(_number), "3"),
        "j_rc": (_nonneg(_number), "6.5"),
        "temperature": (_positive(_number), "298"),
        "background": (_number, "0"),
    },
    "schedule": {
        "iterations": (_nonneg(_to_int), "15"),
        "m": (_intlist, "15"),
        "tau_hb": (_numlist, "9.5"),
        "eta_low": (_number, "0"),
        "eta_high": (_number, "1"),
        "swap_model": (_choice("effective", "explicit"), "effective"),
    },
    "sweep": {
        "axis": (_choice("n_reset", "m", "tau_hb", "gamma"), "m"),
        "grid": (_numlist, "0:18"),
        "metric": (_nonneg(_to_int), "15"),
        "m_rule": (_choice("half", "fixed"), "half"),
        "randomize": (_bool, "false"),
        "seed": (_nonneg(_to_int), "0"),
    },
    "fit": {
        "parametrization": (_choice("two-level", "per-j"), "two-level"),
        "smoothness": (_nonneg(_number), "0"),
        "starts": (_positive(_to_int), "6"),
        "max_evals": (_positive(_to_int), "4000"),
        "seed": (_nonneg(_to_int), "0"),
    },
    "pulse": {
        "bands": (_bands, "invert 2.5 50; preserve -50 -2.5"),
        "margin": (_optional_number, "2.5"),
        "offsets": (_numlist, "lin(-50, 50, 50)"),
        "rf_scales": (_numlist, "0.8, 1.0, 1.2"),
        "segments": (_positive(_to_int), "300"),
        "duration": (_positive(_number), "0.2"),
        "max_iterations": (_nonneg(_to_int), "500"),
        "tolerance": (_positive(_number), "1e-10"),
        "gradient_tolerance": (_positive(_number), "1e-9"),
        "shrink": (_positive(_number), "0.5"),
        "init_scale": (_nonneg(_number), "10"),
        "amplitude_cap": (_positive(_number), "1000"),
        "method": (_choice("lbfgs", "steepest"), "lbfgs"),
        "seed": (_nonneg(_to_int), "0"),
    },
    "coherence": {
        "q": (_intlist, "1:9"),
        "rms": (_nonneg(_number), "100"),
        "correlation_time": (_positive(_number), "1e-4"),
        "trajectories": (_positive(_to_int), "10000"),
        "points": (_positive(_to_int), "60"),
        "depth": (_positive(_number), "2.0"),
        "floor": (_positive(_number), "0.05"),
        "seed": (_nonneg(_to_int), "0"),
    },
}


@dataclass
class RunConfig:
    values: dict[str, dict[str, Any]]
    sha256: str = ""
    explicit: set = field(default_factory=set)

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    @classmethod
    def defaults(cls) -> "RunConfig":
        return parse_config("")


def parse_config(text: str) -> RunConfig:
    """Parse configuration text, filling in defaults for absent keys."""
    values = {sec: {k: parser(default) for k, (parser, default) in keys.items()}
              for sec, keys in SCHEMA.items()}
    seen: set[tuple[str, str]] = set()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if section is None:
            raise ConfigError(f"key {key!r} appears before any [section]", lineno)
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno)
        seen.add((section, key))
        parser, _ = SCHEMA[section][key]
        try:
            values[section][key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {section}.{key}: {exc}", lineno) from None
    digest = hashlib.sha256(text.encode()).hexdigest()
    return RunConfig(values, digest, seen)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
