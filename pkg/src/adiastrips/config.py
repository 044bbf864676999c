"""INI-style problem and sweep files.

Example::

    [chart]
    name = flat
    dim = 1

    [morse]
    name = cosine
    amplitude = 0.1

    [boundary]
    eps = 0.1

    [strip]
    r = 20
    Ns = 800
    Nt = 40
    x_minus = 0.1

Unknown sections or keys and malformed values raise :class:`ConfigError`
with the line and column of the offending entry.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .geometry import CHARTS, MORSE_FUNCTIONS, MetricChart, MorseData
from .strip_solver import END_CONDITIONS, FORMULATIONS, AdiabaticData, ConstantForm, check_closed


class ConfigError(ValueError):
    def __init__(self, message, line=None, column=None, path=None):
        where = ""
        if line is not None:
            where = f"{path or '<config>'}:{line}:{column or 1}: "
        super().__init__(where + message)
        self.line = line
        self.column = column


def _floats(text):
    return tuple(float(x) for x in text.replace(",", " ").split())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(options):
    def parse(text):
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return parse


SCHEMA = {
    "chart": {"name": _choice(tuple(CHARTS)), "dim": int, "amplitude": float},
    "morse": {
        "name": _choice(tuple(MORSE_FUNCTIONS)),
        "amplitude": _floats,
        "wavenumber": int,
        "phase": float,
        "norm": int,
    },
    "boundary": {"eps": float, "a_form": _floats},
    "strip": {
        "r": float,
        "ns": int,
        "nt": int,
        "end_condition": _choice(END_CONDITIONS),
        "formulation": _choice(FORMULATIONS),
        "x_minus": _floats,
        "perturb": float,
    },
    "solver": {"res_tol": float, "max_iter": int, "continuation": _bool},
    "sweep": {
        "eps_ladder": _floats,
        "ell": float,
        "cells_per_unit": float,
        "nt": int,
        "mode": _choice(("finite_flow", "broken_flow")),
        "x_minus": _floats,
    },
    "flow": {"x_minus": _floats, "x_plus": _floats, "length": float, "max_breaks": int, "step": float},
}


@dataclass
class Problem:
    chart: MetricChart
    morse: MorseData
    bc: AdiabaticData
    values: dict
    path: Optional[str] = None
    text: str = ""

    def get(self, section, key, default=None):
        return self.values.get(section, {}).get(key, default)


def _locate(lines, section, key=None, value=False):
    """1-based ``(line, column)`` of a section header, a key, or a key's value."""
    current = None
    for n, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip().lower()
            if key is None and current == section:
                return n, raw.index("[") + 1
            continue
        if current != section or key is None or not stripped or stripped[0] in "#;":
            continue
        sep = min((raw.find(c) for c in "=:" if c in raw), default=-1)
        if sep < 0 or raw[:sep].strip().lower() != key:
            continue
        if not value:
            return n, len(raw) - len(raw.lstrip()) + 1
        rest = raw[sep + 1:]
        return n, sep + 2 + len(rest) - len(rest.lstrip())
    return None, None


def parse_text(text: str, path: Optional[str] = None) -> dict:
    lines = text.splitlines()
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str.lower
    try:
        parser.read_string(text, source=path or "<config>")
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("entry outside any [section]", exc.lineno, 1, path) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", exc.lineno, 1, path) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno, 1, path) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line (expected 'key = value')", lineno, 1, path) from None

    values = {}
    for section in parser.sections():
        sec = section.lower()
        if sec not in SCHEMA:
            line, col = _locate(lines, sec)
            raise ConfigError(f"unknown section [{section}]", line, col, path)
        out = {}
        for key, raw in parser.items(section):
            if key not in SCHEMA[sec]:
                line, col = _locate(lines, sec, key)
                raise ConfigError(f"unknown key {key!r} in [{section}]", line, col, path)
            try:
                out[key] = SCHEMA[sec][key](raw)
            except ValueError as exc:
                line, col = _locate(lines, sec, key, value=True)
                raise ConfigError(f"bad value for {key!r}: {exc}", line, col, path) from None
        values[sec] = out
    return values


def build_problem(values: dict, path=None, text="") -> Problem:
    chart_v = values.get("chart", {})
    name = chart_v.get("name", "flat")
    try:
        if name == "flat":
            chart = CHARTS[name](chart_v.get("dim", 1))
        else:
            kwargs = {"amplitude": chart_v["amplitude"]} if "amplitude" in chart_v else {}
            chart = CHARTS[name](**kwargs)
    except ValueError as exc:
        raise ConfigError(f"chart: {exc}") from None
    if name != "flat" and "dim" in chart_v and chart_v["dim"] != chart.dim:
        raise ConfigError(f"chart {name} has dimension {chart.dim}")

    m = values.get("morse", {})
    amp = m.get("amplitude", (0.1,))
    if len(amp) not in (1, chart.dim):
        raise ConfigError("morse amplitude needs 1 or dim values")
    morse = MORSE_FUNCTIONS[m.get("name", "cosine")](
        dim=chart.dim,
        amplitude=amp if len(amp) > 1 else amp[0],
        wavenumber=m.get("wavenumber", 1),
        phase=m.get("phase", 0.0),
        norm=m.get("norm", 1),
    )
    b = values.get("boundary", {})
    eps = b.get("eps", 0.1)
    if eps < 0:
        raise ConfigError("eps must be nonnegative")
    a_form = None
    if "a_form" in b:
        coeffs = b["a_form"]
        if len(coeffs) != chart.dim:
            raise ConfigError("a_form needs dim coefficients")
        a_form = ConstantForm(tuple(coeffs))
        if not check_closed(a_form, chart.dim):
            raise ConfigError("a_form is not closed")
    bc = AdiabaticData(morse, eps, a_form)
    return Problem(chart, morse, bc, values, None if path is None else str(path), text)


def load(path) -> Problem:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return build_problem(parse_text(text, str(p)), p, text)


def loads(text: str) -> Problem:
    return build_problem(parse_text(text), None, text)
