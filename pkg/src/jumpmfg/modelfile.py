"""Section-based text format for :class:`~jumpmfg.model.ModelSpec`.

See ``docs/model_format.md`` for the normative grammar. Example::

    [dimensions]
    k = 2
    T = 1

    [rates]
    bound = 1
    1 -> 2 : x2
    2 -> 1 : x1

    [control]
    lower = 0, 0
    upper = 1, 1

    [cost]
    1, 1 : 1
    2, 2 : 1

    [terminal]
    0, 0
"""

from __future__ import annotations

import math
import re

from .errors import ModelError, ModelSemanticError, ModelSyntaxError
from .expr import parse_expression, to_text
from .model import ControlSet, CostSpec, ModelSpec, RateKernel

SECTIONS = ("dimensions", "rates", "control", "cost", "terminal", "labels")
REQUIRED = ("dimensions", "control", "terminal")

_HEADER = re.compile(r"\[\s*([A-Za-z_]+)\s*\]\s*$")
_KEYVAL = re.compile(r"([A-Za-z_]+)\s*=\s*(.*)$")
_RATE = re.compile(r"(\d+)\s*->\s*(\d+)\s*:")
_COST = re.compile(r"(\d+)\s*,\s*(\d+)\s*:")


def _strip(line):
    i = line.find("#")
    return line if i < 0 else line[:i]


def _numbers(text, lineno, col, what):
    out = []
    for part in text.split(","):
        part = part.strip()
        try:
            v = float(part)
        except ValueError:
            raise ModelSyntaxError(f"bad number {part!r} in {what}", lineno, col, ["number"]) from None
        if not math.isfinite(v):
            raise ModelSemanticError(f"{what} must be finite", lineno, col)
        out.append(v)
    return out


def _col(raw, sub):
    return raw.find(sub) + 1 if sub else 1


def parse_model_file(text):
    """Parse a model document into a :class:`ModelSpec`.

    Errors are :class:`~jumpmfg.errors.ModelSyntaxError` (or its semantic
    subclass) carrying the 1-based line and column.
    """
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip(raw).rstrip()
        if not line.strip():
            continue
        m = _HEADER.fullmatch(line.strip())
        if m:
            name = m.group(1).lower()
            col = _col(raw, "[")
            if name not in SECTIONS:
                raise ModelSyntaxError(f"unknown section [{name}]", lineno, col, [f"[{s}]" for s in SECTIONS])
            if name in sections:
                raise ModelSemanticError(f"duplicate section [{name}]", lineno, col)
            if name != "dimensions" and "dimensions" not in sections:
                raise ModelSemanticError("[dimensions] must come first", lineno, col)
            sections[name] = []
            current = name
            continue
        if current is None:
            raise ModelSyntaxError("content before the first section", lineno, 1, ["[dimensions]"])
        sections[current].append((lineno, raw, line))

    for name in REQUIRED:
        if name not in sections:
            last = len(text.splitlines()) + 1
            raise ModelSemanticError(f"missing section [{name}]", last, 1)

    k, T = _dimensions(sections["dimensions"])
    rates, bound = _rates(sections.get("rates", []), k)
    lower, upper = _control(sections["control"], k)
    cost = _cost(sections.get("cost", []), k)
    terminal = _vector(sections["terminal"], k, "terminal")
    labels = None
    if "labels" in sections:
        labels = _labels(sections["labels"], k)
    try:
        return ModelSpec(k=k, horizon=T, rate_kernel=RateKernel(rates, bound),
                         control_set=ControlSet(tuple(lower), tuple(upper)),
                         running_cost=CostSpec(cost), terminal_cost=tuple(terminal),
                         labels=labels)
    except ModelError as exc:
        if isinstance(exc, ModelSyntaxError):
            raise
        raise ModelSemanticError(str(exc), 1, 1) from None


def _dimensions(lines):
    vals = {}
    for lineno, raw, line in lines:
        m = _KEYVAL.fullmatch(line.strip())
        if not m or m.group(1) not in ("k", "T"):
            raise ModelSyntaxError("expected 'k = <int>' or 'T = <number>'", lineno, 1, ["k =", "T ="])
        key = m.group(1)
        if key in vals:
            raise ModelSemanticError(f"duplicate key {key}", lineno, _col(raw, key))
        (v,) = _numbers(m.group(2), lineno, _col(raw, m.group(2)), key)
        if key == "k" and (v != int(v) or v < 2):
            raise ModelSemanticError("k must be an integer >= 2", lineno, _col(raw, m.group(2)))
        if key == "T" and v <= 0:
            raise ModelSemanticError("T must be positive", lineno, _col(raw, m.group(2)))
        vals[key] = int(v) if key == "k" else v
    for key in ("k", "T"):
        if key not in vals:
            line = lines[-1][0] if lines else 1
            raise ModelSemanticError(f"[dimensions] is missing {key}", line, 1)
    return vals["k"], vals["T"]


def _index(s, k, lineno, col):
    i = int(s)
    if not 1 <= i <= k:
        raise ModelSemanticError(f"state index {i} outside 1..{k}", lineno, col)
    return i - 1


def _rates(lines, k):
    rates, bound = {}, None
    for lineno, raw, line in lines:
        stripped = line.strip()
        kv = _KEYVAL.fullmatch(stripped)
        if kv and kv.group(1) == "bound":
            if bound is not None:
                raise ModelSemanticError("duplicate bound", lineno, _col(raw, "bound"))
            (bound,) = _numbers(kv.group(2), lineno, _col(raw, kv.group(2)), "bound")
            continue
        m = _RATE.match(stripped)
        if not m:
            raise ModelSyntaxError("expected '<i> -> <j> : <expression>'", lineno, _col(raw, stripped[:1]),
                                   ["<i> -> <j> :", "bound ="])
        off = raw.find(stripped)
        i = _index(m.group(1), k, lineno, off + m.start(1) + 1)
        j = _index(m.group(2), k, lineno, off + m.start(2) + 1)
        if i == j:
            raise ModelSemanticError("diagonal rates are derived, not declared", lineno, off + 1)
        if (i, j) in rates:
            raise ModelSemanticError(f"duplicate rate {i + 1} -> {j + 1}", lineno, off + 1)
        body = stripped[m.end():]
        rates[(i, j)] = parse_expression(body, k, lineno, off + m.end() + 1)
    return rates, bound


def _cost(lines, k):
    cost = {}
    for lineno, raw, line in lines:
        stripped = line.strip()
        m = _COST.match(stripped)
        if not m:
            raise ModelSyntaxError("expected '<j>, <l> : <expression>'", lineno, _col(raw, stripped[:1]),
                                   ["<j>, <l> :"])
        off = raw.find(stripped)
        j = _index(m.group(1), k, lineno, off + m.start(1) + 1)
        l = _index(m.group(2), k, lineno, off + m.start(2) + 1)
        if (j, l) in cost:
            raise ModelSemanticError(f"duplicate cost {j + 1}, {l + 1}", lineno, off + 1)
        cost[(j, l)] = parse_expression(stripped[m.end():], k, lineno, off + m.end() + 1)
    return cost


def _control(lines, k):
    vals = {}
    for lineno, raw, line in lines:
        m = _KEYVAL.fullmatch(line.strip())
        if not m or m.group(1) not in ("lower", "upper"):
            raise ModelSyntaxError("expected 'lower = ...' or 'upper = ...'", lineno, 1, ["lower =", "upper ="])
        key = m.group(1)
        if key in vals:
            raise ModelSemanticError(f"duplicate key {key}", lineno, _col(raw, key))
        v = _numbers(m.group(2), lineno, _col(raw, m.group(2)), key)
        if len(v) != k:
            raise ModelSemanticError(f"{key} needs {k} numbers, got {len(v)}", lineno, _col(raw, m.group(2)))
        vals[key] = v
    for key in ("lower", "upper"):
        if key not in vals:
            raise ModelSemanticError(f"[control] is missing {key}", lines[-1][0] if lines else 1, 1)
    return vals["lower"], vals["upper"]


def _vector(lines, k, what):
    if len(lines) != 1:
        line = lines[1][0] if len(lines) > 1 else 1
        raise ModelSemanticError(f"[{what}] takes exactly one line of {k} numbers", line, 1)
    lineno, raw, line = lines[0]
    v = _numbers(line, lineno, _col(raw, line.strip()[:1]), what)
    if len(v) != k:
        raise ModelSemanticError(f"[{what}] needs {k} numbers, got {len(v)}", lineno, 1)
    return v


def _labels(lines, k):
    if len(lines) != 1:
        raise ModelSemanticError("[labels] takes exactly one line", lines[0][0] if lines else 1, 1)
    lineno, raw, line = lines[0]
    names = tuple(s.strip() for s in line.split(","))
    if len(names) != k or not all(names):
        raise ModelSemanticError(f"[labels] needs {k} names", lineno, 1)
    return names


def format_model(spec):
    """Canonical text for ``spec``; ``parse_model_file`` reads it back unchanged."""
    out = ["[dimensions]", f"k = {spec.k}", f"T = {spec.horizon!r}", "", "[rates]"]
    if spec.rate_kernel.bound is not None:
        out.append(f"bound = {float(spec.rate_kernel.bound)!r}")
    for (i, j), e in sorted(spec.rate_kernel.entries.items()):
        out.append(f"{i + 1} -> {j + 1} : {to_text(e)}")
    out += ["", "[control]",
            "lower = " + ", ".join(repr(float(v)) for v in spec.control_set.lower),
            "upper = " + ", ".join(repr(float(v)) for v in spec.control_set.upper),
            "", "[cost]"]
    for (j, l), e in sorted(spec.running_cost.coeffs.items()):
        out.append(f"{j + 1}, {l + 1} : {to_text(e)}")
    out += ["", "[terminal]", ", ".join(repr(float(v)) for v in spec.terminal_cost)]
    if spec.labels:
        out += ["", "[labels]", ", ".join(spec.labels)]
    return "\n".join(out) + "\n"


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return parse_model_file(fh.read())
