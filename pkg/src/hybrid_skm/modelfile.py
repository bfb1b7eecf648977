"""Plain-text model files.

    # comment
    species: X1, X2
    reactions:
      R1: 0 -> X1 @ c1
      R5: X1 + X2 -> 2 X2 @ c5
    params:
      c1 = 2
      c5 = 1 / (50 * sc)
      sc = 1
    init: 0 0
    obs: poisson_bernoulli 0.1

Parameter values are arithmetic expressions (numbers, names, + - * / **,
parentheses) over other parameters and externally bound names. Bindings
passed to :meth:`ModelFile.to_network` override values given in the file.
"""

from __future__ import annotations

import ast
import math
import operator
import re
from dataclasses import dataclass, field

import numpy as np

from .model import NetworkError, ReactionNetwork

_SECTIONS = ("species", "reactions", "params", "init", "obs")
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_TERM = re.compile(r"\s*(?:(\d+)\s*)?([A-Za-z_][A-Za-z0-9_]*)\s*\Z")
_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}


class ModelParseError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.message, self.line, self.column = message, line, column
        where = f"line {line}, column {column}: " if line else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class ReactionSpec:
    name: str
    reactants: tuple[tuple[str, int], ...]
    products: tuple[tuple[str, int], ...]
    rate: str


@dataclass(frozen=True)
class ModelFile:
    species: tuple[str, ...]
    reactions: tuple[ReactionSpec, ...]
    params: tuple[tuple[str, str], ...] = ()  # (name, expression) in file order
    init: tuple[int, ...] | None = None
    obs: tuple[str, ...] = ()
    source: str = field(default="<string>", compare=False)

    # -- evaluation --------------------------------------------------------

    def parameter_values(self, bindings: dict | None = None) -> dict:
        bindings = dict(bindings or {})
        exprs = dict(self.params)
        values = {k: float(v) for k, v in bindings.items()}

        def value(name, stack):
            if name in values:
                return values[name]
            if name not in exprs:
                raise ModelParseError(f"unbound parameter {name!r}")
            if name in stack:
                raise ModelParseError(f"parameter {name!r} is defined in terms of itself")
            v = _eval(exprs[name], lambda n: value(n, stack | {name}))
            values[name] = v
            return v

        for name in exprs:
            value(name, frozenset())
        for rx in self.reactions:
            if rx.rate not in values:
                values[rx.rate] = _eval(rx.rate, lambda n: value(n, frozenset()))
        return values

    def to_network(self, bindings: dict | None = None) -> ReactionNetwork:
        values = self.parameter_values(bindings)
        idx = {s: i for i, s in enumerate(self.species)}
        r, k = len(self.reactions), len(self.species)
        u = np.zeros((r, k), dtype=np.int64)
        v = np.zeros((r, k), dtype=np.int64)
        c = np.empty(r)
        for i, rx in enumerate(self.reactions):
            for s, n in rx.reactants:
                u[i, idx[s]] += n
            for s, n in rx.products:
                v[i, idx[s]] += n
            c[i] = values[rx.rate]
        try:
            return ReactionNetwork(self.species, u, v, c, tuple(rx.name for rx in self.reactions))
        except NetworkError as exc:
            raise ModelParseError(str(exc)) from None

    def initial_state(self) -> np.ndarray:
        if self.init is None:
            return np.zeros(len(self.species))
        return np.array(self.init, dtype=np.float64)

    # -- text form -----------------------------------------------------------

    def serialize(self) -> str:
        lines = [f"species: {', '.join(self.species)}", "reactions:"]
        for rx in self.reactions:
            lines.append(f"  {rx.name}: {_side(rx.reactants)} -> {_side(rx.products)} @ {rx.rate}")
        if self.params:
            lines.append("params:")
            lines.extend(f"  {name} = {expr}" for name, expr in self.params)
        if self.init is not None:
            lines.append("init: " + " ".join(str(v) for v in self.init))
        if self.obs:
            lines.append("obs: " + " ".join(self.obs))
        return "\n".join(lines) + "\n"


def _side(terms) -> str:
    if not terms:
        return "0"
    return " + ".join(s if n == 1 else f"{n} {s}" for s, n in terms)


def _eval(expr: str, lookup) -> float:
    try:
        tree = ast.parse(expr.strip(), mode="eval")
    except SyntaxError as exc:
        raise ModelParseError(f"cannot parse expression {expr!r}: {exc.msg}") from None

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            return lookup(node.id)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            return -ev(node.operand) if isinstance(node.op, ast.USub) else ev(node.operand)
        raise ModelParseError(f"unsupported syntax in expression {expr!r}")

    try:
        out = ev(tree)
    except ZeroDivisionError:
        raise ModelParseError(f"division by zero in {expr!r}") from None
    if not math.isfinite(out):
        raise ModelParseError(f"expression {expr!r} is not finite")
    return out


def _parse_side(text: str, lineno: int, col0: int, species: dict):
    text_s = text.strip()
    if text_s in ("", "0"):
        return ()
    terms: dict[str, int] = {}
    col = col0
    for part in text.split("+"):
        m = _TERM.match(part)
        if not m:
            raise ModelParseError(f"cannot read term {part.strip()!r}", lineno,
                                  col + len(part) - len(part.lstrip()) + 1)
        n = int(m.group(1) or 1)
        name = m.group(2)
        if name not in species:
            raise ModelParseError(f"unknown species {name!r}", lineno,
                                  col + part.index(name) + 1)
        if n < 1:
            raise ModelParseError("stoichiometric coefficients must be positive", lineno,
                                  col + 1)
        terms[name] = terms.get(name, 0) + n
        col += len(part) + 1
    order = [s for s in species if s in terms]
    return tuple((s, terms[s]) for s in order)


def parse_model_file(text: str, source: str = "<string>") -> ModelFile:
    species: list[str] = []
    reactions: list[ReactionSpec] = []
    params: list[tuple[str, str]] = []
    init = None
    obs: tuple[str, ...] = ()
    section = None
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        indent = len(line) - len(line.lstrip())
        head, sep, rest = line.strip().partition(":")
        if indent == 0 and sep and head.strip() in _SECTIONS:
            section = head.strip()
            if section in seen:
                raise ModelParseError(f"duplicate section {section!r}", lineno, 1)
            seen.add(section)
            col = line.index(":") + 2
            rest = rest.strip()
            if section == "species":
                for nm in filter(None, (s.strip() for s in re.split(r"[,\s]+", rest))):
                    if not _NAME.match(nm):
                        raise ModelParseError(f"invalid species name {nm!r}", lineno,
                                              line.index(nm) + 1)
                    if nm in species:
                        raise ModelParseError(f"duplicate species {nm!r}", lineno,
                                              line.index(nm) + 1)
                    species.append(nm)
            elif section == "init":
                try:
                    init = tuple(int(v) for v in rest.replace(",", " ").split())
                except ValueError:
                    raise ModelParseError("init values must be integers", lineno, col) from None
                if any(v < 0 for v in init):
                    raise ModelParseError("init values must be nonnegative", lineno, col)
            elif section == "obs":
                obs = tuple(rest.split())
            elif rest:
                raise ModelParseError(f"entries of {section!r} go on the following lines",
                                      lineno, col)
            continue
        if indent == 0 or section not in ("reactions", "params"):
            raise ModelParseError(f"unexpected line {line.strip()!r}", lineno, indent + 1)
        body = line.strip()
        if section == "params":
            name, eq, expr = body.partition("=")
            name = name.strip()
            if not eq or not _NAME.match(name) or not expr.strip():
                raise ModelParseError("expected 'name = expression'", lineno, indent + 1)
            if name in dict(params):
                raise ModelParseError(f"duplicate parameter {name!r}", lineno, indent + 1)
            try:
                ast.parse(expr.strip(), mode="eval")
            except SyntaxError:
                raise ModelParseError(f"cannot parse expression {expr.strip()!r}", lineno,
                                      line.index("=") + 2) from None
            params.append((name, expr.strip()))
            continue
        # reaction line: [name:] lhs -> rhs @ rate
        name = f"R{len(reactions) + 1}"
        start = indent
        m = re.match(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*:", line)
        if m:
            name = m.group(1)
            start = m.end()
        if any(rx.name == name for rx in reactions):
            raise ModelParseError(f"duplicate reaction name {name!r}", lineno, indent + 1)
        eq = line.rstrip()
        if "->" not in eq[start:]:
            raise ModelParseError("expected '->' in reaction", lineno, start + 1)
        if "@" not in eq[start:]:
            raise ModelParseError("expected '@ rate' after the reaction", lineno, len(eq) + 1)
        arrow = eq.index("->", start)
        at = eq.index("@", arrow)
        spmap = {s: i for i, s in enumerate(species)}
        if not species:
            raise ModelParseError("the species section must come before reactions", lineno, 1)
        lhs = _parse_side(eq[start:arrow], lineno, start, spmap)
        rhs = _parse_side(eq[arrow + 2:at], lineno, arrow + 2, spmap)
        order = sum(n for _, n in lhs)
        if order > 2:
            raise ModelParseError(f"reaction {name} has order {order}; at most two reactant "
                                  "molecules are supported", lineno, start + 1)
        rate = eq[at + 1:].strip()
        if not rate:
            raise ModelParseError("missing rate after '@'", lineno, at + 2)
        try:
            ast.parse(rate, mode="eval")
        except SyntaxError:
            raise ModelParseError(f"cannot parse rate {rate!r}", lineno, at + 2) from None
        reactions.append(ReactionSpec(name, lhs, rhs, rate))
    if not species:
        raise ModelParseError("missing or empty species section")
    if not reactions:
        raise ModelParseError("missing or empty reactions section")
    if init is not None and len(init) != len(species):
        raise ModelParseError(f"init has {len(init)} values for {len(species)} species")
    return ModelFile(tuple(species), tuple(reactions), tuple(params), init, obs, source)


def parse_model(text: str, bindings: dict | None = None) -> ReactionNetwork:
    """Parse model text straight to a network."""
    return parse_model_file(text).to_network(bindings)


def load_model_file(path) -> ModelFile:
    with open(path) as fh:
        return parse_model_file(fh.read(), str(path))


def bundled_model_path(name: str = "autoreg"):
    from importlib.resources import files
    return files("hybrid_skm") / "data" / f"{name}.model"
