"""Safety properties: an input box plus a predicate over the five action
scores (COC, WL, WR, SL, SR).

File grammar, one property per block:

    property <name>
    network <id>
    mode inbox|image
    input <dim> in [<lo>, <hi>]      # zero or more; omitted dims = full axis
    output <expr>

Predicate expressions combine the atoms ``argmax_is A``, ``argmax_in
{A, B}``, ``score(A) <= c``, ``score(A) - score(B) >= c`` with ``&``,
``|``, ``!`` and parentheses.  Concrete argmax ties resolve to the lowest
action index.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .quantize import EnumerationMode, QuantScheme

ACTIONS = ("COC", "WL", "WR", "SL", "SR")
ACTION_INDEX = {name: i for i, name in enumerate(ACTIONS)}
NUM_ACTIONS = len(ACTIONS)


class PropertyError(ValueError):
    pass


class PropertySyntaxError(PropertyError):
    def __init__(self, message, line=None, col=None):
        pos = ""
        if line is not None:
            pos = f"line {line}" + (f", col {col}" if col is not None else "") + ": "
        super().__init__(pos + message)
        self.line = line
        self.col = col


class UnknownDimensionError(PropertyError):
    pass


def _fmt(v: float) -> str:
    return repr(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(float(v))


# ---------------------------------------------------------------------------
# Predicate AST.  Each node evaluates concretely (scalar and batched) and
# over score intervals, returning (certainly_true, certainly_false); the
# interval form is conservative and used by the bisection verifier.


class Predicate:
    def eval(self, scores) -> bool:
        raise NotImplementedError

    def eval_batch(self, scores: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def interval_eval(self, lo, hi) -> tuple[bool, bool]:
        raise NotImplementedError

    def unparse(self) -> str:
        raise NotImplementedError

    def _sub(self) -> str:
        """Unparse for embedding under a tighter-binding operator."""
        return "(" + self.unparse() + ")"


@dataclass(frozen=True)
class ArgmaxIs(Predicate):
    action: int

    def eval(self, scores):
        return int(np.argmax(scores)) == self.action

    def eval_batch(self, scores):
        return np.argmax(scores, axis=1) == self.action

    def interval_eval(self, lo, hi):
        a = self.action
        others = [b for b in range(NUM_ACTIONS) if b != a]
        ct = all(lo[a] > hi[b] for b in others)
        cf = any(hi[a] < lo[b] for b in others)
        return ct, cf

    def unparse(self):
        return f"argmax_is {ACTIONS[self.action]}"

    _sub = unparse


@dataclass(frozen=True)
class ArgmaxIn(Predicate):
    actions: tuple[int, ...]

    def eval(self, scores):
        return int(np.argmax(scores)) in self.actions

    def eval_batch(self, scores):
        return np.isin(np.argmax(scores, axis=1), self.actions)

    def interval_eval(self, lo, hi):
        inside = set(self.actions)
        outside = [b for b in range(NUM_ACTIONS) if b not in inside]
        if not outside:
            return True, False
        max_hi_out = max(hi[b] for b in outside)
        max_hi_in = max(hi[a] for a in self.actions)
        ct = any(lo[a] > max_hi_out for a in self.actions)
        cf = any(lo[b] > max_hi_in for b in outside)
        return ct, cf

    def unparse(self):
        return "argmax_in {" + ", ".join(ACTIONS[a] for a in self.actions) + "}"

    _sub = unparse


@dataclass(frozen=True)
class ScoreAtom(Predicate):
    action: int
    op: str  # '<=' or '>='
    threshold: float

    def eval(self, scores):
        v = scores[self.action]
        return bool(v <= self.threshold) if self.op == "<=" else bool(v >= self.threshold)

    def eval_batch(self, scores):
        v = scores[:, self.action]
        return v <= self.threshold if self.op == "<=" else v >= self.threshold

    def interval_eval(self, lo, hi):
        if self.op == "<=":
            return bool(hi[self.action] <= self.threshold), bool(lo[self.action] > self.threshold)
        return bool(lo[self.action] >= self.threshold), bool(hi[self.action] < self.threshold)

    def unparse(self):
        return f"score({ACTIONS[self.action]}) {self.op} {_fmt(self.threshold)}"

    _sub = unparse


@dataclass(frozen=True)
class ScoreDiffAtom(Predicate):
    action_a: int
    action_b: int
    op: str
    threshold: float

    def eval(self, scores):
        d = scores[self.action_a] - scores[self.action_b]
        return bool(d <= self.threshold) if self.op == "<=" else bool(d >= self.threshold)

    def eval_batch(self, scores):
        d = scores[:, self.action_a] - scores[:, self.action_b]
        return d <= self.threshold if self.op == "<=" else d >= self.threshold

    def interval_eval(self, lo, hi):
        d_lo = lo[self.action_a] - hi[self.action_b]
        d_hi = hi[self.action_a] - lo[self.action_b]
        if self.op == "<=":
            return bool(d_hi <= self.threshold), bool(d_lo > self.threshold)
        return bool(d_lo >= self.threshold), bool(d_hi < self.threshold)

    def unparse(self):
        return (
            f"score({ACTIONS[self.action_a]}) - score({ACTIONS[self.action_b]}) "
            f"{self.op} {_fmt(self.threshold)}"
        )

    _sub = unparse


@dataclass(frozen=True)
class Not(Predicate):
    child: Predicate

    def eval(self, scores):
        return not self.child.eval(scores)

    def eval_batch(self, scores):
        return ~self.child.eval_batch(scores)

    def interval_eval(self, lo, hi):
        ct, cf = self.child.interval_eval(lo, hi)
        return cf, ct

    def unparse(self):
        return "!" + self.child._sub()

    _sub = unparse


@dataclass(frozen=True)
class And(Predicate):
    parts: tuple[Predicate, ...]

    def eval(self, scores):
        return all(p.eval(scores) for p in self.parts)

    def eval_batch(self, scores):
        out = self.parts[0].eval_batch(scores)
        for p in self.parts[1:]:
            out = out & p.eval_batch(scores)
        return out

    def interval_eval(self, lo, hi):
        results = [p.interval_eval(lo, hi) for p in self.parts]
        return all(ct for ct, _ in results), any(cf for _, cf in results)

    def unparse(self):
        return " & ".join(p._sub() if isinstance(p, Or) else p.unparse() for p in self.parts)


@dataclass(frozen=True)
class Or(Predicate):
    parts: tuple[Predicate, ...]

    def eval(self, scores):
        return any(p.eval(scores) for p in self.parts)

    def eval_batch(self, scores):
        out = self.parts[0].eval_batch(scores)
        for p in self.parts[1:]:
            out = out | p.eval_batch(scores)
        return out

    def interval_eval(self, lo, hi):
        results = [p.interval_eval(lo, hi) for p in self.parts]
        return any(ct for ct, _ in results), all(cf for _, cf in results)

    def unparse(self):
        return " | ".join(p.unparse() for p in self.parts)


def check_output(pred: Predicate, scores) -> bool:
    """Truth value of the output predicate on one score vector."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (NUM_ACTIONS,):
        raise PropertyError(f"expected {NUM_ACTIONS} scores, got shape {scores.shape}")
    return bool(pred.eval(scores))


# ---------------------------------------------------------------------------
# Expression parser (tokens with positions, recursive descent).

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
    r"|(?P<op><=|>=|[()\{\},&|!\-]))"
)


class _Tokens:
    def __init__(self, text: str, line: int | None = None):
        self.text = text
        self.line = line
        self.toks: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if m is None or m.end() == pos:
                rest = text[pos:].lstrip()
                if not rest:
                    break
                raise PropertySyntaxError(
                    f"unexpected character {rest[0]!r}", line=line, col=pos + 1
                )
            kind = m.lastgroup
            self.toks.append((kind, m.group(kind), m.start(kind) + 1))
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None, len(self.text) + 1)

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, col = self.next()
        if val != value:
            raise PropertySyntaxError(
                f"expected {value!r}, found {val!r}", line=self.line, col=col
            )

    def fail(self, message, col):
        raise PropertySyntaxError(message, line=self.line, col=col)


def _parse_action(toks: _Tokens) -> int:
    kind, val, col = toks.next()
    if kind != "name" or val not in ACTION_INDEX:
        toks.fail(f"unknown action {val!r} (expected one of {', '.join(ACTIONS)})", col)
    return ACTION_INDEX[val]


def _parse_number(toks: _Tokens) -> float:
    kind, val, col = toks.next()
    sign = 1.0
    if val == "-":
        sign = -1.0
        kind, val, col = toks.next()
    if kind != "number":
        toks.fail(f"expected a number, found {val!r}", col)
    return sign * float(val)


def _parse_atom(toks: _Tokens) -> Predicate:
    kind, val, col = toks.next()
    if val == "argmax_is":
        return ArgmaxIs(_parse_action(toks))
    if val == "argmax_in":
        toks.expect("{")
        actions = [_parse_action(toks)]
        while toks.peek()[1] == ",":
            toks.next()
            actions.append(_parse_action(toks))
        toks.expect("}")
        return ArgmaxIn(tuple(actions))
    if val == "score":
        toks.expect("(")
        a = _parse_action(toks)
        toks.expect(")")
        kind, op, col = toks.next()
        b = None
        if op == "-":
            toks.expect("score")
            toks.expect("(")
            b = _parse_action(toks)
            toks.expect(")")
            kind, op, col = toks.next()
        if op not in ("<=", ">="):
            toks.fail(f"expected <= or >=, found {op!r}", col)
        c = _parse_number(toks)
        if b is None:
            return ScoreAtom(a, op, c)
        return ScoreDiffAtom(a, b, op, c)
    toks.fail(f"expected a predicate atom, found {val!r}", col)


def _parse_unary(toks: _Tokens) -> Predicate:
    kind, val, col = toks.peek()
    if val == "!":
        toks.next()
        return Not(_parse_unary(toks))
    if val == "(":
        toks.next()
        expr = _parse_or(toks)
        toks.expect(")")
        return expr
    return _parse_atom(toks)


def _parse_and(toks: _Tokens) -> Predicate:
    parts = [_parse_unary(toks)]
    while toks.peek()[1] == "&":
        toks.next()
        parts.append(_parse_unary(toks))
    return parts[0] if len(parts) == 1 else And(tuple(parts))


def _parse_or(toks: _Tokens) -> Predicate:
    parts = [_parse_and(toks)]
    while toks.peek()[1] == "|":
        toks.next()
        parts.append(_parse_and(toks))
    return parts[0] if len(parts) == 1 else Or(tuple(parts))


def parse_predicate(text: str, line: int | None = None) -> Predicate:
    toks = _Tokens(text, line=line)
    pred = _parse_or(toks)
    kind, val, col = toks.peek()
    if kind is not None:
        toks.fail(f"trailing input {val!r}", col)
    return pred


# ---------------------------------------------------------------------------
# Property blocks.


@dataclass(frozen=True)
class Property:
    name: str
    network_id: str
    output_pred: Predicate
    input_box: tuple[tuple[str, float, float], ...] = ()
    mode: EnumerationMode = EnumerationMode.IN_BOX

    def resolved_box(self, scheme: QuantScheme) -> list[tuple[float, float]]:
        """Per-axis intervals in scheme order; omitted axes get the full range."""
        declared = {}
        for dim, lo, hi in self.input_box:
            if dim not in scheme.labels:
                raise UnknownDimensionError(
                    f"property {self.name}: unknown dimension {dim!r}"
                )
            declared[dim] = (lo, hi)
        return [declared.get(a.label, (a.lo, a.hi)) for a in scheme.axes]


_INTERVAL_RE = re.compile(
    r"^(?P<dim>\S+)\s+in\s+\[\s*(?P<lo>[^,\s]+)\s*,\s*(?P<hi>[^,\s\]]+)\s*\]$"
)


def parse_property_file(text: str) -> list[Property]:
    props: list[Property] = []
    cur: dict | None = None

    def finish():
        nonlocal cur
        if cur is None:
            return
        if cur.get("output") is None:
            raise PropertySyntaxError(
                f"property {cur['name']!r} has no output predicate", line=cur["line"]
            )
        props.append(
            Property(
                name=cur["name"],
                network_id=cur.get("network", ""),
                output_pred=cur["output"],
                input_box=tuple(cur["inputs"]),
                mode=cur.get("mode", EnumerationMode.IN_BOX),
            )
        )
        cur = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        keyword, _, rest = line.partition(" ")
        rest = rest.strip()
        if keyword == "property":
            finish()
            if not rest:
                raise PropertySyntaxError("property needs a name", line=lineno)
            cur = {"name": rest, "inputs": [], "line": lineno}
            continue
        if cur is None:
            raise PropertySyntaxError(
                f"{keyword!r} before any 'property' line", line=lineno
            )
        if keyword == "network":
            cur["network"] = rest
        elif keyword == "mode":
            try:
                cur["mode"] = EnumerationMode(rest)
            except ValueError:
                raise PropertySyntaxError(
                    f"unknown mode {rest!r} (expected inbox or image)", line=lineno
                ) from None
        elif keyword == "input":
            m = _INTERVAL_RE.match(rest)
            if m is None:
                raise PropertySyntaxError(
                    f"malformed input constraint {rest!r}", line=lineno
                )
            try:
                lo, hi = float(m.group("lo")), float(m.group("hi"))
            except ValueError:
                raise PropertySyntaxError(
                    f"bad interval bounds in {rest!r}", line=lineno
                ) from None
            if lo > hi:
                raise PropertySyntaxError(
                    f"inverted interval [{lo}, {hi}]", line=lineno
                )
            cur["inputs"].append((m.group("dim"), lo, hi))
        elif keyword == "output":
            cur["output"] = parse_predicate(rest, line=lineno)
        else:
            raise PropertySyntaxError(f"unknown keyword {keyword!r}", line=lineno)
    finish()
    if not props:
        raise PropertySyntaxError("no properties found")
    return props


def parse_property(text: str) -> Property:
    props = parse_property_file(text)
    if len(props) != 1:
        raise PropertySyntaxError(f"expected one property, found {len(props)}")
    return props[0]


def print_property(prop: Property) -> str:
    lines = [f"property {prop.name}"]
    if prop.network_id:
        lines.append(f"network {prop.network_id}")
    lines.append(f"mode {prop.mode.value}")
    for dim, lo, hi in prop.input_box:
        lines.append(f"input {dim} in [{_fmt(lo)}, {_fmt(hi)}]")
    lines.append(f"output {prop.output_pred.unparse()}")
    return "\n".join(lines) + "\n"
