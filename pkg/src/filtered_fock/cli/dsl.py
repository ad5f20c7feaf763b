"""Line-oriented scenario language: lexer, parser, semantic checks and pretty-printer.

Example::

    grid T=1 cells=8 colors=3 nmax=3 h0=2
    filter A = {1,2}
    matrix M = [[1, 0], [0, -1]]
    vector w = [1, 0.5j]
    u f = [(0, 1, 0.5, 0), (3, 2, 0.1, -0.2)]
    state x = w ⊗ f
    biproc X = [M|A] ⊗ [I|FULL] on (0, 0.5, 1)
    sde S {
      initial FULL = I
      coef dT [-0.5*M|FULL] ⊗ [I|FULL]
    }
    task verify-ito X dA(1) X dA*(1) x x

Every diagnostic carries a stable code and a 1-based line/column span.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ..fock import FULL, Filter, FockError, GridSpec
from ..processes import parse_kind, parse_mfree

# Diagnostic codes
SYNTAX = "E101"
UNDEFINED = "E102"
OFF_GRID = "E103"
FILTER_RANGE = "E104"
DUPLICATE = "E105"
SHAPE = "E106"
GRID = "E107"
RANGE = "E108"
TYPE = "E109"
KIND = "E110"
TASK = "E111"
OPTION = "E112"


@dataclass(frozen=True)
class Span:
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


class ScenarioError(FockError):
    def __init__(self, code: str, message: str, span: Span | None = None):
        self.code, self.message, self.span = code, message, span
        where = f"{span}: " if span else ""
        super().__init__(f"{where}{code} {message}")


_NOSPAN = field(default=None, compare=False, repr=False)


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: complex
    span: Span | None = _NOSPAN


@dataclass(frozen=True)
class Name:
    id: str
    span: Span | None = _NOSPAN


@dataclass(frozen=True)
class Neg:
    arg: object
    span: Span | None = _NOSPAN


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object
    span: Span | None = _NOSPAN


@dataclass(frozen=True)
class FilterLit:
    colors: tuple[int, ...] | None  # None is FULL
    span: Span | None = _NOSPAN


@dataclass(frozen=True)
class Side:
    expr: object
    filt: FilterLit | Name
    span: Span | None = _NOSPAN


@dataclass(frozen=True)
class GridDecl:
    params: tuple[tuple[str, float], ...]
    span: Span | None = _NOSPAN


@dataclass(frozen=True)
class FilterDecl:
    name: str
    filt: FilterLit
    span: Span | None = _NOSPAN


@dataclass(frozen=True)
class MatrixDecl:
    name: str
    rows: tuple[tuple[complex, ...], ...]
    span: Span | None = _NOSPAN


@dataclass(frozen=True)
class VectorDecl:
    name: str
    entries: tuple[complex, ...]
    span: Span | None = _NOSPAN


@dataclass(frozen=True)
class UDecl:
    name: str
    entries: tuple[tuple[int, int, float, float], ...]
    span: Span | None = _NOSPAN


@dataclass(frozen=True)
class StateDecl:
    name: str
    vector: str
    u: str
    span: Span | None = _NOSPAN


@dataclass(frozen=True)
class BiprocDecl:
    name: str
    left: Side
    right: Side
    times: tuple[float, ...]
    span: Span | None = _NOSPAN


@dataclass(frozen=True)
class CoefLine:
    """F ⊗ G with F and G each a sum of filtered terms [expr|filter]."""

    kind: str        # process token (sde) or sort name (mfree)
    left: tuple[Side, ...]
    right: tuple[Side, ...]
    span: Span | None = _NOSPAN


@dataclass(frozen=True)
class InitialLine:
    filt: FilterLit | Name
    expr: object
    span: Span | None = _NOSPAN


@dataclass(frozen=True)
class SystemDecl:
    name: str
    mfree: bool
    items: tuple[CoefLine | InitialLine, ...]
    span: Span | None = _NOSPAN


@dataclass(frozen=True)
class Task:
    kind: str
    args: tuple[str, ...]
    options: tuple[tuple[str, str], ...]
    span: Span | None = _NOSPAN

    def option(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.options:
            if k == key:
                return v
        return default


@dataclass(frozen=True)
class Scenario:
    grid: GridDecl
    decls: tuple
    tasks: tuple[Task, ...]

    def grid_spec(self, n_max: int | None = None, n_cells: int | None = None) -> GridSpec:
        p = dict(self.grid.params)
        return GridSpec(horizon=float(p.get("T", 1.0)),
                        n_cells=int(n_cells if n_cells is not None else p.get("cells", 8)),
                        n_colors=int(p.get("colors", 3)),
                        n_max=int(n_max if n_max is not None else p.get("nmax", 3)),
                        h0_dim=int(p.get("h0", 2)))

    def declared(self, cls) -> dict[str, object]:
        return {d.name: d for d in self.decls if isinstance(d, cls)}


# --------------------------------------------------------------------------
# Lexer
# --------------------------------------------------------------------------


_TOKEN = re.compile(r"""
    (?P<ws>[ \t]+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?j?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>\.\.|[=\{\}\[\]\(\),|*+\-:⊗/])
""", re.VERBOSE)


@dataclass(frozen=True)
class Tok:
    kind: str
    text: str
    span: Span
    end: int  # column just after the token (0-based)


def tokenize_line(text: str, line: int) -> list[Tok]:
    out = []
    pos = 0
    body = text.split("#", 1)[0].rstrip()
    while pos < len(body):
        m = _TOKEN.match(body, pos)
        if m is None:
            raise ScenarioError(SYNTAX, f"unexpected character {body[pos]!r}", Span(line, pos + 1))
        if m.lastgroup != "ws":
            out.append(Tok(m.lastgroup, m.group(), Span(line, pos + 1), m.end()))
        pos = m.end()
    return out


class _Cursor:
    def __init__(self, toks: list[Tok], line: int, line_len: int):
        self.toks, self.i, self.line, self.line_len = toks, 0, line, line_len

    def peek(self, k: int = 0) -> Tok | None:
        j = self.i + k
        return self.toks[j] if j < len(self.toks) else None

    def here(self) -> Span:
        t = self.peek()
        return t.span if t else Span(self.line, self.line_len + 1)

    def take(self) -> Tok:
        t = self.peek()
        if t is None:
            raise ScenarioError(SYNTAX, "unexpected end of line", self.here())
        self.i += 1
        return t

    def expect(self, text: str) -> Tok:
        t = self.peek()
        if t is None or t.text != text:
            got = "end of line" if t is None else repr(t.text)
            raise ScenarioError(SYNTAX, f"expected {text!r}, got {got}", self.here())
        return self.take()

    def accept(self, text: str) -> bool:
        t = self.peek()
        if t is not None and t.text == text:
            self.i += 1
            return True
        return False

    def name(self, what: str = "a name") -> Tok:
        t = self.peek()
        if t is None or t.kind != "name":
            raise ScenarioError(SYNTAX, f"expected {what}", self.here())
        return self.take()

    def done(self) -> None:
        if self.peek() is not None:
            raise ScenarioError(SYNTAX, f"unexpected {self.peek().text!r}", self.here())

    @property
    def at_end(self) -> bool:
        return self.peek() is None


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def _number(tok: Tok) -> complex:
    return complex(tok.text) if tok.text.endswith("j") else complex(float(tok.text))


def _expr(c: _Cursor):
    node = _term(c)
    while c.peek() is not None and c.peek().text in ("+", "-"):
        op = c.take()
        node = BinOp(op.text, node, _term(c), op.span)
    return node


def _term(c: _Cursor):
    node = _unary(c)
    while c.peek() is not None and c.peek().text == "*":
        op = c.take()
        node = BinOp("*", node, _unary(c), op.span)
    return node


def _unary(c: _Cursor):
    if c.peek() is not None and c.peek().text == "-":
        t = c.take()
        return Neg(_unary(c), t.span)
    return _atom(c)


def _atom(c: _Cursor):
    t = c.peek()
    if t is None:
        raise ScenarioError(SYNTAX, "expected an expression", c.here())
    if t.kind == "num":
        c.take()
        return Num(_number(t), t.span)
    if t.kind == "name":
        c.take()
        return Name(t.text, t.span)
    if t.text == "(":
        c.take()
        e = _expr(c)
        c.expect(")")
        return e
    raise ScenarioError(SYNTAX, f"unexpected {t.text!r} in expression", t.span)


def const_value(node) -> complex:
    """Evaluate an expression made of numbers only."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Neg):
        return -const_value(node.arg)
    if isinstance(node, BinOp):
        a, b = const_value(node.left), const_value(node.right)
        return {"+": a + b, "-": a - b, "*": a * b}[node.op]
    raise ScenarioError(SYNTAX, "expected a numeric constant", getattr(node, "span", None))


def _const(c: _Cursor) -> complex:
    return const_value(_expr(c))


def _real(c: _Cursor) -> float:
    span = c.here()
    v = _const(c)
    if v.imag != 0:
        raise ScenarioError(SYNTAX, "expected a real number", span)
    return float(v.real)


def _int(c: _Cursor) -> int:
    span = c.here()
    v = _real(c)
    if v != int(v):
        raise ScenarioError(SYNTAX, "expected an integer", span)
    return int(v)


def _filter(c: _Cursor):
    t = c.peek()
    if t is None:
        raise ScenarioError(SYNTAX, "expected a filter", c.here())
    if t.text == "FULL":
        c.take()
        return FilterLit(None, t.span)
    if t.kind == "name":
        c.take()
        return Name(t.text, t.span)
    if t.text == "{":
        c.take()
        colors = []
        if not c.accept("}"):
            while True:
                colors.append(_int(c))
                if c.accept("}"):
                    break
                c.expect(",")
        return FilterLit(tuple(sorted(set(colors))), t.span)
    raise ScenarioError(SYNTAX, "expected a filter: {..}, FULL or a filter name", t.span)


def _side(c: _Cursor) -> Side:
    t = c.expect("[")
    e = _expr(c)
    c.expect("|")
    f = _filter(c)
    c.expect("]")
    return Side(e, f, t.span)


def _sides(c: _Cursor) -> tuple[Side, ...]:
    out = [_side(c)]
    while c.accept("+"):
        out.append(_side(c))
    return tuple(out)


def _tensor(c: _Cursor) -> None:
    t = c.peek()
    if t is not None and t.text == "⊗":
        c.take()
        return
    if t is not None and t.kind == "name" and t.text == "tensor":  # ASCII spelling
        c.take()
        return
    raise ScenarioError(SYNTAX, "expected '⊗'", c.here())


def _kind_token(c: _Cursor) -> tuple[str, Span]:
    """Process tokens: dA(k), dA*(k), dN(k), dT, l(m), l*(m), lN(m), lT(m)."""
    t = c.name("a process kind")
    text = t.text
    if c.peek() is not None and c.peek().text == "*" and c.peek().span.col - 1 == t.end:
        c.take()
        text += "*"
    if c.peek() is not None and c.peek().text == "(":
        c.take()
        if c.peek() is not None and c.peek().text == "inf":
            c.take()
            text += "(inf)"
        else:
            text += f"({_int(c)})"
        c.expect(")")
    return text, t.span


def _list(c: _Cursor, item) -> list:
    c.expect("[")
    out = []
    if c.accept("]"):
        return out
    while True:
        out.append(item(c))
        if c.accept("]"):
            return out
        c.expect(",")


def _u_entry(c: _Cursor):
    c.expect("(")
    cell = _int(c)
    c.expect(",")
    color = _int(c)
    c.expect(",")
    re_ = _real(c)
    c.expect(",")
    im = _real(c)
    c.expect(")")
    return (cell, color, re_, im)


_GRID_KEYS = ("T", "cells", "colors", "nmax", "h0")
TASK_KINDS = ("oracle", "verify-ito", "mfree-ito", "tables", "ito-table", "solve",
              "check-unitarity", "sweep-m", "mesh-order", "independence")


def _task_kind(c: _Cursor) -> str:
    t = c.name("a task kind")
    text, end = t.text, t.end
    while (c.peek() is not None and c.peek().text == "-" and c.peek().span.col - 1 == end
           and c.peek(1) is not None and c.peek(1).kind == "name" and c.peek(1).span.col - 1 == end + 1):
        c.take()
        nxt = c.take()
        text += "-" + nxt.text
        end = nxt.end
    if text not in TASK_KINDS:
        raise ScenarioError(TASK, f"unknown task {text!r}; known: {', '.join(TASK_KINDS)}", t.span)
    return text


def _task(c: _Cursor, span: Span) -> Task:
    kind = _task_kind(c)
    args, opts = [], []
    while not c.at_end:
        t = c.peek()
        if t.kind == "name" and c.peek(1) is not None and c.peek(1).text == "=":
            c.take()
            c.take()
            start = c.peek()
            if start is None:
                raise ScenarioError(SYNTAX, f"missing value for {t.text}", c.here())
            # option values run to the next whitespace-separated key or end of line
            parts, end = [], None
            while c.peek() is not None:
                p = c.peek()
                if end is not None and p.span.col - 1 != end:
                    break
                parts.append(p.text)
                end = p.end
                c.take()
            opts.append((t.text, "".join(parts)))
        elif t.kind == "name":
            text, _ = _kind_token(c)
            args.append(text)
        else:
            raise ScenarioError(SYNTAX, f"unexpected {t.text!r} in task", t.span)
    return Task(kind, tuple(args), tuple(opts), span)


def _lines(text: str) -> Iterator[tuple[int, str]]:
    for i, line in enumerate(text.splitlines(), start=1):
        yield i, line


def parse_syntax(text: str) -> Scenario:
    grid = None
    decls: list = []
    tasks: list[Task] = []
    block: tuple[str, bool, list, Span] | None = None
    for ln, raw in _lines(text):
        toks = tokenize_line(raw, ln)
        if not toks:
            continue
        c = _Cursor(toks, ln, len(raw))
        head = c.take()
        if block is not None:
            name, mfree, items, bspan = block
            if head.text == "}":
                c.done()
                decls.append(SystemDecl(name, mfree, tuple(items), bspan))
                block = None
            elif head.text == "initial":
                if mfree:
                    raise ScenarioError(SYNTAX, "m-free systems start from the identity", head.span)
                f = _filter(c)
                c.expect("=")
                items.append(InitialLine(f, _expr(c), head.span))
                c.done()
            elif head.text == "coef":
                if mfree:
                    s = c.name("a sort: ann, cre, num or time")
                    kind = s.text
                    if kind not in ("ann", "cre", "num", "time"):
                        raise ScenarioError(KIND, f"unknown sort {kind!r}", s.span)
                    if any(isinstance(it, CoefLine) and it.kind == kind for it in items):
                        raise ScenarioError(DUPLICATE, f"sort {kind!r} given twice", s.span)
                else:
                    kind, kspan = _kind_token(c)
                    try:
                        parse_kind(kind)
                    except FockError as e:
                        raise ScenarioError(KIND, str(e), kspan) from None
                left = _sides(c)
                _tensor(c)
                right = _sides(c)
                c.done()
                items.append(CoefLine(kind, left, right, head.span))
            else:
                raise ScenarioError(SYNTAX, f"unexpected {head.text!r} inside a system block", head.span)
            continue
        kw = head.text
        if kw == "grid":
            if grid is not None:
                raise ScenarioError(GRID, "grid declared twice", head.span)
            if decls or tasks:
                raise ScenarioError(GRID, "grid must come first", head.span)
            params = []
            while not c.at_end:
                k = c.name("a grid parameter")
                if k.text not in _GRID_KEYS:
                    raise ScenarioError(GRID, f"unknown grid parameter {k.text!r}", k.span)
                c.expect("=")
                params.append((k.text, _real(c)))
            grid = GridDecl(tuple(params), head.span)
            continue
        if grid is None:
            raise ScenarioError(GRID, "the first declaration must be a grid", head.span)
        if kw == "task":
            tasks.append(_task(c, head.span))
            continue
        if kw in ("sde", "mfree"):
            n = c.name()
            c.expect("{")
            c.done()
            block = (n.text, kw == "mfree", [], head.span)
            continue
        if kw not in ("filter", "matrix", "vector", "u", "state", "biproc"):
            raise ScenarioError(SYNTAX, f"unknown declaration {kw!r}", head.span)
        n = c.name()
        c.expect("=")
        if kw == "filter":
            f = _filter(c)
            if not isinstance(f, FilterLit):
                raise ScenarioError(SYNTAX, "filter declarations need a literal", f.span)
            decls.append(FilterDecl(n.text, f, head.span))
        elif kw == "matrix":
            rows = _list(c, lambda cc: tuple(_list(cc, _const)))
            decls.append(MatrixDecl(n.text, tuple(rows), head.span))
        elif kw == "vector":
            decls.append(VectorDecl(n.text, tuple(_list(c, _const)), head.span))
        elif kw == "u":
            decls.append(UDecl(n.text, tuple(_list(c, _u_entry)), head.span))
        elif kw == "state":
            v = c.name("a vector name")
            _tensor(c)
            u = c.name("a one-particle vector name")
            decls.append(StateDecl(n.text, v.text, u.text, head.span))
        else:
            left = _side(c)
            _tensor(c)
            right = _side(c)
            on = c.name("'on'")
            if on.text != "on":
                raise ScenarioError(SYNTAX, "expected 'on'", on.span)
            c.expect("(")
            times = [_real(c)]
            while c.accept(","):
                times.append(_real(c))
            c.expect(")")
            decls.append(BiprocDecl(n.text, left, right, tuple(times), head.span))
        c.done()
    if block is not None:
        raise ScenarioError(SYNTAX, f"unclosed block {block[0]!r}", block[3])
    if grid is None:
        raise ScenarioError(GRID, "no grid declared", Span(1, 1))
    return Scenario(grid, tuple(decls), tuple(tasks))


# --------------------------------------------------------------------------
# Semantic checks
# --------------------------------------------------------------------------


def _check_grid(s: Scenario) -> GridSpec:
    for k, v in s.grid.params:
        if k != "T" and (v != int(v) or v < 1):
            raise ScenarioError(GRID, f"{k} must be a positive integer", s.grid.span)
    try:
        return s.grid_spec()
    except FockError as e:
        raise ScenarioError(GRID, str(e), s.grid.span) from None


def _expr_names(node) -> Iterator[Name]:
    if isinstance(node, Name):
        yield node
    elif isinstance(node, Neg):
        yield from _expr_names(node.arg)
    elif isinstance(node, BinOp):
        yield from _expr_names(node.left)
        yield from _expr_names(node.right)


def _args_spec(kind: str) -> tuple[str, ...]:
    return {
        "oracle": ("biproc", "kind", "state", "state"),
        "verify-ito": ("biproc", "kind", "biproc", "kind", "state", "state"),
        "mfree-ito": ("biproc", "mkind", "biproc", "mkind", "state", "state"),
        "tables": (),
        "ito-table": (),
        "solve": ("sde",),
        "check-unitarity": ("sde",),
        "sweep-m": ("mfree",),
        "mesh-order": ("sde",),
        "independence": (),
    }[kind]


_OPTIONS = {
    "oracle": {"t"}, "verify-ito": set(), "mfree-ito": {"trace"}, "tables": {"m"},
    "ito-table": {"calculus"}, "solve": {"t", "tol", "iters", "probes"},
    "check-unitarity": set(), "sweep-m": {"m", "expect", "probes"},
    "mesh-order": {"meshes", "probes", "lo", "hi"}, "independence": {"cases", "t"},
}


def check_scenario(s: Scenario) -> GridSpec:
    g = _check_grid(s)
    kinds: dict[str, str] = {}
    spans = {FilterDecl: "filter", MatrixDecl: "matrix", VectorDecl: "vector", UDecl: "u",
             StateDecl: "state", BiprocDecl: "biproc"}

    def need(name: str, want: str | tuple[str, ...], span):
        want = (want,) if isinstance(want, str) else want
        have = kinds.get(name)
        if have is None:
            raise ScenarioError(UNDEFINED, f"undefined name {name!r}", span)
        if have not in want:
            raise ScenarioError(TYPE, f"{name!r} is a {have}, expected {' or '.join(want)}", span)

    def check_filter(f, span=None):
        if isinstance(f, Name):
            need(f.id, "filter", f.span)
        elif f.colors is not None:
            for k in f.colors:
                if not 1 <= k <= g.n_colors:
                    raise ScenarioError(FILTER_RANGE, f"color {k} outside 1..{g.n_colors}", f.span)

    def check_expr(e):
        for n in _expr_names(e):
            if n.id != "I":
                need(n.id, "matrix", n.span)

    def check_side(sd: Side):
        check_expr(sd.expr)
        check_filter(sd.filt)

    for d in s.decls:
        kind = "sde" if isinstance(d, SystemDecl) and not d.mfree else \
            "mfree" if isinstance(d, SystemDecl) else spans[type(d)]
        if d.name in kinds or d.name in ("I", "FULL"):
            raise ScenarioError(DUPLICATE, f"name {d.name!r} already declared", d.span)
        if isinstance(d, FilterDecl):
            check_filter(d.filt)
        elif isinstance(d, MatrixDecl):
            if len(d.rows) != g.h0_dim or any(len(r) != g.h0_dim for r in d.rows):
                raise ScenarioError(SHAPE, f"matrix {d.name} must be {g.h0_dim}x{g.h0_dim}", d.span)
        elif isinstance(d, VectorDecl):
            if len(d.entries) != g.h0_dim:
                raise ScenarioError(SHAPE, f"vector {d.name} must have {g.h0_dim} entries", d.span)
        elif isinstance(d, UDecl):
            for cell, color, _, _ in d.entries:
                if not 0 <= cell < g.n_cells:
                    raise ScenarioError(RANGE, f"cell {cell} outside 0..{g.n_cells - 1}", d.span)
                if not 1 <= color <= g.n_colors:
                    raise ScenarioError(FILTER_RANGE, f"color {color} outside 1..{g.n_colors}", d.span)
        elif isinstance(d, StateDecl):
            need(d.vector, "vector", d.span)
            need(d.u, "u", d.span)
        elif isinstance(d, BiprocDecl):
            check_side(d.left)
            check_side(d.right)
            for t in d.times:
                try:
                    g.cell_of(t)
                except FockError:
                    raise ScenarioError(OFF_GRID, f"time {t} is not a grid point (Δ = {g.dt})", d.span) from None
            if d.times[0] != 0 or any(b <= a for a, b in zip(d.times, d.times[1:])):
                raise ScenarioError(OFF_GRID, "partition times must start at 0 and increase", d.span)
        else:
            for it in d.items:
                if isinstance(it, InitialLine):
                    check_filter(it.filt)
                    check_expr(it.expr)
                else:
                    for sd in it.left + it.right:
                        check_side(sd)
                    if not d.mfree:
                        try:
                            k = parse_kind(it.kind)
                        except FockError as e:
                            raise ScenarioError(KIND, str(e), it.span) from None
                        if k.k > g.n_colors:
                            raise ScenarioError(FILTER_RANGE, f"color {k.k} outside 1..{g.n_colors}", it.span)
        kinds[d.name] = kind

    for t in s.tasks:
        spec = _args_spec(t.kind)
        if len(t.args) != len(spec):
            raise ScenarioError(TASK, f"task {t.kind} takes {len(spec)} arguments, got {len(t.args)}", t.span)
        for a, want in zip(t.args, spec):
            if want == "kind":
                try:
                    k = parse_kind(a)
                except FockError as e:
                    raise ScenarioError(KIND, str(e), t.span) from None
                if k.k > g.n_colors:
                    raise ScenarioError(FILTER_RANGE, f"color {k.k} outside 1..{g.n_colors}", t.span)
            elif want == "mkind":
                try:
                    k = parse_mfree(a)
                except FockError as e:
                    raise ScenarioError(KIND, str(e), t.span) from None
                if k.m is not None and k.m > g.n_colors:
                    raise ScenarioError(FILTER_RANGE, f"level {k.m} outside 1..{g.n_colors}", t.span)
            else:
                need(a, want, t.span)
        for k, v in t.options:
            if k not in _OPTIONS[t.kind]:
                raise ScenarioError(OPTION, f"task {t.kind} has no option {k!r}", t.span)
        tval = t.option("t")
        if tval is not None:
            try:
                g.cell_of(float(tval))
            except (ValueError, FockError):
                raise ScenarioError(OFF_GRID, f"time {tval} is not a grid point", t.span) from None
    return g


def parse_scenario(text: str) -> Scenario:
    s = parse_syntax(text)
    check_scenario(s)
    return s


# --------------------------------------------------------------------------
# Pretty-printer
# --------------------------------------------------------------------------


def _fmt_real(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x)) if x >= 0 or x != 0 else "0"
    return repr(float(x))


def _fmt_const(v: complex) -> str:
    v = complex(v)
    if v.imag == 0:
        return _fmt_real(v.real) if v.real >= 0 else "-" + _fmt_real(-v.real)
    im = _fmt_real(abs(v.imag)) + "j"
    if v.real == 0:
        return im if v.imag > 0 else "-" + im
    sign = "+" if v.imag > 0 else "-"
    re_ = _fmt_real(v.real) if v.real >= 0 else "-" + _fmt_real(-v.real)
    return f"({re_} {sign} {im})"


def format_expr(node) -> str:
    if isinstance(node, Num):
        return _fmt_const(node.value)
    if isinstance(node, Name):
        return node.id
    if isinstance(node, Neg):
        inner = format_expr(node.arg)
        return "-" + (f"({inner})" if isinstance(node.arg, BinOp) else inner)

    def wrap(n):
        s = format_expr(n)
        return f"({s})" if isinstance(n, BinOp) else s
    return f"{wrap(node.left)} {node.op} {wrap(node.right)}"


def format_filter(f) -> str:
    if isinstance(f, Name):
        return f.id
    if f.colors is None:
        return "FULL"
    return "{" + ",".join(str(k) for k in f.colors) + "}"


def _fmt_side(sd: Side) -> str:
    return f"[{format_expr(sd.expr)}|{format_filter(sd.filt)}]"


def pretty(s: Scenario) -> str:
    out = ["grid " + " ".join(f"{k}={_fmt_real(v)}" for k, v in s.grid.params)]
    for d in s.decls:
        if isinstance(d, FilterDecl):
            out.append(f"filter {d.name} = {format_filter(d.filt)}")
        elif isinstance(d, MatrixDecl):
            rows = ", ".join("[" + ", ".join(_fmt_const(v) for v in r) + "]" for r in d.rows)
            out.append(f"matrix {d.name} = [{rows}]")
        elif isinstance(d, VectorDecl):
            out.append(f"vector {d.name} = [" + ", ".join(_fmt_const(v) for v in d.entries) + "]")
        elif isinstance(d, UDecl):
            ents = ", ".join(f"({a}, {b}, {_fmt_const(c)}, {_fmt_const(e)})" for a, b, c, e in d.entries)
            out.append(f"u {d.name} = [{ents}]")
        elif isinstance(d, StateDecl):
            out.append(f"state {d.name} = {d.vector} ⊗ {d.u}")
        elif isinstance(d, BiprocDecl):
            times = ", ".join(_fmt_real(t) for t in d.times)
            out.append(f"biproc {d.name} = {_fmt_side(d.left)} ⊗ {_fmt_side(d.right)} on ({times})")
        else:
            out.append(f"{'mfree' if d.mfree else 'sde'} {d.name} {{")
            for it in d.items:
                if isinstance(it, InitialLine):
                    out.append(f"  initial {format_filter(it.filt)} = {format_expr(it.expr)}")
                else:
                    left = " + ".join(_fmt_side(sd) for sd in it.left)
                    right = " + ".join(_fmt_side(sd) for sd in it.right)
                    out.append(f"  coef {it.kind} {left} ⊗ {right}")
            out.append("}")
    for t in s.tasks:
        parts = [f"task {t.kind}", *t.args, *(f"{k}={v}" for k, v in t.options)]
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# Evaluation helpers
# --------------------------------------------------------------------------


def filter_value(f, filters: dict[str, Filter]) -> Filter:
    if isinstance(f, Name):
        return filters[f.id]
    return FULL if f.colors is None else Filter.of(f.colors)


def matrix_value(node, matrices: dict[str, np.ndarray], h: int) -> np.ndarray:
    def ev(n):
        if isinstance(n, Num):
            return n.value
        if isinstance(n, Name):
            return np.eye(h, dtype=complex) if n.id == "I" else matrices[n.id]
        if isinstance(n, Neg):
            return -ev(n.arg)
        a, b = ev(n.left), ev(n.right)
        if n.op == "*":
            return a @ b if isinstance(a, np.ndarray) and isinstance(b, np.ndarray) else a * b
        a = a if isinstance(a, np.ndarray) else a * np.eye(h)
        b = b if isinstance(b, np.ndarray) else b * np.eye(h)
        return a + b if n.op == "+" else a - b
    v = ev(node)
    return np.asarray(v if isinstance(v, np.ndarray) else v * np.eye(h), dtype=complex)


def ast_to_dict(node):
    """Plain-data view of an AST (spans dropped), used for golden fixtures."""
    import dataclasses

    if dataclasses.is_dataclass(node):
        out = {"node": type(node).__name__}
        for f in dataclasses.fields(node):
            if f.name != "span":
                out[f.name] = ast_to_dict(getattr(node, f.name))
        return out
    if isinstance(node, (tuple, list)):
        return [ast_to_dict(v) for v in node]
    if isinstance(node, complex):
        return [node.real, node.imag]
    return node
