"""Expression language for derived metrics.

    expr   := term | expr (+|-|*|/) expr | expr (<|<=|>|>=|==) expr
    term   := number | metric_ref | func
    metric_ref := metric_name [ @ child_kind ]
    func   := avg_over_time(expr, duration) | rate(metric_ref, duration)
            | sum(metric_ref @ child_kind) | min(...) | max(...) | avg(...)

Comparison binds loosest, then +/-, then */; comparisons yield 0.0/1.0.
A bare metric_ref reads the in-scope entity's latest sample at evaluation
time; the @child_kind suffix is only meaningful inside the child
aggregations. Durations are written like ``10s`` or ``500ms``.

Evaluation is a pure function of the stored samples at or before t: the same
expression over the same store contents always yields the identical float.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

NANOS = {"ns": 1, "us": 1_000, "ms": 1_000_000, "s": 1_000_000_000,
         "m": 60_000_000_000, "h": 3_600_000_000_000}

AGG_FUNCS = ("sum", "min", "max", "avg")
CMP_OPS = ("<=", ">=", "==", "<", ">")


class ParseError(ValueError):
    """Syntax or type error; ``position`` is the 1-based column."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at column {position}")
        self.position = position


class EvalError(RuntimeError):
    pass


class InsufficientDataError(EvalError):
    pass


class DivisionByZeroError(EvalError):
    pass


# --------------------------------------------------------------------- #
# AST
# --------------------------------------------------------------------- #


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class MetricRef:
    name: str
    child_kind: str | None = None


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Compare:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class AvgOverTime:
    inner: "Expr"
    window_ns: int


@dataclass(frozen=True)
class Rate:
    ref: MetricRef
    window_ns: int


@dataclass(frozen=True)
class Agg:
    func: str
    ref: MetricRef


Expr = Num | MetricRef | BinOp | Compare | AvgOverTime | Rate | Agg


# --------------------------------------------------------------------- #
# lexer
# --------------------------------------------------------------------- #


@dataclass(frozen=True)
class _Token:
    kind: str  # num, dur, ident, op, lparen, rparen, comma, at, eof
    text: str
    pos: int  # 1-based column


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        pos = i + 1
        if ch.isspace():
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE" and j + 1 < n and (
                text[j + 1].isdigit() or text[j + 1] in "+-"
            ):
                j += 2
                while j < n and text[j].isdigit():
                    j += 1
                tokens.append(_Token("num", text[i:j], pos))
                i = j
                continue
            k = j
            while k < n and text[k].isalpha():
                k += 1
            unit = text[j:k]
            if unit in NANOS:
                tokens.append(_Token("dur", text[i:k], pos))
                i = k
            else:
                if unit:
                    raise ParseError(f"unknown duration unit {unit!r}", j + 1)
                tokens.append(_Token("num", text[i:j], pos))
                i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("ident", text[i:j], pos))
            i = j
            continue
        two = text[i:i + 2]
        if two in ("<=", ">=", "=="):
            tokens.append(_Token("op", two, pos))
            i += 2
            continue
        if ch in "+-*/<>":
            tokens.append(_Token("op", ch, pos))
            i += 1
            continue
        if ch == "(":
            tokens.append(_Token("lparen", ch, pos))
        elif ch == ")":
            tokens.append(_Token("rparen", ch, pos))
        elif ch == ",":
            tokens.append(_Token("comma", ch, pos))
        elif ch == "@":
            tokens.append(_Token("at", ch, pos))
        else:
            raise ParseError(f"unexpected character {ch!r}", pos)
        i += 1
    tokens.append(_Token("eof", "", n + 1))
    return tokens


# --------------------------------------------------------------------- #
# parser
# --------------------------------------------------------------------- #


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self._tokens = tokens
        self._idx = 0

    @property
    def _cur(self) -> _Token:
        return self._tokens[self._idx]

    def _advance(self) -> _Token:
        token = self._cur
        self._idx += 1
        return token

    def _expect(self, kind: str, what: str) -> _Token:
        if self._cur.kind != kind:
            raise ParseError(f"expected {what}", self._cur.pos)
        return self._advance()

    def parse(self) -> Expr:
        expr = self._comparison()
        if self._cur.kind != "eof":
            raise ParseError(f"unexpected {self._cur.text!r}", self._cur.pos)
        return expr

    def _comparison(self) -> Expr:
        left = self._additive()
        while self._cur.kind == "op" and self._cur.text in CMP_OPS:
            op = self._advance().text
            right = self._additive()
            left = Compare(op, left, right)
        return left

    def _additive(self) -> Expr:
        left = self._multiplicative()
        while self._cur.kind == "op" and self._cur.text in ("+", "-"):
            op = self._advance().text
            right = self._multiplicative()
            left = BinOp(op, left, right)
        return left

    def _multiplicative(self) -> Expr:
        left = self._term()
        while self._cur.kind == "op" and self._cur.text in ("*", "/"):
            op = self._advance().text
            right = self._term()
            left = BinOp(op, left, right)
        return left

    def _term(self) -> Expr:
        token = self._cur
        if token.kind == "num":
            self._advance()
            return Num(float(token.text))
        if token.kind == "lparen":
            self._advance()
            inner = self._comparison()
            self._expect("rparen", "')'")
            return inner
        if token.kind == "ident":
            return self._ident_term()
        raise ParseError("expected a term", token.pos)

    def _ident_term(self) -> Expr:
        name_token = self._advance()
        name = name_token.text
        if self._cur.kind != "lparen":
            return self._metric_ref(name, name_token.pos)
        if name == "avg_over_time":
            self._advance()
            inner = self._comparison()
            self._expect("comma", "','")
            window = self._duration()
            self._expect("rparen", "')'")
            return AvgOverTime(inner, window)
        if name == "rate":
            self._advance()
            ref = self._require_ref()
            if ref.child_kind is not None:
                raise ParseError("rate() takes an unsuffixed metric", name_token.pos)
            self._expect("comma", "','")
            window = self._duration()
            self._expect("rparen", "')'")
            return Rate(ref, window)
        if name in AGG_FUNCS:
            self._advance()
            ref = self._require_ref()
            if ref.child_kind is None:
                raise ParseError(
                    f"{name}() aggregates children: metric@child_kind required",
                    name_token.pos,
                )
            self._expect("rparen", "')'")
            return Agg(name, ref)
        raise ParseError(f"unknown function {name!r}", name_token.pos)

    def _metric_ref(self, name: str, pos: int) -> MetricRef:
        if self._cur.kind == "at":
            self._advance()
            child = self._expect("ident", "child kind after '@'")
            return MetricRef(name, child.text)
        return MetricRef(name)

    def _require_ref(self) -> MetricRef:
        token = self._expect("ident", "a metric name")
        return self._metric_ref(token.text, token.pos)

    def _duration(self) -> int:
        token = self._expect("dur", "a duration like 10s")
        digits = token.text.rstrip("smhnu")
        unit = token.text[len(digits):]
        return int(float(digits) * NANOS[unit])


def parse(text: str) -> Expr:
    return _Parser(_tokenize(text)).parse()


# --------------------------------------------------------------------- #
# analysis helpers
# --------------------------------------------------------------------- #


def metric_names(expr: Expr) -> set[str]:
    if isinstance(expr, MetricRef):
        return {expr.name}
    if isinstance(expr, (BinOp, Compare)):
        return metric_names(expr.left) | metric_names(expr.right)
    if isinstance(expr, AvgOverTime):
        return metric_names(expr.inner)
    if isinstance(expr, (Rate, Agg)):
        return {expr.ref.name}
    return set()


def child_kinds(expr: Expr) -> set[str]:
    if isinstance(expr, Agg):
        return {expr.ref.child_kind} if expr.ref.child_kind else set()
    if isinstance(expr, (BinOp, Compare)):
        return child_kinds(expr.left) | child_kinds(expr.right)
    if isinstance(expr, AvgOverTime):
        return child_kinds(expr.inner)
    return set()


def max_window_ns(expr: Expr) -> int:
    if isinstance(expr, (AvgOverTime, Rate)):
        inner = max_window_ns(expr.inner) if isinstance(expr, AvgOverTime) else 0
        return expr.window_ns + inner
    if isinstance(expr, (BinOp, Compare)):
        return max(max_window_ns(expr.left), max_window_ns(expr.right))
    return 0


def check_types(expr: Expr, scope: str, registry) -> None:
    """Reject suffixes outside aggregations and child kinds not below scope."""

    def walk(node: Expr) -> None:
        if isinstance(node, MetricRef):
            if node.child_kind is not None:
                raise ParseError(
                    "metric@child_kind is only valid inside sum/min/max/avg", 1
                )
        elif isinstance(node, (BinOp, Compare)):
            walk(node.left)
            walk(node.right)
        elif isinstance(node, AvgOverTime):
            walk(node.inner)
        elif isinstance(node, Agg):
            kind = node.ref.child_kind
            assert kind is not None
            if not registry.has(kind):
                raise ParseError(f"unknown child kind {kind!r}", 1)
            if not registry.is_descendant_kind(scope, kind):
                raise ParseError(
                    f"kind {kind!r} is not below scope {scope!r}", 1
                )

    walk(expr)


# --------------------------------------------------------------------- #
# evaluation
# --------------------------------------------------------------------- #


class EvalContext(Protocol):
    def latest(self, entity_id: str, metric: str, t: int) -> float | None: ...

    def samples(self, entity_id: str, metric: str, t_from: int, t_to: int
                ) -> list[tuple[int, float]]: ...

    def descendants(self, entity_id: str, kind: str, t: int) -> list[str]: ...


def evaluate(expr: Expr, ctx: EvalContext, entity_id: str, t: int) -> float:
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, MetricRef):
        value = ctx.latest(entity_id, expr.name, t)
        if value is None:
            raise InsufficientDataError(f"{expr.name} has no samples at {t}")
        return value
    if isinstance(expr, BinOp):
        left = evaluate(expr.left, ctx, entity_id, t)
        right = evaluate(expr.right, ctx, entity_id, t)
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            return left * right
        if right == 0.0:
            raise DivisionByZeroError(f"division by zero at t={t}")
        return left / right
    if isinstance(expr, Compare):
        left = evaluate(expr.left, ctx, entity_id, t)
        right = evaluate(expr.right, ctx, entity_id, t)
        result = {
            "<": left < right, "<=": left <= right, ">": left > right,
            ">=": left >= right, "==": left == right,
        }[expr.op]
        return 1.0 if result else 0.0
    if isinstance(expr, Rate):
        points = ctx.samples(entity_id, expr.ref.name, t - expr.window_ns, t)
        if len(points) < 2:
            raise InsufficientDataError(
                f"rate({expr.ref.name}) needs 2 samples in window"
            )
        (ts0, v0), (ts1, v1) = points[0], points[-1]
        return (v1 - v0) / ((ts1 - ts0) / 1e9)
    if isinstance(expr, Agg):
        kind = expr.ref.child_kind
        assert kind is not None
        values = []
        for child in ctx.descendants(entity_id, kind, t):
            value = ctx.latest(child, expr.ref.name, t)
            if value is not None:
                values.append(value)
        if not values:
            raise InsufficientDataError(
                f"{expr.func}({expr.ref.name}@{kind}) found no data"
            )
        if expr.func == "sum":
            return sum(values)
        if expr.func == "min":
            return min(values)
        if expr.func == "max":
            return max(values)
        return sum(values) / len(values)
    if isinstance(expr, AvgOverTime):
        instants = _window_instants(expr.inner, ctx, entity_id, t, expr.window_ns)
        values = []
        for u in instants:
            try:
                values.append(evaluate(expr.inner, ctx, entity_id, u))
            except InsufficientDataError:
                continue
        if not values:
            raise InsufficientDataError("avg_over_time window is empty")
        return sum(values) / len(values)
    raise TypeError(f"unknown node {expr!r}")


def _window_instants(
    inner: Expr, ctx: EvalContext, entity_id: str, t: int, window_ns: int
) -> list[int]:
    """Sample timestamps of every series the inner expression reads,
    restricted to [t - window, t]; child sets resolve at t."""
    series: set[tuple[str, str]] = set()

    def collect(node: Expr) -> None:
        if isinstance(node, MetricRef):
            series.add((entity_id, node.name))
        elif isinstance(node, Rate):
            series.add((entity_id, node.ref.name))
        elif isinstance(node, Agg):
            kind = node.ref.child_kind
            assert kind is not None
            for child in ctx.descendants(entity_id, kind, t):
                series.add((child, node.ref.name))
        elif isinstance(node, (BinOp, Compare)):
            collect(node.left)
            collect(node.right)
        elif isinstance(node, AvgOverTime):
            collect(node.inner)

    collect(inner)
    instants: set[int] = set()
    for sid, metric in series:
        for ts, _ in ctx.samples(sid, metric, t - window_ns, t):
            instants.add(ts)
    return sorted(instants)
