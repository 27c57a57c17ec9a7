"""Textual S-expression language for declaring search spaces.

A space file holds exactly one module form. Parenthesised forms name a
module kind followed by its arguments; square brackets hold the value
list of one hyperparameter domain; bare identifiers are shorthand for a
zero-argument module, so ``(MaybeSwap BatchNormalization ReLU)`` works.
Commas inside value lists are optional separators, ``;`` starts a
comment that runs to end of line.

Example::

    (Concat
        (Conv2D [32, 64] [3, 5] [1])
        (MaybeSwap BatchNormalization ReLU)
        (Optional (Dropout [0.5, 0.9]))
        (Affine [10]))

``UserHyperparams`` uses named pairs instead of positional lists:
``(UserHyperparams ["optimizer" ["adam", "sgd"]] ["lr" [0.1, 0.01]])``.

The grammar is this package's own codification; the declarations it
accepts follow the shapes shown above, and there is deliberately no
macro layer, no variables and no let-bindings. Compose spaces in the
host language instead.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .catalogue import CATALOGUE, KindSpec, Literal
from .errors import (
    ArityMismatch,
    DepthExceeded,
    EmptyValueList,
    HeterogeneousValueList,
    InvalidValue,
    SourceSpan,
    SyntaxViolation,
    UnbalancedParens,
    UnknownModuleKind,
)

MAX_NESTING_DEPTH = 256

FILE_EXTENSION = ".arch"


@dataclass(frozen=True)
class SpaceExpr:
    """Parsed AST of one module form.

    ``value_lists`` holds the positional hyperparameter domains; for
    ``UserHyperparams`` it alternates singleton name lists with value
    lists, in declaration order. Instances are immutable and freely
    shareable between threads.
    """

    kind: str
    value_lists: tuple[tuple[Literal, ...], ...] = ()
    children: tuple["SpaceExpr", ...] = ()

    def __deepcopy__(self, memo: dict) -> "SpaceExpr":
        # Immutable; sharing keeps traversal snapshots cheap.
        return self

    def user_hyperparam_pairs(self) -> list[tuple[str, tuple[Literal, ...]]]:
        """Decode the alternating name/values layout of UserHyperparams."""
        assert self.kind == "UserHyperparams"
        pairs = []
        for i in range(0, len(self.value_lists), 2):
            name = self.value_lists[i][0]
            pairs.append((str(name), self.value_lists[i + 1]))
        return pairs


# ---------------------------------------------------------------------------
# Tokenizer


@dataclass(frozen=True)
class _Token:
    type: str  # ( ) [ ] , IDENT INT FLOAT STRING EOF
    value: Literal | None
    span: SourceSpan


_IDENT_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"[+-]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?")
_STRING_RE = re.compile(r'"(?:[^"\\\n]|\\["\\])*"')


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col, i = 1, 1, 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == ";":
            while i < n and text[i] != "\n":
                i += 1
            continue
        span = SourceSpan(line, col)
        if ch in "()[],":
            tokens.append(_Token(ch, None, span))
            i += 1
            col += 1
            continue
        if ch == '"':
            m = _STRING_RE.match(text, i)
            if m is None:
                raise SyntaxViolation("unterminated string literal", span)
            raw = m.group()
            value = raw[1:-1].replace('\\"', '"').replace("\\\\", "\\")
            tokens.append(_Token("STRING", value, SourceSpan(line, col, len(raw))))
            i = m.end()
            col += len(raw)
            continue
        m = _NUMBER_RE.match(text, i)
        if m and (ch.isdigit() or ch in "+-." ):
            raw = m.group()
            span = SourceSpan(line, col, len(raw))
            if "." in raw or "e" in raw or "E" in raw:
                tokens.append(_Token("FLOAT", float(raw), span))
            else:
                tokens.append(_Token("INT", int(raw), span))
            i = m.end()
            col += len(raw)
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            raw = m.group()
            tokens.append(_Token("IDENT", raw, SourceSpan(line, col, len(raw))))
            i = m.end()
            col += len(raw)
            continue
        raise SyntaxViolation(f"unexpected character {ch!r}", span)
    tokens.append(_Token("EOF", None, SourceSpan(line, col)))
    return tokens


# ---------------------------------------------------------------------------
# Parser


@dataclass
class _Parser:
    tokens: list[_Token]
    pos: int = 0
    depth: int = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def parse_space(self) -> SpaceExpr:
        tok = self.peek()
        if tok.type == "(":
            expr = self.parse_form()
        elif tok.type == "IDENT":
            expr = self._bare_module(self.next())
        elif tok.type == ")":
            raise UnbalancedParens("unmatched ')'", tok.span)
        else:
            raise SyntaxViolation("expected a module form", tok.span)
        trailing = self.peek()
        if trailing.type == ")":
            raise UnbalancedParens("unmatched ')'", trailing.span)
        if trailing.type != "EOF":
            raise SyntaxViolation("trailing input after the module form", trailing.span)
        return expr

    def _bare_module(self, tok: _Token) -> SpaceExpr:
        kind = self._lookup_kind(tok)
        return _validated(kind, (), (), tok.span)

    def _lookup_kind(self, tok: _Token) -> KindSpec:
        spec = CATALOGUE.get(str(tok.value))
        if spec is None:
            raise UnknownModuleKind(f"unknown module kind {tok.value!r}", tok.span)
        return spec

    def parse_form(self) -> SpaceExpr:
        open_tok = self.next()  # consumes '('
        self.depth += 1
        if self.depth > MAX_NESTING_DEPTH:
            raise DepthExceeded(
                f"nesting deeper than {MAX_NESTING_DEPTH}", open_tok.span
            )
        head = self.peek()
        if head.type != "IDENT":
            raise SyntaxViolation("expected a module kind name after '('", head.span)
        kind = self._lookup_kind(self.next())

        value_lists: list[tuple[Literal, ...]] = []
        children: list[SpaceExpr] = []
        while True:
            tok = self.peek()
            if tok.type == ")":
                self.next()
                break
            if tok.type == "EOF":
                raise UnbalancedParens("unclosed '('", open_tok.span)
            if tok.type == "(":
                children.append(self.parse_form())
            elif tok.type == "IDENT":
                children.append(self._bare_module(self.next()))
            elif tok.type == "[":
                if kind.name == "UserHyperparams":
                    name, values = self.parse_named_pair()
                    value_lists.append((name,))
                    value_lists.append(values)
                else:
                    value_lists.append(self.parse_value_list())
            else:
                raise SyntaxViolation(
                    f"unexpected token {tok.type!r} in module form", tok.span
                )
        self.depth -= 1
        return _validated(kind, tuple(value_lists), tuple(children), head.span)

    def parse_value_list(self) -> tuple[Literal, ...]:
        open_tok = self.next()  # consumes '['
        values: list[Literal] = []
        spans: list[SourceSpan] = []
        expect_value = True
        while True:
            tok = self.peek()
            if tok.type == "]":
                close = self.next()
                break
            if tok.type == "EOF":
                raise UnbalancedParens("unclosed '['", open_tok.span)
            if tok.type == ",":
                if expect_value:
                    raise SyntaxViolation("misplaced ','", tok.span)
                self.next()
                expect_value = True
                continue
            if tok.type in ("INT", "FLOAT", "STRING"):
                self.next()
                values.append(tok.value)
                spans.append(tok.span)
                expect_value = False
                continue
            if tok.type == "[":
                raise SyntaxViolation(
                    "nested value lists are only valid in UserHyperparams", tok.span
                )
            raise SyntaxViolation(f"unexpected token {tok.type!r} in value list", tok.span)
        if not values:
            width = close.span.column + close.span.length - open_tok.span.column
            span = SourceSpan(
                open_tok.span.line,
                open_tok.span.column,
                width if close.span.line == open_tok.span.line else 1,
            )
            raise EmptyValueList("value list has no values", span)
        first_type = type(values[0])
        for v, s in zip(values, spans):
            if type(v) is not first_type:
                raise HeterogeneousValueList(
                    "value list mixes literal types", s
                )
        seen = set()
        for v, s in zip(values, spans):
            if v in seen:
                raise InvalidValue(f"duplicate value {v!r} in list", s)
            seen.add(v)
        return tuple(values)

    def parse_named_pair(self) -> tuple[str, tuple[Literal, ...]]:
        open_tok = self.next()  # consumes '['
        name_tok = self.peek()
        if name_tok.type != "STRING":
            raise SyntaxViolation(
                "UserHyperparams entry must start with a quoted name", name_tok.span
            )
        self.next()
        if not name_tok.value:
            raise InvalidValue("hyperparameter name must be non-empty", name_tok.span)
        if self.peek().type != "[":
            raise SyntaxViolation(
                "UserHyperparams entry needs a value list after the name",
                self.peek().span,
            )
        values = self.parse_value_list()
        close = self.peek()
        if close.type != "]":
            if close.type == "EOF":
                raise UnbalancedParens("unclosed '['", open_tok.span)
            raise SyntaxViolation("UserHyperparams entry holds one name and one list", close.span)
        self.next()
        return str(name_tok.value), values


def _validated(
    kind: KindSpec,
    value_lists: tuple[tuple[Literal, ...], ...],
    children: tuple[SpaceExpr, ...],
    span: SourceSpan,
) -> SpaceExpr:
    """Arity and per-kind value checks; returns the finished node."""
    if kind.composite:
        n = len(children)
        if n < kind.min_children or (
            kind.max_children is not None and n > kind.max_children
        ):
            bound = (
                f"exactly {kind.min_children}"
                if kind.min_children == kind.max_children
                else f"at least {kind.min_children}"
            )
            raise ArityMismatch(
                f"{kind.name} takes {bound} submodule(s), got {n}", span
            )
    elif children:
        raise ArityMismatch(f"{kind.name} takes no submodules", span)

    if kind.name == "UserHyperparams":
        if not value_lists:
            raise ArityMismatch("UserHyperparams needs at least one named entry", span)
        names = [vl[0] for vl in value_lists[::2]]
        if len(set(names)) != len(names):
            raise InvalidValue("duplicate hyperparameter name", span)
        return SpaceExpr(kind.name, value_lists, children)

    required = sum(1 for ls in kind.lists if ls.required)
    if not (required <= len(value_lists) <= len(kind.lists)):
        want = (
            f"{required}" if required == len(kind.lists) else f"{required}-{len(kind.lists)}"
        )
        raise ArityMismatch(
            f"{kind.name} takes {want} value list(s), got {len(value_lists)}", span
        )
    type_names = {int: "integer", float: "decimal", str: "string"}
    for ls, values in zip(kind.lists, value_lists):
        for v in values:
            if type(v) is not ls.literal_type:
                raise InvalidValue(
                    f"{kind.name} {ls.name} expects {type_names[ls.literal_type]} literals",
                    span,
                )
            if ls.check is not None and not ls.check(v):
                raise InvalidValue(f"{kind.name} {ls.name} {ls.check_desc}", span)
    return SpaceExpr(kind.name, value_lists, children)


def parse(text: str) -> SpaceExpr:
    """Parse one space declaration; raises a SpaceParseError subclass on
    malformed input, each carrying the offending SourceSpan."""
    return _Parser(_tokenize(text)).parse_space()


def parse_file(path) -> SpaceExpr:
    with open(path, "r", encoding="utf-8") as fh:
        return parse(fh.read())


# ---------------------------------------------------------------------------
# Pretty printer


def _literal_text(v: Literal) -> str:
    if isinstance(v, str):
        # Keep non-ASCII text literal; the grammar has no \uXXXX escapes
        # (strings may not contain control characters).
        return json.dumps(v, ensure_ascii=False)
    return repr(v)


def _list_text(values: tuple[Literal, ...]) -> str:
    return "[" + ", ".join(_literal_text(v) for v in values) + "]"


def pretty_print(expr: SpaceExpr) -> str:
    """Canonical one-line text: kind, value lists, then children, single
    spaces between tokens. ``parse(pretty_print(e))`` equals ``e``."""
    parts = [expr.kind]
    if expr.kind == "UserHyperparams":
        for name, values in expr.user_hyperparam_pairs():
            parts.append(f"[{_literal_text(name)} {_list_text(values)}]")
    else:
        parts.extend(_list_text(vl) for vl in expr.value_lists)
    parts.extend(pretty_print(child) for child in expr.children)
    return "(" + " ".join(parts) + ")"
