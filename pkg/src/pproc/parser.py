"""Concrete syntax: `.pproc` files to Spec values and terms back to text.

Grammar (tightest binding first: prefix `.`, then restriction/hiding,
then parallel, then `+`):

    spec      := { decl | def | directive }
    decl      := ("high" | "low") IDENT { "," IDENT } ";"
    def       := CONST ":=" term ";"
    term      := "0" | ACT "." term | term "+" term
               | term "|[" idents "]|" term
               | term "\\" "{" idents "}" | term "/" "{" idents "}"
               | "<" weight ":" term { "," weight ":" term } ">"
               | CONST | "(" term ")"
    directive := "check" PROP "[" REL "]" CONST ";"
               | "equiv" REL CONST CONST ";"

Constants start uppercase, actions lowercase, `tau` is reserved.
Weights are decimals (exactly representable, e.g. 0.5) or fractions p/q.
`#` starts a line comment.  The shorthand `a . N` for a nondeterministic
body N is desugared to `a . <1: N>` after constant sorts are known.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .syntax import (
    TAU, NONDET, Choice, CheckDirective, ConstRef, EquivDirective, Hide, Nil,
    Parallel, Prefix, ProbChoice, ProcessTerm, Restrict, SourceSpan, Spec,
    constant_sorts, structural_sort, unit_prob,
)

PROPERTIES = ("BSNNI", "BNDC", "SBSNNI", "PBNDC", "SBNDC")
RELATIONS = ("pw", "pb")


class LexError(Exception):
    def __init__(self, message: str, span: SourceSpan):
        super().__init__(f"{span}: {message}")
        self.span = span


class ParseError(Exception):
    def __init__(self, message: str, span: SourceSpan, expected: tuple[str, ...] = ()):
        super().__init__(f"{span}: {message}")
        self.span = span
        self.expected = expected


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT CONST NUMBER SYM EOF
    text: str
    span: SourceSpan


_SINGLE_SYMBOLS = frozenset(".+;,:(){}<>\\/[]")


def _lex(text: str) -> list[Token]:
    toks: list[Token] = []
    line, col, i = 1, 1, 0
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        span = SourceSpan(line, col)
        two = text[i:i + 2]
        if two in ("|[", "]|", ":="):
            toks.append(Token("SYM", two, SourceSpan(line, col, 2)))
            i += 2
            col += 2
            continue
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == "." and j + 1 < n and text[j + 1].isdigit():
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            word = text[i:j]
            toks.append(Token("NUMBER", word, SourceSpan(line, col, len(word))))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = "CONST" if word[0].isupper() else "IDENT"
            toks.append(Token(kind, word, SourceSpan(line, col, len(word))))
            col += j - i
            i = j
            continue
        if c in _SINGLE_SYMBOLS:
            toks.append(Token("SYM", c, SourceSpan(line, col, 1)))
            i += 1
            col += 1
            continue
        raise LexError(f"unexpected character {c!r}", span)
    toks.append(Token("EOF", "", SourceSpan(line, col)))
    return toks


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.pos = 0

    def peek(self) -> Token:
        return self.toks[self.pos]

    def next(self) -> Token:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect(self, kind: str, text: Optional[str] = None) -> Token:
        t = self.peek()
        if t.kind != kind or (text is not None and t.text != text):
            want = text if text is not None else kind
            raise ParseError(f"expected {want!r}, found {t.text or t.kind!r}",
                             t.span, expected=(want,))
        return self.next()

    def at_sym(self, text: str) -> bool:
        t = self.peek()
        return t.kind == "SYM" and t.text == text

    def eat_sym(self, text: str) -> bool:
        if self.at_sym(text):
            self.next()
            return True
        return False

    # -- identifier lists (actions; tau accepted here, validation flags it)

    def ident_list(self, closing: str) -> frozenset[str]:
        names: set[str] = set()
        if not self.at_sym(closing):
            while True:
                t = self.peek()
                if t.kind != "IDENT":
                    raise ParseError(f"expected action name, found {t.text or t.kind!r}",
                                     t.span, expected=("IDENT",))
                names.add(self.next().text)
                if not self.eat_sym(","):
                    break
        return frozenset(names)

    # -- terms (raw: prefix bodies not yet wrapped)

    def term(self) -> ProcessTerm:
        left = self.par_term()
        while self.eat_sym("+"):
            right = self.par_term()
            left = Choice(left, right, span=_span_of(left))
        return left

    def par_term(self) -> ProcessTerm:
        left = self.hide_term()
        while self.at_sym("|["):
            self.next()
            sync = self.ident_list("]|")
            self.expect("SYM", "]|")
            right = self.hide_term()
            left = Parallel(sync, left, right, span=_span_of(left))
        return left

    def hide_term(self) -> ProcessTerm:
        t = self.prefix_term()
        while True:
            if self.at_sym("\\"):
                self.next()
                self.expect("SYM", "{")
                acts = self.ident_list("}")
                self.expect("SYM", "}")
                t = Restrict(acts, t, span=_span_of(t))
            elif self.at_sym("/"):
                self.next()
                self.expect("SYM", "{")
                acts = self.ident_list("}")
                self.expect("SYM", "}")
                t = Hide(acts, t, span=_span_of(t))
            else:
                return t

    def prefix_term(self) -> ProcessTerm:
        t = self.peek()
        if t.kind == "NUMBER" and t.text == "0":
            self.next()
            return Nil(span=t.span)
        if t.kind == "IDENT":
            self.next()
            self.expect("SYM", ".")
            body = self.prefix_term()
            return Prefix(t.text, body, span=t.span)
        if t.kind == "CONST":
            self.next()
            return ConstRef(t.text, span=t.span)
        if self.at_sym("("):
            self.next()
            inner = self.term()
            self.expect("SYM", ")")
            return inner
        if self.at_sym("<"):
            return self.prob_choice()
        raise ParseError(f"expected a process term, found {t.text or t.kind!r}",
                         t.span, expected=("0", "action", "constant", "(", "<"))

    def prob_choice(self) -> ProcessTerm:
        opening = self.expect("SYM", "<")
        branches = []
        while True:
            w = self.weight()
            self.expect("SYM", ":")
            body = self.term()
            branches.append((w, body))
            if not self.eat_sym(","):
                break
        self.expect("SYM", ">")
        return ProbChoice(tuple(branches), span=opening.span)

    def weight(self) -> Fraction:
        t = self.expect("NUMBER")
        value = Fraction(t.text)  # decimal strings convert exactly
        if self.at_sym("/"):
            self.next()
            d = self.expect("NUMBER")
            if "." in d.text or d.text == "0":
                raise ParseError("fraction denominator must be a nonzero integer",
                                 d.span)
            value = value / Fraction(d.text)
        return value

    # -- top level

    def spec(self) -> Spec:
        high: set[str] = set()
        low: set[str] = set()
        defs: dict[str, ProcessTerm] = {}
        directives: list = []
        dup_diags: list[str] = []
        while self.peek().kind != "EOF":
            t = self.peek()
            if t.kind == "IDENT" and t.text in ("high", "low"):
                self.next()
                names = self.decl_names()
                self.expect("SYM", ";")
                (high if t.text == "high" else low).update(names)
            elif t.kind == "IDENT" and t.text == "check":
                self.next()
                prop = self.expect("CONST")
                if prop.text not in PROPERTIES:
                    raise ParseError(f"unknown property {prop.text!r}",
                                     prop.span, expected=PROPERTIES)
                self.expect("SYM", "[")
                rel = self.expect("IDENT")
                if rel.text not in RELATIONS:
                    raise ParseError(f"unknown relation {rel.text!r}",
                                     rel.span, expected=RELATIONS)
                self.expect("SYM", "]")
                subject = self.expect("CONST")
                self.expect("SYM", ";")
                directives.append(CheckDirective(prop.text, rel.text,
                                                 subject.text, span=t.span))
            elif t.kind == "IDENT" and t.text == "equiv":
                self.next()
                rel = self.expect("IDENT")
                if rel.text not in RELATIONS:
                    raise ParseError(f"unknown relation {rel.text!r}",
                                     rel.span, expected=RELATIONS)
                a = self.expect("CONST")
                b = self.expect("CONST")
                self.expect("SYM", ";")
                directives.append(EquivDirective(rel.text, a.text, b.text,
                                                 span=t.span))
            elif t.kind == "CONST":
                name = self.next()
                self.expect("SYM", ":=")
                body = self.term()
                self.expect("SYM", ";")
                if name.text in defs:
                    raise ParseError(f"constant {name.text} defined twice",
                                     name.span)
                defs[name.text] = body
            else:
                raise ParseError(
                    f"expected a declaration, definition, or directive, found "
                    f"{t.text or t.kind!r}",
                    t.span, expected=("high", "low", "check", "equiv", "CONST"))
        return Spec(frozenset(high), frozenset(low), defs, tuple(directives))

    def decl_names(self) -> list[str]:
        names = [self.decl_name()]
        while self.eat_sym(","):
            names.append(self.decl_name())
        return names

    def decl_name(self) -> str:
        t = self.peek()
        if t.kind != "IDENT":
            raise ParseError(f"expected action name, found {t.text or t.kind!r}",
                             t.span, expected=("IDENT",))
        return self.next().text


def _span_of(term: ProcessTerm) -> Optional[SourceSpan]:
    return getattr(term, "span", None)


# ---------------------------------------------------------------------------
# Desugaring: a.N  ==>  a.<1: N>  for nondeterministic N

def _desugar(term: ProcessTerm, sorts: dict[str, str]) -> ProcessTerm:
    if isinstance(term, Nil) or isinstance(term, ConstRef):
        return term
    if isinstance(term, Prefix):
        body = _desugar(term.body, sorts)
        try:
            s = structural_sort(body, sorts)
        except Exception:
            s = None
        if s == NONDET:
            body = ProbChoice(((Fraction(1), body),), span=_span_of(body))
        return Prefix(term.action, body, span=term.span)
    if isinstance(term, Choice):
        return Choice(_desugar(term.left, sorts), _desugar(term.right, sorts),
                      span=term.span)
    if isinstance(term, ProbChoice):
        return ProbChoice(tuple((w, _desugar(b, sorts)) for w, b in term.branches),
                          span=term.span)
    if isinstance(term, Parallel):
        return Parallel(term.sync, _desugar(term.left, sorts),
                        _desugar(term.right, sorts), span=term.span)
    if isinstance(term, Restrict):
        return Restrict(term.acts, _desugar(term.body, sorts), span=term.span)
    if isinstance(term, Hide):
        return Hide(term.acts, _desugar(term.body, sorts), span=term.span)
    raise ParseError("unparseable term", SourceSpan(0, 0))


def parse_spec(text: str) -> Spec:
    """Parse a specification.  Raises LexError/ParseError on bad syntax;
    semantic problems are left to `validate_spec`."""
    raw = _Parser(_lex(text)).spec()
    sorts = constant_sorts(raw)
    defs = {name: _desugar(body, sorts) for name, body in raw.definitions.items()}
    return Spec(raw.high, raw.low, defs, raw.directives)


def parse_term(text: str, spec: Spec = None) -> ProcessTerm:
    """Parse a single term (desugared).  Handy for tests and the CLI."""
    parser = _Parser(_lex(text))
    raw = parser.term()
    parser.expect("EOF")
    sorts = constant_sorts(spec) if spec is not None else {}
    return _desugar(raw, sorts)


# ---------------------------------------------------------------------------
# Rendering (inverse of parsing, minimal parentheses)

_LEVEL_SUM = 1
_LEVEL_PAR = 2
_LEVEL_HIDE = 3
_LEVEL_PREFIX = 4
_LEVEL_ATOM = 5


def _fmt_weight(w: Fraction) -> str:
    return str(w.numerator) if w.denominator == 1 else f"{w.numerator}/{w.denominator}"


def _fmt_set(acts: frozenset[str]) -> str:
    return ", ".join(sorted(acts))


def _render(term: ProcessTerm, level: int) -> str:
    if isinstance(term, Nil):
        return "0"
    if isinstance(term, ConstRef):
        return term.name
    if isinstance(term, Prefix):
        body = term.body
        if (isinstance(body, ProbChoice) and len(body.branches) == 1
                and body.branches[0][0] == 1):
            inner = _render(body.branches[0][1], _LEVEL_PREFIX)
        else:
            inner = _render(body, _LEVEL_PREFIX)
        out = f"{term.action}.{inner}"
        return out if level <= _LEVEL_PREFIX else f"({out})"
    if isinstance(term, ProbChoice):
        parts = [f"{_fmt_weight(w)}: {_render(b, _LEVEL_SUM)}"
                 for w, b in term.branches]
        return "<" + ", ".join(parts) + ">"
    if isinstance(term, Restrict):
        out = f"{_render(term.body, _LEVEL_HIDE)} \\ {{{_fmt_set(term.acts)}}}"
        return out if level <= _LEVEL_HIDE else f"({out})"
    if isinstance(term, Hide):
        out = f"{_render(term.body, _LEVEL_HIDE)} / {{{_fmt_set(term.acts)}}}"
        return out if level <= _LEVEL_HIDE else f"({out})"
    if isinstance(term, Parallel):
        out = (f"{_render(term.left, _LEVEL_PAR)} |[{_fmt_set(term.sync)}]| "
               f"{_render(term.right, _LEVEL_HIDE)}")
        return out if level <= _LEVEL_PAR else f"({out})"
    if isinstance(term, Choice):
        out = f"{_render(term.left, _LEVEL_SUM)} + {_render(term.right, _LEVEL_PAR)}"
        return out if level <= _LEVEL_SUM else f"({out})"
    raise ValueError(f"cannot render {term!r}")


def render_term(term: ProcessTerm) -> str:
    """Concrete syntax for a term; parse_term(render_term(t)) == t."""
    return _render(term, _LEVEL_SUM)
