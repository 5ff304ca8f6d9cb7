"""Process terms, two-level action alphabets, and well-formedness checking.

Terms are immutable trees.  Probabilities are exact `fractions.Fraction`
values throughout: cumulative weights must sum to exactly 1 and parallel
composition multiplies weights, so floating point is never used.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Optional

TAU = "tau"

NONDET = "nondet"
PROB = "prob"


class SpecError(Exception):
    """Base class for errors raised while analyzing terms or specs."""


class UndefinedConstantError(SpecError):
    pass


class MixedSortParallelError(SpecError):
    pass


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int
    length: int = 0

    def __str__(self):
        return f"{self.line}:{self.column}"


# ---------------------------------------------------------------------------
# Terms

@dataclass(frozen=True)
class ProcessTerm:
    pass


@dataclass(frozen=True)
class Nil(ProcessTerm):
    span: Optional[SourceSpan] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Prefix(ProcessTerm):
    action: str
    body: ProcessTerm  # probabilistic after desugaring
    span: Optional[SourceSpan] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Choice(ProcessTerm):
    left: ProcessTerm
    right: ProcessTerm
    span: Optional[SourceSpan] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class ProbChoice(ProcessTerm):
    branches: tuple[tuple[Fraction, ProcessTerm], ...]  # nonempty
    span: Optional[SourceSpan] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Parallel(ProcessTerm):
    sync: frozenset[str]
    left: ProcessTerm
    right: ProcessTerm
    span: Optional[SourceSpan] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Restrict(ProcessTerm):
    acts: frozenset[str]
    body: ProcessTerm
    span: Optional[SourceSpan] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Hide(ProcessTerm):
    acts: frozenset[str]
    body: ProcessTerm
    span: Optional[SourceSpan] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class ConstRef(ProcessTerm):
    name: str
    span: Optional[SourceSpan] = field(default=None, compare=False, repr=False)


def unit_prob(term: ProcessTerm) -> ProbChoice:
    """Wrap a nondeterministic term as the unit-weight probabilistic choice."""
    return ProbChoice(((Fraction(1), term),))


def prefix(action: str, body: ProcessTerm) -> Prefix:
    """Build an action prefix, wrapping structurally nondeterministic bodies.

    Only usable on closed terms (no constants); the parser handles the
    general case with the constant sort table.
    """
    if structural_sort(body) == NONDET:
        body = unit_prob(body)
    return Prefix(action, body)


def structural_sort(term: ProcessTerm, const_sorts: Optional[dict] = None) -> str:
    """Sort of a term from its syntax alone; ConstRef needs `const_sorts`."""
    if isinstance(term, (Nil, Prefix, Choice)):
        return NONDET
    if isinstance(term, ProbChoice):
        return PROB
    if isinstance(term, (Restrict, Hide)):
        return structural_sort(term.body, const_sorts)
    if isinstance(term, Parallel):
        return structural_sort(term.left, const_sorts)
    if isinstance(term, ConstRef):
        if const_sorts is None or term.name not in const_sorts:
            raise UndefinedConstantError(f"constant {term.name} has no known sort")
        return const_sorts[term.name]
    raise SpecError(f"unknown term node {term!r}")


# ---------------------------------------------------------------------------
# Directives and specs

@dataclass(frozen=True)
class CheckDirective:
    prop: str      # BSNNI | BNDC | SBSNNI | PBNDC | SBNDC
    relation: str  # pw | pb
    subject: str
    span: Optional[SourceSpan] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class EquivDirective:
    relation: str  # pw | pb
    left: str
    right: str
    span: Optional[SourceSpan] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Spec:
    high: frozenset[str]
    low: frozenset[str]
    definitions: dict[str, ProcessTerm]
    directives: tuple = ()

    def with_definitions(self, extra: dict[str, ProcessTerm]) -> "Spec":
        merged = dict(self.definitions)
        merged.update(extra)
        return Spec(self.high, self.low, merged, self.directives)


EMPTY_SPEC = Spec(frozenset(), frozenset(), {})


# ---------------------------------------------------------------------------
# Sort computation

def constant_sorts(spec: Spec) -> dict[str, str]:
    """Sort of every defined constant, resolved through definition bodies.

    Bodies headed by a bare ConstRef chain are unguarded (and rejected by
    validation); such cycles resolve to NONDET here so later passes stay
    total.
    """
    sorts: dict[str, str] = {}

    def head_sort(t: ProcessTerm, visiting: set[str]) -> str:
        while isinstance(t, (Restrict, Hide, Parallel)):
            t = t.left if isinstance(t, Parallel) else t.body
        if isinstance(t, ConstRef):
            return resolve(t.name, visiting)
        return NONDET if isinstance(t, (Nil, Prefix, Choice)) else PROB

    def resolve(name: str, visiting: set[str]) -> str:
        if name in sorts:
            return sorts[name]
        if name not in spec.definitions or name in visiting:
            return NONDET
        visiting.add(name)
        s = head_sort(spec.definitions[name], visiting)
        visiting.discard(name)
        sorts[name] = s
        return s

    for name in spec.definitions:
        resolve(name, set())
    return sorts


def sort_of(term: ProcessTerm, spec: Spec) -> str:
    """Sort per the grammar.  Raises on undefined constants and on parallel
    compositions whose operands have different sorts."""
    sorts = constant_sorts(spec)

    def go(t: ProcessTerm) -> str:
        if isinstance(t, (Nil, Prefix, Choice)):
            return NONDET
        if isinstance(t, ProbChoice):
            return PROB
        if isinstance(t, (Restrict, Hide)):
            return go(t.body)
        if isinstance(t, Parallel):
            ls, rs = go(t.left), go(t.right)
            if ls != rs:
                raise MixedSortParallelError(
                    "parallel operands have different sorts")
            return ls
        if isinstance(t, ConstRef):
            if t.name not in spec.definitions:
                raise UndefinedConstantError(f"undefined constant {t.name}")
            return sorts[t.name]
        raise SpecError(f"unknown term node {t!r}")

    return go(term)


def subterms(term: ProcessTerm) -> Iterator[ProcessTerm]:
    yield term
    if isinstance(term, Prefix):
        yield from subterms(term.body)
    elif isinstance(term, Choice):
        yield from subterms(term.left)
        yield from subterms(term.right)
    elif isinstance(term, ProbChoice):
        for _, b in term.branches:
            yield from subterms(b)
    elif isinstance(term, Parallel):
        yield from subterms(term.left)
        yield from subterms(term.right)
    elif isinstance(term, (Restrict, Hide)):
        yield from subterms(term.body)


def alphabet(term: ProcessTerm, spec: Spec) -> frozenset[str]:
    """Action labels occurring in prefix position in `term` and in every
    definition it transitively references.  Includes tau when it occurs."""
    seen_consts: set[str] = set()
    labels: set[str] = set()
    stack = [term]
    while stack:
        t = stack.pop()
        for sub in subterms(t):
            if isinstance(sub, Prefix):
                labels.add(sub.action)
            elif isinstance(sub, ConstRef):
                if sub.name not in spec.definitions:
                    raise UndefinedConstantError(f"undefined constant {sub.name}")
                if sub.name not in seen_consts:
                    seen_consts.add(sub.name)
                    stack.append(spec.definitions[sub.name])
    return frozenset(labels)


# ---------------------------------------------------------------------------
# Validation

@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    span: Optional[SourceSpan] = None

    def __str__(self):
        where = f" at {self.span}" if self.span else ""
        return f"{self.code}{where}: {self.message}"


HIGH_LOW_OVERLAP = "HighLowOverlap"
TAU_DECLARED = "TauDeclared"
TAU_IN_SET = "TauInSet"
UNDEFINED_CONSTANT = "UndefinedConstant"
DUPLICATE_CONSTANT = "DuplicateConstant"
UNDECLARED_ACTION = "UndeclaredAction"
UNGUARDED_RECURSION = "UnguardedRecursion"
WEIGHT_SUM_NOT_ONE = "WeightSumNotOne"
WEIGHT_OUT_OF_RANGE = "WeightOutOfRange"
MIXED_SORT_PARALLEL = "MixedSortParallel"
PROB_BRANCH_SORT = "ProbBranchSort"


def _unguarded_constants(term: ProcessTerm) -> Iterator[ConstRef]:
    """Constant occurrences not under any action prefix."""
    if isinstance(term, ConstRef):
        yield term
    elif isinstance(term, Choice):
        yield from _unguarded_constants(term.left)
        yield from _unguarded_constants(term.right)
    elif isinstance(term, ProbChoice):
        for _, b in term.branches:
            yield from _unguarded_constants(b)
    elif isinstance(term, Parallel):
        yield from _unguarded_constants(term.left)
        yield from _unguarded_constants(term.right)
    elif isinstance(term, (Restrict, Hide)):
        yield from _unguarded_constants(term.body)
    # Nil and Prefix stop the walk: prefix guards everything below it.


def validate_spec(spec: Spec) -> list[Diagnostic]:
    """All well-formedness diagnostics; an empty list means the spec is valid."""
    diags: list[Diagnostic] = []
    declared = spec.high | spec.low

    for name in sorted(spec.high & spec.low):
        diags.append(Diagnostic(HIGH_LOW_OVERLAP,
                                f"action {name} declared both high and low"))
    if TAU in declared:
        diags.append(Diagnostic(TAU_DECLARED, "tau cannot be declared high or low"))

    sorts = constant_sorts(spec)

    def check_term(t: ProcessTerm):
        for sub in subterms(t):
            span = getattr(sub, "span", None)
            if isinstance(sub, Prefix):
                if sub.action != TAU and sub.action not in declared:
                    diags.append(Diagnostic(
                        UNDECLARED_ACTION,
                        f"action {sub.action} is not declared high or low", span))
            elif isinstance(sub, ProbChoice):
                total = Fraction(0)
                for w, b in sub.branches:
                    total += w
                    if not (0 < w <= 1):
                        diags.append(Diagnostic(
                            WEIGHT_OUT_OF_RANGE,
                            f"weight {w} outside (0, 1]", span))
                    try:
                        if structural_sort(b, sorts) != NONDET:
                            diags.append(Diagnostic(
                                PROB_BRANCH_SORT,
                                "probabilistic choice branch must be nondeterministic",
                                span))
                    except UndefinedConstantError:
                        pass
                if total != 1:
                    diags.append(Diagnostic(
                        WEIGHT_SUM_NOT_ONE,
                        f"branch weights sum to {total}, not 1", span))
            elif isinstance(sub, Parallel):
                for a in sorted(sub.sync):
                    if a == TAU:
                        diags.append(Diagnostic(TAU_IN_SET,
                                                "tau cannot appear in a synchronization set", span))
                    elif a not in declared:
                        diags.append(Diagnostic(
                            UNDECLARED_ACTION,
                            f"action {a} is not declared high or low", span))
                try:
                    ls = structural_sort(sub.left, sorts)
                    rs = structural_sort(sub.right, sorts)
                    if ls != rs:
                        diags.append(Diagnostic(
                            MIXED_SORT_PARALLEL,
                            "parallel operands have different sorts", span))
                except UndefinedConstantError:
                    pass
            elif isinstance(sub, (Restrict, Hide)):
                for a in sorted(sub.acts):
                    if a == TAU:
                        diags.append(Diagnostic(TAU_IN_SET,
                                                "tau cannot appear in a restriction or hiding set", span))
                    elif a not in declared:
                        diags.append(Diagnostic(
                            UNDECLARED_ACTION,
                            f"action {a} is not declared high or low", span))
            elif isinstance(sub, ConstRef):
                if sub.name not in spec.definitions:
                    diags.append(Diagnostic(
                        UNDEFINED_CONSTANT,
                        f"undefined constant {sub.name}", span))

    for name, body in spec.definitions.items():
        check_term(body)
        for ref in _unguarded_constants(body):
            diags.append(Diagnostic(
                UNGUARDED_RECURSION,
                f"constant {ref.name} occurs unguarded in the definition of {name}",
                getattr(ref, "span", None)))

    for d in spec.directives:
        names = [d.subject] if isinstance(d, CheckDirective) else [d.left, d.right]
        for n in names:
            if n not in spec.definitions:
                diags.append(Diagnostic(
                    UNDEFINED_CONSTANT,
                    f"directive refers to undefined constant {n}",
                    getattr(d, "span", None)))
    return diags
