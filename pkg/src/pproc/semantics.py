"""Structural operational semantics and reachable-graph construction.

Action transitions come only from nondeterministic terms, probability
transitions only from probabilistic terms.  In the interleaving parallel
rules the idle operand is wrapped as the unit-weight probabilistic choice
so the composite target stays probabilistic.  States are canonical terms:
plain structural equality after desugaring, with no quotienting by
algebraic laws.
"""

from __future__ import annotations

from collections import deque
from fractions import Fraction

from .plts import Plts
from .syntax import (
    NONDET, PROB, TAU, Choice, ConstRef, Hide, Nil, Parallel, Prefix,
    ProbChoice, ProcessTerm, Restrict, Spec, SpecError, UndefinedConstantError,
    constant_sorts, unit_prob,
)


class StateBudgetExceeded(SpecError):
    def __init__(self, budget: int):
        super().__init__(f"state budget of {budget} states exceeded; "
                         f"the reachable graph may be infinite")
        self.budget = budget


DEFAULT_MAX_STATES = 100_000


def _lookup(name: str, spec: Spec) -> ProcessTerm:
    try:
        return spec.definitions[name]
    except KeyError:
        raise UndefinedConstantError(f"undefined constant {name}") from None


def step_action(term: ProcessTerm, spec: Spec) -> list[tuple[str, ProcessTerm]]:
    """Derivable action transitions of a nondeterministic term, as a
    duplicate-free list in derivation order."""
    moves: list[tuple[str, ProcessTerm]] = []
    t = term
    if isinstance(t, Nil):
        pass
    elif isinstance(t, Prefix):
        moves.append((t.action, t.body))
    elif isinstance(t, Choice):
        moves.extend(step_action(t.left, spec))
        moves.extend(step_action(t.right, spec))
    elif isinstance(t, Parallel):
        left_moves = step_action(t.left, spec)
        right_moves = step_action(t.right, spec)
        for a, p in left_moves:
            if a not in t.sync:
                moves.append((a, Parallel(t.sync, p, unit_prob(t.right))))
        for a, p in right_moves:
            if a not in t.sync:
                moves.append((a, Parallel(t.sync, unit_prob(t.left), p)))
        for a, p1 in left_moves:
            if a in t.sync:
                for b, p2 in right_moves:
                    if b == a:
                        moves.append((a, Parallel(t.sync, p1, p2)))
    elif isinstance(t, Restrict):
        moves.extend((a, Restrict(t.acts, p))
                     for a, p in step_action(t.body, spec) if a not in t.acts)
    elif isinstance(t, Hide):
        moves.extend((TAU if a in t.acts else a, Hide(t.acts, p))
                     for a, p in step_action(t.body, spec))
    elif isinstance(t, ConstRef):
        moves.extend(step_action(_lookup(t.name, spec), spec))
    elif isinstance(t, ProbChoice):
        raise SpecError("step_action applied to a probabilistic term")
    else:
        raise SpecError(f"unknown term node {t!r}")

    out: list[tuple[str, ProcessTerm]] = []
    seen: set[tuple[str, ProcessTerm]] = set()
    for move in moves:
        if move not in seen:
            seen.add(move)
            out.append(move)
    return out


def step_prob(term: ProcessTerm, spec: Spec) -> dict[ProcessTerm, Fraction]:
    """Derivable probability transitions of a probabilistic term, aggregated
    by target; the values sum to exactly 1."""
    if isinstance(term, ProbChoice):
        out: dict[ProcessTerm, Fraction] = {}
        for w, body in term.branches:
            out[body] = out.get(body, Fraction(0)) + w
        return out
    if isinstance(term, Parallel):
        left = step_prob(term.left, spec)
        right = step_prob(term.right, spec)
        out = {}
        for n1, w1 in left.items():
            for n2, w2 in right.items():
                tgt = Parallel(term.sync, n1, n2)
                out[tgt] = out.get(tgt, Fraction(0)) + w1 * w2
        return out
    if isinstance(term, Restrict):
        return {Restrict(term.acts, n): w
                for n, w in step_prob(term.body, spec).items()}
    if isinstance(term, Hide):
        return {Hide(term.acts, n): w
                for n, w in step_prob(term.body, spec).items()}
    if isinstance(term, ConstRef):
        return step_prob(_lookup(term.name, spec), spec)
    if isinstance(term, (Nil, Prefix, Choice)):
        raise SpecError("step_prob applied to a nondeterministic term")
    raise SpecError(f"unknown term node {term!r}")


def build_plts_multi(spec: Spec, roots: list[ProcessTerm],
                     max_states: int = DEFAULT_MAX_STATES) -> Plts:
    """Breadth-first closure of the step functions from several roots in one
    shared state table.  Deterministic: FIFO frontier, transitions kept in
    derivation order, duplicate root terms share a state."""
    sorts_table = constant_sorts(spec)

    def sort_quick(t: ProcessTerm) -> str:
        while isinstance(t, (Restrict, Hide, Parallel)):
            t = t.left if isinstance(t, Parallel) else t.body
        if isinstance(t, ConstRef):
            return sorts_table.get(t.name, NONDET)
        return NONDET if isinstance(t, (Nil, Prefix, Choice)) else PROB

    term_ids: dict[ProcessTerm, int] = {}
    terms: list[ProcessTerm] = []
    sorts: list[str] = []
    actions: list[list[tuple[str, int]]] = []
    probs: list[dict[int, Fraction]] = []
    queue: deque[int] = deque()

    def intern(t: ProcessTerm) -> int:
        sid = term_ids.get(t)
        if sid is None:
            if len(terms) >= max_states:
                raise StateBudgetExceeded(max_states)
            sid = len(terms)
            term_ids[t] = sid
            terms.append(t)
            sorts.append(sort_quick(t))
            actions.append([])
            probs.append({})
            queue.append(sid)
        return sid

    root_ids = tuple(intern(r) for r in roots)
    while queue:
        sid = queue.popleft()
        t = terms[sid]
        if sorts[sid] == NONDET:
            actions[sid] = [(a, intern(p)) for a, p in step_action(t, spec)]
        else:
            probs[sid] = {intern(n): w for n, w in step_prob(t, spec).items()}
    return Plts(terms, sorts, actions, probs, root_ids)


def build_plts(spec: Spec, root: ProcessTerm,
               max_states: int = DEFAULT_MAX_STATES) -> Plts:
    """Reachable graph of a single term."""
    return build_plts_multi(spec, [root], max_states)
