"""The alternating probabilistic transition-system model and its queries.

States are split into nondeterministic states (action transitions only,
each leading to a probabilistic state) and probabilistic states (weight
transitions only, each leading to a nondeterministic state).  Weight
transitions to the same target are stored aggregated: every consumer of
probabilities goes through the cumulative functions below, which cannot
tell aggregated multirelations apart.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional

from .syntax import NONDET, PROB, Diagnostic, ProcessTerm

SORT_VIOLATION = "SortViolation"
WEIGHT_SUM_VIOLATION = "WeightSumViolation"
WEIGHT_RANGE_VIOLATION = "WeightRangeViolation"
BAD_STATE_REF = "BadStateRef"


@dataclass
class Plts:
    """Immutable after construction; state ids index every table."""

    terms: list[Optional[ProcessTerm]]        # canonical term per state (None for hand-built)
    sorts: list[str]                          # NONDET | PROB per state
    actions: list[list[tuple[str, int]]]      # nd state -> [(label, target)], derivation order
    probs: list[dict[int, Fraction]]          # p state -> {target: aggregated weight}
    roots: tuple[int, ...] = (0,)

    @property
    def root(self) -> int:
        return self.roots[0]

    @property
    def n_states(self) -> int:
        return len(self.sorts)

    def is_prob(self, s: int) -> bool:
        return self.sorts[s] == PROB

    def labels(self) -> list[str]:
        seen: list[str] = []
        for trans in self.actions:
            for label, _ in trans:
                if label not in seen:
                    seen.append(label)
        return seen


def make_plts(sorts: Iterable[str],
              action_edges: Iterable[tuple[int, str, int]],
              prob_edges: Iterable[tuple[int, Fraction, int]],
              roots: tuple[int, ...] = (0,),
              terms: Optional[list[Optional[ProcessTerm]]] = None) -> Plts:
    """Hand-building constructor (tests, random instances).  Aggregates
    duplicate probability edges; does not validate."""
    sorts = list(sorts)
    n = len(sorts)
    actions: list[list[tuple[str, int]]] = [[] for _ in range(n)]
    probs: list[dict[int, Fraction]] = [{} for _ in range(n)]
    for src, label, tgt in action_edges:
        actions[src].append((label, tgt))
    for src, w, tgt in prob_edges:
        probs[src][tgt] = probs[src].get(tgt, Fraction(0)) + Fraction(w)
    if terms is None:
        terms = [None] * n
    return Plts(terms, sorts, actions, probs, roots)


def validate_plts(p: Plts) -> list[Diagnostic]:
    """Empty iff all model invariants hold."""
    diags: list[Diagnostic] = []
    n = p.n_states
    for s in range(n):
        if p.sorts[s] not in (NONDET, PROB):
            diags.append(Diagnostic(SORT_VIOLATION, f"state {s} has unknown sort"))
    for s in range(n):
        for label, t in p.actions[s]:
            if not (0 <= t < n):
                diags.append(Diagnostic(BAD_STATE_REF,
                                        f"action edge {s} -{label}-> {t} out of range"))
                continue
            if p.sorts[s] != NONDET or p.sorts[t] != PROB:
                diags.append(Diagnostic(
                    SORT_VIOLATION,
                    f"action edge {s} -{label}-> {t} must go from a "
                    f"nondeterministic to a probabilistic state"))
        total = Fraction(0)
        for t, w in p.probs[s].items():
            if not (0 <= t < n):
                diags.append(Diagnostic(BAD_STATE_REF,
                                        f"weight edge {s} -> {t} out of range"))
                continue
            if p.sorts[s] != PROB or p.sorts[t] != NONDET:
                diags.append(Diagnostic(
                    SORT_VIOLATION,
                    f"weight edge {s} -> {t} must go from a probabilistic "
                    f"to a nondeterministic state"))
            if not (0 < w <= 1):
                diags.append(Diagnostic(WEIGHT_RANGE_VIOLATION,
                                        f"weight {w} on {s} -> {t} outside (0, 1]"))
            total += w
        if p.probs[s] and total != 1:
            diags.append(Diagnostic(
                WEIGHT_SUM_VIOLATION,
                f"weights out of state {s} sum to {total}, not 1"))
    return diags


def pi_cumulative(p: Plts, s: int, c: Iterable[int]) -> Fraction:
    """Cumulative one-step probability from s into the state set c.
    Zero for nondeterministic states."""
    if p.sorts[s] != PROB:
        return Fraction(0)
    cset = c if isinstance(c, (set, frozenset)) else set(c)
    return sum((w for t, w in p.probs[s].items() if t in cset), Fraction(0))


def prob_lifted(p: Plts, s: int, c: Iterable[int]) -> Fraction:
    """Lifting that lets a nondeterministic state count as mass 1 on itself."""
    if p.sorts[s] == NONDET:
        cset = c if isinstance(c, (set, frozenset)) else set(c)
        return Fraction(1) if s in cset else Fraction(0)
    return pi_cumulative(p, s, c)


def successors(p: Plts, s: int) -> list[int]:
    if p.sorts[s] == NONDET:
        return [t for _, t in p.actions[s]]
    return list(p.probs[s].keys())


def reach(p: Plts, s: int) -> set[int]:
    """All states reachable from s through any transitions, including s."""
    seen = {s}
    queue = deque([s])
    while queue:
        u = queue.popleft()
        for v in successors(p, u):
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def weak_closure(p: Plts) -> list[int]:
    """Per-state bitmask of states reachable via tau transitions alternating
    with probability transitions (the weak move), including the state itself."""
    from .syntax import TAU
    n = p.n_states
    step = [0] * n
    for s in range(n):
        if p.sorts[s] == NONDET:
            for label, t in p.actions[s]:
                if label == TAU:
                    step[s] |= 1 << t
        else:
            for t in p.probs[s]:
                step[s] |= 1 << t
    closure = [step[s] | (1 << s) for s in range(n)]
    changed = True
    while changed:
        changed = False
        for s in range(n):
            mask = closure[s]
            acc = mask
            rest = mask
            while rest:
                low = rest & -rest
                acc |= closure[low.bit_length() - 1]
                rest ^= low
            if acc != mask:
                closure[s] = acc
                changed = True
    return closure


def to_dot(p: Plts, name: str = "plts",
           state_labels: Optional[dict[int, str]] = None) -> str:
    """GraphViz rendering: circles for nondeterministic states, diamonds for
    probabilistic ones, edges labeled with the action or the exact weight."""
    lines = [f"digraph {name} {{", "  rankdir=TB;"]
    for s in range(p.n_states):
        shape = "diamond" if p.is_prob(s) else "circle"
        label = state_labels.get(s, str(s)) if state_labels else str(s)
        extra = ' penwidth=2' if s in p.roots else ""
        lines.append(f'  s{s} [shape={shape} label="{label}"{extra}];')
    for s in range(p.n_states):
        for label, t in p.actions[s]:
            lines.append(f'  s{s} -> s{t} [label="{label}"];')
        for t, w in p.probs[s].items():
            num, den = w.numerator, w.denominator
            wtext = str(num) if den == 1 else f"{num}/{den}"
            lines.append(f'  s{s} -> s{t} [label="{wtext}" style=dashed];')
    lines.append("}")
    return "\n".join(lines) + "\n"
