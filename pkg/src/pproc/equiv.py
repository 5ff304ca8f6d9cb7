"""Decision procedures for the probabilistic bisimulation equivalences.

All four engines are partition refiners: split blocks by signatures
computed against the current partition until stable.  Signatures follow
the defining clauses exactly:

* strong:     matching action moves into blocks, plus equal cumulative
              one-step probability into every block of nondeterministic
              states (blocks never mix sorts);
* strong mix: strong partition with every unit-mass probabilistic block
              folded into the nondeterministic block it concentrates on;
* weak:       an action move must be answered with probability exactly 1
              by some deterministic scheduler along tau* a tau*, decided
              qualitatively on a two-phase product (no numerics);
* branching:  an action move is answered after a weak move whose endpoint
              is still in the source block, with the target in the target
              block (intermediate states unconstrained); tau moves inside
              the own block need no answer.

The weak and branching probability clause compares the lifted cumulative
probability per block with no closure on the probabilistic side.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Optional

from .plts import Plts, prob_lifted, weak_closure
from .semantics import build_plts_multi
from .syntax import (
    NONDET, PROB, TAU, Choice, ConstRef, Hide, Nil, Parallel, Prefix,
    ProbChoice, ProcessTerm, Restrict, Spec, SpecError, unit_prob,
)

STRONG_P = "p"
STRONG_PM = "pm"
WEAK_PW = "pw"
BRANCH_PB = "pb"
WEAK_ND = "w"
BRANCH_ND = "b"

PROB_KINDS = (STRONG_P, STRONG_PM, WEAK_PW, BRANCH_PB)


class HasProbabilisticTransitions(SpecError):
    pass


class TooLargeError(SpecError):
    pass


# ---------------------------------------------------------------------------
# Partitions

@dataclass(frozen=True)
class Partition:
    blocks: tuple[tuple[int, ...], ...]
    block_of: tuple[int, ...]

    @staticmethod
    def from_blocks(blocks: Iterable[Iterable[int]], n_states: int) -> "Partition":
        canon = sorted((tuple(sorted(b)) for b in blocks if b), key=lambda b: b[0])
        block_of = [0] * n_states
        for i, b in enumerate(canon):
            for s in b:
                block_of[s] = i
        return Partition(tuple(canon), tuple(block_of))

    def same_block(self, a: int, b: int) -> bool:
        return self.block_of[a] == self.block_of[b]

    def refines(self, coarser: "Partition") -> bool:
        return all(len({coarser.block_of[s] for s in b}) == 1 for b in self.blocks)

    def serialize(self) -> str:
        return "\n".join(" ".join(map(str, b)) for b in self.blocks) + "\n"


SplitFn = Callable[[list[int], list[list[int]], list[int], dict], list]


def _refine(n_states: int, initial_blocks: Iterable[Iterable[int]],
            signatures: SplitFn) -> Partition:
    """Synchronized-round refinement.  Each round recomputes every block's
    member signatures against the current partition and splits by equality;
    blocks are kept in ascending minimal-state order for determinism."""
    blocks = sorted((sorted(b) for b in initial_blocks if b), key=lambda b: b[0])
    while True:
        block_of = [0] * n_states
        for i, b in enumerate(blocks):
            for s in b:
                block_of[s] = i
        ctx: dict = {}
        new_blocks: list[list[int]] = []
        changed = False
        for b in blocks:
            if len(b) == 1:
                new_blocks.append(b)
                continue
            sigs = signatures(b, blocks, block_of, ctx)
            groups: dict = {}
            order = []
            for s, sig in zip(b, sigs):
                if sig not in groups:
                    groups[sig] = []
                    order.append(sig)
                groups[sig].append(s)
            if len(order) > 1:
                changed = True
            new_blocks.extend(groups[sig] for sig in order)
        if not changed:
            return Partition.from_blocks(blocks, n_states)
        blocks = sorted(new_blocks, key=lambda b: b[0])


def _prob_sig(p: Plts, s: int, block_of: list[int]) -> tuple:
    """Lifted-probability vector per block: a nondeterministic state is mass
    one on its own block, a probabilistic state its aggregated weights."""
    if p.sorts[s] == NONDET:
        return ((block_of[s], Fraction(1)),)
    acc: dict[int, Fraction] = {}
    for t, w in p.probs[s].items():
        b = block_of[t]
        acc[b] = acc.get(b, Fraction(0)) + w
    return tuple(sorted(acc.items()))


# ---------------------------------------------------------------------------
# Strong probabilistic bisimilarity

def strong_prob_bisim(p: Plts) -> Partition:
    n = p.n_states

    def sigs(block, blocks, block_of, ctx):
        out = []
        for s in block:
            if p.sorts[s] == NONDET:
                out.append(frozenset((a, block_of[t]) for a, t in p.actions[s]))
            else:
                out.append(_prob_sig(p, s, block_of))
        return out

    nd = [s for s in range(n) if p.sorts[s] == NONDET]
    pr = [s for s in range(n) if p.sorts[s] == PROB]
    return _refine(n, [nd, pr], sigs)


def strong_mix_bisim(p: Plts) -> Partition:
    """Strong partition with each probabilistic block that concentrates all
    of its mass on a single nondeterministic block folded into that block.
    Folding cannot cascade: no probability edge enters a probabilistic
    state, so every other vector is unchanged by the union."""
    base = strong_prob_bisim(p)
    merged: list[set[int]] = [set(b) for b in base.blocks]
    drop: set[int] = set()
    for i, b in enumerate(base.blocks):
        rep = b[0]
        if p.sorts[rep] != PROB or not p.probs[rep]:
            continue
        vec = _prob_sig(p, rep, list(base.block_of))
        if len(vec) == 1 and vec[0][1] == 1:
            target = vec[0][0]
            if p.sorts[base.blocks[target][0]] == NONDET:
                merged[target] |= merged[i]
                drop.add(i)
    blocks = [b for i, b in enumerate(merged) if i not in drop]
    return Partition.from_blocks(blocks, p.n_states)


# ---------------------------------------------------------------------------
# Almost-sure weak step (the scheduler clause, decided on a phase product)

_WIN = ("WIN",)


def _phase_product(p: Plts, a: str, targets: frozenset[int]):
    """Product of the system with the phase automaton of tau* a tau*.

    Phase 1 means the distinguished action has already happened (for a=tau
    there is only phase 1).  Choice nodes are the nondeterministic states
    (options: tau moves, the a move, halting successfully when allowed) and
    probabilistic states whose success exit is forced; the rest of the
    probabilistic states are random nodes carrying their distribution.
    """
    two_phase = a != TAU
    phases = (0, 1) if two_phase else (1,)
    choice: dict[tuple, list] = {}
    random_: dict[tuple, list] = {}
    for s in range(p.n_states):
        at_target = s in targets
        for ph in phases:
            node = (s, ph)
            if p.sorts[s] == NONDET:
                succ = []
                if ph == 1 and at_target:
                    succ.append(_WIN)
                for label, t in p.actions[s]:
                    if label == TAU:
                        succ.append((t, ph))
                    elif two_phase and label == a and ph == 0:
                        succ.append((t, 1))
                choice[node] = succ
            elif ph == 1 and at_target:
                choice[node] = [_WIN]
            else:
                random_[node] = [(w, (t, ph)) for t, w in p.probs[s].items()]
    return choice, random_, (0 if two_phase else 1)


def _almost_sure_winning(choice: dict, random_: dict) -> set:
    """Largest set of nodes from which the success sink is reached with
    probability one: repeatedly restrict to the positive attractor of the
    sink (random nodes must also keep all branches inside the candidate)."""
    universe = set(choice) | set(random_)
    while True:
        attractor = {_WIN}
        changed = True
        while changed:
            changed = False
            for v in universe:
                if v in attractor:
                    continue
                if v in choice:
                    ok = any(w is _WIN or w in attractor for w in choice[v])
                else:
                    branches = random_[v]
                    ok = (all(t in universe for _, t in branches)
                          and any(t in attractor for _, t in branches))
                if ok:
                    attractor.add(v)
                    changed = True
        attractor.discard(_WIN)
        if attractor == universe:
            return universe
        universe = attractor


def weak_step_winning_set(p: Plts, a: str, targets: frozenset[int]) -> frozenset[int]:
    """States from which some deterministic scheduler realizes, with
    probability exactly 1, a computation with trace in tau* a tau* (a
    optional when a = tau) halting in `targets`."""
    choice, random_, start = _phase_product(p, a, targets)
    winning = _almost_sure_winning(choice, random_)
    return frozenset(s for s in range(p.n_states) if (s, start) in winning)


def almost_sure_weak_step(p: Plts, s: int, a: str, c: Iterable[int]) -> bool:
    return s in weak_step_winning_set(p, a, frozenset(c))


# ---------------------------------------------------------------------------
# Weak probabilistic bisimilarity

def weak_prob_bisim(p: Plts) -> Partition:
    n = p.n_states
    win_cache: dict[tuple, frozenset[int]] = {}

    def winners(a: str, block: tuple[int, ...]) -> frozenset[int]:
        key = (a, block)
        got = win_cache.get(key)
        if got is None:
            got = weak_step_winning_set(p, a, frozenset(block))
            win_cache[key] = got
        return got

    def sigs(block, blocks, block_of, ctx):
        offers = sorted({(a, block_of[t]) for s in block for a, t in p.actions[s]})
        sat = [winners(a, tuple(blocks[ci])) for a, ci in offers]
        return [(_prob_sig(p, s, block_of), tuple(s in w for w in sat))
                for s in block]

    return _refine(n, [list(range(n))], sigs)


# ---------------------------------------------------------------------------
# Probabilistic branching bisimilarity

def branching_prob_bisim(p: Plts) -> Partition:
    n = p.n_states
    closure = weak_closure(p)
    edges_by_label: dict[str, list[tuple[int, int]]] = {}
    for s in range(n):
        for a, t in p.actions[s]:
            edges_by_label.setdefault(a, []).append((s, t))

    def sigs(block, blocks, block_of, ctx):
        bi = block_of[block[0]]
        offers = sorted({(a, block_of[t]) for s in block for a, t in p.actions[s]
                         if not (a == TAU and block_of[t] == bi)})
        block_mask = 0
        for s in block:
            block_mask |= 1 << s
        sat_masks = []
        for a, ci in offers:
            cmask = 0
            for t in blocks[ci]:
                cmask |= 1 << t
            pre_a = 0
            for u, v in edges_by_label.get(a, ()):
                if cmask >> v & 1:
                    pre_a |= 1 << u
            sat_masks.append(block_mask & pre_a)
        return [(_prob_sig(p, s, block_of),
                 tuple(bool(closure[s] & m) for m in sat_masks))
                for s in block]

    return _refine(n, [list(range(n))], sigs)


# ---------------------------------------------------------------------------
# Nondeterministic projection and classical weak/branching bisimilarities

def _fresh_name(base: str, taken: set[str]) -> str:
    cand = base + "_nd"
    k = 2
    while cand in taken:
        cand = f"{base}_nd{k}"
        k += 1
    return cand


def nd_translate(term: ProcessTerm, spec: Spec) -> tuple[ProcessTerm, Spec]:
    """Replace every probabilistic choice by a tau-guarded nondeterministic
    choice, erasing the weights.  Unit-weight prefix bodies are treated as
    the prefix shorthand and absorbed rather than guarded.  Referenced
    constants get translated companion definitions in the returned spec."""
    companions: dict[str, str] = {}
    new_defs: dict[str, ProcessTerm] = {}
    taken = set(spec.definitions)

    def tr_name(name: str) -> str:
        if name not in companions:
            if name not in spec.definitions:
                raise SpecError(f"undefined constant {name}")
            fresh = _fresh_name(name, taken)
            taken.add(fresh)
            companions[name] = fresh
            new_defs[fresh] = None  # reserve before recursing (recursion safe)
            new_defs[fresh] = tr(spec.definitions[name])
        return companions[name]

    def tr(t: ProcessTerm) -> ProcessTerm:
        if isinstance(t, Nil):
            return t
        if isinstance(t, Prefix):
            body = t.body
            if (isinstance(body, ProbChoice) and len(body.branches) == 1
                    and body.branches[0][0] == 1):
                return Prefix(t.action, unit_prob(tr(body.branches[0][1])))
            return Prefix(t.action, unit_prob(tr(body)))
        if isinstance(t, Choice):
            return Choice(tr(t.left), tr(t.right))
        if isinstance(t, ProbChoice):
            arms = [Prefix(TAU, unit_prob(tr(b))) for _, b in t.branches]
            out = arms[0]
            for arm in arms[1:]:
                out = Choice(out, arm)
            return out
        if isinstance(t, Parallel):
            return Parallel(t.sync, tr(t.left), tr(t.right))
        if isinstance(t, Restrict):
            return Restrict(t.acts, tr(t.body))
        if isinstance(t, Hide):
            return Hide(t.acts, tr(t.body))
        if isinstance(t, ConstRef):
            return ConstRef(tr_name(t.name))
        raise SpecError(f"unknown term node {t!r}")

    translated = tr(term)
    return translated, spec.with_definitions(new_defs)


@dataclass
class Lts:
    """Plain labeled transition system: a collapsed alternating graph."""
    n_states: int
    actions: list[list[tuple[str, int]]]
    roots: tuple[int, ...]
    plts_states: list[int]  # original nondeterministic state per LTS state


def collapse_unit_prob(p: Plts) -> Lts:
    """Eliminate bookkeeping probabilistic states (single target, weight 1).
    Raises HasProbabilisticTransitions when real probabilistic branching
    remains."""
    hop: dict[int, int] = {}
    for s in range(p.n_states):
        if p.sorts[s] == PROB:
            items = list(p.probs[s].items())
            if len(items) != 1 or items[0][1] != 1:
                raise HasProbabilisticTransitions(
                    f"state {s} has a non-trivial probability distribution")
            hop[s] = items[0][0]
    renum: dict[int, int] = {}
    plts_states: list[int] = []
    for s in range(p.n_states):
        if p.sorts[s] == NONDET:
            renum[s] = len(plts_states)
            plts_states.append(s)
    actions = [[(a, renum[hop[t]]) for a, t in p.actions[s]] for s in plts_states]
    roots = tuple(renum[r if p.sorts[r] == NONDET else hop[r]] for r in p.roots)
    return Lts(len(plts_states), actions, roots, plts_states)


def _tau_closure_masks(lts: Lts) -> list[int]:
    n = lts.n_states
    closure = [1 << s for s in range(n)]
    for s in range(n):
        for a, t in lts.actions[s]:
            if a == TAU:
                closure[s] |= 1 << t
    changed = True
    while changed:
        changed = False
        for s in range(n):
            mask, acc, rest = closure[s], closure[s], closure[s]
            while rest:
                low = rest & -rest
                acc |= closure[low.bit_length() - 1]
                rest ^= low
            if acc != mask:
                closure[s] = acc
                changed = True
    return closure


def bisim_nondet(lts, kind: str) -> Partition:
    """Classical weak or branching bisimilarity over a plain LTS (a Plts is
    accepted and collapsed first)."""
    if isinstance(lts, Plts):
        lts = collapse_unit_prob(lts)
    if kind not in (WEAK_ND, BRANCH_ND):
        raise ValueError(f"not a nondeterministic bisimilarity kind: {kind}")
    n = lts.n_states
    closure = _tau_closure_masks(lts)

    if kind == WEAK_ND:
        labels = sorted({a for trans in lts.actions for a, _ in trans if a != TAU})
        weak_move: list[dict[str, int]] = [{} for _ in range(n)]
        for s in range(n):
            weak_move[s][TAU] = closure[s]
            for a in labels:
                mask = 0
                rest = closure[s]
                while rest:
                    low = rest & -rest
                    u = low.bit_length() - 1
                    rest ^= low
                    for lbl, v in lts.actions[u]:
                        if lbl == a:
                            mask |= closure[v]
                weak_move[s][a] = mask

        def sigs(block, blocks, block_of, ctx):
            out = []
            for s in block:
                sig = set()
                for a, mask in weak_move[s].items():
                    rest = mask
                    while rest:
                        low = rest & -rest
                        sig.add((a, block_of[low.bit_length() - 1]))
                        rest ^= low
                out.append(frozenset(sig))
            return out

        return _refine(n, [list(range(n))], sigs)

    edges_by_label: dict[str, list[tuple[int, int]]] = {}
    for s in range(n):
        for a, t in lts.actions[s]:
            edges_by_label.setdefault(a, []).append((s, t))

    def sigs(block, blocks, block_of, ctx):
        bi = block_of[block[0]]
        offers = sorted({(a, block_of[t]) for s in block for a, t in lts.actions[s]
                         if not (a == TAU and block_of[t] == bi)})
        block_mask = 0
        for s in block:
            block_mask |= 1 << s
        sat_masks = []
        for a, ci in offers:
            cmask = 0
            for t in blocks[ci]:
                cmask |= 1 << t
            pre_a = 0
            for u, v in edges_by_label.get(a, ()):
                if cmask >> v & 1:
                    pre_a |= 1 << u
            sat_masks.append(block_mask & pre_a)
        return [tuple(bool(closure[s] & m) for m in sat_masks) for s in block]

    return _refine(n, [list(range(n))], sigs)


# ---------------------------------------------------------------------------
# Convenience front ends

_ENGINES = {
    STRONG_P: strong_prob_bisim,
    STRONG_PM: strong_mix_bisim,
    WEAK_PW: weak_prob_bisim,
    BRANCH_PB: branching_prob_bisim,
}


def decide(p: Plts, kind: str) -> Partition:
    """Partition of a PLTS under one of the probabilistic equivalences."""
    try:
        return _ENGINES[kind](p)
    except KeyError:
        raise ValueError(f"unknown equivalence kind {kind!r}") from None


def equivalent_terms(spec: Spec, left: ProcessTerm, right: ProcessTerm,
                     kind: str, max_states: int = 100_000) -> bool:
    """Build one shared graph for both terms and compare their root blocks."""
    if kind in (WEAK_ND, BRANCH_ND):
        t1, spec1 = nd_translate(left, spec)
        t2, spec2 = nd_translate(right, spec1)
        lts = collapse_unit_prob(build_plts_multi(spec2, [t1, t2], max_states))
        part = bisim_nondet(lts, kind)
        return part.same_block(lts.roots[0], lts.roots[1])
    p = build_plts_multi(spec, [left, right], max_states)
    part = decide(p, kind)
    return part.same_block(p.roots[0], p.roots[1])
