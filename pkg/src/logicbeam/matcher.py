"""Incremental clause tracking for partial hypotheses.

Each distinct constraint phrase gets a KMP automaton; a hypothesis carries
one matched-prefix pointer per phrase plus a status for every clause. The
state is immutable so beam candidates can share it freely.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .formula import Cnf, FormulaError, contains


def prefix_function(pattern) -> list:
    """``failure[i]`` = length of the longest proper prefix of
    ``pattern[:i+1]`` that is also its suffix."""
    failure = [0] * len(pattern)
    j = 0
    for i in range(1, len(pattern)):
        while j > 0 and pattern[i] != pattern[j]:
            j = failure[j - 1]
        if pattern[i] == pattern[j]:
            j += 1
        failure[i] = j
    return failure


@dataclass(frozen=True)
class LiteralAutomaton:
    pattern: tuple
    failure: tuple

    @classmethod
    def build(cls, pattern) -> "LiteralAutomaton":
        pattern = tuple(pattern)
        return cls(pattern, tuple(prefix_function(pattern)))

    def step(self, pointer: int, token: int) -> int:
        """Next matched-prefix length; may equal ``len(pattern)`` (a full match)."""
        p = self.pattern
        while pointer > 0 and p[pointer] != token:
            pointer = self.failure[pointer - 1]
        return pointer + 1 if p[pointer] == token else 0


@dataclass(frozen=True)
class CompiledConstraints:
    """A CNF prepared for tracking.

    ``clauses[j]`` lists ``(automaton index, positive)`` pairs; ``uses[a]``
    lists the ``(clause index, positive)`` references of automaton ``a``.
    """

    cnf: Cnf
    automata: tuple
    clauses: tuple
    uses: tuple
    vocab_size: int | None = None

    @property
    def num_clauses(self) -> int:
        return len(self.clauses)

    @property
    def alphabet(self) -> frozenset:
        return frozenset(t for a in self.automata for t in a.pattern)


def compile_constraints(cnf: Cnf, vocab=None) -> CompiledConstraints:
    """One automaton per distinct phrase, numbered in clause/literal order."""
    vocab_size = len(vocab) if vocab is not None else None
    index = {}
    automata = []
    clauses = []
    for clause in cnf:
        refs = []
        for lit in clause:
            if vocab_size is not None and any(not 0 <= t < vocab_size for t in lit.phrase):
                raise FormulaError(f"phrase {lit.phrase} has ids outside the vocabulary")
            if lit.phrase not in index:
                index[lit.phrase] = len(automata)
                automata.append(LiteralAutomaton.build(lit.phrase))
            refs.append((index[lit.phrase], lit.positive))
        clauses.append(tuple(refs))
    uses = [[] for _ in automata]
    for j, refs in enumerate(clauses):
        for a, positive in refs:
            uses[a].append((j, positive))
    return CompiledConstraints(cnf, tuple(automata), tuple(clauses),
                               tuple(tuple(u) for u in uses), vocab_size)


class ClauseStatus(enum.IntEnum):
    IRREVERSIBLY_SATISFIED = 0
    REVERSIBLY_SATISFIED = 1
    UNSATISFIED = 2
    UNSATISFIABLE = 3

    @property
    def satisfied(self) -> bool:
        return self <= ClauseStatus.REVERSIBLY_SATISFIED


_IRR = ClauseStatus.IRREVERSIBLY_SATISFIED
_REV = ClauseStatus.REVERSIBLY_SATISFIED
_UNS = ClauseStatus.UNSATISFIED
_DEAD = ClauseStatus.UNSATISFIABLE


@dataclass(frozen=True)
class ConstraintState:
    """Per-hypothesis tracking snapshot.

    ``pointers[a]`` is the matched-prefix length of automaton ``a``, or
    ``None`` once every clause using it is irreversibly satisfied.
    ``fired`` is a bitmask of automata whose phrase has occurred.
    """

    pointers: tuple
    statuses: tuple
    fired: int
    satisfied_set: int

    @property
    def satisfied_count(self) -> int:
        return bin(self.satisfied_set).count("1")

    @property
    def tracked(self) -> dict:
        return {a: p for a, p in enumerate(self.pointers) if p is not None}


def _status(refs, fired: int) -> ClauseStatus:
    alive_negative = has_positive = False
    for a, positive in refs:
        hit = fired >> a & 1
        if positive:
            if hit:
                return _IRR
            has_positive = True
        elif not hit:
            alive_negative = True
    if alive_negative:
        return _REV
    return _UNS if has_positive else _DEAD


def _make_state(cc: CompiledConstraints, pointers, statuses, fired) -> ConstraintState:
    pointers = list(pointers)
    for a, uses in enumerate(cc.uses):
        if pointers[a] is not None and all(statuses[j] is _IRR for j, _ in uses):
            pointers[a] = None
    mask = 0
    for j, s in enumerate(statuses):
        if s <= _REV:
            mask |= 1 << j
    return ConstraintState(tuple(pointers), tuple(statuses), fired, mask)


def init_state(cc: CompiledConstraints) -> ConstraintState:
    statuses = []
    for refs in cc.clauses:
        polarities = {}
        for a, positive in refs:
            polarities.setdefault(a, set()).add(positive)
        if any(len(p) == 2 for p in polarities.values()):
            statuses.append(_IRR)  # contains both D(a) and not D(a)
        else:
            statuses.append(_status(refs, 0))
    return _make_state(cc, [0] * len(cc.automata), statuses, 0)


def advance(state: ConstraintState, cc: CompiledConstraints, token: int) -> ConstraintState:
    """Return the state after appending ``token``; ``state`` is untouched."""
    pointers = list(state.pointers)
    fired = state.fired
    newly = 0
    for a, ptr in enumerate(pointers):
        if ptr is None:
            continue
        auto = cc.automata[a]
        ptr = auto.step(ptr, token)
        if ptr == len(auto.pattern):
            if not fired >> a & 1:
                newly |= 1 << a
            ptr = auto.failure[-1]
        pointers[a] = ptr
    if not newly:
        if pointers == list(state.pointers):
            return state
        return ConstraintState(tuple(pointers), state.statuses, fired, state.satisfied_set)
    fired |= newly
    statuses = list(state.statuses)
    touched = {j for a in range(len(cc.automata)) if newly >> a & 1 for j, _ in cc.uses[a]}
    for j in touched:
        if statuses[j] is _IRR or statuses[j] is _DEAD:
            continue
        statuses[j] = _status(cc.clauses[j], fired)
    return _make_state(cc, pointers, statuses, fired)


def advance_many(state: ConstraintState, cc: CompiledConstraints, tokens) -> ConstraintState:
    for t in tokens:
        state = advance(state, cc, t)
    return state


def reset_state(state: ConstraintState) -> ConstraintState:
    """State after any token that appears in no constraint phrase."""
    if all(p is None or p == 0 for p in state.pointers):
        return state
    pointers = tuple(None if p is None else 0 for p in state.pointers)
    return ConstraintState(pointers, state.statuses, state.fired, state.satisfied_set)


def is_unsatisfiable(state: ConstraintState) -> bool:
    return _DEAD in state.statuses


def finalize(state: ConstraintState):
    """Final per-clause truth and number of satisfied clauses."""
    truth = tuple(s.satisfied for s in state.statuses)
    return truth, sum(truth)


def naive_status(cnf: Cnf, y) -> list:
    """Clause truth recomputed from scratch by substring scans."""
    y = tuple(y)
    return [any(contains(y, l.phrase) == l.positive for l in clause) for clause in cnf]
