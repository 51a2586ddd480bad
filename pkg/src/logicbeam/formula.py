"""Constraint formulas over token phrases.

A formula is a tree of phrase literals joined by ``&``, ``|`` and ``!``.
Formulas are parsed from a small DSL, converted to conjunctive normal form,
and evaluated against token sequences by plain substring containment.

DSL grammar::

    formula := or
    or      := and ("|" and)*
    and     := unary ("&" unary)*
    unary   := "!" unary | "(" formula ")" | phrase
    phrase  := '"' word (space word)* '"'
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

Phrase = tuple  # tuple[int, ...], non-empty

DEFAULT_MAX_CLAUSES = 4096


class FormulaError(ValueError):
    """Base class for constraint-formula errors."""


class FormulaSyntaxError(FormulaError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


class UnknownWordError(FormulaError):
    def __init__(self, word: str):
        super().__init__(f"unknown word {word!r} in closed vocabulary")
        self.word = word


class CnfSizeError(FormulaError):
    pass


class ConstraintOverlapError(FormulaError):
    pass


@dataclass(frozen=True)
class Literal:
    positive: bool
    phrase: Phrase

    def negate(self) -> "Literal":
        return Literal(not self.positive, self.phrase)


@dataclass(frozen=True)
class Leaf:
    literal: Literal


@dataclass(frozen=True)
class And:
    children: tuple

    def __post_init__(self):
        if not self.children:
            raise FormulaError("'and' node needs at least one child")


@dataclass(frozen=True)
class Or:
    children: tuple

    def __post_init__(self):
        if not self.children:
            raise FormulaError("'or' node needs at least one child")


@dataclass(frozen=True)
class Not:
    child: object


Formula = Union[Leaf, And, Or, Not]


def leaf(phrase: Iterable[int], positive: bool = True) -> Leaf:
    phrase = tuple(phrase)
    if not phrase:
        raise FormulaError("phrase must contain at least one token")
    return Leaf(Literal(positive, phrase))


@dataclass(frozen=True)
class Cnf:
    """Conjunction of clauses; each clause is a tuple of literals.

    An empty ``Cnf`` places no constraint on the output.
    """

    clauses: tuple = ()

    def __post_init__(self):
        cleaned = []
        for clause in self.clauses:
            clause = tuple(dict.fromkeys(clause))
            if not clause:
                raise FormulaError("empty clause")
            for lit in clause:
                if not isinstance(lit, Literal) or not lit.phrase:
                    raise FormulaError(f"invalid literal {lit!r}")
            cleaned.append(clause)
        object.__setattr__(self, "clauses", tuple(cleaned))

    def __len__(self) -> int:
        return len(self.clauses)

    def __iter__(self):
        return iter(self.clauses)

    def __getitem__(self, i):
        return self.clauses[i]

    def is_positive_conjunction(self) -> bool:
        return all(len(c) == 1 and c[0].positive for c in self.clauses)


# --------------------------------------------------------------------- parsing


class _Parser:
    def __init__(self, text: str, vocab, open_vocab: bool):
        self.text = text
        self.vocab = vocab
        self.open_vocab = open_vocab
        self.pos = 0

    def error(self, message: str, pos: int | None = None):
        pos = self.pos if pos is None else pos
        raise FormulaSyntaxError(message, len(self.text[:pos].encode("utf-8")))

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def parse(self):
        node = self.parse_or()
        if self.peek():
            self.error(f"unexpected {self.peek()!r}")
        return node

    def parse_or(self):
        children = [self.parse_and()]
        while self.peek() == "|":
            self.pos += 1
            children.append(self.parse_and())
        return children[0] if len(children) == 1 else Or(tuple(children))

    def parse_and(self):
        children = [self.parse_unary()]
        while self.peek() == "&":
            self.pos += 1
            children.append(self.parse_unary())
        return children[0] if len(children) == 1 else And(tuple(children))

    def parse_unary(self):
        c = self.peek()
        if c == "!":
            self.pos += 1
            return Not(self.parse_unary())
        if c == "(":
            self.pos += 1
            node = self.parse_or()
            if self.peek() != ")":
                self.error("expected ')'")
            self.pos += 1
            return node
        if c == '"':
            return self.parse_phrase()
        if not c:
            self.error("unexpected end of input")
        self.error(f"unexpected {c!r}")

    def parse_phrase(self):
        start = self.pos
        end = self.text.find('"', start + 1)
        if end < 0:
            self.error("unterminated phrase", start)
        words = self.text[start + 1:end].split()
        if not words:
            self.error("empty phrase", start)
        self.pos = end + 1
        ids = []
        for w in words:
            if w in self.vocab:
                ids.append(self.vocab[w])
            elif self.open_vocab:
                ids.append(self.vocab.add(w))
            else:
                raise UnknownWordError(w)
        return leaf(ids)


def parse_formula(text: str, vocab, open_vocab: bool = False) -> Formula:
    """Parse a DSL string into a formula tree.

    Words are looked up in ``vocab``; with ``open_vocab`` unseen words are
    added to it instead of raising :class:`UnknownWordError`.
    """
    return _Parser(text, vocab, open_vocab).parse()


def _phrase_text(phrase: Phrase, vocab) -> str:
    return '"' + " ".join(vocab.word(t) for t in phrase) + '"'


def format_formula(f: Formula, vocab) -> str:
    """Render a formula back to the DSL; inverse of :func:`parse_formula`."""
    if isinstance(f, Leaf):
        text = _phrase_text(f.literal.phrase, vocab)
        return text if f.literal.positive else "!" + text
    if isinstance(f, Not):
        inner = format_formula(f.child, vocab)
        if isinstance(f.child, (And, Or)):
            inner = f"({inner})"
        return "!" + inner
    sep = " & " if isinstance(f, And) else " | "
    parts = []
    for child in f.children:
        text = format_formula(child, vocab)
        if isinstance(child, (And, Or)):
            text = f"({text})"
        parts.append(text)
    return sep.join(parts)


def format_cnf(cnf: Cnf, vocab) -> str:
    parts = []
    for clause in cnf:
        lits = [("" if l.positive else "!") + _phrase_text(l.phrase, vocab)
                for l in clause]
        body = " | ".join(lits)
        parts.append(f"({body})" if len(lits) > 1 else body)
    return " & ".join(parts)


# ------------------------------------------------------------------------ CNF


def _nnf(f: Formula, negate: bool = False) -> Formula:
    if isinstance(f, Leaf):
        return Leaf(f.literal.negate()) if negate else f
    if isinstance(f, Not):
        return _nnf(f.child, not negate)
    children = tuple(_nnf(c, negate) for c in f.children)
    if isinstance(f, And):
        return Or(children) if negate else And(children)
    return And(children) if negate else Or(children)


def _clauses(f: Formula, limit: int) -> list:
    if isinstance(f, Leaf):
        return [(f.literal,)]
    parts = [_clauses(c, limit) for c in f.children]
    if isinstance(f, And):
        out = [c for p in parts for c in p]
    else:
        size = 1
        for p in parts:
            size *= len(p)
            if size > limit:
                break
        if size > limit:
            raise CnfSizeError(f"CNF would need more than {limit} clauses")
        out = [tuple(itertools.chain.from_iterable(combo))
               for combo in itertools.product(*parts)]
    if len(out) > limit:
        raise CnfSizeError(f"CNF would need more than {limit} clauses")
    return out


def to_cnf(f: Formula, max_clauses: int = DEFAULT_MAX_CLAUSES) -> Cnf:
    """Convert by De Morgan then distribution of OR over AND.

    The result is logically equivalent to ``f`` (not merely equisatisfiable).
    Duplicate literals inside a clause are dropped; tautologies are kept.
    """
    return Cnf(tuple(_clauses(_nnf(f), max_clauses)))


# ----------------------------------------------------------------- evaluation


def contains(seq: Sequence[int], phrase: Phrase) -> bool:
    """True iff ``phrase`` occurs contiguously in ``seq``."""
    m = len(phrase)
    seq = tuple(seq)
    return any(seq[i:i + m] == phrase for i in range(len(seq) - m + 1))


def _lit_value(lit: Literal, y) -> bool:
    return contains(y, lit.phrase) == lit.positive


def clause_values(cnf: Cnf, y: Sequence[int]) -> list:
    y = tuple(y)
    return [any(_lit_value(l, y) for l in clause) for clause in cnf]


def evaluate(f, y: Sequence[int]) -> bool:
    y = tuple(y)
    if isinstance(f, Cnf):
        return all(clause_values(f, y))
    if isinstance(f, Leaf):
        return _lit_value(f.literal, y)
    if isinstance(f, Not):
        return not evaluate(f.child, y)
    if isinstance(f, And):
        return all(evaluate(c, y) for c in f.children)
    if isinstance(f, Or):
        return any(evaluate(c, y) for c in f.children)
    raise TypeError(f"not a formula: {f!r}")


# ------------------------------------------------------------ task builders


def _variants(s) -> list:
    if isinstance(s, (set, frozenset)):
        s = sorted(s)
    out = list(dict.fromkeys(tuple(p) for p in s))
    if not out:
        raise FormulaError("variant set must be non-empty")
    if any(not p for p in out):
        raise FormulaError("phrase must contain at least one token")
    return out


def build_cover_all(variant_sets: Sequence) -> Cnf:
    """One positive clause per concept: any inflection of it must appear."""
    return Cnf(tuple(tuple(Literal(True, p) for p in _variants(s))
                     for s in variant_sets))


def build_include_exclude(include: Sequence, exclude: Iterable) -> Cnf:
    """Require every ``include`` concept and forbid every ``exclude`` phrase."""
    include = [_variants(s) for s in include]
    exclude = _variants(exclude) if exclude else []
    allowed = {p for s in include for p in s}
    overlap = allowed.intersection(exclude)
    if overlap:
        raise ConstraintOverlapError(
            f"phrases both required and forbidden: {sorted(overlap)}")
    clauses = [tuple(Literal(True, p) for p in s) for s in include]
    clauses += [(Literal(False, p),) for p in exclude]
    return Cnf(tuple(clauses))
