"""Randomised self-checks: matcher vs. naive scans, CNF vs. formula,
NeuroLogic vs. beam search, NeuroLogic vs. the exhaustive oracle."""

from __future__ import annotations

import json
import random
import time
from dataclasses import asdict, dataclass, field

from . import matcher as M
from .decode import DecoderConfig, beam_search, brute_force_oracle, neurologic_decode
from .formula import And, Cnf, Literal, Not, Or, evaluate, leaf, to_cnf
from .scorer import random_bigram


@dataclass
class Sizes:
    vocab: int = 6
    clauses: int = 4
    phrase_len: int = 3
    stream_len: int = 20

    @classmethod
    def parse(cls, text: str) -> "Sizes":
        values = [int(v) for v in text.split(",")]
        if len(values) != 4 or min(values) < 1:
            raise ValueError("sizes must be four positive integers: vocab,clauses,phrase_len,stream_len")
        return cls(*values)


# ---------------------------------------------------------------- generators


def random_phrase(rng: random.Random, vocab: int, max_len: int) -> tuple:
    return tuple(rng.randrange(vocab) for _ in range(rng.randint(1, max_len)))


def random_cnf(rng: random.Random, vocab: int = 6, max_clauses: int = 4,
               max_phrase: int = 3, max_literals: int = 3, low: int = 0) -> Cnf:
    clauses = []
    for _ in range(rng.randint(0, max_clauses)):
        lits = []
        for _ in range(rng.randint(1, max_literals)):
            phrase = tuple(rng.randrange(low, vocab) for _ in range(rng.randint(1, max_phrase)))
            lits.append(Literal(rng.random() < 0.5, phrase))
        clauses.append(tuple(lits))
    return Cnf(tuple(clauses))


def random_formula(rng: random.Random, vocab: int = 6, max_literals: int = 8,
                   max_depth: int = 4, max_phrase: int = 2):
    budget = [rng.randint(1, max_literals)]

    def build(depth):
        if depth >= max_depth or budget[0] <= 1 or rng.random() < 0.25:
            budget[0] -= 1
            return leaf(random_phrase(rng, vocab, max_phrase), rng.random() < 0.7)
        r = rng.random()
        if r < 0.2:
            return Not(build(depth + 1))
        n = rng.randint(2, 3)
        children = []
        for _ in range(n):
            if budget[0] <= 0:
                break
            children.append(build(depth + 1))
        if len(children) == 1:
            return children[0]
        return And(tuple(children)) if r < 0.6 else Or(tuple(children))

    return build(0)


def random_stream(rng: random.Random, vocab: int, max_len: int) -> list:
    return [rng.randrange(vocab) for _ in range(rng.randint(0, max_len))]


def tiny_instance(seed: int):
    """A seeded bigram scorer over |V| <= 6 (EOS = 0) with <= 3 clauses."""
    rng = random.Random(seed)
    V = rng.randint(3, 6)
    max_len = rng.randint(2, 6)
    clauses = []
    for _ in range(rng.randint(1, 3)):
        lits = []
        for _ in range(rng.randint(1, 3)):
            phrase = tuple(rng.randint(1, V - 1) for _ in range(rng.randint(1, 2)))
            lits.append(Literal(rng.random() < 0.6, phrase))
        clauses.append(tuple(lits))
    return random_bigram(V, 0, seed), Cnf(tuple(clauses)), max_len


def reset_only_advance(state, cc, token):
    """Deliberately broken matcher: resets to the head on every mismatch.

    Used as a negative control for the verification suite.
    """
    pointers = list(state.pointers)
    fired = state.fired
    for a, ptr in enumerate(pointers):
        if ptr is None:
            continue
        pat = cc.automata[a].pattern
        ptr = ptr + 1 if pat[ptr] == token else 0
        if ptr == len(pat):
            fired |= 1 << a
            ptr = 0
        pointers[a] = ptr
    statuses = [s if s in (M.ClauseStatus.IRREVERSIBLY_SATISFIED, M.ClauseStatus.UNSATISFIABLE)
                else M._status(cc.clauses[j], fired) for j, s in enumerate(state.statuses)]
    return M._make_state(cc, pointers, statuses, fired)


# -------------------------------------------------------------------- suites


@dataclass
class SuiteResult:
    name: str
    passed: bool
    cases: int
    failures: int = 0
    seconds: float = 0.0
    details: dict = field(default_factory=dict)


def matcher_equivalence(trials: int = 1000, seed: int = 0, sizes: Sizes = Sizes(),
                        advance=M.advance) -> SuiteResult:
    started = time.perf_counter()
    rng = random.Random(seed)
    failures = 0
    for _ in range(trials):
        cnf = random_cnf(rng, sizes.vocab, sizes.clauses, sizes.phrase_len)
        stream = random_stream(rng, sizes.vocab, sizes.stream_len)
        cc = M.compile_constraints(cnf)
        state = M.init_state(cc)
        for t in stream:
            state = advance(state, cc, t)
        truth, _ = M.finalize(state)
        if list(truth) != M.naive_status(cnf, stream):
            failures += 1
    return SuiteResult("matcher_equivalence", failures == 0, trials, failures,
                       time.perf_counter() - started)


def cnf_equivalence(formulas: int = 300, sequences: int = 50, seed: int = 0,
                    vocab: int = 6, max_len: int = 12) -> SuiteResult:
    started = time.perf_counter()
    rng = random.Random(seed)
    failures = 0
    for _ in range(formulas):
        f = random_formula(rng, vocab)
        cnf = to_cnf(f)
        for _ in range(sequences):
            y = random_stream(rng, vocab, max_len)
            if evaluate(f, y) != evaluate(cnf, y):
                failures += 1
    return SuiteResult("cnf_equivalence", failures == 0, formulas * sequences, failures,
                       time.perf_counter() - started)


def _json(result) -> str:
    return json.dumps(result.to_dict(), sort_keys=True)


def reduction(instances: int = 100, seed: int = 0) -> SuiteResult:
    started = time.perf_counter()
    empty = M.compile_constraints(Cnf())
    failures = 0
    for i in range(instances):
        rng = random.Random(seed * 100003 + i)
        V = rng.randint(3, 12)
        scorer = random_bigram(V, 0, seed * 100003 + i)
        cfg = DecoderConfig(k=rng.randint(1, 8), max_len=rng.randint(1, 8))
        context = random_stream(rng, V, 3)
        a = neurologic_decode(scorer, context, empty, cfg)
        b = beam_search(scorer, context, cfg)
        if _json(a) != _json(b):
            failures += 1
    return SuiteResult("reduction", failures == 0, instances, failures,
                       time.perf_counter() - started)


def oracle_match(instances: int = 200, seed: int = 0, k: int = 25,
                 min_match: float = 0.95, min_optimal: float = 0.80) -> SuiteResult:
    started = time.perf_counter()
    matched = optimal = exceeded = 0
    for i in range(instances):
        scorer, cnf, max_len = tiny_instance(seed * 100003 + i)
        oracle = brute_force_oracle(scorer, [], cnf, max_len)
        result = neurologic_decode(scorer, [], M.compile_constraints(cnf),
                                   DecoderConfig(k=k, max_len=max_len))
        if result.satisfied_count > oracle.max_count:
            exceeded += 1
        elif result.satisfied_count == oracle.max_count:
            matched += 1
            if abs(result.score - oracle.score) <= 1e-9:
                optimal += 1
    match_rate = matched / instances if instances else 1.0
    optimal_rate = optimal / matched if matched else 1.0
    passed = exceeded == 0 and match_rate >= min_match and optimal_rate >= min_optimal
    return SuiteResult("oracle_match", passed, instances, instances - matched,
                       time.perf_counter() - started,
                       {"match_rate": match_rate, "optimal_rate": optimal_rate,
                        "exceeded": exceeded})


def run_all(trials: int = 1000, seed: int = 0, sizes: Sizes = Sizes(),
            advance=M.advance) -> dict:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    suites = [
        matcher_equivalence(trials, seed, sizes, advance),
        cnf_equivalence(max(1, trials * 3 // 10), 50, seed, sizes.vocab),
        reduction(max(1, trials // 10), seed),
        oracle_match(max(1, trials // 5), seed),
    ]
    return {
        "passed": all(s.passed for s in suites),
        "seed": seed,
        "trials": trials,
        "sizes": asdict(sizes),
        "suites": [asdict(s) for s in suites],
    }
