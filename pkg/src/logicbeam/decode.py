"""Decoders: NeuroLogic beam search, unconstrained baselines, GBS, CBS, and
an exhaustive oracle for tiny instances.

All searches share the same conventions:

* a hypothesis score is the cumulative natural-log probability;
* at every step each live hypothesis is scored once (one batched scorer
  call per step) and extended by every vocabulary token;
* EOS extensions are finished immediately and set aside; zero-probability
  extensions are dropped;
* ties are broken by higher score, then lower token id, then lower parent
  index in the previous beam;
* at ``max_len`` the surviving beam is finished as is;
* the final answer is the finished hypothesis with the most satisfied
  clauses, then the best score, then the lexicographically smallest tokens.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import matcher as M
from .formula import Cnf, clause_values
from .matcher import CompiledConstraints, ConstraintState

INF = float("inf")


class DecodeError(RuntimeError):
    pass


class InfeasibleError(DecodeError):
    """Every continuation was discarded before any hypothesis finished."""


class UnsupportedConstraintError(DecodeError):
    pass


class VocabMismatchError(DecodeError):
    pass


class InstanceTooLargeError(DecodeError):
    pass


@dataclass
class DecoderConfig:
    """Search parameters.

    ``alpha`` is a rank cutoff on the pooled candidate list (``None``: no
    cutoff); ``beta`` is how many of the largest distinct satisfied-clause
    counts survive (``None``: all of them, i.e. ``L + 1``).
    """

    k: int = 5
    alpha: int | None = None
    beta: int | None = None
    max_len: int = 20
    length_normalize: bool = False
    seed: int = 0
    match_in_prompt: bool = False
    keep_finished: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.beta is not None and self.beta < 1:
            raise ValueError(f"beta must be >= 1, got {self.beta}")
        if self.alpha is not None and self.alpha < 1:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")
        if self.max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {self.max_len}")


@dataclass
class Hypothesis:
    tokens: tuple
    score: float
    state: ConstraintState | None = None
    finished: bool = False
    parent: int = -1
    step: int = 0


@dataclass
class DecodeStats:
    calls: int = 0
    rows: int = 0
    discarded: int = 0
    rows_per_step: list = field(default_factory=list)
    wall_ms: float = field(default=0.0, compare=False)


@dataclass
class DecodeResult:
    tokens: tuple
    score: float
    clause_truth: tuple
    satisfied_count: int
    num_clauses: int
    stats: DecodeStats
    finished: list = field(default_factory=list, repr=False)

    @property
    def all_satisfied(self) -> bool:
        return self.satisfied_count == self.num_clauses

    def to_dict(self, vocab=None, include_time: bool = False) -> dict:
        stats = asdict(self.stats)
        if not include_time:
            del stats["wall_ms"]
        out = {
            "tokens": list(self.tokens),
            "score": self.score,
            "clause_truth": list(self.clause_truth),
            "satisfied_count": self.satisfied_count,
            "num_clauses": self.num_clauses,
            "all_satisfied": self.all_satisfied,
            "stats": stats,
        }
        if vocab is not None:
            out = {"text": vocab.decode(self.tokens), **out}
        return out


# -------------------------------------------------------------------- helpers


def _score_beam(scorer, context, beam, stats) -> np.ndarray:
    logp = scorer.score([list(context) + list(h.tokens) for h in beam])
    stats.calls += 1
    stats.rows += len(beam)
    stats.rows_per_step.append(len(beam))
    return np.array([h.score for h in beam])[:, None] + logp


def _ranked(cand: np.ndarray, valid: np.ndarray):
    """Valid candidates as (parent, token, score) arrays in tie-break order."""
    parents, tokens = np.nonzero(valid)
    scores = cand[parents, tokens]
    order = np.lexsort((parents, tokens, -scores))
    return parents[order], tokens[order], scores[order]


def _rank_within(groups: np.ndarray) -> np.ndarray:
    """Position of each element among earlier elements of the same group."""
    if len(groups) == 0:
        return groups
    _, inv = np.unique(groups, return_inverse=True)
    by_group = np.argsort(inv, kind="stable")
    g = inv[by_group]
    starts = np.r_[0, np.flatnonzero(np.diff(g)) + 1]
    sizes = np.diff(np.r_[starts, len(g)])
    within = np.empty(len(g), dtype=np.int64)
    within[by_group] = np.arange(len(g)) - np.repeat(starts, sizes)
    return within


def _selection_key(h: Hypothesis, length_normalize: bool):
    score = h.score / max(len(h.tokens), 1) if length_normalize else h.score
    count = h.state.satisfied_count if h.state is not None else 0
    return (-count, -score, h.tokens)


def _pick(finished, cfg: DecoderConfig) -> Hypothesis:
    return min(finished, key=lambda h: _selection_key(h, cfg.length_normalize))


def _result(best: Hypothesis, finished, cfg, stats, num_clauses, started) -> DecodeResult:
    if best.state is not None:
        truth, count = M.finalize(best.state)
    else:
        truth, count = (), 0
    stats.wall_ms = (time.perf_counter() - started) * 1000.0
    return DecodeResult(tuple(best.tokens), float(best.score), truth, count,
                        num_clauses, stats, finished if cfg.keep_finished else [])


def _check_vocab(scorer, cc: CompiledConstraints):
    if cc.vocab_size is not None and cc.vocab_size != scorer.vocab_size:
        raise VocabMismatchError(
            f"constraints compiled for |V|={cc.vocab_size}, scorer has {scorer.vocab_size}")
    for a in cc.automata:
        if any(not 0 <= t < scorer.vocab_size for t in a.pattern):
            raise VocabMismatchError(f"phrase {a.pattern} outside scorer vocabulary")


def _initial_state(cc, context, cfg) -> ConstraintState:
    state = M.init_state(cc)
    if cfg.match_in_prompt:
        state = M.advance_many(state, cc, context)
    return state


class _Successors:
    """Successor states of one hypothesis for every token.

    Tokens outside every constraint phrase all lead to the same state, so
    only the constraint alphabet is advanced explicitly.
    """

    __slots__ = ("default", "special")

    def __init__(self, state, cc, alphabet):
        self.default = M.reset_state(state)
        self.special = {t: M.advance(state, cc, t) for t in alphabet}

    def __getitem__(self, token):
        return self.special.get(token, self.default)


def _expand_states(beam, cc, alphabet, vocab_size, key):
    """Successors per hypothesis plus (B, V) arrays of key, count, dead."""
    B = len(beam)
    keys = np.empty((B, vocab_size), dtype=np.int64)
    counts = np.empty((B, vocab_size), dtype=np.int64)
    dead = np.zeros((B, vocab_size), dtype=bool)
    succ = []
    for i, h in enumerate(beam):
        s = _Successors(h.state, cc, alphabet)
        succ.append(s)
        keys[i, :] = key(s.default)
        counts[i, :] = s.default.satisfied_count
        dead[i, :] = M.is_unsatisfiable(s.default)
        for t, st in s.special.items():
            keys[i, t] = key(st)
            counts[i, t] = st.satisfied_count
            dead[i, t] = M.is_unsatisfiable(st)
    return succ, keys, counts, dead


def _collect_eos(beam, cand, eos, succ, step, finished, dead=None):
    for i, h in enumerate(beam):
        s = cand[i, eos]
        if np.isfinite(s) and (dead is None or not dead[i, eos]):
            state = succ[i][eos] if succ is not None else None
            finished.append(Hypothesis(h.tokens + (eos,), float(s), state, True, i, step))


# -------------------------------------------------------------- NeuroLogic


def neurologic_decode(scorer, context, cc: CompiledConstraints,
                      cfg: DecoderConfig) -> DecodeResult:
    """Constrained beam search over a CNF of phrase literals.

    Each step expands the beam, drops candidates with an unsatisfiable
    clause, keeps those inside both the ``alpha`` score-rank cutoff and the
    ``beta`` best satisfied-count tiers, groups them by the exact set of
    satisfied clauses, and fills the next beam round-robin: the best of
    every group first (in score order), then every group's second best, and
    so on until ``k`` slots are taken.
    """
    started = time.perf_counter()
    _check_vocab(scorer, cc)
    context = list(context)
    L = cc.num_clauses
    beta = cfg.beta if cfg.beta is not None else L + 1
    eos, V = scorer.eos_id, scorer.vocab_size
    alphabet = sorted(cc.alphabet)
    stats = DecodeStats()

    bin_ids: dict = {}

    def bin_of(state):
        return bin_ids.setdefault(state.satisfied_set, len(bin_ids))

    beam = [Hypothesis((), 0.0, _initial_state(cc, context, cfg))]
    finished = []
    for step in range(1, cfg.max_len + 1):
        cand = _score_beam(scorer, context, beam, stats)
        succ, bins, counts, dead = _expand_states(beam, cc, alphabet, V, bin_of)
        _collect_eos(beam, cand, eos, succ, step, finished, dead)

        valid = np.isfinite(cand)
        valid[:, eos] = False
        stats.discarded += int(np.count_nonzero(valid & dead))
        valid &= ~dead
        parents, tokens, scores = _ranked(cand, valid)
        if len(parents) == 0:
            beam = []
            break

        keep = np.ones(len(parents), dtype=bool)
        if cfg.alpha is not None:
            keep[cfg.alpha:] = False
        cand_counts = counts[parents, tokens]
        tiers = np.unique(cand_counts)[::-1][:beta]
        keep &= np.isin(cand_counts, tiers)
        parents, tokens, scores = parents[keep], tokens[keep], scores[keep]

        rounds = _rank_within(bins[parents, tokens])
        chosen = np.lexsort((np.arange(len(parents)), rounds))[:cfg.k]
        beam = [Hypothesis(beam[p].tokens + (int(t),), float(s), succ[p][int(t)],
                           False, int(p), step)
                for p, t, s in zip(parents[chosen], tokens[chosen], scores[chosen])]
        if step == cfg.max_len:
            for h in beam:
                h.finished = True
            finished.extend(beam)
            beam = []
        if not beam:
            break

    if not finished:
        raise InfeasibleError("every continuation violates a constraint")
    return _result(_pick(finished, cfg), finished, cfg, stats, L, started)


# --------------------------------------------------------------- baselines


def beam_search(scorer, context, cfg: DecoderConfig) -> DecodeResult:
    """Plain beam search: keep the ``k`` best non-EOS extensions each step."""
    started = time.perf_counter()
    context = list(context)
    eos = scorer.eos_id
    stats = DecodeStats()
    beam = [Hypothesis((), 0.0)]
    finished = []
    for step in range(1, cfg.max_len + 1):
        cand = _score_beam(scorer, context, beam, stats)
        _collect_eos(beam, cand, eos, None, step, finished)
        valid = np.isfinite(cand)
        valid[:, eos] = False
        parents, tokens, scores = _ranked(cand, valid)
        beam = [Hypothesis(beam[p].tokens + (int(t),), float(s), None, False, int(p), step)
                for p, t, s in zip(parents[:cfg.k], tokens[:cfg.k], scores[:cfg.k])]
        if step == cfg.max_len:
            for h in beam:
                h.finished = True
            finished.extend(beam)
            beam = []
        if not beam:
            break
    if not finished:
        raise InfeasibleError("no hypothesis with non-zero probability")
    return _result(_pick(finished, cfg), finished, cfg, stats, 0, started)


def greedy_decode(scorer, context, cfg: DecoderConfig) -> DecodeResult:
    """Take the most probable token (lowest id on ties) until EOS or max_len."""
    started = time.perf_counter()
    context = list(context)
    stats = DecodeStats()
    h = Hypothesis((), 0.0)
    for step in range(1, cfg.max_len + 1):
        cand = _score_beam(scorer, context, [h], stats)[0]
        t = int(np.argmax(cand))
        h = Hypothesis(h.tokens + (t,), float(cand[t]), None, False, 0, step)
        if t == scorer.eos_id:
            break
    h.finished = True
    return _result(h, [h], cfg, stats, 0, started)


def sample_decode(scorer, context, cfg: DecoderConfig, top_k: int | None = None,
                  top_p: float | None = None) -> DecodeResult:
    """Ancestral sampling from the top-k tokens or the top-p nucleus.

    The truncated distribution is renormalised at each step; the RNG is
    seeded from ``cfg.seed``.
    """
    if (top_k is None) == (top_p is None):
        raise ValueError("set exactly one of top_k and top_p")
    if top_k is not None and not 1 <= top_k <= scorer.vocab_size:
        raise ValueError(f"top_k must be in [1, {scorer.vocab_size}], got {top_k}")
    if top_p is not None and not 0 < top_p <= 1:
        raise ValueError(f"top_p must be in (0, 1], got {top_p}")
    started = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    context = list(context)
    stats = DecodeStats()
    h = Hypothesis((), 0.0)
    for step in range(1, cfg.max_len + 1):
        cand = _score_beam(scorer, context, [h], stats)[0]
        row = cand - h.score
        order = np.argsort(-row, kind="stable")
        probs = np.exp(row[order])
        if top_k is not None:
            n = top_k
        else:
            cum = np.cumsum(probs)
            n = int(np.searchsorted(cum, top_p * cum[-1] - 1e-12)) + 1
        support = order[:n]
        p = probs[:n] / probs[:n].sum()
        t = int(support[0]) if n == 1 else int(rng.choice(support, p=p))
        h = Hypothesis(h.tokens + (t,), float(cand[t]), None, False, 0, step)
        if t == scorer.eos_id:
            break
    h.finished = True
    return _result(h, [h], cfg, stats, 0, started)


# ----------------------------------------------------- grid / FSM baselines


def _banked_search(scorer, context, cc, cfg, key) -> DecodeResult:
    started = time.perf_counter()
    _check_vocab(scorer, cc)
    if not cc.cnf.is_positive_conjunction():
        raise UnsupportedConstraintError(
            "only conjunctions of positive phrases are supported by this decoder")
    context = list(context)
    eos, V = scorer.eos_id, scorer.vocab_size
    alphabet = sorted(cc.alphabet)
    stats = DecodeStats()
    live = [Hypothesis((), 0.0, _initial_state(cc, context, cfg))]
    finished = []
    for step in range(1, cfg.max_len + 1):
        cand = _score_beam(scorer, context, live, stats)
        succ, keys, _, _ = _expand_states(live, cc, alphabet, V, key)
        _collect_eos(live, cand, eos, succ, step, finished)
        valid = np.isfinite(cand)
        valid[:, eos] = False
        parents, tokens, scores = _ranked(cand, valid)
        bank = keys[parents, tokens]
        chosen = _rank_within(bank) < cfg.k
        order = np.lexsort((np.arange(len(parents)), bank))
        order = order[chosen[order]]
        live = [Hypothesis(live[p].tokens + (int(t),), float(s), succ[p][int(t)],
                           False, int(p), step)
                for p, t, s in zip(parents[order], tokens[order], scores[order])]
        if step == cfg.max_len:
            for h in live:
                h.finished = True
            finished.extend(live)
            live = []
        if not live:
            break
    if not finished:
        raise InfeasibleError("no hypothesis with non-zero probability")
    return _result(_pick(finished, cfg), finished, cfg, stats, cc.num_clauses, started)


def gbs_decode(scorer, context, cc: CompiledConstraints, cfg: DecoderConfig) -> DecodeResult:
    """Grid beam search: C+1 banks of ``k`` keyed by constraints met."""
    return _banked_search(scorer, context, cc, cfg, key=lambda s: s.satisfied_count)


MAX_CBS_CONSTRAINTS = 16


def cbs_decode(scorer, context, cc: CompiledConstraints, cfg: DecoderConfig) -> DecodeResult:
    """Constrained beam search: one beam of ``k`` per subset of met constraints."""
    if cc.num_clauses > MAX_CBS_CONSTRAINTS:
        raise UnsupportedConstraintError(
            f"CBS needs 2^C states; C={cc.num_clauses} exceeds {MAX_CBS_CONSTRAINTS}")
    return _banked_search(scorer, context, cc, cfg, key=lambda s: s.satisfied_set)


# ------------------------------------------------------------------- oracle


@dataclass
class OracleResult:
    tokens: tuple
    score: float
    max_count: int
    num_clauses: int

    @property
    def feasible(self) -> bool:
        return self.max_count == self.num_clauses


def _count_satisfied(seqs: np.ndarray, cnf: Cnf) -> np.ndarray:
    n, d = seqs.shape
    cache = {}
    total = np.zeros(n, dtype=np.int64)
    for clause in cnf:
        sat = np.zeros(n, dtype=bool)
        for lit in clause:
            p = lit.phrase
            if p not in cache:
                m = len(p)
                hit = np.zeros(n, dtype=bool)
                for i in range(d - m + 1):
                    hit |= np.all(seqs[:, i:i + m] == np.asarray(p), axis=1)
                cache[p] = hit
            sat |= cache[p] if lit.positive else ~cache[p]
        total += sat
    return total


def brute_force_oracle(scorer, context, cnf: Cnf, max_len: int,
                       max_size: int = 2 ** 22) -> OracleResult:
    """Enumerate every sequence the decoders can emit and score it exactly.

    The space is every EOS-terminated sequence of at most ``max_len``
    tokens plus every EOS-free sequence of exactly ``max_len`` tokens. The
    answer maximises the satisfied-clause count, then the score, then
    prefers the lexicographically smallest tokens.
    """
    V, eos = scorer.vocab_size, scorer.eos_id
    if V ** (max_len + 1) > max_size:
        raise InstanceTooLargeError(f"|V|^(max_len+1) = {V ** (max_len + 1)} > {max_size}")
    context = list(context)
    words = np.array([t for t in range(V) if t != eos], dtype=np.int64)
    best = None  # (count, score, tokens)

    def consider(seqs, scores):
        nonlocal best
        ok = np.isfinite(scores)
        seqs, scores = seqs[ok], scores[ok]
        if len(scores) == 0:
            return
        counts = _count_satisfied(seqs, cnf)
        c = counts.max()
        at = counts == c
        s = scores[at].max()
        ties = seqs[at & (scores == s)]
        first = ties[np.lexsort(ties.T[::-1])[0]] if ties.shape[1] else ties[0]
        entry = (int(c), float(s), tuple(int(t) for t in first))
        if best is None or (entry[0], entry[1]) > (best[0], best[1]) or \
                ((entry[0], entry[1]) == (best[0], best[1]) and entry[2] < best[2]):
            best = entry

    prefixes = np.zeros((1, 0), dtype=np.int64)
    scores = np.zeros(1)
    for _ in range(max_len):
        logp = scorer.score([context + row.tolist() for row in prefixes])
        consider(np.hstack([prefixes, np.full((len(prefixes), 1), eos)]),
                 scores + logp[:, eos])
        ext = scores[:, None] + logp[:, words]
        prefixes = np.hstack([np.repeat(prefixes, len(words), axis=0),
                              np.tile(words, len(prefixes))[:, None]])
        scores = ext.reshape(-1)
        ok = np.isfinite(scores)
        prefixes, scores = prefixes[ok], scores[ok]
    consider(prefixes, scores)
    if best is None:
        raise InfeasibleError("every sequence has zero probability")
    return OracleResult(best[2], best[1], best[0], len(cnf))


def result_truth(cnf: Cnf, tokens) -> tuple:
    return tuple(clause_values(cnf, tokens))
