import itertools
import json
import math
import random

import numpy as np
import pytest

from logicbeam import matcher as M
from logicbeam.decode import (DecoderConfig, InfeasibleError, InstanceTooLargeError,
                              UnsupportedConstraintError, VocabMismatchError, beam_search,
                              brute_force_oracle, cbs_decode, gbs_decode, greedy_decode,
                              neurologic_decode, sample_decode)
from logicbeam.formula import Cnf, Literal, build_cover_all, clause_values
from logicbeam.scorer import BigramScorer, UniformScorer, random_bigram
from logicbeam.verify import random_cnf, tiny_instance

A, B, EOS = 0, 1, 2


def pos(*p):
    return Literal(True, tuple(p))


def neg(*p):
    return Literal(False, tuple(p))


def cnf_of(*clauses):
    return Cnf(tuple(tuple(c) for c in clauses))


def enumerate_space(scorer, max_len):
    """Every sequence a decoder can return, with its exact score."""
    V, eos = scorer.vocab_size, scorer.eos_id
    words = [t for t in range(V) if t != eos]
    for n in range(max_len + 1):
        for body in itertools.product(words, repeat=n):
            seq = body + (eos,) if n < max_len else body
            score = 0.0
            for i, t in enumerate(seq):
                score += float(scorer.score([list(seq[:i])])[0, t])
            yield seq, score


def as_json(result):
    return json.dumps(result.to_dict(), sort_keys=True)


# ------------------------------------------------------------- NeuroLogic


def test_uniform_single_positive_matches_enumeration():
    sc = UniformScorer(3, eos_id=EOS)
    cnf = cnf_of([pos(B)])
    space = list(enumerate_space(sc, 2))
    satisfying = [(seq, s) for seq, s in space if all(clause_values(cnf, seq))]
    best = max(s for _, s in satisfying)
    expected = min(seq for seq, s in satisfying if s == best)
    assert expected == (A, B) and best == pytest.approx(2 * math.log(1 / 3))

    r = neurologic_decode(sc, [], M.compile_constraints(cnf), DecoderConfig(k=4, max_len=2))
    assert r.tokens == expected and r.satisfied_count == 1
    assert r.score == pytest.approx(best, abs=1e-12)


def test_bigram_instance_reaches_oracle_count():
    sc = random_bigram(5, eos_id=0, seed=42)
    cnf = cnf_of([pos(3)], [neg(1)])
    oracle = brute_force_oracle(sc, [], cnf, 5)
    r = neurologic_decode(sc, [], M.compile_constraints(cnf),
                          DecoderConfig(k=25, max_len=5, beta=3))
    assert r.satisfied_count == oracle.max_count == 2


@pytest.mark.parametrize("seed", range(100))
def test_reduces_to_beam_search(seed):
    rng = random.Random(seed)
    V = rng.randint(3, 10)
    sc = random_bigram(V, 0, seed)
    cfg = DecoderConfig(k=rng.randint(1, 6), max_len=rng.randint(1, 7))
    empty = M.compile_constraints(Cnf())
    a = neurologic_decode(sc, [1], empty, DecoderConfig(k=cfg.k, max_len=cfg.max_len, beta=1))
    b = beam_search(sc, [1], cfg)
    assert as_json(a) == as_json(b)


def test_output_truth_matches_evaluate():
    for seed in range(60):
        sc, cnf, max_len = tiny_instance(seed)
        r = neurologic_decode(sc, [], M.compile_constraints(cnf), DecoderConfig(k=5, max_len=max_len))
        assert list(r.clause_truth) == clause_values(cnf, r.tokens)
        assert r.satisfied_count == sum(r.clause_truth) <= len(cnf)


def test_never_exceeds_oracle_and_usually_matches():
    matched = 0
    for seed in range(100):
        sc, cnf, max_len = tiny_instance(1000 + seed)
        oracle = brute_force_oracle(sc, [], cnf, max_len)
        r = neurologic_decode(sc, [], M.compile_constraints(cnf), DecoderConfig(k=25, max_len=max_len))
        assert r.satisfied_count <= oracle.max_count
        matched += r.satisfied_count == oracle.max_count
    assert matched >= 95


def test_call_count_independent_of_clauses():
    sc = UniformScorer(20, eos_id=1)
    calls = set()
    for L in range(1, 7):
        cnf = build_cover_all([[(3 + i,)] for i in range(L)])
        r = neurologic_decode(sc, [], M.compile_constraints(cnf), DecoderConfig(k=4, max_len=8))
        calls.add(r.stats.calls)
        assert r.stats.calls == len(r.stats.rows_per_step) <= 8
        assert max(r.stats.rows_per_step) <= 4
    assert calls == {8}


def test_mean_satisfaction_non_decreasing_in_k():
    means = []
    for k in (1, 2, 4, 8, 16):
        total = 0
        for seed in range(40):
            sc, cnf, max_len = tiny_instance(500 + seed)
            r = neurologic_decode(sc, [], M.compile_constraints(cnf), DecoderConfig(k=k, max_len=max_len))
            total += r.satisfied_count
        means.append(total / 40)
    assert means == sorted(means)


def test_deterministic():
    sc, cnf, max_len = tiny_instance(7)
    cc = M.compile_constraints(cnf)
    a = neurologic_decode(sc, [], cc, DecoderConfig(k=6, max_len=max_len))
    b = neurologic_decode(sc, [], cc, DecoderConfig(k=6, max_len=max_len))
    assert a == b


def test_infeasible_at_first_step():
    with np.errstate(divide="ignore"):
        table = np.log(np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]))
    sc = BigramScorer(table, eos_id=1)
    with pytest.raises(InfeasibleError):
        neurologic_decode(sc, [], M.compile_constraints(cnf_of([neg(0)])), DecoderConfig(max_len=3))


def test_vocab_mismatch():
    class V10:
        def __len__(self):
            return 10

    cc = M.compile_constraints(cnf_of([pos(1)]), V10())
    with pytest.raises(VocabMismatchError):
        neurologic_decode(UniformScorer(5), [], cc, DecoderConfig())


def test_discarded_candidates_counted():
    sc = UniformScorer(4, eos_id=0)
    r = neurologic_decode(sc, [], M.compile_constraints(cnf_of([neg(2)])), DecoderConfig(k=2, max_len=3))
    assert 2 not in r.tokens
    assert r.stats.discarded > 0


def test_match_in_prompt():
    sc = UniformScorer(4, eos_id=0)
    cc = M.compile_constraints(cnf_of([pos(3)]))
    r = neurologic_decode(sc, [3], cc, DecoderConfig(k=2, max_len=2, match_in_prompt=True))
    assert r.tokens == (0,) and r.satisfied_count == 1
    r = neurologic_decode(sc, [3], cc, DecoderConfig(k=2, max_len=2))
    assert 3 in r.tokens


def test_alpha_limits_pool():
    sc = random_bigram(6, 0, seed=1)
    cc = M.compile_constraints(cnf_of([pos(4)]))
    r = neurologic_decode(sc, [], cc, DecoderConfig(k=5, alpha=1, max_len=4))
    assert max(r.stats.rows_per_step) == 1


def test_beta_one_still_reaches_full_satisfaction():
    sc = UniformScorer(5, eos_id=0)
    cnf = cnf_of([pos(1)], [pos(2)])
    r = neurologic_decode(sc, [], M.compile_constraints(cnf), DecoderConfig(k=3, beta=1, max_len=3))
    assert r.satisfied_count == brute_force_oracle(sc, [], cnf, 3).max_count == 2


def test_length_normalize_changes_selection():
    sc = UniformScorer(3, eos_id=EOS)
    cc = M.compile_constraints(cnf_of([pos(B)]))
    cfg = DecoderConfig(k=4, max_len=3)
    plain = neurologic_decode(sc, [], cc, cfg)
    norm = neurologic_decode(sc, [], cc, DecoderConfig(k=4, max_len=3, length_normalize=True))
    assert len(plain.tokens) == 2 and plain.satisfied_count == norm.satisfied_count == 1
    assert norm.score <= plain.score


# --------------------------------------------------------------- baselines


def test_beam_uniform_prefers_immediate_eos():
    r = beam_search(UniformScorer(5, eos_id=3), [], DecoderConfig(k=3, max_len=4))
    assert r.tokens == (3,)


def test_exhaustive_beam_matches_enumeration():
    sc = random_bigram(4, 0, seed=9)
    max_len = 4
    space = list(enumerate_space(sc, max_len))
    best = max(s for _, s in space)
    expected = min(seq for seq, s in space if s == best)
    r = beam_search(sc, [], DecoderConfig(k=4 ** max_len, max_len=max_len))
    assert r.tokens == expected and r.score == pytest.approx(best, abs=1e-12)
    o = brute_force_oracle(sc, [], Cnf(), max_len)
    assert o.tokens == expected and o.score == pytest.approx(best, abs=1e-12)


def test_greedy_is_contained_in_beam_of_one():
    # k=1 beam follows the greedy path but also keeps earlier EOS endings
    for seed in range(30):
        sc = random_bigram(5, 0, seed)
        cfg = DecoderConfig(k=1, max_len=6, keep_finished=True)
        g = greedy_decode(sc, [], cfg)
        b = beam_search(sc, [], cfg)
        assert g.tokens in [h.tokens for h in b.finished]
        assert b.score >= g.score


def test_greedy_equals_beam_of_one_when_eos_is_only_final():
    # near-deterministic chain start -> 2 -> 3 -> 2 ...; EOS is never competitive
    table = np.full((5, 4), 1e-9)
    table[[0, 1, 3, 4], [2, 2, 2, 2]] = 1.0
    table[2, 3] = 1.0
    table /= table.sum(axis=1, keepdims=True)
    sc = BigramScorer(np.log(table), eos_id=0, start=4)
    cfg = DecoderConfig(k=1, max_len=5)
    g = greedy_decode(sc, [], cfg)
    assert g.tokens == (2, 3, 2, 3, 2)
    assert as_json(g) == as_json(beam_search(sc, [], cfg))


class TestSampling:
    def test_top_k_one_is_greedy(self):
        sc = random_bigram(6, 0, seed=4)
        cfg = DecoderConfig(max_len=8, seed=123)
        assert sample_decode(sc, [], cfg, top_k=1).tokens == greedy_decode(sc, [], cfg).tokens

    def test_reproducible(self):
        sc = random_bigram(6, 0, seed=4)
        cfg = DecoderConfig(max_len=10, seed=9)
        a = sample_decode(sc, [], cfg, top_p=1.0)
        b = sample_decode(sc, [], cfg, top_p=1.0)
        assert a.tokens == b.tokens and a.score == b.score

    def test_top_k_two_never_samples_third(self):
        probs = np.array([[0.5, 0.3, 0.2]] * 4)
        sc = BigramScorer(np.log(probs), eos_id=0)
        seen = np.zeros(3, int)
        for seed in range(10_000):
            t = sample_decode(sc, [], DecoderConfig(max_len=1, seed=seed), top_k=2).tokens[0]
            seen[t] += 1
        assert seen[2] == 0
        # renormalised 0.5 / 0.8
        assert seen[0] / seen.sum() == pytest.approx(0.625, abs=0.02)

    def test_top_p_nucleus(self):
        probs = np.array([[0.5, 0.3, 0.2]] * 4)
        sc = BigramScorer(np.log(probs), eos_id=0)
        drawn = {sample_decode(sc, [], DecoderConfig(max_len=1, seed=s), top_p=0.5).tokens[0]
                 for s in range(200)}
        assert drawn == {0}

    @pytest.mark.parametrize("kwargs", [{}, {"top_k": 1, "top_p": 0.5}, {"top_k": 0},
                                        {"top_k": 99}, {"top_p": 0.0}, {"top_p": 1.5}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            sample_decode(UniformScorer(5), [], DecoderConfig(), **kwargs)


# ------------------------------------------------------------------ GBS/CBS


@pytest.mark.parametrize("fn", [gbs_decode, cbs_decode])
def test_banked_with_no_constraints_is_beam(fn):
    for seed in range(20):
        sc = random_bigram(6, 0, seed)
        cfg = DecoderConfig(k=3, max_len=5)
        assert as_json(fn(sc, [], M.compile_constraints(Cnf()), cfg)) == \
            as_json(beam_search(sc, [], cfg))


@pytest.mark.parametrize("fn", [gbs_decode, cbs_decode])
def test_banked_rejects_rich_constraints(fn):
    for cnf in (cnf_of([pos(1), pos(2)]), cnf_of([neg(1)])):
        with pytest.raises(UnsupportedConstraintError):
            fn(UniformScorer(5), [], M.compile_constraints(cnf), DecoderConfig())


def test_cbs_constraint_limit():
    cnf = build_cover_all([[(i,)] for i in range(3, 20)])
    with pytest.raises(UnsupportedConstraintError):
        cbs_decode(UniformScorer(24), [], M.compile_constraints(cnf), DecoderConfig())


def test_banked_row_counts():
    sc = UniformScorer(20, eos_id=1)
    k = 3
    cnf = build_cover_all([[(5,)], [(6,)]])
    cc = M.compile_constraints(cnf)
    g = gbs_decode(sc, [], cc, DecoderConfig(k=k, max_len=10))
    c = cbs_decode(sc, [], cc, DecoderConfig(k=k, max_len=10))
    assert max(g.stats.rows_per_step) == k * 3      # C + 1 banks
    assert max(c.stats.rows_per_step) == k * 4      # 2^C states


@pytest.mark.parametrize("fn", [gbs_decode, cbs_decode])
def test_banked_satisfies_when_feasible(fn):
    sc = random_bigram(5, 0, seed=21)
    cnf = build_cover_all([[(2,)], [(4,)]])
    oracle = brute_force_oracle(sc, [], cnf, 4)
    assert oracle.feasible
    r = fn(sc, [], M.compile_constraints(cnf), DecoderConfig(k=4, max_len=4))
    assert r.all_satisfied and 2 in r.tokens and 4 in r.tokens


# ------------------------------------------------------------------ oracle


def test_oracle_contradiction():
    sc = UniformScorer(3, eos_id=EOS)
    o = brute_force_oracle(sc, [], cnf_of([pos(A)], [neg(A)]), 2)
    assert o.max_count == 1 and not o.feasible


def test_oracle_uniform_satisfier():
    sc = UniformScorer(3, eos_id=EOS)
    o = brute_force_oracle(sc, [], cnf_of([pos(B)]), 2)
    assert o.tokens == (A, B)
    assert o.score == pytest.approx(2 * math.log(1 / 3), abs=1e-12)


def test_oracle_size_guard():
    with pytest.raises(InstanceTooLargeError):
        brute_force_oracle(UniformScorer(10), [], Cnf(), 7)


def test_oracle_agrees_with_enumeration():
    rng = random.Random(2)
    for seed in range(15):
        sc = random_bigram(4, 0, seed)
        cnf = random_cnf(rng, vocab=4, max_clauses=3, max_phrase=2, low=1)
        space = list(enumerate_space(sc, 3))
        counts = [(sum(clause_values(cnf, seq)), s, seq) for seq, s in space]
        top = max(c for c, _, _ in counts)
        best = max(s for c, s, _ in counts if c == top)
        o = brute_force_oracle(sc, [], cnf, 3)
        assert o.max_count == top
        assert o.score == pytest.approx(best, abs=1e-12)
