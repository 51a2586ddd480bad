import io
import random

import pytest

from logicbeam.decode import DecoderConfig, neurologic_decode
from logicbeam.eval import (CSV_FIELDS, TOY_NOUNS, TOY_VERBS, BenchRecord, ToyInstance,
                            bench_scaling, commongen_instances, coverage, extra_rate,
                            include_exclude_instances, load_toy_corpus, positive_instance,
                            witness, write_bench_csv)
from logicbeam.formula import clause_values, parse_formula, to_cnf
from logicbeam.matcher import compile_constraints
from logicbeam.scorer import UniformScorer, Vocab

V = Vocab("the dog dogs run ran sat pork bacon onion".split())
DOG_RUN = [[(V["dog"],), (V["dogs"],)], [(V["run"],), (V["ran"],)]]


class TestCoverage:
    def test_full(self):
        assert coverage([V.encode("the dog ran")], [DOG_RUN]).mean == 100.0

    def test_half(self):
        report = coverage([V.encode("the dog sat")], [DOG_RUN])
        assert report.per_instance == [0.5] and report.mean == 50.0

    def test_empty_concepts_vacuous(self):
        assert coverage([V.encode("the")], [[]]).per_instance == [1.0]

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            coverage([[1], [2]], [DOG_RUN])


class TestExtra:
    def test_none_present(self):
        assert extra_rate([V.encode("the dog")], [[1, 2, 3, 4]], [[(V["pork"],)]]).mean == 0.0

    def test_one_of_four(self):
        y = V.encode("the pork dog")
        assert extra_rate([y], [[1, 2, 3, 4]], [[(V["pork"],)]]).mean == 0.25

    def test_presence_not_multiplicity(self):
        y = V.encode("pork pork pork")
        assert extra_rate([y], [[1, 2, 3, 4]], [[(V["pork"],)]]).mean == 0.25

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            extra_rate([[1]], [], [])


def test_toy_corpus_bundled():
    corpus = load_toy_corpus()
    assert 150 <= len(corpus) <= 250
    words = {w for line in corpus for w in line.split()}
    for variants in [*TOY_NOUNS.values(), *TOY_VERBS.values()]:
        assert set(variants) <= words


def test_instances_are_deterministic_and_well_formed(toy_lm):
    a, b = commongen_instances(seed=3), commongen_instances(seed=3)
    assert a == b and len(a) == 50
    for inst in a:
        assert 2 <= len(inst.concepts) <= 4
        cnf = inst.cnf(toy_lm.vocab)
        assert all(clause_values(cnf, witness(inst, toy_lm.vocab)))
        assert to_cnf(parse_formula(inst.formula(), toy_lm.vocab)) == cnf
    for inst in include_exclude_instances(seed=3):
        included = {v for c in inst.concepts for v in c}
        assert inst.exclude and not included & set(inst.exclude)


def test_out_of_vocabulary_variant_rejected():
    with pytest.raises(ValueError):
        ToyInstance("x", [["zebra"]]).variant_ids(V)


def test_properties_of_satisfied_outputs(toy_lm):
    vocab = toy_lm.vocab
    insts = include_exclude_instances(n=15, seed=8)
    outs, given, bad, variants = [], [], [], []
    for inst in insts:
        r = neurologic_decode(toy_lm, [], compile_constraints(inst.cnf(vocab), vocab),
                              DecoderConfig(k=8, beta=2, max_len=15))
        if r.all_satisfied:
            outs.append(r.tokens)
            variants.append(inst.variant_ids(vocab))
            given.append(inst.concepts)
            bad.append(inst.exclude_ids(vocab))
    assert outs
    assert coverage(outs, variants).mean == 100.0
    assert extra_rate(outs, given, bad).mean == 0.0


def test_bench_counters_and_csv():
    sc = UniformScorer(24, eos_id=1)
    recs = bench_scaling(sc, Cs=[1, 2], ks=[2, 3], max_len=6)
    assert len(recs) == 3 * 2 * 2
    for r in recs:
        assert r.error is None and r.calls <= 6 and r.rows >= r.calls
    buf = io.StringIO()
    write_bench_csv(recs, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(CSV_FIELDS) == "decoder,C,k,calls,rows,wall_ms"
    assert len(lines) == 1 + len(recs)


def test_bench_records_incompatibility_without_failing():
    def mixed(C, seed, vocab_size, eos_id):
        context, cnf = positive_instance(C, seed, vocab_size, eos_id)
        return context, to_cnf(parse_formula('"x" | "y"', Vocab(["x", "y"])))

    recs = bench_scaling(UniformScorer(24), instance=mixed, decoders=["gbs", "neurologic"],
                         Cs=[1], max_len=4)
    assert recs[0].error and "UnsupportedConstraint" in recs[0].error
    assert recs[1].error is None
    buf = io.StringIO()
    write_bench_csv(recs, buf)
    assert len(buf.getvalue().splitlines()) == 2


def test_rows_per_step():
    assert BenchRecord("x", 1, 4, calls=4, rows=10).rows_per_step == 2.5
    assert BenchRecord("x", 1, 4).rows_per_step == 0.0


def test_coverage_bounds_random():
    rng = random.Random(0)
    for _ in range(200):
        y = [rng.randrange(3, len(V)) for _ in range(rng.randint(0, 6))]
        report = coverage([y], [DOG_RUN])
        assert 0.0 <= report.mean <= 100.0
        assert report.per_instance[0] in (0.0, 0.5, 1.0)
