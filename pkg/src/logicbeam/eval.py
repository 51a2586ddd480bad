"""Constraint-centric metrics, toy task generators and scaling benchmarks."""

from __future__ import annotations

import csv
import logging
import random
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .decode import (DecodeError, DecoderConfig, cbs_decode, gbs_decode,
                     neurologic_decode)
from .formula import Cnf, build_cover_all, build_include_exclude, contains
from .matcher import compile_constraints
from .scorer import NgramLm, UniformScorer

logger = logging.getLogger(__name__)


# ------------------------------------------------------------------ metrics


@dataclass
class CoverageReport:
    per_instance: list
    mean: float  # percent


@dataclass
class ExtraReport:
    per_instance: list
    mean: float


def _present(y, phrases) -> bool:
    return any(contains(y, tuple(p)) for p in phrases)


def coverage(outputs, variant_sets) -> CoverageReport:
    """Mean share of concepts with at least one variant in the output.

    An instance with no concepts counts as fully covered.
    """
    if len(outputs) != len(variant_sets):
        raise ValueError(f"{len(outputs)} outputs for {len(variant_sets)} instances")
    fractions = []
    for y, concepts in zip(outputs, variant_sets):
        if not concepts:
            fractions.append(1.0)
            continue
        fractions.append(sum(_present(y, c) for c in concepts) / len(concepts))
    mean = 100.0 * float(np.mean(fractions)) if fractions else 100.0
    return CoverageReport(fractions, mean)


def extra_rate(outputs, allowed, forbidden) -> ExtraReport:
    """Forbidden phrases present per given concept set, averaged.

    Presence counts once regardless of repetitions; an instance with no
    given concept sets is divided by one.
    """
    if not (len(outputs) == len(allowed) == len(forbidden)):
        raise ValueError("outputs, allowed and forbidden must have equal length")
    ratios = []
    for y, given, bad in zip(outputs, allowed, forbidden):
        hits = sum(contains(y, tuple(p)) for p in bad)
        ratios.append(hits / max(len(given), 1))
    return ExtraReport(ratios, float(np.mean(ratios)) if ratios else 0.0)


# -------------------------------------------------------------- toy tasks


def load_toy_corpus() -> list:
    text = resources.files("logicbeam").joinpath("data/toy_corpus.txt").read_text("utf-8")
    return [line for line in text.splitlines() if line.strip()]


def train_toy_lm(n: int = 3, k: float = 0.1) -> NgramLm:
    return NgramLm(n=n, k=k).fit(load_toy_corpus())


# inflection variants per concept, as they appear in the toy corpus
TOY_NOUNS = {
    "dog": ["dog", "dogs"], "ball": ["ball"], "frisbee": ["frisbee"], "park": ["park"],
    "river": ["river"], "horse": ["horse"], "fish": ["fish"], "food": ["food"],
    "bench": ["bench"], "snow": ["snow"], "beach": ["beach"], "kitchen": ["kitchen"],
    "apple": ["apple"], "bike": ["bike"], "cat": ["cat"], "field": ["field"],
    "man": ["man"], "girl": ["girl"], "boy": ["boy"], "chef": ["chef"],
}
TOY_VERBS = {
    "run": ["run", "runs", "ran"], "throw": ["throw", "throws", "threw"],
    "catch": ["catches", "caught"], "eat": ["eat", "eats", "ate"],
    "walk": ["walk", "walks", "walked"], "ride": ["ride", "rides", "rode"],
    "cook": ["cook", "cooks", "cooked"], "play": ["play", "plays", "played"],
    "sit": ["sit", "sits", "sat"], "kick": ["kick", "kicks", "kicked"],
}


def _phrase_ids(text: str, vocab) -> tuple:
    missing = [w for w in text.split() if w not in vocab]
    if missing:
        raise ValueError(f"phrase {text!r} has out-of-vocabulary words {missing}")
    return tuple(vocab[w] for w in text.split())


@dataclass
class ToyInstance:
    id: str
    concepts: list            # list of lists of variant strings
    exclude: list = field(default_factory=list)
    context: str = ""

    def variant_ids(self, vocab) -> list:
        return [[_phrase_ids(v, vocab) for v in c] for c in self.concepts]

    def exclude_ids(self, vocab) -> list:
        return [_phrase_ids(p, vocab) for p in self.exclude]

    def cnf(self, vocab) -> Cnf:
        if self.exclude:
            return build_include_exclude(self.variant_ids(vocab), self.exclude_ids(vocab))
        return build_cover_all(self.variant_ids(vocab))

    def formula(self) -> str:
        parts = ["(" + " | ".join(f'"{v}"' for v in c) + ")" for c in self.concepts]
        parts += [f'!"{p}"' for p in self.exclude]
        return " & ".join(parts)


def commongen_instances(n: int = 50, seed: int = 0) -> list:
    """Concept sets of size 2-4: one verb plus nouns, CommonGen style."""
    rng = random.Random(seed)
    nouns, verbs = sorted(TOY_NOUNS), sorted(TOY_VERBS)
    out = []
    for i in range(n):
        size = rng.randint(2, 4)
        chosen = [TOY_VERBS[rng.choice(verbs)]]
        chosen += [TOY_NOUNS[w] for w in rng.sample(nouns, size - 1)]
        rng.shuffle(chosen)
        out.append(ToyInstance(f"cg-{i:03d}", [list(c) for c in chosen]))
    return out


def include_exclude_instances(n: int = 50, seed: int = 0) -> list:
    """1-3 required concepts and 2-4 forbidden nouns disjoint from them."""
    rng = random.Random(seed)
    nouns, verbs = sorted(TOY_NOUNS), sorted(TOY_VERBS)
    out = []
    for i in range(n):
        picked = rng.sample(nouns, rng.randint(1, 3) + rng.randint(2, 4))
        n_inc = rng.randint(1, min(3, len(picked) - 2))
        include = [list(TOY_NOUNS[w]) for w in picked[:n_inc]]
        if rng.random() < 0.5:
            include.append(list(TOY_VERBS[rng.choice(verbs)]))
        exclude = [v for w in picked[n_inc:] for v in TOY_NOUNS[w]]
        out.append(ToyInstance(f"ie-{i:03d}", include, exclude))
    return out


def witness(instance: ToyInstance, vocab) -> list:
    """A short sequence satisfying the instance (first variant of each concept)."""
    return [t for c in instance.variant_ids(vocab) for t in c[0]]


# ------------------------------------------------------------------ bench


@dataclass
class BenchRecord:
    decoder: str
    C: int
    k: int
    calls: int = 0
    rows: int = 0
    wall_ms: float = 0.0
    peak_rows: int = 0
    error: str | None = None

    @property
    def rows_per_step(self) -> float:
        return self.rows / self.calls if self.calls else 0.0


BENCH_DECODERS = {
    "neurologic": neurologic_decode,
    "gbs": gbs_decode,
    "cbs": cbs_decode,
}


def positive_instance(C: int, seed: int = 0, vocab_size: int = 24, eos_id: int = 1):
    """C distinct single-token positive constraints over a synthetic vocabulary."""
    rng = random.Random(seed)
    words = [t for t in range(3, vocab_size)]
    picked = rng.sample(words, C)
    return [], build_cover_all([[(t,)] for t in picked])


def bench_scaling(scorer=None, instance=positive_instance, decoders=("neurologic", "gbs", "cbs"),
                  Cs=range(1, 7), ks=(4,), max_len: int = 20, seed: int = 0) -> list:
    """Measure scorer calls and scored rows per decoder over a (C, k) sweep.

    Counters come from the scorer's own instrumentation and are checked
    against the decoder's bookkeeping.
    """
    if scorer is None:
        scorer = UniformScorer(24, eos_id=1)
    records = []
    for name in decoders:
        fn = BENCH_DECODERS[name]
        for C in Cs:
            context, cnf = instance(C, seed, scorer.vocab_size, scorer.eos_id)
            cc = compile_constraints(cnf)
            for k in ks:
                rec = BenchRecord(name, C, k)
                scorer.reset_counters()
                started = time.perf_counter()
                try:
                    result = fn(scorer, context, cc, DecoderConfig(k=k, max_len=max_len, seed=seed))
                except DecodeError as exc:
                    rec.error = f"{type(exc).__name__}: {exc}"
                    logger.warning("%s C=%d k=%d: %s", name, C, k, rec.error)
                else:
                    rec.calls, rec.rows, rec.peak_rows = scorer.calls, scorer.rows, scorer.max_rows
                    if (rec.calls, rec.rows) != (result.stats.calls, result.stats.rows):
                        raise AssertionError("scorer counters disagree with decoder stats")
                rec.wall_ms = (time.perf_counter() - started) * 1000.0
                records.append(rec)
    return records


CSV_FIELDS = ("decoder", "C", "k", "calls", "rows", "wall_ms")


def write_bench_csv(records, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in records:
        if r.error is None:
            writer.writerow([r.decoder, r.C, r.k, r.calls, r.rows, f"{r.wall_ms:.3f}"])
