"""Lexically constrained decoding with predicate-logic phrase constraints."""

from .decode import (
    DecodeResult,
    DecoderConfig,
    beam_search,
    brute_force_oracle,
    cbs_decode,
    gbs_decode,
    greedy_decode,
    neurologic_decode,
    sample_decode,
)
from .formula import (
    Cnf,
    Literal,
    build_cover_all,
    build_include_exclude,
    clause_values,
    evaluate,
    format_cnf,
    format_formula,
    parse_formula,
    to_cnf,
)
from .matcher import compile_constraints
from .scorer import ExternalScorer, NgramLm, UniformScorer, Vocab

__version__ = "0.1.0"
