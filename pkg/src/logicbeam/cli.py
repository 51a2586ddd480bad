"""``logicbeam`` command-line entry point.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 verification
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import decode as D
from . import verify as V
from .eval import BENCH_DECODERS, bench_scaling, write_bench_csv
from .formula import Cnf, FormulaError, clause_values, format_cnf, parse_formula, to_cnf
from .matcher import compile_constraints
from .scorer import ExternalScorer, ModelFileError, NgramLm, UniformScorer, Vocab

logger = logging.getLogger("logicbeam")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_VERIFY = 0, 1, 2, 3
DECODERS = ("neurologic", "beam", "greedy", "topk", "topp", "gbs", "cbs", "oracle")
SCORER_ENV = "LOGICBEAM_SCORER_CMD"
MANIFEST_VERSION = 1


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _int_or_inf(text: str):
    if text.lower() in ("inf", "infinity", "none"):
        return None
    return int(text)


def _int_range(text: str) -> list:
    out = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


# ------------------------------------------------------------------ train-lm


def cmd_train_lm(args) -> int:
    if args.n < 1:
        raise ValidationError("--n must be >= 1")
    weights = [float(w) for w in args.lambdas.split(",")] if args.lambdas else None
    with open(args.corpus, encoding="utf-8") as fh:
        corpus = [line for line in fh if line.strip()]
    try:
        model = NgramLm(n=args.n, k=args.k, weights=weights).fit(corpus)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    model.save(args.out)
    model.vocab.save(args.out + ".vocab")
    logger.info("trained %d-gram model over %d sentences, |V|=%d",
                args.n, len(corpus), len(model.vocab))
    return EXIT_OK


# -------------------------------------------------------------------- decode


def _config_from_args(args) -> dict:
    return {
        "decoder": args.decoder,
        "k": args.k,
        "alpha": args.alpha,
        "beta": args.beta,
        "max_len": args.max_len,
        "seed": args.seed,
        "length_normalize": args.length_normalize,
        "match_in_prompt": args.match_in_prompt,
        "top_k": args.top_k,
        "top_p": args.top_p,
    }


def _load_scorer(model_path, vocab_path):
    if os.environ.get(SCORER_ENV):
        if vocab_path:
            vocab = Vocab.load(vocab_path)
        elif model_path:
            vocab = NgramLm.load(model_path).vocab
        else:
            raise ValidationError(f"{SCORER_ENV} needs --vocab or --model for tokenization")
        return ExternalScorer.from_env(len(vocab), vocab.eos_id, SCORER_ENV), vocab
    if not model_path:
        raise ValidationError("--model is required")
    model = NgramLm.load(model_path)
    return model, model.vocab


def _decode_one(scorer, vocab, record, config, index) -> dict:
    out = {"id": record.get("id")}
    try:
        text = record.get("formula", "") or ""
        cnf = to_cnf(parse_formula(text, vocab)) if text.strip() else Cnf()
        cc = compile_constraints(cnf, vocab)
        context = vocab.encode(record.get("context", "") or "")
        cfg = D.DecoderConfig(k=config["k"], alpha=config["alpha"], beta=config["beta"],
                              max_len=config["max_len"], seed=config["seed"] + index,
                              length_normalize=config["length_normalize"],
                              match_in_prompt=config["match_in_prompt"])
        name = config["decoder"]
        if name == "neurologic":
            result = D.neurologic_decode(scorer, context, cc, cfg)
        elif name == "gbs":
            result = D.gbs_decode(scorer, context, cc, cfg)
        elif name == "cbs":
            result = D.cbs_decode(scorer, context, cc, cfg)
        elif name == "beam":
            result = D.beam_search(scorer, context, cfg)
        elif name == "greedy":
            result = D.greedy_decode(scorer, context, cfg)
        elif name == "topk":
            result = D.sample_decode(scorer, context, cfg, top_k=config["top_k"] or 10)
        elif name == "topp":
            result = D.sample_decode(scorer, context, cfg, top_p=config["top_p"] or 0.9)
        elif name == "oracle":
            o = D.brute_force_oracle(scorer, context, cnf, cfg.max_len)
            out.update(text=vocab.decode(o.tokens), tokens=list(o.tokens), score=o.score,
                       clause_truth=clause_values(cnf, o.tokens), satisfied_count=o.max_count,
                       num_clauses=len(cnf))
            return out
        else:
            raise ValidationError(f"unknown decoder {name!r}")
        out.update(result.to_dict(vocab))
        if name in ("beam", "greedy", "topk", "topp"):
            truth = clause_values(cnf, result.tokens)
            out.update(clause_truth=truth, satisfied_count=sum(truth), num_clauses=len(cnf),
                       all_satisfied=all(truth))
    except (FormulaError, D.DecodeError, ValueError) as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


def run_decode(model, vocab_path, instances_path, out_path, config, jobs=1) -> list:
    scorer, vocab = _load_scorer(model, vocab_path)
    with open(instances_path, encoding="utf-8") as fh:
        try:
            records = [json.loads(line) for line in fh if line.strip()]
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{instances_path}: {exc}") from exc
    ids = [r.get("id") for r in records]
    if len(set(ids)) != len(ids):
        raise ValidationError("instance ids must be unique")
    if config["decoder"] not in DECODERS:
        raise ValidationError(f"unknown decoder {config['decoder']!r}")

    def work(item):
        i, rec = item
        return _decode_one(scorer, vocab, rec, config, i)

    try:
        if jobs > 1:
            with ThreadPoolExecutor(jobs) as pool:
                results = list(pool.map(work, enumerate(records)))
        else:
            results = [work(item) for item in enumerate(records)]
    finally:
        if isinstance(scorer, ExternalScorer):
            scorer.close()
    with open(out_path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r) + "\n")
    return results


def _manifest(args, config, results) -> dict:
    return {
        "version": MANIFEST_VERSION,
        "command": "decode",
        "config": config,
        "model": os.path.abspath(args.model) if args.model else None,
        "model_sha256": _sha256(args.model) if args.model else None,
        "vocab": os.path.abspath(args.vocab) if args.vocab else None,
        "scorer_cmd": os.environ.get(SCORER_ENV),
        "instances": os.path.abspath(args.instances),
        "instances_sha256": _sha256(args.instances),
        "seed": config["seed"],
        "output_sha256": _sha256(args.out),
        "results": [{k: r.get(k) for k in ("id", "satisfied_count", "score", "error")
                     if k in r} for r in results],
    }


def cmd_decode(args) -> int:
    if args.k < 1 or args.max_len < 1 or args.jobs < 1:
        raise ValidationError("--k, --max-len and --jobs must be >= 1")
    config = _config_from_args(args)
    results = run_decode(args.model, args.vocab, args.instances, args.out, config, args.jobs)
    manifest_path = args.manifest or args.out + ".manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(_manifest(args, config, results), fh, indent=2)
        fh.write("\n")
    errors = sum("error" in r for r in results)
    logger.info("decoded %d instances (%d errors)", len(results), errors)
    return EXIT_OK


def cmd_replay(args) -> int:
    with open(args.manifest, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValidationError("unsupported manifest version")
    for key in ("model", "instances"):
        path = manifest[key]
        if path and _sha256(path) != manifest[key + "_sha256"]:
            print(f"{key} file changed since the recorded run: {path}", file=sys.stderr)
            return EXIT_VERIFY
    if manifest.get("scorer_cmd"):
        os.environ[SCORER_ENV] = manifest["scorer_cmd"]
    out = args.out or manifest["instances"] + ".replay.jsonl"
    run_decode(manifest["model"], manifest["vocab"], manifest["instances"], out,
               manifest["config"], args.jobs)
    if _sha256(out) != manifest["output_sha256"]:
        print("replayed output differs from the recorded run", file=sys.stderr)
        return EXIT_VERIFY
    print(f"replay identical: {out}")
    return EXIT_OK


# -------------------------------------------------------------- verify/bench


def cmd_verify(args) -> int:
    if args.trials < 1:
        raise ValidationError("--trials must be >= 1")
    try:
        sizes = V.Sizes.parse(args.sizes)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    advance = V.reset_only_advance if args.corrupt_matcher else None
    report = V.run_all(args.trials, args.seed, sizes,
                       **({"advance": advance} if advance else {}))
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK if report["passed"] else EXIT_VERIFY


def cmd_bench(args) -> int:
    decoders = [d.strip() for d in args.decoders.split(",")]
    unknown = [d for d in decoders if d not in BENCH_DECODERS]
    if unknown:
        raise ValidationError(f"unknown bench decoders: {unknown}")
    scorer = NgramLm.load(args.model) if args.model else UniformScorer(args.vocab_size)
    records = bench_scaling(scorer, decoders=decoders, Cs=_int_range(args.C),
                            ks=_int_range(args.k), max_len=args.max_len, seed=args.seed)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            write_bench_csv(records, fh)
    else:
        write_bench_csv(records, sys.stdout)
    return EXIT_OK


def cmd_cnf(args) -> int:
    vocab = Vocab()
    try:
        cnf = to_cnf(parse_formula(args.formula, vocab, open_vocab=True))
    except FormulaError as exc:
        raise ValidationError(str(exc)) from exc
    print(format_cnf(cnf, vocab))
    return EXIT_OK


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="logicbeam", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train-lm", help="train an n-gram model on a text corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--k", type=float, default=0.1, help="add-k smoothing constant")
    p.add_argument("--lambdas", help="comma-separated interpolation weights")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("decode", help="decode a JSON-lines instance file")
    p.add_argument("--model")
    p.add_argument("--vocab", help=f"vocabulary file (with {SCORER_ENV})")
    p.add_argument("--instances", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.add_argument("--decoder", choices=DECODERS, default="neurologic")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--alpha", type=_int_or_inf, default=None)
    p.add_argument("--beta", type=_int_or_inf, default=None)
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--length-normalize", action="store_true")
    p.add_argument("--match-in-prompt", action="store_true")
    p.add_argument("--top-k", type=int)
    p.add_argument("--top-p", type=float)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("replay", help="re-run a decode from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("verify", help="run the randomised self-checks")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", default="6,4,3,20", help="vocab,clauses,phrase_len,stream_len")
    p.add_argument("--out")
    p.add_argument("--corrupt-matcher", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="measure scorer calls across constraint counts")
    p.add_argument("--decoders", default="neurologic,gbs,cbs")
    p.add_argument("--C", default="1-6")
    p.add_argument("--k", default="4")
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--vocab-size", type=int, default=24)
    p.add_argument("--model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("cnf", help="print a formula in conjunctive normal form")
    p.add_argument("formula")
    p.set_defaults(func=cmd_cnf)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, ModelFileError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
