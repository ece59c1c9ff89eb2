"""Command-line driver: ingest -> genq -> build-matrix -> retrieve / bench.

Options can come from a JSON config file (--config) with flags taking
precedence; unknown config keys are rejected. Every command prints the root
seed it runs under, and all outputs are pure functions of (inputs, seed,
config). Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from .clients import ClientBundle, ClientConfig, make_client
from .completion import (
    CompletionConfig,
    complete_matrix,
    evaluate_candidates,
    save_failures,
    select_candidates,
)
from .errors import ConfigError, CoverageWarning, FormatError, QbragError, RankTooLargeError
from .evaluation import (
    build_ood_set,
    build_rephrase_set,
    load_cases,
    run_benchmark,
    save_answers,
    save_cases,
)
from .pipeline import GenerationConfig, filter_questions, generate_for_contents
from .retrievers import STRATEGY_NAMES, StrategyConfig, make_retriever
from .store import KnowledgeBase

_CONFIG_KEYS = {
    "seed",
    "backend",
    "endpoint",
    "api_key_env",
    "max_parallel",
    "max_retries",
    "timeout_ms",
    "embed_dim",
    "num_questions",
    "percentile",
    "rank",
    "regularization",
    "iterations",
    "threshold",
    "matrix_source",
    "weighting",
    "aggregation",
    "strategies",
    "ks",
}

_DEFAULTS = {
    "seed": 0,
    "backend": "mock",
    "endpoint": None,
    "api_key_env": "QBRAG_API_KEY",
    "max_parallel": 4,
    "max_retries": 2,
    "timeout_ms": 30_000,
    "embed_dim": 64,
    "num_questions": 8,
    "percentile": 0.05,
    "rank": 16,
    "regularization": 1e-2,
    "iterations": 50,
    "threshold": 0.5,
    "matrix_source": "observed",
    "weighting": "binary",
    "aggregation": "sum",
}


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    unknown = sorted(set(obj) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return obj


class _Settings:
    """Flag > config file > default, resolved per key."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self._args = vars(args)
        self._config = config

    def get(self, key: str):
        flag = self._args.get(key)
        if flag is not None:
            return flag
        if key in self._config:
            return self._config[key]
        return _DEFAULTS.get(key)


def _make_bundle(settings: _Settings) -> ClientBundle:
    config = ClientConfig(
        backend=settings.get("backend"),
        endpoint=settings.get("endpoint"),
        api_key_env=settings.get("api_key_env"),
        max_parallel=int(settings.get("max_parallel")),
        max_retries=int(settings.get("max_retries")),
        timeout_ms=int(settings.get("timeout_ms")),
        embed_dim=int(settings.get("embed_dim")),
        seed=int(settings.get("seed")),
    )
    return ClientBundle.single(make_client(config))


def _announce_seed(settings: _Settings) -> int:
    seed = int(settings.get("seed"))
    print(f"root seed: {seed}")
    return seed


# -- commands -----------------------------------------------------------------


def cmd_ingest(args, config) -> int:
    settings = _Settings(args, config)
    _announce_seed(settings)
    bundle = _make_bundle(settings)
    kb = KnowledgeBase()
    path = Path(args.contents)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return 1
    count = 0
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except ValueError as exc:
            raise FormatError(f"invalid JSON: {exc}", path.name, line_no) from exc
        if not isinstance(obj, dict) or "text" not in obj:
            raise FormatError("expected an object with a 'text' field", path.name, line_no)
        kb.add_content(obj["text"], int(obj.get("created_at", 0)))
        count += 1
    if count == 0:
        print("error: no contents found in input", file=sys.stderr)
        return 1
    kb.embed_contents(bundle.embedder)
    kb.save(args.kb)
    print(f"ingested {count} contents (dim {kb.content_embeddings.dim}) into {args.kb}")
    return 0


def cmd_genq(args, config) -> int:
    settings = _Settings(args, config)
    seed = _announce_seed(settings)
    bundle = _make_bundle(settings)
    kb = KnowledgeBase.load(args.kb)
    gen_cfg = GenerationConfig(num_questions=int(settings.get("num_questions")), seed=seed)
    covered = {cid for cid, qs in kb.questions_by_content().items() if qs}
    todo = [c for c in kb.contents if c.id not in covered]
    generated = 0
    for content_id, batch in generate_for_contents(bundle.generator, todo, gen_cfg).items():
        for text in batch:
            kb.attach_question(content_id, text)
            generated += 1
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        filter_questions(bundle.generator, kb)
    kb.embed_questions(bundle.embedder)
    kb.save(args.kb)
    kept = sum(1 for q in kb.questions if q.answerable == "yes")
    mbar = kept / len(kb.contents) if kb.contents else 0.0
    print(
        f"generated {generated} new questions; kept {kept} of {len(kb.questions)} "
        f"(coverage {mbar:.2f} per content)"
    )
    coverage_warnings = [w for w in caught if issubclass(w.category, CoverageWarning)]
    for w in coverage_warnings:
        print(f"warning: {w.message}", file=sys.stderr)
    return 1 if coverage_warnings else 0


def cmd_build_matrix(args, config) -> int:
    settings = _Settings(args, config)
    seed = _announce_seed(settings)
    bundle = _make_bundle(settings)
    kb = KnowledgeBase.load(args.kb)
    completion_cfg = CompletionConfig(
        rank=int(settings.get("rank")),
        regularization=float(settings.get("regularization")),
        iterations=int(settings.get("iterations")),
        binarize_threshold=float(settings.get("threshold")),
        seed=seed,
    )
    m, n = len(kb.contents), len(kb.questions)
    if completion_cfg.rank > min(m, n):
        raise RankTooLargeError(f"rank {completion_cfg.rank} exceeds min({m}, {n})")
    selection = select_candidates(kb, float(settings.get("percentile")), include_observed=True)
    outcome = evaluate_candidates(bundle.generator, kb, selection)
    estimate = complete_matrix(outcome.observations, m, n, completion_cfg)
    kb.matrix = estimate
    kb.save(args.kb)
    print(
        f"observed {len(selection.observed)}, evaluated {len(outcome.observations)}, "
        f"completed {m}x{n} (threshold {estimate.threshold})"
    )
    if outcome.failures:
        manifest = Path(args.kb) / "failures.jsonl"
        save_failures(manifest, outcome.failures)
        print(f"warning: {len(outcome.failures)} judge failures, see {manifest}", file=sys.stderr)
    return 0


def cmd_retrieve(args, config) -> int:
    settings = _Settings(args, config)
    seed = _announce_seed(settings)
    bundle = _make_bundle(settings)
    kb = KnowledgeBase.load(args.kb).freeze()
    cfg = StrategyConfig(
        strategy=args.strategy,
        matrix_source=settings.get("matrix_source"),
        weighting=settings.get("weighting"),
        aggregation=settings.get("aggregation"),
        seed=seed,
    )
    retriever = make_retriever(cfg, bundle).fit(kb)
    result = retriever.retrieve(args.query, args.k)
    print(json.dumps(result.to_dict(), ensure_ascii=False, sort_keys=True))
    return 0


def _parse_strategies(raw, seed: int, settings: _Settings) -> list[StrategyConfig]:
    names = [s.strip() for s in raw.split(",") if s.strip()] if isinstance(raw, str) else list(raw)
    configs = []
    for name in names:
        if name not in STRATEGY_NAMES:
            raise ConfigError(f"unknown strategy {name!r}; valid: {', '.join(STRATEGY_NAMES)}")
        configs.append(
            StrategyConfig(
                strategy=name,
                matrix_source=settings.get("matrix_source"),
                weighting=settings.get("weighting"),
                aggregation=settings.get("aggregation"),
                seed=seed,
            )
        )
    return configs


def cmd_bench(args, config) -> int:
    settings = _Settings(args, config)
    seed = _announce_seed(settings)
    bundle = _make_bundle(settings)
    kb = KnowledgeBase.load(args.kb).freeze()
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"error: output directory not writable: {exc}", file=sys.stderr)
        return 1

    cases = []
    if args.testset:
        cases = load_cases(args.testset)
    if args.make_rephrase:
        cases += build_rephrase_set(bundle, kb, args.make_rephrase, seed)
    if args.make_ood:
        cases += build_ood_set(bundle, kb, seed)
    if not cases:
        raise ConfigError("no test cases: pass --testset or --make-rephrase/--make-ood")

    strategies = _parse_strategies(
        args.strategies if args.strategies is not None else settings.get("strategies") or "",
        seed,
        settings,
    )
    raw_ks = args.ks if args.ks is not None else settings.get("ks")
    if raw_ks is None:
        raise ConfigError("no k values: pass --ks")
    ks = [int(x) for x in (raw_ks.split(",") if isinstance(raw_ks, str) else raw_ks)]

    report, records = run_benchmark(kb, bundle, strategies, ks, cases, seed)
    save_cases(out_dir / "cases.jsonl", cases)
    save_answers(out_dir / "answers.jsonl", records)
    report_path = out_dir / "report.json"
    report_path.write_text(report.to_json() + "\n", encoding="utf-8")

    header = (
        f"{'strategy':<14}{'k':>3}  {'exact':>7}{'relev':>7}{'rerank':>8}"
        f"{'declined':>9}{'faithful':>9}{'ans_rel':>8}{'accuracy':>9}"
    )
    print(header)
    for row in report.rows:
        print(
            f"{row['strategy']:<14}{row['k']:>3}  "
            f"{row['exact_recovery_rate']:>7.4f}{row['relevancy_rate']:>7.4f}"
            f"{row['avg_reranker_score']:>8.4f}{row['declined_rate']:>9.4f}"
            f"{row['faithfulness_rate']:>9.4f}{row['relevancy_answer_rate']:>8.4f}"
            f"{row['accuracy_rate']:>9.4f}"
        )
    print(f"report written to {report_path}")
    return 0


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qbrag",
        description="Build a question-aligned knowledge base and benchmark retrieval strategies.",
    )
    parser.add_argument("--config", help="JSON config file; flags override its values")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="root seed (default 0)")
    common.add_argument("--backend", choices=("mock", "http"), default=None)
    common.add_argument("--endpoint", default=None, help="http backend endpoint URL")
    common.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)

    p = sub.add_parser("ingest", parents=[common], help="create a knowledge base from contents")
    p.add_argument("--contents", required=True, help="contents JSONL ({'text', 'created_at'?})")
    p.add_argument("--kb", required=True, help="knowledge base directory to create")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("genq", parents=[common], help="generate and filter questions")
    p.add_argument("--kb", required=True)
    p.add_argument("--num-questions", dest="num_questions", type=_positive_int, default=None)
    p.set_defaults(func=cmd_genq)

    p = sub.add_parser("build-matrix", parents=[common], help="estimate the dense answerability matrix")
    p.add_argument("--kb", required=True)
    p.add_argument("--percentile", type=float, default=None)
    p.add_argument("--rank", type=_positive_int, default=None)
    p.add_argument("--regularization", type=float, default=None)
    p.add_argument("--iterations", type=_positive_int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=cmd_build_matrix)

    p = sub.add_parser("retrieve", parents=[common], help="run one retrieval and print its trace")
    p.add_argument("--kb", required=True)
    p.add_argument("--strategy", required=True, choices=STRATEGY_NAMES)
    p.add_argument("--k", type=_positive_int, required=True)
    p.add_argument("--matrix-source", dest="matrix_source", choices=("observed", "estimate"), default=None)
    p.add_argument("--weighting", choices=("binary", "probability"), default=None)
    p.add_argument("--aggregation", choices=("sum", "mean", "softmax"), default=None)
    p.add_argument("query", help="query text")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("bench", parents=[common], help="benchmark strategies over a test set")
    p.add_argument("--kb", required=True)
    p.add_argument("--strategies", default=None, help="comma-separated strategy names")
    p.add_argument("--ks", default=None, help="comma-separated k values")
    p.add_argument("--testset", default=None, help="existing cases.jsonl")
    p.add_argument("--make-rephrase", dest="make_rephrase", type=_positive_int, default=None)
    p.add_argument("--make-ood", dest="make_ood", action="store_true")
    p.add_argument("--out", required=True, help="output directory for report and answers")
    p.add_argument("--matrix-source", dest="matrix_source", choices=("observed", "estimate"), default=None)
    p.add_argument("--weighting", choices=("binary", "probability"), default=None)
    p.add_argument("--aggregation", choices=("sum", "mean", "softmax"), default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except QbragError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # keep the exit-code contract for stray errors
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
