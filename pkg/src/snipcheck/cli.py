"""Command-line entry points.

Exit codes: 0 no findings, 1 findings, 2 pipeline errors, 64 bad usage or
configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from snipcheck import __version__
from snipcheck.ingest import Snippet, filter_snippets, read_snippets

EXIT_CLEAN, EXIT_FINDINGS, EXIT_ERRORS, EXIT_USAGE = 0, 1, 2, 64

logger = logging.getLogger("snipcheck")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2, which means pipeline errors here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text} is not a positive integer")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"{text} is not positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="snipcheck", description="Vulnerability checks for Solidity snippets.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="complete, compile and check snippets")
    a.add_argument("inputs", nargs="+", type=Path, help=".sol, .md or .html files")
    a.add_argument("--config", type=Path, help="TOML file with defaults for these flags")
    a.add_argument("--backend", help="scaffold (default) or http:<url>")
    a.add_argument("--max-rounds", type=_positive_int)
    a.add_argument("--catalog", type=Path, help="compiler catalog (default $SNIPCHECK_CATALOG)")
    a.add_argument("--no-prune", action="store_true", help="analyze the whole completed contract")
    a.add_argument("--dump-cfg", type=Path, metavar="DIR", help="write each CFG as DOT into DIR")
    a.add_argument("--jobs", type=_positive_int)
    a.add_argument("--loop-bound", type=_positive_int)
    a.add_argument("--max-depth", type=_positive_int)
    a.add_argument("--timeout", type=_positive_float, help="seconds per contract")
    a.add_argument("--min-lines", type=_positive_int)
    a.add_argument("--format", choices=("ndjson", "markdown"), default="ndjson")
    a.add_argument("-o", "--output", type=Path, help="write reports here instead of stdout")

    i = sub.add_parser("ingest", help="extract snippets from documents")
    i.add_argument("inputs", nargs="+", type=Path)
    i.add_argument("--min-lines", type=_positive_int, default=2)
    i.add_argument("--all", action="store_true", help="skip filtering")

    b = sub.add_parser("bench", help="benchmark utilities")
    bsub = b.add_subparsers(dest="bench_command", required=True, parser_class=_Parser)
    s = bsub.add_parser("score", help="P/R/F1 of predictions against labels")
    s.add_argument("--truth", type=Path, required=True, help="corpus JSON lines {id, path, labels}")
    s.add_argument("--pred", type=Path, required=True, help="NDJSON reports or {id, kinds} rows")
    s.add_argument("--figure", type=Path, help="also draw per-kind P/R/F1 bars to this image")
    s.add_argument("--json", action="store_true", help="print metrics as JSON")
    lb = bsub.add_parser("llm-baseline", help="ask a model directly for verdicts")
    lb.add_argument("--truth", type=Path, required=True)
    lb.add_argument("--backend", required=True, help="http:<url>")
    lb.add_argument("--kinds", help="comma-separated subset, default all nine")
    lb.add_argument("-o", "--output", type=Path)

    c = sub.add_parser("cfg", help="control-flow graph tools")
    csub = c.add_subparsers(dest="cfg_command", required=True, parser_class=_Parser)
    d = csub.add_parser("dump", help="print a CFG as DOT")
    src = d.add_mutually_exclusive_group(required=True)
    src.add_argument("--bytecode", help="hex runtime bytecode, or @file")
    src.add_argument("--source", type=Path, help="Solidity file to compile first")
    d.add_argument("--compiler", help="compiler version for --source (default: adapt)")
    d.add_argument("--catalog", type=Path)
    d.add_argument("--loops", action="store_true", help="list loops instead of DOT")
    return p


# ------------------------------------------------------------------ analyze

_CONFIG_KEYS = {"backend", "max_rounds", "catalog", "prune", "jobs", "loop_bound", "max_depth",
                "timeout", "query_timeout_ms", "min_lines", "dump_cfg"}


def _load_config(path: Path | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    data = data.get("snipcheck", data)
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return data


def run_config(args: argparse.Namespace):
    from snipcheck.pipeline import RunConfig
    from snipcheck.solc import ConfigurationError
    from snipcheck.symexec import Limits

    conf = _load_config(args.config)

    def pick(flag: Any, key: str, default: Any) -> Any:
        return flag if flag is not None else conf.get(key, default)

    try:
        limits = Limits(
            max_depth=pick(args.max_depth, "max_depth", 512),
            loop_bound=pick(args.loop_bound, "loop_bound", 3),
            timeout=float(pick(args.timeout, "timeout", 300.0)),
            query_timeout_ms=conf.get("query_timeout_ms", 5000),
        )
        catalog = pick(args.catalog, "catalog", None)
        dump = pick(args.dump_cfg, "dump_cfg", None)
        config = RunConfig(
            backend=pick(args.backend, "backend", "scaffold"),
            max_rounds=pick(args.max_rounds, "max_rounds", 13),
            catalog_path=Path(catalog) if catalog else None,
            limits=limits,
            prune=False if args.no_prune else bool(conf.get("prune", True)),
            min_lines=pick(args.min_lines, "min_lines", 2),
            jobs=pick(args.jobs, "jobs", 1),
            dump_cfg=Path(dump) if dump else None,
        )
        config.validate()
        config.catalog()  # fail early on a missing or unreadable catalog
    except (ValueError, TypeError, ConfigurationError) as exc:
        raise UsageError(str(exc)) from None
    return config


def _snippets_for(path: Path, min_lines: int) -> list[Snippet]:
    if not path.is_file():
        raise UsageError(f"no such file: {path}")
    found = read_snippets(path)
    kept = filter_snippets(found, min_lines)
    if found and not kept and path.suffix.lower() not in (".md", ".markdown", ".html", ".htm"):
        kept = found  # a plain file is analyzed even if the classifier hesitates
    for s in found:
        if s not in kept:
            logger.info("skipping %s: %s, %d lines", s.id, s.language_guess.value, s.line_count)
    return kept


def _analyze_one(item: tuple[Snippet, Any]) -> dict[str, Any]:
    from snipcheck.pipeline import analyze_snippet

    snippet, config = item
    return analyze_snippet(snippet, config).to_dict()


def cmd_analyze(args: argparse.Namespace) -> int:
    from snipcheck.report import canonical_json, render_markdown, summary

    config = run_config(args)
    snippets: list[Snippet] = []
    for path in args.inputs:
        snippets.extend(_snippets_for(path, config.min_lines))
    work = [(s, config) for s in snippets]
    if config.jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            reports = list(pool.map(_analyze_one, work))
    else:
        reports = [_analyze_one(w) for w in work]

    if args.format == "markdown":
        text = "\n".join(render_markdown(r) for r in reports)
    else:
        text = "".join(canonical_json(r) + "\n" for r in reports)
    if args.output:
        args.output.write_text(text)
    else:
        sys.stdout.write(text)
    print(canonical_json(summary(reports)), file=sys.stderr)

    from snipcheck.report import SOFT_FAILURES

    def errored(r: dict[str, Any]) -> bool:
        return any(
            st["status"] == "failed" or (st["status"].startswith("failed:") and st["name"] not in SOFT_FAILURES)
            for st in r["stages"]
        )

    if not reports:
        logger.warning("no Solidity snippets found in the inputs")
        return EXIT_ERRORS
    if any(errored(r) for r in reports):
        return EXIT_ERRORS
    return EXIT_FINDINGS if any(r["findings"] for r in reports) else EXIT_CLEAN


# ------------------------------------------------------------------ others


def cmd_ingest(args: argparse.Namespace) -> int:
    for path in args.inputs:
        if not path.is_file():
            raise UsageError(f"no such file: {path}")
        found = read_snippets(path)
        for s in found if args.all else filter_snippets(found, args.min_lines):
            sys.stdout.write(json.dumps(s.to_json(), sort_keys=True) + "\n")
    return EXIT_CLEAN


def cmd_bench(args: argparse.Namespace) -> int:
    from snipcheck import bench

    try:
        truth = bench.load_corpus(args.truth)
    except (OSError, bench.CorpusError) as exc:
        raise UsageError(str(exc)) from None
    if args.bench_command == "score":
        try:
            preds = bench.load_predictions(args.pred, truth)
        except (OSError, bench.CorpusError, ValueError) as exc:
            raise UsageError(str(exc)) from None
        metrics = bench.score(preds, truth)
        if args.json:
            print(json.dumps(metrics.to_dict(), sort_keys=True))
        else:
            print(format_metrics(metrics))
        if args.figure:
            bench.plot_metrics(metrics, args.figure)
        return EXIT_CLEAN

    from snipcheck.completer import BackendError, HttpBackend, backend_from_spec

    try:
        backend = backend_from_spec(args.backend)
        kinds = [bench.parse_kind(k) for k in args.kinds.split(",")] if args.kinds else list(bench.ALL_KINDS)
    except (ValueError, bench.CorpusError) as exc:
        raise UsageError(str(exc)) from None
    if not isinstance(backend, HttpBackend):
        raise UsageError("llm-baseline needs an http:<url> backend")
    try:
        rows = bench.run_llm_baseline(truth, backend.generate, kinds)
    except BackendError as exc:
        print(f"snipcheck: {exc}", file=sys.stderr)
        return EXIT_ERRORS
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)
    if args.output:
        args.output.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_CLEAN


def format_metrics(metrics) -> str:
    def pct(x) -> str:
        return "-" if x is None else f"{float(x) * 100:.1f}"
    lines = ["kind   TP  FP  FN      P      R     F1"]
    for k, m in metrics.per_kind.items():
        lines.append(f"{k.value:<5} {m.tp:>3} {m.fp:>3} {m.fn:>3} {pct(m.precision):>6} {pct(m.recall):>6} {pct(m.f1):>6}")
    if metrics.n:
        from snipcheck.bench import weighted_f1
        lines.append(f"weighted F1: {float(weighted_f1(metrics)) * 100:.1f}% over {metrics.n} kinds")
    return "\n".join(lines)


def cmd_cfg(args: argparse.Namespace) -> int:
    from snipcheck.evm.cfg import build_cfg
    from snipcheck.evm.disasm import as_bytes, disassemble
    from snipcheck.evm.loops import detect_loops

    if args.bytecode is not None:
        text = args.bytecode
        if text.startswith("@"):
            text = Path(text[1:]).read_text()
        try:
            code = as_bytes(text)
        except ValueError as exc:
            raise UsageError(f"bad bytecode: {exc}") from None
        cfg = build_cfg(disassemble(code))
    else:
        from snipcheck.pruner import annotate
        from snipcheck.repair import Adapted, adapt_version
        from snipcheck.solc import Catalog, ConfigurationError, compile_source

        try:
            catalog = Catalog.load(args.catalog) if args.catalog else Catalog.from_env()
            source = args.source.read_text()
            if args.compiler:
                out = compile_source(source, args.compiler, catalog)
            else:
                adapted = adapt_version(source, catalog)
                if not isinstance(adapted, Adapted):
                    print(f"snipcheck: no compiler accepts {args.source}: {adapted.summary()}", file=sys.stderr)
                    return EXIT_ERRORS
                out = adapted.output
        except (OSError, ConfigurationError) as exc:
            raise UsageError(str(exc)) from None
        if not out.ok:
            for d in out.errors:
                print(d.message, file=sys.stderr)
            return EXIT_ERRORS
        cfg = build_cfg(annotate(disassemble(out.runtime_bytecode), out.source_map))
    if args.loops:
        for loop in detect_loops(cfg):
            print(f"header {loop.header:#x}: " + " ".join(f"{b:#x}" for b in sorted(loop.members)))
    else:
        sys.stdout.write(cfg.to_dot())
    return EXIT_CLEAN


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"analyze": cmd_analyze, "ingest": cmd_ingest, "bench": cmd_bench, "cfg": cmd_cfg}
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"snipcheck: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
