"""End-to-end analysis of one snippet: complete, repair, compile, build the
CFG, prune, explore, detect."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from snipcheck import report as R
from snipcheck.completer import (
    DEFAULT_MAX_ROUNDS,
    BackendError,
    CheckResult,
    CompletionBackend,
    CompletionCandidate,
    CompletionError,
    PipelineError,
    backend_from_spec,
    complete_iteratively,
)
from snipcheck.detectors import detect_all
from snipcheck.evm.cfg import Cfg, build_cfg
from snipcheck.evm.disasm import disassemble
from snipcheck.evm.loops import detect_loops
from snipcheck.ingest import DEFAULT_MIN_LINES, Snippet
from snipcheck.pruner import PruneFailure, PrunedCfg, annotate, extract_info, prune
from snipcheck.repair import Adapted, adapt_version
from snipcheck.solc import BridgeError, Catalog, CompileOutput, CompilerEnvironmentError, ConfigurationError
from snipcheck.symexec import Limits, explore

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    backend: str = "scaffold"
    max_rounds: int = DEFAULT_MAX_ROUNDS
    catalog_path: Path | None = None
    limits: Limits = field(default_factory=Limits)
    prune: bool = True
    min_lines: int = DEFAULT_MIN_LINES
    jobs: int = 1
    dump_cfg: Path | None = None
    detection_budget: float | None = None

    def validate(self) -> None:
        if self.max_rounds < 1:
            raise ConfigurationError("max_rounds must be at least 1")
        if self.jobs < 1:
            raise ConfigurationError("jobs must be at least 1")
        if self.min_lines < 1:
            raise ConfigurationError("min_lines must be at least 1")
        if self.catalog_path is not None and not Path(self.catalog_path).is_file():
            raise ConfigurationError(f"compiler catalog {self.catalog_path} does not exist")
        if self.dump_cfg is not None and not Path(self.dump_cfg).is_dir():
            raise ConfigurationError(f"--dump-cfg directory {self.dump_cfg} does not exist")
        try:
            backend_from_spec(self.backend)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None

    def catalog(self) -> Catalog:
        if self.catalog_path is not None:
            return Catalog.load(self.catalog_path)
        return Catalog.from_env()


def pick_contract(output: CompileOutput, snippet_contracts: frozenset[str]) -> CompileOutput:
    """Analyze the snippet's own contract when it names one with code."""
    ordered = [n.name for n in output.ast.walk() if n.kind == "ContractDefinition"] if output.ast else []
    for name in reversed(ordered):
        if name in snippet_contracts and output.contracts.get(name) and output.contracts[name].runtime_bytecode:
            return output.select(name)
    return output


@dataclass
class Analysis:
    """Everything computed after compilation, for callers that want more
    than the report."""

    output: CompileOutput
    cfg: Cfg
    pruned: PrunedCfg | PruneFailure | None
    detection: object
    exploration: object


def analyze_compiled(output: CompileOutput, snippet_text: str | None, config: RunConfig,
                     report: R.SafetyReport | None = None) -> Analysis:
    """CFG, pruning, exploration and detection for a compiled contract."""
    info = extract_info(snippet_text) if snippet_text else None
    if info is not None:
        output = pick_contract(output, info.contract_names)
    code = output.runtime_bytecode
    instructions = annotate(disassemble(code), output.source_map)
    cfg = build_cfg(instructions)
    if config.dump_cfg is not None and report is not None:
        safe = report.snippet_id.replace("/", "_").replace("#", "_")
        (Path(config.dump_cfg) / f"{safe}.dot").write_text(cfg.to_dot())

    pruned: PrunedCfg | PruneFailure | None = None
    if config.prune and info is not None:
        try:
            pruned = prune(output, info, cfg)
        except BridgeError as exc:
            pruned = None
            if report is not None:
                report.set_stage("prune", "failed", [str(exc)])
        else:
            if report is not None:
                if isinstance(pruned, PruneFailure):
                    report.set_stage("prune", pruned.status(), [pruned.detail])
                else:
                    report.set_stage("prune", "ok", [f"{len(pruned.retained_block_ids)}/{len(cfg.blocks)} blocks retained"])
    elif report is not None:
        report.set_stage("prune", "skipped", ["pruning disabled" if not config.prune else "no snippet text"])

    selectors = [int(s, 16) for s in (output.main.method_identifiers.values() if output.main else ())]
    exploration = explore(cfg, code, config.limits, selectors=selectors)
    augmented = cfg.with_edges(exploration.loop_edges())
    loops = detect_loops(augmented)
    detection = detect_all(
        exploration.paths, augmented, loops,
        pruned if isinstance(pruned, PrunedCfg) else None,
        output.version,
        ast=output.ast,
        method_identifiers=output.main.method_identifiers if output.main else None,
        query_timeout_ms=config.limits.query_timeout_ms,
        budget=config.detection_budget,
    )
    if report is not None:
        diags = list(detection.diagnostics)
        if exploration.timed_out:
            diags.append(f"exploration timed out after {config.limits.timeout:g}s; results are partial")
        diags.append(f"{len(exploration.paths)} paths, {len(loops)} loops")
        report.set_stage("detect", "ok", diags)
        report.findings = list(detection.findings)
        report.metadata["paths"] = len(exploration.paths)
    return Analysis(output, cfg, pruned, detection, exploration)


def analyze_snippet(snippet: Snippet, config: RunConfig, *, backend: CompletionBackend | None = None,
                    catalog: Catalog | None = None) -> R.SafetyReport:
    """Run every stage for ``snippet``; failures are recorded, never raised."""
    report = R.SafetyReport.start(snippet, config)
    report.set_stage("ingest", "ok", [f"{snippet.line_count} lines, {snippet.language_guess.value}"])
    backend = backend or backend_from_spec(config.backend)
    report.metadata["backend"] = backend.name
    catalog = catalog or config.catalog()

    def compile_check(source: str) -> CheckResult:
        result = adapt_version(source, catalog)
        if isinstance(result, Adapted):
            return CheckResult(True, [], result)
        return CheckResult(False, [result.summary()], result)

    try:
        outcome = complete_iteratively(snippet, backend, compile_check, config.max_rounds)
    except (CompletionError, CompilerEnvironmentError, BridgeError, ConfigurationError, ValueError) as exc:
        cause = exc.__cause__ if isinstance(exc, PipelineError) and exc.__cause__ else exc
        report.set_stage("complete", "failed", [f"{type(cause).__name__}: {cause}"])
        return report.close()
    if not isinstance(outcome, CompletionCandidate):
        report.metadata["rounds"] = outcome.rounds
        report.set_stage("complete", "failed", outcome.diagnostics or ["no candidate compiled"])
        return report.close()

    adapted: Adapted = outcome.check.payload
    report.metadata["rounds"] = outcome.round_index
    notes = [f"round {outcome.round_index} of {config.max_rounds}"]
    if not outcome.preserves_snippet:
        notes.append("candidate does not contain every snippet line")
    report.set_stage("complete", "ok", notes)
    report.set_stage("repair", "ok", [f"compiler {adapted.version} selected"])
    report.metadata["compiler_version"] = adapted.version
    report.completed_source = adapted.source
    warnings = [d.message.splitlines()[0] for d in adapted.output.diagnostics if not d.is_error]
    report.set_stage("compile", "ok", warnings)
    try:
        analysis = analyze_compiled(adapted.output, snippet.source_text, config, report)
    except Exception as exc:  # noqa: BLE001 - one bad contract must not sink the batch
        logger.exception("analysis of %s failed", snippet.id)
        if report.stage_status("prune") == "pending":
            report.set_stage("prune", "failed", [f"{type(exc).__name__}: {exc}"])
        report.set_stage("detect", "failed", [f"{type(exc).__name__}: {exc}"])
        return report.close()
    report.metadata["contract"] = analysis.output.primary
    return report.close()


def analyze_source(source: str, config: RunConfig, *, id: str = "source", locator: str = "") -> R.SafetyReport:
    return analyze_snippet(Snippet.from_text(source, id=id, locator=locator), config)


def with_overrides(config: RunConfig, **changes) -> RunConfig:
    return replace(config, **{k: v for k, v in changes.items() if v is not None})


__all__ = ["Analysis", "BackendError", "RunConfig", "analyze_compiled", "analyze_snippet",
           "analyze_source", "pick_contract", "with_overrides"]
