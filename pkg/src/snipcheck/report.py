"""Safety reports: stage bookkeeping plus JSON and markdown rendering."""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from snipcheck.detectors import Finding

if TYPE_CHECKING:
    from snipcheck.ingest import Snippet
    from snipcheck.pipeline import RunConfig

SCHEMA_VERSION = 1
STAGES = ("ingest", "complete", "repair", "compile", "prune", "detect")
# prune failures fall back to whole-contract analysis instead of stopping
SOFT_FAILURES = {"prune"}
EXCERPT_LIMIT = 160


def _is_failure(status: str) -> bool:
    return status == "failed" or status.startswith("failed:")


@dataclass
class SafetyReport:
    snippet_id: str
    origin: dict[str, Any]
    stages: dict[str, tuple[str, list[str]]] = field(default_factory=dict)
    findings: list[Finding] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)
    completed_source: str | None = None
    snippet_text: str | None = None

    @classmethod
    def start(cls, snippet: Snippet, config: RunConfig) -> SafetyReport:
        limits = config.limits
        return cls(
            snippet.id,
            {"locator": snippet.origin.locator, "start": snippet.origin.start, "end": snippet.origin.end},
            {name: ("pending", []) for name in STAGES},
            metadata={
                "backend": config.backend,
                "compiler_version": None,
                "rounds": 0,
                "prune_enabled": config.prune,
                "limits": {
                    "max_depth": limits.max_depth,
                    "loop_bound": limits.loop_bound,
                    "timeout_s": limits.timeout,
                    "query_timeout_ms": limits.query_timeout_ms,
                },
            },
            snippet_text=snippet.source_text,
        )

    def set_stage(self, name: str, status: str, diagnostics: list[str] | None = None) -> None:
        if name not in STAGES:
            raise ValueError(f"unknown stage {name!r}")
        self.stages[name] = (status, list(diagnostics or []))

    def stage_status(self, name: str) -> str:
        return self.stages[name][0]

    def close(self) -> SafetyReport:
        """Mark stages after a hard failure, and any never reached, skipped."""
        halted = False
        for name in STAGES:
            status, diags = self.stages.get(name, ("pending", []))
            if halted or status == "pending":
                self.stages[name] = ("skipped", diags)
            elif _is_failure(status) and name not in SOFT_FAILURES:
                halted = True
        self.metadata["prune_status"] = self.stages["prune"][0]
        return self

    @property
    def has_errors(self) -> bool:
        return any(_is_failure(s) and n not in SOFT_FAILURES for n, (s, _) in self.stages.items()) \
            or self.stages["prune"][0] == "failed"

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "snippet": {"id": self.snippet_id, "origin": dict(self.origin)},
            "stages": [
                {"name": n, "status": self.stages[n][0], "diagnostics": list(self.stages[n][1])}
                for n in STAGES
            ],
            "findings": [finding_dict(f, self.completed_source, self.snippet_text) for f in self.findings],
            "metadata": self.metadata,
        }


def _line_and_excerpt(source: str | None, rng: tuple[int, int] | None) -> tuple[int | None, str | None]:
    if source is None or rng is None:
        return None, None
    data = source.encode()
    start, length = rng
    if start < 0 or start > len(data):
        return None, None
    line = data[:start].count(b"\n") + 1
    text = data[start:start + length].decode(errors="replace")
    first = text.splitlines()[0] if text else ""
    if len(first) > EXCERPT_LIMIT:
        first = first[:EXCERPT_LIMIT] + "..."
    return line, first


def _hexify(model: Mapping[str, int]) -> dict[str, str]:
    return {k: hex(v) for k, v in model.items()}


def _snippet_line(source: str | None, snippet: str | None, line: int | None) -> int | None:
    """``line`` of the completed source as a line of the snippet, when the
    snippet sits verbatim in it and the line falls inside."""
    if source is None or not snippet or line is None:
        return None
    body = snippet.strip("\n")
    at = source.find(body)
    if at < 0:
        return None
    first = source.count("\n", 0, at) + 1
    k = line - first + 1
    return k if 1 <= k <= body.count("\n") + 1 else None


def finding_dict(f: Finding, source: str | None = None, snippet: str | None = None) -> dict[str, Any]:
    line, excerpt = _line_and_excerpt(source, f.source_range)
    witness = None
    if f.witness is not None:
        witness = dict(f.witness)
        witness["model"] = _hexify(witness.get("model", {}))
    return {
        "kind": f.kind.value,
        "pc": f.pc,
        "source_range": {"offset": f.source_range[0], "length": f.source_range[1]} if f.source_range else None,
        "line": line,
        "snippet_line": _snippet_line(source, snippet, line),
        "excerpt": excerpt,
        "block_ids": list(f.block_ids),
        "message": f.message,
        "confidence": f.confidence.value,
        "certainty": f.certainty,
        "witness": witness,
    }


# ------------------------------------------------------------------ render


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _as_dict(report: SafetyReport | Mapping[str, Any]) -> Mapping[str, Any]:
    return report.to_dict() if isinstance(report, SafetyReport) else report


def render(report: SafetyReport | Mapping[str, Any], fmt: str = "json") -> bytes:
    """Deterministic rendering; ``json`` is canonical (sorted keys, compact)."""
    data = _as_dict(report)
    if fmt == "json":
        return canonical_json(data).encode()
    if fmt == "markdown":
        return render_markdown(data).encode()
    raise ValueError(f"unknown report format {fmt!r}; expected json or markdown")


def render_markdown(data: Mapping[str, Any]) -> str:
    snip = data["snippet"]
    meta = data.get("metadata", {})
    out = [f"# Safety report: {snip['id']}", ""]
    if snip["origin"].get("locator"):
        o = snip["origin"]
        out += [f"Source: `{o['locator']}` bytes {o['start']}..{o['end']}", ""]
    out += ["| stage | status | notes |", "|---|---|---|"]
    for st in data["stages"]:
        notes = "; ".join(st["diagnostics"]).replace("|", "\\|").replace("\n", " ")
        out.append(f"| {st['name']} | {st['status']} | {notes} |")
    out.append("")
    facts = [f"backend `{meta.get('backend')}`"]
    if meta.get("compiler_version"):
        facts.append(f"compiler {meta['compiler_version']}")
    if meta.get("rounds"):
        facts.append(f"{meta['rounds']} completion round(s)")
    out += ["Run: " + ", ".join(facts) + ".", ""]
    findings = data["findings"]
    if not findings:
        completed = all(st["status"] in ("ok", "skipped") or st["name"] == "prune" for st in data["stages"])
        if completed and data["stages"][-1]["status"] == "ok":
            out += ["## No issues detected", "", "None of the nine checked vulnerability kinds were found."]
        else:
            out += ["## Analysis incomplete", "", "No findings, but not every stage succeeded."]
        return "\n".join(out) + "\n"
    out += [f"## Findings ({len(findings)})", ""]
    for k, f in enumerate(findings, 1):
        where = f"line {f['line']}" if f.get("line") else f"pc {f['pc']:#x}"
        if f.get("snippet_line") and f["snippet_line"] != f.get("line"):
            where += f" (snippet line {f['snippet_line']})"
        tags = f["confidence"] + ("" if f["certainty"] == "high" else f", {f['certainty']} certainty")
        out.append(f"{k}. **{f['kind']}** at {where} ({tags}): {f['message']}")
        if f.get("excerpt"):
            out += ["", "   ```solidity", f"   {f['excerpt']}", "   ```"]
        out.append("")
    return "\n".join(out)


def summary(reports: list[Mapping[str, Any]]) -> dict[str, Any]:
    kinds: dict[str, int] = {}
    failed = 0
    for r in reports:
        if any(_is_failure(s["status"]) and s["name"] not in SOFT_FAILURES for s in r["stages"]):
            failed += 1
        for f in r["findings"]:
            kinds[f["kind"]] = kinds.get(f["kind"], 0) + 1
    return {"reports": len(reports), "with_errors": failed, "findings_by_kind": dict(sorted(kinds.items()))}
