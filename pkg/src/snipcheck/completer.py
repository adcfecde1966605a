"""Snippet completion: prompt construction, pluggable backends, the
complete-repair-compile loop, and an offline scaffold backend."""

from __future__ import annotations

import logging
import re
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any, Protocol, runtime_checkable

import httpx

from snipcheck.ingest import Snippet
from snipcheck.repair import StructuralError, balance_structure

logger = logging.getLogger(__name__)

DEFAULT_MAX_ROUNDS = 13
DEFAULT_PROMPT_BUDGET = 8000
PLACEHOLDER_PRAGMA = "pragma solidity >=0.4.22 <0.9.0;"
SHELL_NAME = "SnippetShell"

INSTRUCTION = (
    "Complete this fragment into a full, compilable Solidity contract. "
    "Preserve the fragment verbatim: add declarations, dependencies and "
    "closing brackets around it, but do not rename, reorder or delete any "
    "of its lines."
)


class CompletionError(Exception):
    pass


class PromptTooLong(CompletionError):
    pass


class ScaffoldError(CompletionError):
    def __init__(self, names: list[str]) -> None:
        super().__init__("cannot infer a declaration for: " + ", ".join(names))
        self.names = names


class BackendError(CompletionError):
    """Transport failure talking to a backend; the round may be retried."""

    def __init__(self, message: str, round_index: int | None = None) -> None:
        super().__init__(message if round_index is None else f"round {round_index}: {message}")
        self.round_index = round_index


class PipelineError(CompletionError):
    pass


@dataclass(frozen=True)
class PromptText:
    instruction: str
    snippet_body: str

    def render(self) -> str:
        return f"{self.instruction}\n\n### Input:\n{self.snippet_body}\n\n### Output:\n"


def build_prompt(snippet: Snippet | str, budget: int = DEFAULT_PROMPT_BUDGET) -> PromptText:
    body = snippet.source_text if isinstance(snippet, Snippet) else snippet
    if not body.strip():
        raise ValueError("cannot build a prompt for an empty snippet")
    if len(body) > budget:
        raise PromptTooLong(f"snippet has {len(body)} characters, budget is {budget}")
    return PromptText(INSTRUCTION, body)


@runtime_checkable
class CompletionBackend(Protocol):
    name: str

    def complete(self, prompt: PromptText) -> str: ...


class ScaffoldBackend:
    """Deterministic, offline.  Ignores the instruction."""

    name = "scaffold"

    def complete(self, prompt: PromptText) -> str:
        return scaffold_complete(prompt.snippet_body)


class HttpBackend:
    """POST ``{prompt, max_new_tokens}`` and read ``{text}`` back."""

    def __init__(self, url: str, *, max_new_tokens: int = 2048, timeout: float = 120.0,
                 client: httpx.Client | None = None) -> None:
        self.url = url
        self.name = f"http:{url}"
        self.max_new_tokens = max_new_tokens
        self._client = client or httpx.Client(timeout=timeout)

    def complete(self, prompt: PromptText) -> str:
        return self.generate(prompt.render())

    def generate(self, text: str) -> str:
        try:
            resp = self._client.post(self.url, json={"prompt": text, "max_new_tokens": self.max_new_tokens})
            resp.raise_for_status()
            body = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise BackendError(f"{self.url}: {exc}") from exc
        if not isinstance(body, dict) or not isinstance(body.get("text"), str):
            raise BackendError(f"{self.url}: reply has no 'text' field")
        return body["text"]


def backend_from_spec(spec: str) -> CompletionBackend:
    if spec == "scaffold":
        return ScaffoldBackend()
    if spec.startswith("http:") and len(spec) > 5:
        url = spec[5:]
        if not url.startswith(("http://", "https://")):
            url = "http://" + url.lstrip("/")
        return HttpBackend(url)
    raise ValueError(f"unknown backend {spec!r}; expected scaffold or http:<url>")


_FENCED = re.compile(r"```[^\n]*\n(.*?)```", re.S)


def extract_code(reply: str) -> str:
    """Models often wrap code in a fence; take the longest fenced block."""
    blocks = _FENCED.findall(reply)
    return max(blocks, key=len) if blocks else reply


# ------------------------------------------------------------------ the loop


@dataclass
class CheckResult:
    ok: bool
    diagnostics: list[str] = field(default_factory=list)
    payload: Any = None


@dataclass
class CompletionCandidate:
    snippet_id: str
    source_text: str
    backend_name: str
    round_index: int
    preserves_snippet: bool = True
    check: CheckResult | None = None


@dataclass
class IncompleteMark:
    snippet_id: str
    rounds: int
    diagnostics: list[str]


def _norm(line: str) -> str:
    return " ".join(line.split())


def preserves_snippet(candidate: str, snippet: str) -> bool:
    """Every non-empty snippet line appears, whitespace-normalized, in the
    candidate."""
    have = {_norm(line) for line in candidate.splitlines()}
    return all(_norm(line) in have for line in snippet.splitlines() if line.strip())


def complete_iteratively(
    snippet: Snippet,
    backend: CompletionBackend,
    compile_check: Callable[[str], CheckResult],
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> CompletionCandidate | IncompleteMark:
    """Ask ``backend`` for up to ``max_rounds`` completions and return the
    first one that compiles after bracket repair.  Repeated texts are not
    re-checked."""
    if max_rounds < 1:
        raise ValueError("max_rounds must be at least 1")
    prompt = build_prompt(snippet)
    seen: set[str] = set()
    diagnostics: list[str] = []
    for round_index in range(1, max_rounds + 1):
        try:
            text = backend.complete(prompt)
        except BackendError as exc:
            raise BackendError(str(exc), round_index) from exc
        except ScaffoldError as exc:
            # deterministic: every further round would fail identically
            diagnostics.append(str(exc))
            return IncompleteMark(snippet.id, round_index, diagnostics)
        text = extract_code(text)
        if text in seen:
            continue
        seen.add(text)
        try:
            repaired = balance_structure(text).repaired_source
        except StructuralError as exc:
            _note(diagnostics, f"structure: {exc}")
            continue
        try:
            result = compile_check(repaired)
        except Exception as exc:  # noqa: BLE001 - surfaced as a pipeline error
            raise PipelineError(f"compile check crashed in round {round_index}: {exc}") from exc
        if result.ok:
            return CompletionCandidate(
                snippet.id, repaired, backend.name, round_index,
                preserves_snippet(repaired, snippet.source_text), result,
            )
        for d in result.diagnostics or ["candidate did not compile"]:
            _note(diagnostics, d)
    return IncompleteMark(snippet.id, max_rounds, diagnostics)


def _note(diagnostics: list[str], message: str) -> None:
    if message not in diagnostics:
        diagnostics.append(message)


# ------------------------------------------------------------------ scaffold

_WRAPPER = re.compile(r"^\s*(?:abstract\s+)?(?:contract|library|interface)\s+[A-Za-z_]\w*", re.M)
_PRAGMA = re.compile(r"^\s*pragma\s+solidity\b", re.M)
_HEADER_LINE = re.compile(r"^\s*(?:pragma\b|import\b|//\s*SPDX)")
_DEFINES_MEMBERS = re.compile(r"\b(?:function|modifier|constructor|event|struct|enum|fallback|receive)\b")
_STRIP = re.compile(r"//[^\n]*|/\*.*?\*/|\"(?:\\.|[^\"\\\n])*\"|'(?:\\.|[^'\\\n])*'", re.S)

_ELEMENTARY = re.compile(r"^(?:u?int\d*|bytes\d*|address|bool|string|byte|fixed|ufixed|var)$")

KEYWORDS = frozenset("""
abstract anonymous as assembly break calldata catch constant constructor continue
contract delete do else emit enum error event external fallback false for function
if immutable import indexed interface internal is library mapping memory modifier new
override payable pragma private public pure receive return returns revert solidity
storage struct super this throw true try type unchecked using view virtual while
experimental
msg block tx now require assert keccak256 sha3 sha256 ripemd160 ecrecover addmod
mulmod selfdestruct suicide gasleft blockhash abi wei gwei ether finney szabo seconds
minutes hours days weeks years _ length push pop
""".split())


def _clean(text: str) -> str:
    """Comments and string literals blanked out, offsets kept."""
    return _STRIP.sub(lambda m: " " * len(m.group(0)), text)


_DECL_PATTERNS = [
    # type [location/visibility...] name   (params, locals, state vars, returns)
    re.compile(
        r"(?:\b(?:u?int\d*|bytes\d*|address(?:\s+payable)?|bool|string|byte|var|[A-Z]\w*)"
        r"|\bmapping\s*\((?:[^()]|\([^()]*\))*\))"
        r"(?:\s*\[[^\]]*\])*"
        r"(?:\s+(?:memory|storage|calldata|public|private|internal|external|constant|immutable|payable|indexed|override))*"
        r"\s+([A-Za-z_]\w*)\s*(?=[;=,)])"
    ),
    re.compile(r"\b(?:function|modifier|event|struct|enum|contract|interface|library|error)\s+([A-Za-z_]\w*)"),
    re.compile(r"\benum\s+\w+\s*\{([^}]*)\}"),
]


def _declared(code: str) -> set[str]:
    names: set[str] = set()
    for rx in _DECL_PATTERNS:
        for m in rx.finditer(code):
            for part in m.group(1).split(","):
                if part.strip():
                    names.add(part.strip())
    return names


_IDENT = re.compile(r"(?<![\w.$])([A-Za-z_]\w*)\b")


def _infer(name: str, code: str) -> str | None:
    n = re.escape(name)
    if re.search(rf"\b{n}\s*\.\s*(?:transfer|send|call|delegatecall|balance)\b", code):
        return "address payable"
    pays = re.search(rf"\b{n}\s*\[[^\]]*\]\s*\.\s*(?:transfer|send|call)\b", code)
    if re.search(rf"\b{n}\s*\.\s*(?:length|push|pop)\b", code):
        return "address payable[]" if pays else "uint256[]"
    if pays:
        return "mapping(uint256 => address payable)"
    if re.search(rf"\b{n}\s*\[[^\]]*\]\s*\[", code):
        return "mapping(address => mapping(address => uint256))"
    if re.search(rf"\b{n}\s*\[", code):
        return "mapping(address => uint256)"
    sender = r"(?:msg\.sender|tx\.origin|address\(this\))"
    if re.search(rf"\b{n}\s*(?:==|!=|=(?!=))\s*{sender}|{sender}\s*(?:==|!=)\s*{n}\b", code):
        return "address"
    number = r"(?:\d[\d_]*(?:\s*(?:wei|gwei|ether|finney|szabo|seconds|minutes|hours|days|weeks|years))?|msg\.value|block\.(?:timestamp|number)|now)"
    arith = r"(?:[-+*/%<>]=?|==|!=)"
    if (re.search(rf"\b{n}\s*{arith}\s*{number}\b", code)
            or re.search(rf"\b{number}\s*{arith}\s*{n}\b", code)
            or re.search(rf"\b{n}\s*(?:\+\+|--|[-+*/]=)", code)
            or re.search(rf"(?:\+\+|--)\s*{n}\b", code)):
        return "uint256"
    if re.search(rf"(?:!\s*{n}\b|\b{n}\s*(?:&&|\|\|)|(?:&&|\|\|)\s*{n}\b|\b{n}\s*=\s*(?:true|false)\b)", code):
        return "bool"
    return None


def _unknown_types(code: str, declared: set[str]) -> list[str]:
    out = []
    for m in re.finditer(r"(?<![\w.])([A-Z]\w*)(?:\s*\[\s*\])?\s+(?:memory\s+|storage\s+|calldata\s+|public\s+|private\s+|internal\s+)?[a-z_]\w*\s*[;=,)]", code):
        if m.group(1) not in declared and m.group(1) not in out:
            out.append(m.group(1))
    return out


def _header_modifiers(code: str) -> list[str]:
    """Names sitting in a function header after the parameter list."""
    out: list[str] = []
    for m in re.finditer(r"\bfunction\s+\w*\s*\((?:[^()]|\([^()]*\))*\)([^{;]*)[{;]", code):
        tail = re.sub(r"\breturns\s*\((?:[^()]|\([^()]*\))*\)", " ", m.group(1))
        for ident in re.findall(r"\b([A-Za-z_]\w*)\b", tail):
            if ident not in KEYWORDS and ident not in out:
                out.append(ident)
    return out


def scaffold_complete(snippet: str) -> str:
    """Wrap a function-level snippet into a compilable contract shell.

    Full contracts only gain a pragma when they lack one.  Otherwise the
    snippet is wrapped in ``contract SnippetShell`` with a declaration for
    every identifier it uses but never declares.  Snippet lines are never
    edited.
    """
    if _WRAPPER.search(snippet):
        if _PRAGMA.search(snippet):
            return snippet
        return PLACEHOLDER_PRAGMA + "\n" + snippet
    lines = snippet.splitlines()
    header = []
    while lines and (not lines[0].strip() or _HEADER_LINE.match(lines[0])):
        header.append(lines.pop(0))
    body = "\n".join(lines)
    code = _clean(body)
    statements_only = not _DEFINES_MEMBERS.search(code)
    declared = _declared(code)
    missing_types = _unknown_types(code, declared)
    if missing_types:
        raise ScaffoldError(missing_types)

    modifiers = [m for m in _header_modifiers(code) if m not in declared]
    decls: list[str] = []
    unresolved: list[str] = []
    names: list[str] = []
    for m in _IDENT.finditer(code):
        name = m.group(1)
        if name in KEYWORDS or name in declared or name in modifiers or name in names:
            continue
        if _ELEMENTARY.match(name):
            continue
        after = code[m.end():m.end() + 2].lstrip()
        if after.startswith("("):
            prev = code[max(0, m.start() - 6):m.start()]
            if "emit" in prev or name[0].isupper():
                unresolved.append(name)
            elif name not in ("payable", "address"):
                unresolved.append(name)
            names.append(name)
            continue
        names.append(name)
        typ = _infer(name, code)
        if typ is None:
            unresolved.append(name)
        else:
            decls.append(f"    {typ} {name};")
    # `owner` idiom: a guard modifier compares against an owner address
    for mod in modifiers:
        if "owner" in mod.lower():
            if "owner" not in declared and not any(d.endswith(" owner;") for d in decls):
                decls.append("    address owner;")
            decls.append(f"    modifier {mod}() {{ require(msg.sender == owner); _; }}")
        else:
            unresolved.append(mod)
    if unresolved:
        raise ScaffoldError(sorted(dict.fromkeys(unresolved)))

    if statements_only:
        body = "function snippetBody() public {\n" + body + "\n}"
    head = [h for h in header if h.strip()]
    if not any(_PRAGMA.match(h) for h in head):
        head.insert(0, PLACEHOLDER_PRAGMA)
    parts = head + [f"contract {SHELL_NAME} {{"] + decls + ([""] if decls else []) + [body, "}"]
    return "\n".join(parts) + "\n"
