"""Bridge to the external Solidity compiler (standard-JSON mode).

A *catalog* maps compiler versions to executables that accept
``--standard-json`` on stdin, either native ``solc`` binaries or the
``solcjs`` shims produced by ``snipcheck.solcjs``.
"""

from __future__ import annotations

import json
import logging
import os
import subprocess
import threading
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

SOURCE_NAME = "snippet.sol"
CATALOG_ENV = "SNIPCHECK_CATALOG"

# one representative per minor series, newest first
SERIES_ORDER = ((0, 8), (0, 7), (0, 6), (0, 5), (0, 4))

_spawn_limit = threading.BoundedSemaphore(os.cpu_count() or 4)


def set_parallelism(n: int) -> None:
    """Bound the number of compiler processes running at once."""
    global _spawn_limit
    if n < 1:
        raise ConfigurationError("compiler parallelism must be at least 1")
    _spawn_limit = threading.BoundedSemaphore(n)


class BridgeError(RuntimeError):
    """The compiler ran but its reply could not be understood."""


class CompilerEnvironmentError(RuntimeError):
    """The compiler process could not be started."""


class ConfigurationError(ValueError):
    pass


Version = tuple[int, int, int]


def parse_version(text: str) -> Version:
    core = text.strip().lstrip("v").split("+")[0].split("-")[0]
    parts = core.split(".")
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise ValueError(f"not a compiler version: {text!r}")
    return int(parts[0]), int(parts[1]), int(parts[2])


def format_version(v: Version) -> str:
    return "%d.%d.%d" % v


# ---------------------------------------------------------------- AST model


@dataclass(frozen=True)
class AstNode:
    kind: str
    name: str | None
    src: tuple[int, int]  # byte offset, length
    children: tuple[AstNode, ...] = ()
    attrs: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)
    node_id: int | None = None

    @property
    def start(self) -> int:
        return self.src[0]

    @property
    def end(self) -> int:
        return self.src[0] + self.src[1]

    def walk(self) -> Iterator[AstNode]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def contains(self, offset: int, length: int) -> bool:
        return self.start <= offset and offset + length <= self.end


def _parse_src(src: str) -> tuple[int, int, int]:
    s, l, f = (int(x) for x in src.split(":")[:3])
    return s, l, f


_SCALAR_ATTRS = ("operator", "kind", "stateVariable", "visibility", "stateMutability",
                 "constant", "memberName", "typeDescriptions", "prefix", "value",
                 "isConstructor", "contractKind", "typeName", "baseName")


def _convert_compact(node: Mapping[str, Any]) -> AstNode:
    """Convert one node of solc's compact JSON AST."""
    children: list[AstNode] = []
    for key, value in node.items():
        if key in ("typeDescriptions",):
            continue
        if isinstance(value, dict) and "nodeType" in value and "src" in value:
            children.append(_convert_compact(value))
        elif isinstance(value, list):
            for item in value:
                if isinstance(item, dict) and "nodeType" in item and "src" in item:
                    children.append(_convert_compact(item))
    children.sort(key=lambda c: c.src)
    s, l, _ = _parse_src(node["src"])
    attrs = {k: node[k] for k in _SCALAR_ATTRS if k in node}
    name = node.get("name") if isinstance(node.get("name"), str) else None
    return AstNode(node["nodeType"], name, (s, l), tuple(children), attrs, node.get("id"))


def _convert_legacy(node: Mapping[str, Any]) -> AstNode:
    """Convert one node of the legacy (``name``/``children``) AST format."""
    attributes = node.get("attributes") or {}
    children = tuple(_convert_legacy(c) for c in node.get("children", ()) if "src" in c)
    s, l, _ = _parse_src(node["src"])
    name = attributes.get("name") if isinstance(attributes.get("name"), str) else None
    attrs = {k: attributes[k] for k in _SCALAR_ATTRS if k in attributes}
    return AstNode(node["name"], name, (s, l), children, attrs, node.get("id"))


def convert_ast(raw: Mapping[str, Any]) -> AstNode:
    if "nodeType" in raw:
        return _convert_compact(raw)
    return _convert_legacy(raw)


# ------------------------------------------------------------ compile output


@dataclass(frozen=True)
class SourceMapEntry:
    offset: int
    length: int
    file_index: int
    jump: str

    @property
    def in_source(self) -> bool:
        return self.file_index == 0 and self.offset >= 0


def decompress_source_map(text: str) -> list[SourceMapEntry]:
    """Expand solc's compressed ``s:l:f:j[:m]`` source map."""
    out: list[SourceMapEntry] = []
    if not text:
        return out
    s, l, f, j = -1, -1, -1, "-"
    for item in text.split(";"):
        fields = item.split(":")
        if len(fields) > 0 and fields[0] != "":
            s = int(fields[0])
        if len(fields) > 1 and fields[1] != "":
            l = int(fields[1])
        if len(fields) > 2 and fields[2] != "":
            f = int(fields[2])
        if len(fields) > 3 and fields[3] != "":
            j = fields[3]
        out.append(SourceMapEntry(s, l, f, j))
    return out


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning" | "info"
    message: str
    range: tuple[int, int] | None = None

    @property
    def is_error(self) -> bool:
        return self.severity == "error"


@dataclass(frozen=True)
class ContractBuild:
    name: str
    runtime_bytecode: bytes
    source_map: tuple[SourceMapEntry, ...]
    method_identifiers: Mapping[str, str]
    abi: tuple[Mapping[str, Any], ...]


@dataclass(frozen=True)
class CompileOutput:
    version: str
    source: str
    ast: AstNode | None
    contracts: Mapping[str, ContractBuild]
    diagnostics: tuple[Diagnostic, ...]
    primary: str | None = None

    @property
    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.is_error]

    @property
    def ok(self) -> bool:
        return not self.errors

    @property
    def main(self) -> ContractBuild | None:
        if self.primary is not None:
            return self.contracts.get(self.primary)
        return None

    @property
    def runtime_bytecode(self) -> bytes:
        main = self.main
        return main.runtime_bytecode if main else b""

    @property
    def source_map(self) -> tuple[SourceMapEntry, ...]:
        main = self.main
        return main.source_map if main else ()

    def select(self, name: str) -> CompileOutput:
        if name not in self.contracts:
            raise KeyError(name)
        return CompileOutput(self.version, self.source, self.ast, self.contracts,
                             self.diagnostics, name)


def _default_primary(contracts: Mapping[str, ContractBuild], ast: AstNode | None) -> str | None:
    """Last contract in source order that has runtime code."""
    with_code = [n for n, c in contracts.items() if c.runtime_bytecode]
    if not with_code:
        return None
    if ast is not None:
        order = [n.name for n in ast.walk() if n.kind == "ContractDefinition"]
        ranked = [n for n in order if n in with_code]
        if ranked:
            return ranked[-1]
    return with_code[-1]


def standard_json_request(source: str, optimize: bool = False) -> dict[str, Any]:
    return {
        "language": "Solidity",
        "sources": {SOURCE_NAME: {"content": source}},
        "settings": {
            "optimizer": {"enabled": optimize, "runs": 200},
            "outputSelection": {
                "*": {
                    "": ["ast", "legacyAST"],
                    "*": [
                        "abi",
                        "evm.deployedBytecode.object",
                        "evm.deployedBytecode.sourceMap",
                        "evm.methodIdentifiers",
                    ],
                }
            },
        },
    }


def parse_reply(version: str, source: str, reply: Mapping[str, Any]) -> CompileOutput:
    diagnostics = []
    for err in reply.get("errors", ()):
        loc = err.get("sourceLocation")
        rng = None
        if loc and loc.get("start", -1) >= 0:
            rng = (loc["start"], loc["end"] - loc["start"])
        severity = err.get("severity", "error")
        message = err.get("formattedMessage") or err.get("message", "")
        diagnostics.append(Diagnostic(severity, message.strip(), rng))

    ast = None
    src_entry = reply.get("sources", {}).get(SOURCE_NAME)
    if src_entry:
        raw = src_entry.get("ast") or src_entry.get("legacyAST")
        if raw:
            ast = convert_ast(raw)

    contracts: dict[str, ContractBuild] = {}
    if not any(d.is_error for d in diagnostics):
        for name, data in reply.get("contracts", {}).get(SOURCE_NAME, {}).items():
            evm = data.get("evm", {})
            deployed = evm.get("deployedBytecode", {})
            obj = deployed.get("object", "") or ""
            if "__" in obj:
                # unlinked library placeholder; link against address zero
                obj = _zero_link(obj)
            contracts[name] = ContractBuild(
                name=name,
                runtime_bytecode=bytes.fromhex(obj),
                source_map=tuple(decompress_source_map(deployed.get("sourceMap", ""))),
                method_identifiers=dict(evm.get("methodIdentifiers", {})),
                abi=tuple(data.get("abi", ())),
            )
    if not any(d.is_error for d in diagnostics) and not any(
        c.runtime_bytecode for c in contracts.values()
    ):
        diagnostics.append(Diagnostic("error", "no deployable contract in source"))
    out = CompileOutput(version, source, ast, contracts, tuple(diagnostics))
    return out.select(p) if (p := _default_primary(contracts, ast)) else out


def _zero_link(obj: str) -> str:
    out = []
    i = 0
    while i < len(obj):
        if obj.startswith("__", i):
            out.append("0" * 40)
            i += 40
        else:
            out.append(obj[i])
            i += 1
    return "".join(out)


# ------------------------------------------------------------------ catalog


@dataclass(frozen=True)
class Catalog:
    compilers: Mapping[str, Path]

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> Catalog:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigurationError(f"cannot read compiler catalog {path}: {exc}") from exc
        table = data.get("compilers", data)
        base = Path(path).resolve().parent
        compilers: dict[str, Path] = {}
        for version, exe in table.items():
            if not isinstance(exe, str):
                continue
            try:
                parse_version(version)
            except ValueError:
                logger.warning("catalog: ignoring malformed version %r", version)
                continue
            p = Path(exe)
            compilers[version] = p if p.is_absolute() else base / p
        return cls(compilers)

    @classmethod
    def from_env(cls) -> Catalog:
        path = os.environ.get(CATALOG_ENV)
        if not path:
            raise ConfigurationError(f"no compiler catalog given and ${CATALOG_ENV} is unset")
        return cls.load(path)

    def executable(self, version: str) -> Path:
        try:
            return self.compilers[version]
        except KeyError:
            raise ConfigurationError(f"compiler {version} is not in the catalog") from None


def list_versions(catalog: Catalog, preferred: tuple[int, int] | None = None) -> list[str]:
    """Installed versions in trial order.

    Entries whose executable is missing are skipped with a warning.  Order is
    the ``preferred`` series first, then newest to oldest.
    """
    present = []
    for version, exe in catalog.compilers.items():
        if not (exe.is_file() and os.access(exe, os.X_OK)):
            logger.warning("catalog: %s -> %s is not an executable, skipped", version, exe)
            continue
        present.append(version)
    present.sort(key=parse_version, reverse=True)
    if preferred is not None:
        first = [v for v in present if parse_version(v)[:2] == preferred]
        present = first + [v for v in present if v not in first]
    return present


def compile_source(
    source: str,
    version: str,
    catalog: Catalog,
    *,
    optimize: bool = False,
    timeout: float = 120.0,
) -> CompileOutput:
    exe = catalog.executable(version)
    request = json.dumps(standard_json_request(source, optimize))
    try:
        with _spawn_limit:
            proc = subprocess.run(
                [str(exe), "--standard-json"],
                input=request,
                capture_output=True,
                text=True,
                timeout=timeout,
                check=False,
            )
    except (OSError, subprocess.SubprocessError) as exc:
        raise CompilerEnvironmentError(f"cannot run compiler {exe}: {exc}") from exc
    try:
        reply = json.loads(proc.stdout)
    except json.JSONDecodeError as exc:
        raise BridgeError(
            f"compiler {version} returned malformed JSON (exit {proc.returncode}): "
            f"{proc.stderr.strip()[:200]}"
        ) from exc
    if not isinstance(reply, dict):
        raise BridgeError(f"compiler {version} returned a non-object reply")
    return parse_reply(version, source, reply)
