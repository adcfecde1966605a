"""Scoring against a labeled corpus, and an LLM direct-detection baseline."""

from __future__ import annotations

import json
import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any

from snipcheck.completer import PromptText
from snipcheck.detectors import VulnKind

ALL_KINDS: tuple[VulnKind, ...] = tuple(VulnKind)

LONG_NAMES = {
    VulnKind.RE: "Reentrancy",
    VulnKind.AC: "Access Control",
    VulnKind.AI: "Arithmetic Issues",
    VulnKind.URV: "Unchecked Return Values",
    VulnKind.DoS: "Denial of Service",
    VulnKind.BR: "Bad Randomness",
    VulnKind.FR: "Front Running",
    VulnKind.TM: "Time Manipulation",
    VulnKind.SAA: "Short Address Attack",
}


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledCase:
    id: str
    path: str
    labels: frozenset[VulnKind]


def parse_kind(text: str) -> VulnKind:
    t = text.strip()
    for k in ALL_KINDS:
        if t.lower() in (k.value.lower(), LONG_NAMES[k].lower()):
            return k
    raise CorpusError(f"unknown vulnerability kind {text!r}")


def load_corpus(path: str | Path) -> list[LabeledCase]:
    """JSON lines of ``{id, path, labels: [...]}``; paths are relative to
    the corpus file."""
    base = Path(path).resolve().parent
    cases = []
    seen = set()
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            case = LabeledCase(str(row["id"]), str(base / row["path"]),
                               frozenset(parse_kind(k) for k in row.get("labels", [])))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CorpusError(f"{path}:{n}: {exc}") from None
        if case.id in seen:
            raise CorpusError(f"{path}:{n}: duplicate case id {case.id!r}")
        seen.add(case.id)
        cases.append(case)
    return cases


def load_predictions(path: str | Path, truth: Sequence[LabeledCase]) -> dict[str, set[VulnKind]]:
    """Read NDJSON reports (or ``{id, kinds}`` rows) and map them to case ids.

    A report matches a case by id, or by the case's file path when the
    report's snippet came from that file.
    """
    by_path = {str(Path(c.path).resolve()): c.id for c in truth}
    ids = {c.id for c in truth}
    preds: dict[str, set[VulnKind]] = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        row = json.loads(line)
        if "snippet" in row:
            rid = row["snippet"]["id"]
            locator = row["snippet"]["origin"].get("locator", "")
            kinds = {parse_kind(f["kind"]) for f in row.get("findings", [])}
        else:
            rid, locator = str(row["id"]), ""
            kinds = {parse_kind(k) for k in row.get("kinds", [])}
        case = rid if rid in ids else by_path.get(str(Path(locator).resolve())) if locator else None
        if case is None:
            raise CorpusError(f"{path}:{n}: prediction {rid!r} matches no labeled case")
        preds.setdefault(case, set()).update(kinds)
    return preds


# ------------------------------------------------------------------ metrics


@dataclass(frozen=True)
class KindMetrics:
    tp: int
    fp: int
    fn: int

    @property
    def support(self) -> int:
        """Ground-truth count for this kind."""
        return self.tp + self.fn

    @property
    def precision(self) -> Fraction | None:
        d = self.tp + self.fp
        return Fraction(self.tp, d) if d else None

    @property
    def recall(self) -> Fraction | None:
        d = self.tp + self.fn
        return Fraction(self.tp, d) if d else None

    @property
    def f1(self) -> Fraction | None:
        p, r = self.precision, self.recall
        if p is None or r is None or p + r == 0:
            return None
        return 2 * p * r / (p + r)


@dataclass(frozen=True)
class Metrics:
    per_kind: Mapping[VulnKind, KindMetrics]

    @classmethod
    def from_counts(cls, counts: Mapping[VulnKind | str, tuple[int, int, int]]) -> Metrics:
        return cls({VulnKind(k): KindMetrics(*v) for k, v in counts.items()})

    @property
    def n(self) -> int:
        """Number of kinds with at least one labeled instance."""
        return sum(1 for m in self.per_kind.values() if m.support > 0)

    def to_dict(self) -> dict[str, Any]:
        def num(x: Fraction | None) -> float | None:
            return None if x is None else round(float(x), 6)
        rows = {}
        for k, m in self.per_kind.items():
            rows[k.value] = {"tp": m.tp, "fp": m.fp, "fn": m.fn, "support": m.support,
                             "precision": num(m.precision), "recall": num(m.recall), "f1": num(m.f1)}
        wf = weighted_f1(self) if self.n else None
        return {"per_kind": rows, "n": self.n, "weighted_f1": num(wf)}


def score(predictions: Mapping[str, Iterable[VulnKind]], truth: Sequence[LabeledCase],
          kinds: Iterable[VulnKind] = ALL_KINDS) -> Metrics:
    """Case-level confusion counts per kind.  Cases absent from
    ``predictions`` count as predicting nothing."""
    ids = {c.id for c in truth}
    unknown = sorted(set(predictions) - ids)
    if unknown:
        raise ValueError(f"predictions for unknown cases: {', '.join(unknown)}")
    counts = {k: [0, 0, 0] for k in kinds}
    for case in truth:
        pred = {VulnKind(k) for k in predictions.get(case.id, ())}
        for k, c in counts.items():
            if k in pred and k in case.labels:
                c[0] += 1
            elif k in pred:
                c[1] += 1
            elif k in case.labels:
                c[2] += 1
    return Metrics({k: KindMetrics(*c) for k, c in counts.items()})


def weighted_average(scores: Sequence[Fraction | float | None], weights: Sequence[int | float]) -> Fraction:
    """Weighted mean over entries with positive weight; a missing score
    counts as 0."""
    if len(scores) != len(weights):
        raise ValueError("scores and weights differ in length")
    pairs = [(Fraction(s) if s is not None else Fraction(0), Fraction(w))
             for s, w in zip(scores, weights) if w > 0]
    if not pairs:
        raise ValueError("no kind has a positive weight")
    return sum((s * w for s, w in pairs), Fraction(0)) / sum(w for _, w in pairs)


def weighted_f1(metrics: Metrics) -> Fraction:
    """F1 averaged over kinds, weighted by each kind's label count."""
    rows = [m for m in metrics.per_kind.values() if m.support > 0]
    if not rows:
        raise ValueError("weighted F1 needs at least one kind with labeled instances")
    return weighted_average([m.f1 for m in rows], [m.support for m in rows])


def plot_metrics(metrics: Metrics, path: str | Path, title: str = "Per-kind detection scores") -> Path:
    """Grouped P/R/F1 bars per kind, written to ``path``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    kinds = [k for k, m in metrics.per_kind.items() if m.support or m.fp]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(kinds) + 1.5), 3.2))
    width = 0.27
    for j, (label, getter) in enumerate((("P", "precision"), ("R", "recall"), ("F1", "f1"))):
        vals = [float(getattr(metrics.per_kind[k], getter) or 0) * 100 for k in kinds]
        ax.bar([i + (j - 1) * width for i in range(len(kinds))], vals, width, label=label)
    ax.set_xticks(range(len(kinds)), [k.value for k in kinds])
    ax.set_ylim(0, 105)
    ax.set_ylabel("%")
    if metrics.n:
        ax.set_title(f"{title} (weighted F1 {float(weighted_f1(metrics)) * 100:.1f}%)", fontsize=9)
    ax.legend(fontsize=7, ncol=3, frameon=False)
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


# ------------------------------------------------------------------ LLM baseline


class VerdictParseError(ValueError):
    pass


class NeedsSecondPass:
    """The reply gave no usable per-kind flags; ask for a second opinion."""

    def __init__(self, conclusion: str) -> None:
        self.conclusion = conclusion

    def __repr__(self) -> str:
        return "NeedsSecondPass()"


def _kind_list(kinds: Sequence[VulnKind]) -> str:
    return ", ".join(f"{k.value} ({LONG_NAMES[k]})" for k in kinds)


def llm_verdict_prompt(code: str, kinds: Sequence[VulnKind]) -> PromptText:
    """First-stage prompt: the kinds to look for and the code, asking for one
    ``KIND:0|1`` flag per kind."""
    if not kinds:
        raise ValueError("at least one vulnerability kind is required")
    flags = " ".join(f"{k.value}:<0|1>" for k in kinds)
    instruction = (
        f"Audit the Solidity code below for these vulnerability kinds: {_kind_list(kinds)}.\n"
        f"Reply with exactly one line of flags, 1 meaning present and 0 absent:\n{flags}"
    )
    return PromptText(instruction, code)


def second_pass_prompt(conclusion: str, kinds: Sequence[VulnKind]) -> PromptText:
    """Second-stage prompt: turn an earlier free-form analysis into flags."""
    flags = " ".join(f"{k.value}:<0|1>" for k in kinds)
    instruction = (
        f"Below is an analysis of a smart contract. Decide, from it alone, which of these "
        f"vulnerability kinds it reports: {_kind_list(kinds)}.\n"
        f"Reply with exactly one line of flags:\n{flags}"
    )
    return PromptText(instruction, conclusion)


_FLAG = re.compile(r"(?<![A-Za-z])([A-Za-z][A-Za-z ]{0,30}?)\s*[:=]\s*([01])(?!\d)")


def parse_verdict(response: str, kinds: Sequence[VulnKind]) -> dict[VulnKind, int] | NeedsSecondPass:
    """Flags per queried kind, or NeedsSecondPass when the reply does not
    flag every queried kind."""
    if not response.strip():
        raise VerdictParseError("empty response")
    wanted = set(kinds)
    flags: dict[VulnKind, int] = {}
    for m in _FLAG.finditer(response):
        label = m.group(1).strip()
        try:
            kind = parse_kind(label)
        except CorpusError:
            # tolerate prose before the flag ("Result RE:1"): keep the last word
            try:
                kind = parse_kind(label.split()[-1])
            except CorpusError:
                continue
        if kind not in wanted:
            raise VerdictParseError(f"response flags {kind.value}, which was not asked for")
        flags[kind] = int(m.group(2))
    if set(flags) != wanted:
        return NeedsSecondPass(response)
    return {k: flags[k] for k in kinds}


def run_llm_baseline(cases: Sequence[LabeledCase], generate, kinds: Sequence[VulnKind] = ALL_KINDS,
                     ) -> list[dict[str, Any]]:
    """Ask ``generate(prompt_text) -> reply`` about each case; rows are
    ``{id, kinds, passes, diagnostics}``."""
    rows = []
    for case in cases:
        code = Path(case.path).read_text()
        reply = generate(llm_verdict_prompt(code, kinds).render())
        passes = 1
        diags: list[str] = []
        try:
            verdict = parse_verdict(reply, kinds)
            if isinstance(verdict, NeedsSecondPass):
                passes = 2
                reply2 = generate(second_pass_prompt(verdict.conclusion, kinds).render())
                verdict = parse_verdict(reply2, kinds)
        except VerdictParseError as exc:
            verdict = None
            diags.append(str(exc))
        if isinstance(verdict, NeedsSecondPass) or verdict is None:
            diags.append("no usable verdict; counted as no findings")
            found: list[str] = []
        else:
            found = [k.value for k, v in verdict.items() if v]
        rows.append({"id": case.id, "kinds": found, "passes": passes, "diagnostics": diags})
    return rows
