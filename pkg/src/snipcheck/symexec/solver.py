"""Path-feasibility and property queries over 256-bit bitvector terms."""

from __future__ import annotations

import enum
import logging
import os
import shutil
import subprocess
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import z3

logger = logging.getLogger(__name__)

DEFAULT_QUERY_TIMEOUT_MS = 5000
SOLVER_ENV = "SNIPCHECK_SOLVER"


class SolverUsageError(ValueError):
    pass


class SolverUnavailable(RuntimeError):
    pass


class Status(str, enum.Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class SolverVerdict:
    status: Status
    model: dict[str, int] = field(default_factory=dict)

    @property
    def sat(self) -> bool:
        return self.status is Status.SAT

    @property
    def unsat(self) -> bool:
        return self.status is Status.UNSAT

    @property
    def maybe_sat(self) -> bool:
        return self.status is not Status.UNSAT


def _model_dict(model: z3.ModelRef) -> dict[str, int]:
    out = {}
    for decl in model.decls():
        if decl.arity() != 0:
            continue
        val = model[decl]
        if z3.is_bv_value(val):
            out[decl.name()] = val.as_long()
        elif z3.is_true(val) or z3.is_false(val):
            out[decl.name()] = int(z3.is_true(val))
    return out


def _check_bool(term: object) -> z3.BoolRef:
    if not isinstance(term, z3.BoolRef):
        raise SolverUsageError(f"expected a boolean term, got {type(term).__name__}: {term!r}")
    return term


def solve(
    constraints: Iterable[z3.BoolRef],
    query: z3.BoolRef | None = None,
    *,
    timeout_ms: int = DEFAULT_QUERY_TIMEOUT_MS,
    witness: Mapping[str, z3.BitVecRef] | None = None,
) -> SolverVerdict:
    """Check ``constraints`` (and ``query`` when given) for satisfiability.

    Sat verdicts carry a model over every free constant that the solver
    assigned.  An external SMT-LIB2 solver named by ``$SNIPCHECK_SOLVER``
    replaces the embedded one when set; it reports sat/unsat without a model.
    ``witness`` names extra terms to evaluate in the model.
    """
    terms = [_check_bool(c) for c in constraints]
    if query is not None:
        terms.append(_check_bool(query))
    external = os.environ.get(SOLVER_ENV)
    if external:
        return _solve_external(external, terms, timeout_ms)
    solver = _embedded()
    solver.set("timeout", int(timeout_ms))
    solver.add(*terms)
    result = solver.check()
    if result == z3.sat:
        model = solver.model()
        values = _model_dict(model)
        for name, term in (witness or {}).items():
            val = model.eval(term, model_completion=True)
            if z3.is_bv_value(val):
                values[name] = val.as_long()
        return SolverVerdict(Status.SAT, values)
    if result == z3.unsat:
        return SolverVerdict(Status.UNSAT)
    return SolverVerdict(Status.UNKNOWN)


def _embedded() -> z3.Solver:
    # eliminating equalities first keeps symbolic-divisor MOD/DIV tractable
    return z3.Then("simplify", "solve-eqs", "smt").solver()


def _solve_external(path: str, terms: list[z3.BoolRef], timeout_ms: int) -> SolverVerdict:
    exe = shutil.which(path) or path
    solver = z3.Solver()
    solver.add(*terms)
    script = "(set-logic ALL)\n" + solver.to_smt2()
    try:
        proc = subprocess.run(
            [exe, "-in"] if os.path.basename(exe).startswith("z3") else [exe],
            input=script,
            capture_output=True,
            text=True,
            timeout=timeout_ms / 1000 + 1,
            check=False,
        )
    except subprocess.TimeoutExpired:
        return SolverVerdict(Status.UNKNOWN)
    except OSError as exc:
        raise SolverUnavailable(f"cannot run solver {exe}: {exc}") from exc
    first = proc.stdout.strip().splitlines()[:1]
    word = first[0].strip() if first else ""
    if word == "sat":
        return SolverVerdict(Status.SAT)
    if word == "unsat":
        return SolverVerdict(Status.UNSAT)
    return SolverVerdict(Status.UNKNOWN)
