"""Stack values: a concrete int or a z3 bitvector term, plus taint tags.

Concrete values stay Python ints so straight-line compiler code folds for
free; a z3 term is built only once a symbolic operand shows up.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import z3
from Crypto.Hash import keccak

WORD = 256
MASK = (1 << WORD) - 1
SIGN = 1 << (WORD - 1)

Term = Union[int, z3.BitVecRef]

# source tags
TIMESTAMP = "Timestamp"
BLOCK_ENV = "BlockEnv"
CALL_DATA = "CallData"
CALL_DATA_SIZE = "CallDataSize"
EXTERNAL_CALL_RESULT = "ExternalCallResult"
CALLER = "Caller"
ORIGIN = "Origin"
CALL_VALUE = "CallValue"
GAS = "Gas"
STORAGE = "Storage"
BALANCE = "Balance"

EMPTY: frozenset[str] = frozenset()


@dataclass(frozen=True, slots=True, eq=False)
class Value:
    term: Term
    taint: frozenset[str] = EMPTY
    # pc of the PUSH that produced this constant, kept through DUP/SWAP
    origin: int | None = None

    @property
    def concrete(self) -> bool:
        return isinstance(self.term, int)

    def z3(self) -> z3.BitVecRef:
        return to_z3(self.term)

    def __repr__(self) -> str:
        t = hex(self.term) if isinstance(self.term, int) else str(self.term)
        return f"Value({t}{', ' + ','.join(sorted(self.taint)) if self.taint else ''})"


def const(n: int, taint: frozenset[str] = EMPTY) -> Value:
    return Value(n & MASK, taint)


def to_z3(term: Term) -> z3.BitVecRef:
    if isinstance(term, int):
        return z3.BitVecVal(term, WORD)
    return term


def simplify_term(term: Term) -> Term:
    if isinstance(term, int):
        return term
    s = z3.simplify(term)
    if z3.is_bv_value(s):
        return s.as_long()
    return s


def as_bool(term: Term) -> z3.BoolRef | bool:
    """The EVM truth value of ``term`` (non-zero)."""
    if isinstance(term, int):
        return term != 0
    return z3.simplify(term != 0)


def keccak256(data: bytes) -> int:
    h = keccak.new(digest_bits=256)
    h.update(data)
    return int.from_bytes(h.digest(), "big")


def to_signed(n: int) -> int:
    return n - (1 << WORD) if n & SIGN else n


def _bool_term(cond: z3.BoolRef) -> z3.BitVecRef:
    return z3.If(cond, z3.BitVecVal(1, WORD), z3.BitVecVal(0, WORD))


# -------------------------------------------------------------- operations
# Each takes and returns terms; callers handle taint.


def op_add(a: Term, b: Term) -> Term:
    if isinstance(a, int) and isinstance(b, int):
        return (a + b) & MASK
    return to_z3(a) + to_z3(b)


def op_sub(a: Term, b: Term) -> Term:
    if isinstance(a, int) and isinstance(b, int):
        return (a - b) & MASK
    return to_z3(a) - to_z3(b)


def op_mul(a: Term, b: Term) -> Term:
    if isinstance(a, int) and isinstance(b, int):
        return (a * b) & MASK
    if (isinstance(a, int) and a == 0) or (isinstance(b, int) and b == 0):
        return 0
    return to_z3(a) * to_z3(b)


def op_div(a: Term, b: Term) -> Term:
    if isinstance(a, int) and isinstance(b, int):
        return 0 if b == 0 else a // b
    if isinstance(b, int) and b == 0:
        return 0
    zb = to_z3(b)
    return z3.If(zb == 0, z3.BitVecVal(0, WORD), z3.UDiv(to_z3(a), zb))


def op_sdiv(a: Term, b: Term) -> Term:
    if isinstance(a, int) and isinstance(b, int):
        if b == 0:
            return 0
        sa, sb = to_signed(a), to_signed(b)
        q = abs(sa) // abs(sb)
        return (q if (sa < 0) == (sb < 0) else -q) & MASK
    zb = to_z3(b)
    return z3.If(zb == 0, z3.BitVecVal(0, WORD), to_z3(a) / zb)


def op_mod(a: Term, b: Term) -> Term:
    if isinstance(a, int) and isinstance(b, int):
        return 0 if b == 0 else a % b
    zb = to_z3(b)
    return z3.If(zb == 0, z3.BitVecVal(0, WORD), z3.URem(to_z3(a), zb))


def op_smod(a: Term, b: Term) -> Term:
    if isinstance(a, int) and isinstance(b, int):
        if b == 0:
            return 0
        sa, sb = to_signed(a), to_signed(b)
        r = abs(sa) % abs(sb)
        return (-r if sa < 0 else r) & MASK
    zb = to_z3(b)
    return z3.If(zb == 0, z3.BitVecVal(0, WORD), z3.SRem(to_z3(a), zb))


def op_addmod(a: Term, b: Term, n: Term) -> Term:
    if all(isinstance(x, int) for x in (a, b, n)):
        return 0 if n == 0 else (a + b) % n
    wa, wb, wn = (z3.ZeroExt(1, to_z3(x)) for x in (a, b, n))
    r = z3.Extract(WORD - 1, 0, z3.URem(wa + wb, wn))
    return z3.If(to_z3(n) == 0, z3.BitVecVal(0, WORD), r)


def op_mulmod(a: Term, b: Term, n: Term) -> Term:
    if all(isinstance(x, int) for x in (a, b, n)):
        return 0 if n == 0 else (a * b) % n
    wa, wb, wn = (z3.ZeroExt(WORD, to_z3(x)) for x in (a, b, n))
    r = z3.Extract(WORD - 1, 0, z3.URem(wa * wb, wn))
    return z3.If(to_z3(n) == 0, z3.BitVecVal(0, WORD), r)


def op_exp(a: Term, b: Term) -> Term | None:
    """None when the result is not expressible (symbolic exponent)."""
    if isinstance(a, int) and isinstance(b, int):
        return pow(a, b, 1 << WORD)
    if isinstance(b, int):
        if b == 0:
            return 1
        if b <= 16:
            r = to_z3(a)
            acc = r
            for _ in range(b - 1):
                acc = acc * r
            return acc
        return None
    if isinstance(a, int) and a != 0 and a & (a - 1) == 0:
        # power of two base: 2^(k*b) == 1 << (k*b)
        k = a.bit_length() - 1
        return z3.BitVecVal(1, WORD) << (to_z3(b) * k)
    return None


def op_signextend(b: Term, x: Term) -> Term:
    if isinstance(b, int) and isinstance(x, int):
        if b >= 31:
            return x
        bits = 8 * (b + 1)
        sign = 1 << (bits - 1)
        low = x & ((1 << bits) - 1)
        return (low | (MASK ^ ((1 << bits) - 1))) if low & sign else low
    if isinstance(b, int):
        if b >= 31:
            return x
        bits = 8 * (b + 1)
        return z3.SignExt(WORD - bits, z3.Extract(bits - 1, 0, to_z3(x)))
    return None  # type: ignore[return-value]


def op_cmp(name: str, a: Term, b: Term) -> Term:
    if isinstance(a, int) and isinstance(b, int):
        if name == "LT":
            return int(a < b)
        if name == "GT":
            return int(a > b)
        if name == "SLT":
            return int(to_signed(a) < to_signed(b))
        if name == "SGT":
            return int(to_signed(a) > to_signed(b))
        return int(a == b)
    za, zb = to_z3(a), to_z3(b)
    if name == "LT":
        c = z3.ULT(za, zb)
    elif name == "GT":
        c = z3.UGT(za, zb)
    elif name == "SLT":
        c = za < zb
    elif name == "SGT":
        c = za > zb
    else:
        c = za == zb
    return _bool_term(c)


def op_iszero(a: Term) -> Term:
    if isinstance(a, int):
        return int(a == 0)
    return _bool_term(a == 0)


def op_bitwise(name: str, a: Term, b: Term) -> Term:
    if isinstance(a, int) and isinstance(b, int):
        if name == "AND":
            return a & b
        if name == "OR":
            return a | b
        return a ^ b
    za, zb = to_z3(a), to_z3(b)
    if name == "AND":
        return za & zb
    if name == "OR":
        return za | zb
    return za ^ zb


def op_not(a: Term) -> Term:
    if isinstance(a, int):
        return MASK ^ a
    return ~a


def op_byte(i: Term, x: Term) -> Term:
    if isinstance(i, int) and isinstance(x, int):
        return 0 if i >= 32 else (x >> (8 * (31 - i))) & 0xFF
    if isinstance(i, int):
        if i >= 32:
            return 0
        return z3.ZeroExt(WORD - 8, z3.Extract(255 - 8 * i, 248 - 8 * i, to_z3(x)))
    zx, zi = to_z3(x), to_z3(i)
    shifted = z3.LShR(zx, (31 - zi) * 8) & 0xFF
    return z3.If(z3.ULT(zi, 32), shifted, z3.BitVecVal(0, WORD))


def op_shift(name: str, shift: Term, x: Term) -> Term:
    if isinstance(shift, int) and isinstance(x, int):
        if name == "SHL":
            return (x << shift) & MASK if shift < WORD else 0
        if name == "SHR":
            return x >> shift if shift < WORD else 0
        sx = to_signed(x)
        if shift >= WORD:
            return MASK if sx < 0 else 0
        return (sx >> shift) & MASK
    zs, zx = to_z3(shift), to_z3(x)
    if name == "SHL":
        return zx << zs
    if name == "SHR":
        return z3.LShR(zx, zs)
    return zx >> zs


def byte_of(term: Term, index: int) -> Term:
    """Byte ``index`` (0 = most significant) of a 256-bit word, as an 8-bit
    value (int or 8-bit z3 term)."""
    if isinstance(term, int):
        return (term >> (8 * (31 - index))) & 0xFF
    return z3.Extract(255 - 8 * index, 248 - 8 * index, term)


def concat_bytes(parts: list[Term]) -> Term:
    """Big-endian concatenation of 8-bit parts into one term of 8*len bits."""
    if all(isinstance(p, int) for p in parts):
        return int.from_bytes(bytes(parts), "big")  # type: ignore[arg-type]
    terms = [z3.BitVecVal(p, 8) if isinstance(p, int) else p for p in parts]
    if len(terms) == 1:
        return terms[0]
    return z3.simplify(z3.Concat(*terms))
