"""Bounded concrete EVM interpreter used as a test oracle.

Written independently of the package: its own opcode table, its own jump
validity check.  It runs one message call with a fixed environment and
records every control transfer it performs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from Crypto.Hash import keccak

M = (1 << 256) - 1

OPCODES: dict[str, int] = {
    "STOP": 0x00, "ADD": 0x01, "MUL": 0x02, "SUB": 0x03, "DIV": 0x04, "SDIV": 0x05, "MOD": 0x06,
    "SMOD": 0x07, "ADDMOD": 0x08, "MULMOD": 0x09, "EXP": 0x0A, "SIGNEXTEND": 0x0B,
    "LT": 0x10, "GT": 0x11, "SLT": 0x12, "SGT": 0x13, "EQ": 0x14, "ISZERO": 0x15, "AND": 0x16,
    "OR": 0x17, "XOR": 0x18, "NOT": 0x19, "BYTE": 0x1A, "SHL": 0x1B, "SHR": 0x1C, "SAR": 0x1D,
    "SHA3": 0x20, "ADDRESS": 0x30, "BALANCE": 0x31, "ORIGIN": 0x32, "CALLER": 0x33,
    "CALLVALUE": 0x34, "CALLDATALOAD": 0x35, "CALLDATASIZE": 0x36, "CALLDATACOPY": 0x37,
    "CODESIZE": 0x38, "CODECOPY": 0x39, "GASPRICE": 0x3A, "EXTCODESIZE": 0x3B,
    "EXTCODECOPY": 0x3C, "RETURNDATASIZE": 0x3D, "RETURNDATACOPY": 0x3E, "EXTCODEHASH": 0x3F,
    "BLOCKHASH": 0x40, "COINBASE": 0x41, "TIMESTAMP": 0x42, "NUMBER": 0x43, "PREVRANDAO": 0x44,
    "GASLIMIT": 0x45, "CHAINID": 0x46, "SELFBALANCE": 0x47, "BASEFEE": 0x48,
    "POP": 0x50, "MLOAD": 0x51, "MSTORE": 0x52, "MSTORE8": 0x53, "SLOAD": 0x54, "SSTORE": 0x55,
    "JUMP": 0x56, "JUMPI": 0x57, "PC": 0x58, "MSIZE": 0x59, "GAS": 0x5A, "JUMPDEST": 0x5B,
    "PUSH0": 0x5F, "LOG0": 0xA0, "LOG1": 0xA1, "LOG2": 0xA2, "LOG3": 0xA3, "LOG4": 0xA4,
    "CREATE": 0xF0, "CALL": 0xF1, "CALLCODE": 0xF2, "RETURN": 0xF3, "DELEGATECALL": 0xF4,
    "CREATE2": 0xF5, "STATICCALL": 0xFA, "REVERT": 0xFD, "INVALID": 0xFE, "SELFDESTRUCT": 0xFF,
}
for _n in range(1, 33):
    OPCODES[f"PUSH{_n}"] = 0x5F + _n
for _n in range(1, 17):
    OPCODES[f"DUP{_n}"] = 0x7F + _n
    OPCODES[f"SWAP{_n}"] = 0x8F + _n
NAMES = {v: k for k, v in OPCODES.items()}


def assemble(text: str) -> bytes:
    """Tiny assembler.  Tokens are opcode names, immediates after PUSHn
    (decimal or hex), ``name:`` to define a label and ``:name`` as a PUSH
    immediate referring to one."""
    tokens = text.split()
    labels: dict[str, int] = {}
    for _ in range(2):  # the first pass only sizes the labels
        out = bytearray()
        i = 0
        while i < len(tokens):
            tok = tokens[i]
            i += 1
            if tok.endswith(":") and len(tok) > 1:
                labels[tok[:-1]] = len(out)
                continue
            op = OPCODES[tok.upper()]
            out.append(op)
            if 0x60 <= op <= 0x7F:
                arg = tokens[i]
                i += 1
                value = labels.get(arg[1:], 0) if arg.startswith(":") else int(arg, 0)
                out += value.to_bytes(op - 0x5F, "big")
    return bytes(out)


def _signed(x: int) -> int:
    return x - (1 << 256) if x >> 255 else x


def _keccak(data: bytes) -> int:
    return int.from_bytes(keccak.new(digest_bits=256, data=data).digest(), "big")


@dataclass
class OracleEnv:
    calldata: bytes = b""
    caller: int = 0xCA11E4
    origin: int = 0x0419
    callvalue: int = 0
    timestamp: int = 1_700_000_000
    number: int = 17_000_000
    address: int = 0xADD4
    balance: int = 10**18
    gas: int = 10_000_000
    call_success: int = 1
    storage: dict[int, int] = field(default_factory=dict)


@dataclass
class OracleRun:
    status: str  # Stop, Return, Revert, Invalid, StepLimit
    storage: dict[int, int]
    transfers: list[tuple[int, int]]  # (pc of last instruction before, pc after)
    steps: int
    calls: int = 0
    output: bytes = b""


def jumpdests(code: bytes) -> set[int]:
    out = set()
    pc = 0
    while pc < len(code):
        op = code[pc]
        if op == 0x5B:
            out.add(pc)
        pc += 1 + (op - 0x5F if 0x60 <= op <= 0x7F else 0)
    return out


def run(code: bytes, env: OracleEnv | None = None, max_steps: int = 20_000) -> OracleRun:
    env = env or OracleEnv()
    valid = jumpdests(code)
    stack: list[int] = []
    mem = bytearray()
    storage = dict(env.storage)
    transfers: list[tuple[int, int]] = []
    returndata = b""
    calls = 0

    def pop() -> int:
        if not stack:
            raise _Stop("Invalid")
        return stack.pop()

    def extend(off: int, size: int) -> None:
        if size and off + size > len(mem):
            if off + size > 1 << 20:
                raise _Stop("Invalid")
            mem.extend(bytes(((off + size + 31) // 32) * 32 - len(mem)))

    def mread(off: int, size: int) -> bytes:
        extend(off, size)
        return bytes(mem[off:off + size])

    def cd(off: int, size: int) -> bytes:
        return bytes(env.calldata[off:off + size]).ljust(size, b"\0") if off < len(env.calldata) else bytes(size)

    pc = 0
    steps = 0
    status = "StepLimit"
    output = b""
    try:
        while steps < max_steps:
            if pc >= len(code):
                raise _Stop("Stop")
            op = code[pc]
            name = NAMES.get(op, "INVALID")
            steps += 1
            nxt = pc + 1
            if 0x60 <= op <= 0x7F:
                w = op - 0x5F
                stack.append(int.from_bytes(code[pc + 1:pc + 1 + w].ljust(w, b"\0"), "big"))
                nxt = pc + 1 + w
            elif name == "PUSH0":
                stack.append(0)
            elif 0x80 <= op <= 0x8F:
                n = op - 0x7F
                if len(stack) < n:
                    raise _Stop("Invalid")
                stack.append(stack[-n])
            elif 0x90 <= op <= 0x9F:
                n = op - 0x8F
                if len(stack) <= n:
                    raise _Stop("Invalid")
                stack[-1], stack[-1 - n] = stack[-1 - n], stack[-1]
            elif name == "STOP":
                raise _Stop("Stop")
            elif name in ("INVALID",):
                raise _Stop("Invalid")
            elif name == "RETURN":
                a, b = pop(), pop()
                output = mread(a, b)
                raise _Stop("Return")
            elif name == "REVERT":
                a, b = pop(), pop()
                output = mread(a, b)
                raise _Stop("Revert")
            elif name == "SELFDESTRUCT":
                pop()
                raise _Stop("Stop")
            elif name == "JUMP":
                dst = pop()
                if dst not in valid:
                    raise _Stop("Invalid")
                nxt = dst
            elif name == "JUMPI":
                dst, cond = pop(), pop()
                if cond:
                    if dst not in valid:
                        raise _Stop("Invalid")
                    nxt = dst
            elif name == "JUMPDEST":
                pass
            elif name == "ADD":
                stack.append((pop() + pop()) & M)
            elif name == "MUL":
                stack.append((pop() * pop()) & M)
            elif name == "SUB":
                a, b = pop(), pop()
                stack.append((a - b) & M)
            elif name == "DIV":
                a, b = pop(), pop()
                stack.append(a // b if b else 0)
            elif name == "SDIV":
                a, b = _signed(pop()), _signed(pop())
                q = 0 if b == 0 else abs(a) // abs(b) * (-1 if (a < 0) != (b < 0) else 1)
                stack.append(q & M)
            elif name == "MOD":
                a, b = pop(), pop()
                stack.append(a % b if b else 0)
            elif name == "SMOD":
                a, b = _signed(pop()), _signed(pop())
                r = 0 if b == 0 else abs(a) % abs(b) * (-1 if a < 0 else 1)
                stack.append(r & M)
            elif name == "ADDMOD":
                a, b, n = pop(), pop(), pop()
                stack.append((a + b) % n if n else 0)
            elif name == "MULMOD":
                a, b, n = pop(), pop(), pop()
                stack.append((a * b) % n if n else 0)
            elif name == "EXP":
                a, b = pop(), pop()
                stack.append(pow(a, b, 1 << 256))
            elif name == "SIGNEXTEND":
                b, x = pop(), pop()
                if b < 31:
                    bit = 8 * (b + 1) - 1
                    low = x & ((1 << (bit + 1)) - 1)
                    x = (low | (M ^ ((1 << (bit + 1)) - 1))) if (x >> bit) & 1 else low
                stack.append(x)
            elif name == "LT":
                a, b = pop(), pop()
                stack.append(int(a < b))
            elif name == "GT":
                a, b = pop(), pop()
                stack.append(int(a > b))
            elif name == "SLT":
                a, b = _signed(pop()), _signed(pop())
                stack.append(int(a < b))
            elif name == "SGT":
                a, b = _signed(pop()), _signed(pop())
                stack.append(int(a > b))
            elif name == "EQ":
                stack.append(int(pop() == pop()))
            elif name == "ISZERO":
                stack.append(int(pop() == 0))
            elif name == "AND":
                stack.append(pop() & pop())
            elif name == "OR":
                stack.append(pop() | pop())
            elif name == "XOR":
                stack.append(pop() ^ pop())
            elif name == "NOT":
                stack.append(M ^ pop())
            elif name == "BYTE":
                i, x = pop(), pop()
                stack.append((x >> (8 * (31 - i))) & 0xFF if i < 32 else 0)
            elif name == "SHL":
                s, x = pop(), pop()
                stack.append((x << s) & M if s < 256 else 0)
            elif name == "SHR":
                s, x = pop(), pop()
                stack.append(x >> s if s < 256 else 0)
            elif name == "SAR":
                s, x = pop(), _signed(pop())
                stack.append((x >> min(s, 256)) & M)
            elif name == "SHA3":
                a, b = pop(), pop()
                stack.append(_keccak(mread(a, b)))
            elif name == "ADDRESS":
                stack.append(env.address)
            elif name in ("BALANCE",):
                pop()
                stack.append(env.balance)
            elif name == "SELFBALANCE":
                stack.append(env.balance)
            elif name == "ORIGIN":
                stack.append(env.origin)
            elif name == "CALLER":
                stack.append(env.caller)
            elif name == "CALLVALUE":
                stack.append(env.callvalue)
            elif name == "CALLDATALOAD":
                stack.append(int.from_bytes(cd(pop(), 32), "big"))
            elif name == "CALLDATASIZE":
                stack.append(len(env.calldata))
            elif name == "CALLDATACOPY":
                m, o, n = pop(), pop(), pop()
                extend(m, n)
                mem[m:m + n] = cd(o, n)
            elif name == "CODESIZE":
                stack.append(len(code))
            elif name == "CODECOPY":
                m, o, n = pop(), pop(), pop()
                extend(m, n)
                mem[m:m + n] = bytes(code[o:o + n]).ljust(n, b"\0")
            elif name == "GASPRICE":
                stack.append(1)
            elif name == "EXTCODESIZE":
                pop()
                stack.append(100)
            elif name == "EXTCODEHASH":
                pop()
                stack.append(1)
            elif name == "RETURNDATASIZE":
                stack.append(len(returndata))
            elif name == "RETURNDATACOPY":
                m, o, n = pop(), pop(), pop()
                if o + n > len(returndata):
                    raise _Stop("Revert")
                extend(m, n)
                mem[m:m + n] = returndata[o:o + n]
            elif name == "BLOCKHASH":
                pop()
                stack.append(0xB10C)
            elif name == "COINBASE":
                stack.append(0xC0)
            elif name == "TIMESTAMP":
                stack.append(env.timestamp)
            elif name == "NUMBER":
                stack.append(env.number)
            elif name == "PREVRANDAO":
                stack.append(0x5EED)
            elif name == "GASLIMIT":
                stack.append(30_000_000)
            elif name == "CHAINID":
                stack.append(1)
            elif name == "BASEFEE":
                stack.append(7)
            elif name == "POP":
                pop()
            elif name == "MLOAD":
                stack.append(int.from_bytes(mread(pop(), 32), "big"))
            elif name == "MSTORE":
                a, v = pop(), pop()
                extend(a, 32)
                mem[a:a + 32] = v.to_bytes(32, "big")
            elif name == "MSTORE8":
                a, v = pop(), pop()
                extend(a, 1)
                mem[a] = v & 0xFF
            elif name == "SLOAD":
                stack.append(storage.get(pop(), 0))
            elif name == "SSTORE":
                k, v = pop(), pop()
                storage[k] = v
            elif name == "PC":
                stack.append(pc)
            elif name == "MSIZE":
                stack.append(len(mem))
            elif name == "GAS":
                stack.append(env.gas)
            elif name.startswith("LOG"):
                for _ in range(2 + int(name[3:])):
                    pop()
            elif name in ("CALL", "CALLCODE", "DELEGATECALL", "STATICCALL"):
                nargs = 7 if name in ("CALL", "CALLCODE") else 6
                args = [pop() for _ in range(nargs)]
                out_off, out_size = args[-2], args[-1]
                calls += 1
                returndata = b""
                extend(out_off, out_size)
                stack.append(env.call_success)
            elif name in ("CREATE", "CREATE2"):
                for _ in range(3 if name == "CREATE" else 4):
                    pop()
                stack.append(0)
            else:
                raise _Stop("Invalid")
            if len(stack) > 1024:
                raise _Stop("Invalid")
            # block boundaries: every jump outcome, and falling into a JUMPDEST
            if name in ("JUMP", "JUMPI") or nxt in valid:
                transfers.append((pc, nxt))
            pc = nxt
    except _Stop as s:
        status = s.status
    if status in ("Revert", "Invalid"):
        storage = dict(env.storage)
    return OracleRun(status, storage, transfers, steps, calls, output)


class _Stop(Exception):
    def __init__(self, status: str) -> None:
        self.status = status
