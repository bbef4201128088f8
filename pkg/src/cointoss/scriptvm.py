"""Spending-condition predicates and their evaluator.

Output scripts are small boolean trees rather than stack bytecode.  Each leaf
checks one thing about the spending witness (a hash preimage, a signature, a
bit pattern derived from revealed secrets) and the inner nodes combine leaves
with AND / OR.  The textual form produced by :func:`encode_script` is what
gets hashed into transaction ids, so it has to stay stable.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Optional, Protocol, Union

SHA256 = "sha256"
SHA1 = "sha1"

_DIGEST_SIZES = {SHA256: 32, SHA1: 20}

#: Default cut point for the SHA-1 comparison variant (midpoint of 160 bits).
SHA1_MIDPOINT = 1 << 159

_NAME = r"[A-Za-z_][A-Za-z0-9_]*"
_NAME_RE = re.compile(rf"^{_NAME}$")


class ScriptError(Exception):
    """Base class for script construction and evaluation problems."""


class MalformedScript(ScriptError):
    pass


class EmptyOperand(ScriptError):
    pass


def digest(algorithm: str, data: bytes) -> bytes:
    if algorithm == SHA256:
        return hashlib.sha256(data).digest()
    if algorithm == SHA1:
        return hashlib.sha1(data).digest()
    raise ValueError(f"unknown digest algorithm {algorithm!r}")


def parity(data: bytes) -> int:
    """Least significant bit of ``data`` read as a big-endian integer."""
    if not data:
        raise EmptyOperand("parity of an empty byte string")
    return data[-1] & 1


def low_bits(data: bytes, k_bits: int) -> int:
    """Low ``k_bits`` (at most 16) of the last two bytes of ``data``."""
    if not data:
        raise EmptyOperand("low bits of an empty byte string")
    return int.from_bytes(data[-2:], "big") & ((1 << k_bits) - 1)


@dataclass(frozen=True)
class SignatureToken:
    """Authorization of ``message`` (a txid) by the holder of ``pubkey``.

    ``tag`` is whatever the signature scheme needs to check the mint; the
    evaluator never looks inside it.
    """

    pubkey: bytes
    message: bytes
    tag: bytes = b""


class SignatureVerifier(Protocol):
    def verify(self, token: SignatureToken) -> bool: ...


@dataclass(frozen=True)
class Witness:
    slots: Mapping[str, bytes] = field(default_factory=dict)
    signatures: tuple[SignatureToken, ...] = ()

    def with_signatures(self, *tokens: SignatureToken) -> "Witness":
        return Witness(dict(self.slots), self.signatures + tuple(tokens))

    def with_slots(self, **slots: bytes) -> "Witness":
        merged = dict(self.slots)
        merged.update(slots)
        return Witness(merged, self.signatures)


def _check_names(labels: tuple[str, ...]) -> None:
    if not labels:
        raise MalformedScript("leaf references no witness slots")
    for name in labels:
        if not isinstance(name, str) or not _NAME_RE.match(name):
            raise MalformedScript(f"bad witness slot name {name!r}")


@dataclass(frozen=True)
class And:
    left: "ScriptExpr"
    right: "ScriptExpr"


@dataclass(frozen=True)
class Or:
    left: "ScriptExpr"
    right: "ScriptExpr"


@dataclass(frozen=True)
class PreimageSha256:
    label: str
    expected: bytes

    def __post_init__(self):
        _check_names((self.label,))
        if len(self.expected) != 32:
            raise MalformedScript("sha256 commitment must be 32 bytes")


@dataclass(frozen=True)
class Sig:
    required_pubkey: bytes

    def __post_init__(self):
        if len(self.required_pubkey) != 32:
            raise MalformedScript("public keys are 32 bytes")


@dataclass(frozen=True)
class ParityEquals:
    labels: tuple[str, ...]
    bit: int

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        _check_names(self.labels)
        if self.bit not in (0, 1):
            raise MalformedScript("parity bit must be 0 or 1")


@dataclass(frozen=True)
class GreaterThanSha1:
    """SHA1 of the concatenated slots, as an integer, is above ``threshold``."""

    labels: tuple[str, ...]
    threshold: int = SHA1_MIDPOINT

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        _check_names(self.labels)
        if not 0 <= self.threshold < 1 << 160:
            raise MalformedScript("threshold must fit in 160 bits")


@dataclass(frozen=True)
class AtMostSha1:
    """Complement of :class:`GreaterThanSha1`; selects the other party."""

    labels: tuple[str, ...]
    threshold: int = SHA1_MIDPOINT

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        _check_names(self.labels)
        if not 0 <= self.threshold < 1 << 160:
            raise MalformedScript("threshold must fit in 160 bits")


@dataclass(frozen=True)
class XorBitsInRange:
    """Low ``k_bits`` of the XOR of the slots' last two bytes lie in [low, high)."""

    labels: tuple[str, ...]
    k_bits: int
    low: int
    high: int

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        _check_names(self.labels)
        if not 1 <= self.k_bits <= 16:
            raise MalformedScript("k_bits must be in 1..16")
        if not 0 <= self.low <= self.high <= 1 << self.k_bits:
            raise MalformedScript("range must satisfy 0 <= low <= high <= 2^k")


ScriptExpr = Union[
    And, Or, PreimageSha256, Sig, ParityEquals, GreaterThanSha1, AtMostSha1, XorBitsInRange
]

_LEAVES_WITH_LABELS = (ParityEquals, GreaterThanSha1, AtMostSha1, XorBitsInRange)


def slot_names(expr: ScriptExpr) -> frozenset[str]:
    if isinstance(expr, (And, Or)):
        return slot_names(expr.left) | slot_names(expr.right)
    if isinstance(expr, PreimageSha256):
        return frozenset((expr.label,))
    if isinstance(expr, _LEAVES_WITH_LABELS):
        return frozenset(expr.labels)
    if isinstance(expr, Sig):
        return frozenset()
    raise MalformedScript(f"not a script node: {expr!r}")


def eval_script(
    expr: ScriptExpr,
    witness: Witness,
    spending_txid: bytes,
    key_registry: SignatureVerifier,
    slot_universe: Optional[Iterable[str]] = None,
) -> bool:
    """Decide whether ``witness`` satisfies ``expr`` for a spend by ``spending_txid``.

    Missing preimages or signatures only make the affected leaf false.  When
    ``slot_universe`` is given, any leaf naming a slot outside it raises
    :class:`MalformedScript`.
    """
    if slot_universe is not None:
        undeclared = slot_names(expr) - frozenset(slot_universe)
        if undeclared:
            raise MalformedScript(f"undeclared witness slots: {sorted(undeclared)}")
    return _eval(expr, witness, spending_txid, key_registry)


def _eval(expr, witness: Witness, txid: bytes, registry: SignatureVerifier) -> bool:
    if isinstance(expr, And):
        return _eval(expr.left, witness, txid, registry) and _eval(
            expr.right, witness, txid, registry
        )
    if isinstance(expr, Or):
        return _eval(expr.left, witness, txid, registry) or _eval(
            expr.right, witness, txid, registry
        )
    if isinstance(expr, Sig):
        return any(
            tok.pubkey == expr.required_pubkey
            and tok.message == txid
            and registry.verify(tok)
            for tok in witness.signatures
        )
    if isinstance(expr, PreimageSha256):
        value = witness.slots.get(expr.label)
        return value is not None and digest(SHA256, value) == expr.expected

    if not isinstance(expr, _LEAVES_WITH_LABELS):
        raise MalformedScript(f"not a script node: {expr!r}")
    values = [witness.slots.get(name) for name in expr.labels]
    if any(v is None for v in values):
        return False
    try:
        if isinstance(expr, ParityEquals):
            acc = 0
            for v in values:
                acc ^= parity(v)
            return acc == expr.bit
        if isinstance(expr, XorBitsInRange):
            acc = 0
            for v in values:
                acc ^= low_bits(v, expr.k_bits)
            return expr.low <= acc < expr.high
    except EmptyOperand:
        return False
    value = int.from_bytes(digest(SHA1, b"".join(values)), "big")
    if isinstance(expr, GreaterThanSha1):
        return value > expr.threshold
    return value <= expr.threshold


def satisfiable_by_signature(expr: ScriptExpr, pubkey: bytes) -> bool:
    """True when a signature from ``pubkey`` alone is enough to spend ``expr``."""
    if isinstance(expr, Sig):
        return expr.required_pubkey == pubkey
    if isinstance(expr, And):
        return satisfiable_by_signature(expr.left, pubkey) and satisfiable_by_signature(
            expr.right, pubkey
        )
    if isinstance(expr, Or):
        return satisfiable_by_signature(expr.left, pubkey) or satisfiable_by_signature(
            expr.right, pubkey
        )
    return False


# -- text form -------------------------------------------------------------


@lru_cache(maxsize=4096)
def encode_script(expr: ScriptExpr) -> str:
    if isinstance(expr, And):
        return f"({encode_script(expr.left)} AND {encode_script(expr.right)})"
    if isinstance(expr, Or):
        return f"({encode_script(expr.left)} OR {encode_script(expr.right)})"
    if isinstance(expr, PreimageSha256):
        return f"sha256({expr.label}) == {expr.expected.hex()}"
    if isinstance(expr, Sig):
        return f"sig({expr.required_pubkey.hex()})"
    if isinstance(expr, ParityEquals):
        return f"(parity (xor {' '.join(expr.labels)}) == {expr.bit})"
    if isinstance(expr, GreaterThanSha1):
        return f"(sha1cat({' '.join(expr.labels)}) > {expr.threshold})"
    if isinstance(expr, AtMostSha1):
        return f"(sha1cat({' '.join(expr.labels)}) <= {expr.threshold})"
    if isinstance(expr, XorBitsInRange):
        return (
            f"(lowbits {expr.k_bits} (xor {' '.join(expr.labels)}) "
            f"in {expr.low}..{expr.high})"
        )
    raise MalformedScript(f"not a script node: {expr!r}")


_NAMES = rf"{_NAME}(?: {_NAME})*"
_NUMBER = r"0x[0-9a-fA-F]+|\d+"
_LEAF_PATTERNS = [
    (re.compile(rf"sha256\(({_NAME})\) == ([0-9a-f]{{64}})"),
     lambda m: PreimageSha256(m[1], bytes.fromhex(m[2]))),
    (re.compile(r"sig\(([0-9a-f]{64})\)"),
     lambda m: Sig(bytes.fromhex(m[1]))),
    (re.compile(rf"\(parity \(xor ({_NAMES})\) == ([01])\)"),
     lambda m: ParityEquals(tuple(m[1].split(" ")), int(m[2]))),
    (re.compile(rf"\(sha1cat\(({_NAMES})\) > ({_NUMBER})\)"),
     lambda m: GreaterThanSha1(tuple(m[1].split(" ")), int(m[2], 0))),
    (re.compile(rf"\(sha1cat\(({_NAMES})\) <= ({_NUMBER})\)"),
     lambda m: AtMostSha1(tuple(m[1].split(" ")), int(m[2], 0))),
    (re.compile(rf"\(lowbits (\d+) \(xor ({_NAMES})\) in (\d+)\.\.(\d+)\)"),
     lambda m: XorBitsInRange(tuple(m[2].split(" ")), int(m[1]), int(m[3]), int(m[4]))),
]


def parse_script(text: str) -> ScriptExpr:
    """Inverse of :func:`encode_script`."""
    expr, pos = _parse(text, 0)
    if pos != len(text):
        raise MalformedScript(f"trailing input at offset {pos}")
    return expr


def _parse(text: str, pos: int) -> tuple[ScriptExpr, int]:
    for pattern, build in _LEAF_PATTERNS:
        m = pattern.match(text, pos)
        if m:
            return build(m), m.end()
    if not text.startswith("(", pos):
        raise MalformedScript(f"unexpected input at offset {pos}")
    left, pos = _parse(text, pos + 1)
    if text.startswith(" AND ", pos):
        node, pos = And, pos + 5
    elif text.startswith(" OR ", pos):
        node, pos = Or, pos + 4
    else:
        raise MalformedScript(f"expected AND/OR at offset {pos}")
    right, pos = _parse(text, pos)
    if not text.startswith(")", pos):
        raise MalformedScript(f"expected ')' at offset {pos}")
    return node(left, right), pos + 1
