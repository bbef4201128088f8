"""A single-node, zero-fee UTXO ledger with locktimes and bounded reorgs."""

from __future__ import annotations

import enum
import hashlib
import hmac
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, NamedTuple, Optional

from .scriptvm import (
    SHA256,
    ScriptExpr,
    SignatureToken,
    Witness,
    digest,
    encode_script,
    eval_script,
    satisfiable_by_signature,
    Sig,
)

DEFAULT_MAX_REORG_DEPTH = 3


def pubkey_of(secret_key: bytes) -> bytes:
    return digest(SHA256, secret_key)


def sign(secret_key: bytes, message: bytes) -> SignatureToken:
    """Simulation-grade signature: an HMAC only the key registry can recheck."""
    tag = hmac.new(secret_key, message, hashlib.sha256).digest()
    return SignatureToken(pubkey_of(secret_key), message, tag)


class KeyRegistry:
    """Holds secret keys on behalf of the simulation kernel.

    Parties never see each other's keys; the registry only answers whether a
    token was produced by :func:`sign` with the key behind its pubkey.
    """

    def __init__(self) -> None:
        self._keys: dict[bytes, bytes] = {}

    def register(self, secret_key: bytes) -> bytes:
        if len(secret_key) != 32:
            raise ValueError("secret keys are 32 bytes")
        pk = pubkey_of(secret_key)
        self._keys[pk] = secret_key
        return pk

    def verify(self, token: SignatureToken) -> bool:
        sk = self._keys.get(token.pubkey)
        if sk is None:
            return False
        expected = hmac.new(sk, token.message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, token.tag)


class OutPoint(NamedTuple):
    txid: bytes
    index: int

    def __str__(self) -> str:
        return f"{self.txid.hex()}:{self.index}"


@dataclass(frozen=True)
class TxIn:
    outpoint: OutPoint
    witness: Witness = field(default_factory=Witness)


@dataclass(frozen=True)
class Output:
    value: int
    script: ScriptExpr

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("output value must be non-negative")


@dataclass(frozen=True, eq=False)
class Transaction:
    inputs: tuple[TxIn, ...]
    outputs: tuple[Output, ...]
    locktime: int = 0

    def serialize(self) -> bytes:
        """Canonical bytes; witnesses are left out so ids are known before signing."""
        parts = [struct.pack(">I", len(self.inputs))]
        for txin in self.inputs:
            parts.append(txin.outpoint.txid)
            parts.append(struct.pack(">I", txin.outpoint.index))
        parts.append(struct.pack(">I", len(self.outputs)))
        for out in self.outputs:
            text = encode_script(out.script).encode("utf-8")
            parts.append(struct.pack(">QI", out.value, len(text)))
            parts.append(text)
        parts.append(struct.pack(">I", self.locktime))
        return b"".join(parts)

    @cached_property
    def txid(self) -> bytes:
        return digest(SHA256, self.serialize())

    def with_witness(self, index: int, witness: Witness) -> "Transaction":
        inputs = list(self.inputs)
        inputs[index] = TxIn(inputs[index].outpoint, witness)
        return Transaction(tuple(inputs), self.outputs, self.locktime)

    def outpoint(self, index: int) -> OutPoint:
        return OutPoint(self.txid, index)


def txid(tx: Transaction) -> bytes:
    return tx.txid


def faucet_transaction(grants: Iterable[tuple[bytes, int]]) -> Transaction:
    return Transaction((), tuple(Output(value, Sig(pk)) for pk, value in grants), 0)


class Reject(str, enum.Enum):
    INPUT_MISSING = "InputMissing"
    INPUT_SPENT = "InputSpent"
    SCRIPT_FAILED = "ScriptFailed"
    VALUE_MISMATCH = "ValueMismatch"
    LOCKTIME_NOT_REACHED = "LocktimeNotReached"
    DEPTH_EXCEEDED = "DepthExceeded"
    INVALID_REPLACEMENT = "InvalidReplacement"


class LedgerError(Exception):
    def __init__(self, reason: Reject, detail: str = ""):
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)
        self.reason = reason


class TxRejected(LedgerError):
    pass


class ReorgRejected(LedgerError):
    pass


@dataclass(frozen=True)
class ChainView:
    """Read-only snapshot of what a party can see on the network."""

    height: int
    transactions: Mapping[bytes, Transaction]
    confirmed_at: Mapping[bytes, int]
    spent_by: Mapping[OutPoint, bytes]

    def knows(self, txid: bytes) -> bool:
        return txid in self.transactions

    def depth(self, txid: bytes) -> Optional[int]:
        """Blocks mined on top of the one holding ``txid``; None if unconfirmed."""
        h = self.confirmed_at.get(txid)
        return None if h is None else self.height - h

    def spender(self, outpoint: OutPoint) -> Optional[Transaction]:
        spender = self.spent_by.get(outpoint)
        return None if spender is None else self.transactions[spender]

    def is_unspent(self, outpoint: OutPoint) -> bool:
        tx = self.transactions.get(outpoint.txid)
        return (
            tx is not None
            and outpoint.txid in self.confirmed_at
            and outpoint.index < len(tx.outputs)
            and outpoint not in self.spent_by
        )


class Ledger:
    """Blocks, UTXO set and mempool of one simulated chain.

    Block 0 holds the faucet transaction.  Accepted transactions wait in the
    mempool and confirm together at the next :meth:`advance_blocks` tick.
    """

    def __init__(
        self,
        faucet: Transaction,
        registry: KeyRegistry,
        max_reorg_depth: int = DEFAULT_MAX_REORG_DEPTH,
    ) -> None:
        if faucet.inputs:
            raise ValueError("faucet transaction must have no inputs")
        self.registry = registry
        self.max_reorg_depth = max_reorg_depth
        self.blocks: list[list[Transaction]] = []
        self._undo: list[list[tuple[OutPoint, Output]]] = []
        self.utxos: dict[OutPoint, Output] = {}
        self.mempool: dict[bytes, Transaction] = {}
        self._mempool_spends: dict[OutPoint, bytes] = {}
        self.supply = sum(o.value for o in faucet.outputs)
        self._version = 0
        self._view: Optional[ChainView] = None
        self._confirm([faucet])

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    @property
    def genesis(self) -> Transaction:
        return self.blocks[0][0]

    # -- validation --------------------------------------------------------

    def _check(self, tx: Transaction, height: int, spent: Mapping[OutPoint, bytes]) -> None:
        if not tx.inputs:
            raise TxRejected(Reject.INPUT_MISSING, "transaction has no inputs")
        seen = set()
        total_in = 0
        for txin in tx.inputs:
            op = txin.outpoint
            out = self.utxos.get(op)
            if out is None:
                raise TxRejected(Reject.INPUT_MISSING, str(op))
            if op in spent or op in seen:
                raise TxRejected(Reject.INPUT_SPENT, str(op))
            seen.add(op)
            total_in += out.value
        if total_in != sum(o.value for o in tx.outputs) or not tx.outputs:
            raise TxRejected(Reject.VALUE_MISMATCH)
        if tx.locktime > height:
            raise TxRejected(
                Reject.LOCKTIME_NOT_REACHED, f"locktime {tx.locktime} > height {height}"
            )
        for i, txin in enumerate(tx.inputs):
            script = self.utxos[txin.outpoint].script
            if not eval_script(script, txin.witness, tx.txid, self.registry):
                raise TxRejected(Reject.SCRIPT_FAILED, f"input {i}")

    def submit_transaction(self, tx: Transaction) -> bytes:
        """Validate ``tx`` against the tip and add it to the mempool.

        Returns the txid; raises :class:`TxRejected` otherwise.
        """
        if tx.txid in self.mempool:
            return tx.txid
        self._check(tx, self.height, self._mempool_spends)
        self.mempool[tx.txid] = tx
        for txin in tx.inputs:
            self._mempool_spends[txin.outpoint] = tx.txid
        self._touch()
        return tx.txid

    # -- time --------------------------------------------------------------

    def _confirm(self, txs: list[Transaction]) -> None:
        undo = []
        for tx in txs:
            for txin in tx.inputs:
                undo.append((txin.outpoint, self.utxos.pop(txin.outpoint)))
            for i, out in enumerate(tx.outputs):
                self.utxos[OutPoint(tx.txid, i)] = out
        self.blocks.append(list(txs))
        self._undo.append(undo)
        self._touch()

    def advance_blocks(self, n: int = 1) -> int:
        if n < 0:
            raise ValueError("cannot advance by a negative number of blocks")
        for _ in range(n):
            pending = sorted(self.mempool.values(), key=lambda t: t.txid)
            self.mempool.clear()
            self._mempool_spends.clear()
            self._confirm(pending)
        return self.height

    def _unwind_block(self) -> list[Transaction]:
        block = self.blocks.pop()
        undo = self._undo.pop()
        for tx in reversed(block):
            for i in range(len(tx.outputs)):
                del self.utxos[OutPoint(tx.txid, i)]
        for op, out in undo:
            self.utxos[op] = out
        return block

    def reorg(self, depth: int, replacement: Iterable[Transaction] = ()) -> list[Transaction]:
        """Replace the last ``depth`` blocks, keeping the height unchanged.

        ``replacement`` goes into the first rewritten block; the remaining ones
        are empty.  Unwound and pending transactions that are still valid go
        back to the mempool; the rest are dropped and returned.
        """
        replacement = list(replacement)
        if depth < 0 or depth > self.max_reorg_depth or depth > self.height:
            raise ReorgRejected(
                Reject.DEPTH_EXCEEDED, f"depth {depth}, limit {self.max_reorg_depth}"
            )
        saved = (
            list(self.blocks),
            list(self._undo),
            dict(self.utxos),
            dict(self.mempool),
            dict(self._mempool_spends),
        )
        target = self.height
        unwound: list[Transaction] = []
        for _ in range(depth):
            unwound[:0] = self._unwind_block()
        if depth == 0:
            if replacement:
                raise ReorgRejected(Reject.INVALID_REPLACEMENT, "depth 0 has no blocks")
            return []
        pending = unwound + list(self.mempool.values())
        self.mempool.clear()
        self._mempool_spends.clear()

        spent: dict[OutPoint, bytes] = {}
        try:
            for tx in replacement:
                self._check(tx, self.height + 1, spent)
                for txin in tx.inputs:
                    spent[txin.outpoint] = tx.txid
        except TxRejected as exc:
            (self.blocks, self._undo, self.utxos, self.mempool, self._mempool_spends) = saved
            self._touch()
            raise ReorgRejected(Reject.INVALID_REPLACEMENT, str(exc)) from exc
        self._confirm(sorted(replacement, key=lambda t: t.txid))
        while self.height < target:
            self._confirm([])

        dropped = []
        for tx in pending:
            try:
                self.submit_transaction(tx)
            except TxRejected:
                dropped.append(tx)
        self._touch()
        return dropped

    # -- queries -----------------------------------------------------------

    def balance_of(self, pubkey: bytes) -> int:
        return sum(
            out.value
            for out in self.utxos.values()
            if satisfiable_by_signature(out.script, pubkey)
        )

    def _touch(self) -> None:
        self._version += 1
        self._view = None

    def view(self) -> ChainView:
        if self._view is None:
            transactions: dict[bytes, Transaction] = {}
            confirmed_at: dict[bytes, int] = {}
            spent_by: dict[OutPoint, bytes] = {}
            for h, block in enumerate(self.blocks):
                for tx in block:
                    transactions[tx.txid] = tx
                    confirmed_at[tx.txid] = h
                    for txin in tx.inputs:
                        spent_by[txin.outpoint] = tx.txid
            for tx in self.mempool.values():
                transactions[tx.txid] = tx
                for txin in tx.inputs:
                    spent_by[txin.outpoint] = tx.txid
            self._view = ChainView(self.height, transactions, confirmed_at, spent_by)
        return self._view

    def dump(self) -> str:
        """One line per UTXO, sorted; the audit dump format."""
        lines = sorted(
            f"{op} {out.value} {encode_script(out.script)}" for op, out in self.utxos.items()
        )
        return "\n".join(lines)

    def serialize(self) -> str:
        lines = []
        for h, block in enumerate(self.blocks):
            lines.append(f"block {h} " + " ".join(tx.txid.hex() for tx in block))
        lines.append("mempool " + " ".join(t.hex() for t in self.mempool))
        lines.append(self.dump())
        return "\n".join(lines)

    def audit(self) -> list[str]:
        """Replay the chain from genesis and report every integrity violation."""
        problems = []
        genesis = self.blocks[0]
        if len(genesis) != 1 or genesis[0].inputs:
            problems.append("block 0 must hold exactly the faucet transaction")
        replay: dict[OutPoint, Output] = {}
        consumed: set[OutPoint] = set()
        for h, block in enumerate(self.blocks):
            for tx in block:
                if tx.locktime > h:
                    problems.append(f"locktime {tx.locktime} tx {tx.txid.hex()} in block {h}")
                if h > 0:
                    total_in = 0
                    for txin in tx.inputs:
                        op = txin.outpoint
                        if op in consumed:
                            problems.append(f"double spend of {op} at height {h}")
                            continue
                        out = replay.pop(op, None)
                        if out is None:
                            problems.append(f"missing input {op} at height {h}")
                            continue
                        consumed.add(op)
                        total_in += out.value
                        if not eval_script(out.script, txin.witness, tx.txid, self.registry):
                            problems.append(f"script failure on {op} at height {h}")
                    if total_in != sum(o.value for o in tx.outputs):
                        problems.append(f"value mismatch in {tx.txid.hex()}")
                for i, out in enumerate(tx.outputs):
                    replay[OutPoint(tx.txid, i)] = out
        if replay.keys() != self.utxos.keys() or any(
            replay[k] != self.utxos[k] for k in replay
        ):
            problems.append("rebuilt UTXO set differs from incremental state")
        total = sum(o.value for o in self.utxos.values())
        if total != self.supply:
            problems.append(f"supply {total} != issued {self.supply}")
        return problems
