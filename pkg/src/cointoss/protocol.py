"""Coin-toss transactions, winner rules and the two parties' state machines.

Bob locks the pot in the *bet* output, spendable by whoever the two committed
secrets pick once both are revealed.  Alice locks her stake in the *reveal*
output, which Bob can only claim by publishing his secret.  Each locked output
comes with a pre-signed refund whose locktime bounds how long a stalling
counterparty can hold the coins; the reveal refund must mature first.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from math import gcd
from typing import Mapping, Optional, Sequence, Union

from .ledger import (
    ChainView,
    OutPoint,
    Output,
    Transaction,
    TxIn,
    pubkey_of,
    sign,
)
from .scriptvm import (
    SHA1,
    SHA1_MIDPOINT,
    SHA256,
    And,
    AtMostSha1,
    GreaterThanSha1,
    Or,
    ParityEquals,
    PreimageSha256,
    ScriptExpr,
    Sig,
    SignatureToken,
    Witness,
    XorBitsInRange,
    digest,
    parity,
)

SECRET_SIZE = 32
PARITY = "parity"
SHA1_COMPARE = "sha1"


class ProtocolError(Exception):
    pass


class ParameterError(ProtocolError, ValueError):
    pass


class DomainError(ProtocolError, ValueError):
    pass


class FundingMismatch(ProtocolError):
    pass


class BadIndex(ProtocolError, IndexError):
    pass


class ProtocolViolation(ProtocolError):
    pass


class Role(str, enum.Enum):
    ALICE = "Alice"
    BOB = "Bob"

    @property
    def other(self) -> "Role":
        return Role.BOB if self is Role.ALICE else Role.ALICE


# -- commitments and winner rules ------------------------------------------


def commit(secret: bytes) -> bytes:
    return digest(SHA256, secret)


def winner(a_secret: bytes, b_secret: bytes) -> Role:
    return Role.ALICE if parity(a_secret) ^ parity(b_secret) == 0 else Role.BOB


def biased_winner(a_secret: bytes, b_secret: bytes, k_bits: int, threshold: int) -> Role:
    """Alice wins when the low ``k_bits`` of the XORed secret tails fall below ``threshold``.

    Over uniform secrets this happens with probability ``threshold / 2**k_bits``.
    """
    if not 1 <= k_bits <= 16:
        raise DomainError(f"k_bits must be in 1..16, got {k_bits}")
    if not 0 <= threshold <= 1 << k_bits:
        raise DomainError(f"threshold must be in 0..{1 << k_bits}, got {threshold}")
    tail = int.from_bytes(a_secret[-2:], "big") ^ int.from_bytes(b_secret[-2:], "big")
    return Role.ALICE if tail & ((1 << k_bits) - 1) < threshold else Role.BOB


def sha1_winner(a_secret: bytes, b_secret: bytes, threshold: int = SHA1_MIDPOINT) -> Role:
    value = int.from_bytes(digest(SHA1, a_secret + b_secret), "big")
    return Role.BOB if value > threshold else Role.ALICE


# -- parameters ------------------------------------------------------------


@dataclass(frozen=True)
class Bias:
    k_bits: int
    threshold: int
    alice_stake: int
    bob_stake: int


def bias_stakes(stake_x: int, k_bits: int, threshold: int) -> Bias:
    """Split a pot of ``2 * stake_x`` so that both sides have zero expected gain.

    Stakes are in the exact ratio ``threshold : 2**k_bits - threshold``; the pot
    is rounded down to the nearest multiple of the reduced ratio's sum.
    """
    if not 1 <= k_bits <= 16:
        raise ParameterError(f"k_bits must be in 1..16, got {k_bits}")
    span = 1 << k_bits
    if not 0 < threshold < span:
        raise ParameterError("a staked biased bet needs 0 < threshold < 2^k")
    g = gcd(threshold, span - threshold)
    a, b = threshold // g, (span - threshold) // g
    unit = (2 * stake_x) // (a + b)
    if unit < 1:
        raise ParameterError(
            f"stake {stake_x} too small for ratio {a}:{b}; need 2X >= {a + b}"
        )
    return Bias(k_bits, threshold, unit * a, unit * b)


@dataclass(frozen=True)
class BetParams:
    stake_x: int = 50
    bet_locktime: int = 20
    reveal_locktime: int = 10
    pk_alice: Optional[bytes] = None
    pk_bob: Optional[bytes] = None
    bias: Optional[Bias] = None
    confirmation_depth: int = 1
    unsound_mode: bool = False
    predicate: str = PARITY
    setup_timeout: int = 10

    def __post_init__(self):
        if self.stake_x < 1:
            raise ParameterError("stake must be positive")
        if self.bet_locktime < 1 or self.reveal_locktime < 1:
            raise ParameterError("locktimes must be positive")
        if self.reveal_locktime >= self.bet_locktime and not self.unsound_mode:
            raise ParameterError(
                f"reveal locktime ({self.reveal_locktime}) must be shorter than "
                f"bet locktime ({self.bet_locktime}); pass unsound_mode to override"
            )
        if self.confirmation_depth < 0:
            raise ParameterError("confirmation depth must be >= 0")
        if self.predicate not in (PARITY, SHA1_COMPARE):
            raise ParameterError(f"unknown predicate {self.predicate!r}")
        b = self.bias
        if b is not None:
            if self.predicate != PARITY:
                raise ParameterError("biased bets use the bit-window predicate")
            if not 1 <= b.k_bits <= 16 or not 0 < b.threshold < 1 << b.k_bits:
                raise ParameterError("bias needs 1 <= k <= 16 and 0 < T < 2^k")
            if b.alice_stake < 1 or b.bob_stake < 1:
                raise ParameterError("both biased stakes must be positive")
            if b.alice_stake * ((1 << b.k_bits) - b.threshold) != b.bob_stake * b.threshold:
                raise ParameterError("biased stakes must be in ratio T : 2^k - T")

    @property
    def alice_stake(self) -> int:
        return self.bias.alice_stake if self.bias else self.stake_x

    @property
    def bob_stake(self) -> int:
        return self.bias.bob_stake if self.bias else self.stake_x

    @property
    def pot(self) -> int:
        return self.alice_stake + self.bob_stake

    def stake_of(self, role: Role) -> int:
        return self.alice_stake if role is Role.ALICE else self.bob_stake

    def pubkey(self, role: Role) -> bytes:
        pk = self.pk_alice if role is Role.ALICE else self.pk_bob
        if pk is None:
            raise ParameterError(f"no public key set for {role.value}")
        return pk


def decide_winner(params: BetParams, a_secret: bytes, b_secret: bytes) -> Role:
    if params.bias is not None:
        return biased_winner(a_secret, b_secret, params.bias.k_bits, params.bias.threshold)
    if params.predicate == SHA1_COMPARE:
        return sha1_winner(a_secret, b_secret)
    return winner(a_secret, b_secret)


# -- scripts and transaction builders --------------------------------------


def _both_sign(params: BetParams) -> ScriptExpr:
    return And(Sig(params.pubkey(Role.ALICE)), Sig(params.pubkey(Role.BOB)))


def bet_script(params: BetParams, a_commit: bytes, b_commit: bytes) -> ScriptExpr:
    pk_a, pk_b = params.pubkey(Role.ALICE), params.pubkey(Role.BOB)
    labels = ("A", "B")
    if params.bias is not None:
        k, t = params.bias.k_bits, params.bias.threshold
        alice_wins: ScriptExpr = XorBitsInRange(labels, k, 0, t)
        bob_wins: ScriptExpr = XorBitsInRange(labels, k, t, 1 << k)
    elif params.predicate == SHA1_COMPARE:
        alice_wins = AtMostSha1(labels)
        bob_wins = GreaterThanSha1(labels)
    else:
        alice_wins = ParityEquals(labels, 0)
        bob_wins = ParityEquals(labels, 1)
    reveal_both = And(PreimageSha256("A", a_commit), PreimageSha256("B", b_commit))
    pick = Or(And(alice_wins, Sig(pk_a)), And(bob_wins, Sig(pk_b)))
    return Or(_both_sign(params), And(reveal_both, pick))


def reveal_script(params: BetParams, b_commit: bytes) -> ScriptExpr:
    return Or(
        _both_sign(params),
        And(PreimageSha256("B", b_commit), Sig(params.pubkey(Role.BOB))),
    )


def _fund(funding: Sequence[tuple[OutPoint, int]], required: int) -> tuple[TxIn, ...]:
    total = sum(value for _, value in funding)
    if total != required or not funding:
        raise FundingMismatch(f"funding sums to {total}, need {required}")
    return tuple(TxIn(op) for op, _ in funding)


def build_bet_transaction(
    params: BetParams,
    funding: Sequence[tuple[OutPoint, int]],
    a_commit: bytes,
    b_commit: bytes,
) -> Transaction:
    inputs = _fund(funding, params.pot)
    return Transaction(inputs, (Output(params.pot, bet_script(params, a_commit, b_commit)),), 0)


def build_reveal_transaction(
    params: BetParams, funding: Sequence[tuple[OutPoint, int]], b_commit: bytes
) -> Transaction:
    inputs = _fund(funding, params.alice_stake)
    return Transaction(inputs, (Output(params.alice_stake, reveal_script(params, b_commit)),), 0)


def _parent_output(parent: Transaction, index: int) -> Output:
    if not 0 <= index < len(parent.outputs):
        raise BadIndex(f"transaction has no output {index}")
    return parent.outputs[index]


def build_refund_transaction(
    parent: Transaction,
    output_index: int,
    locktime_offset: int,
    current_height: int,
    dest_pk: bytes,
) -> Transaction:
    """Time-locked spend of ``parent``'s output back to ``dest_pk``; unsigned."""
    out = _parent_output(parent, output_index)
    return Transaction(
        (TxIn(parent.outpoint(output_index)),),
        (Output(out.value, Sig(dest_pk)),),
        current_height + locktime_offset,
    )


def build_redeem_transaction(
    parent: Transaction,
    output_index: int,
    preimages: Mapping[str, bytes],
    signer_secret_key: bytes,
    dest_pk: bytes,
) -> Transaction:
    out = _parent_output(parent, output_index)
    tx = Transaction((TxIn(parent.outpoint(output_index)),), (Output(out.value, Sig(dest_pk)),), 0)
    token = sign(signer_secret_key, tx.txid)
    return tx.with_witness(0, Witness(dict(preimages), (token,)))


def sign_inputs(tx: Transaction, secret_key: bytes) -> Transaction:
    """Sign every input of ``tx`` with one key (plain pay-to-pubkey funding)."""
    token = sign(secret_key, tx.txid)
    for i, txin in enumerate(tx.inputs):
        tx = tx.with_witness(i, txin.witness.with_signatures(token))
    return tx


def attach_signatures(tx: Transaction, *tokens: SignatureToken) -> Transaction:
    return tx.with_witness(0, tx.inputs[0].witness.with_signatures(*tokens))


# -- messages, observations, actions ---------------------------------------


@dataclass(frozen=True)
class Commit:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != 32:
            raise ProtocolViolation("commitments are 32-byte digests")


@dataclass(frozen=True)
class RefundSignatureRequest:
    tx: Transaction


@dataclass(frozen=True)
class RefundSignature:
    token: SignatureToken


@dataclass(frozen=True)
class SecretDisclosure:
    secret: bytes


Message = Union[Commit, RefundSignatureRequest, RefundSignature, SecretDisclosure]


@dataclass(frozen=True)
class SessionStart:
    pass


@dataclass(frozen=True)
class BlockTick:
    view: ChainView


Observation = Union[Message, SessionStart, BlockTick]


@dataclass(frozen=True)
class SendMessage:
    message: Message
    step: Optional[int]


@dataclass(frozen=True)
class Broadcast:
    tx: Transaction
    step: Optional[int]
    label: str


Action = Union[SendMessage, Broadcast]


class Phase(str, enum.Enum):
    INIT = "Init"
    COMMIT_SENT = "CommitSent"
    COMMIT_EXCHANGED = "CommitExchanged"
    REFUND_BET_SIGNED = "RefundBetSigned"
    BET_BROADCAST = "BetBroadcast"
    REFUND_REVEAL_SIGNED = "RefundRevealSigned"
    REVEAL_BROADCAST = "RevealBroadcast"
    REVEAL_REDEEMED = "RevealRedeemed"
    BET_REDEEMED = "BetRedeemed"
    REFUNDED = "Refunded"
    DONE = "Done"


PHASE_ORDER = {p: i for i, p in enumerate(Phase)}
TERMINAL = frozenset({Phase.DONE})


@dataclass(frozen=True)
class PartyState:
    role: Role
    secret: bytes
    secret_key: bytes
    funding: tuple[tuple[OutPoint, int], ...]
    phase: Phase = Phase.INIT
    height: int = 0
    start_height: int = 0
    counterparty_commit: Optional[bytes] = None
    counterparty_secret: Optional[bytes] = None
    bet_tx: Optional[Transaction] = None
    refund_bet: Optional[Transaction] = None
    reveal_tx: Optional[Transaction] = None
    refund_reveal: Optional[Transaction] = None
    last_tx: Optional[Transaction] = None
    net_outcome: Optional[int] = None

    def __post_init__(self):
        if len(self.secret) != SECRET_SIZE:
            raise ParameterError("secrets are 32 bytes")

    @property
    def pubkey(self) -> bytes:
        return pubkey_of(self.secret_key)

    @property
    def own_commit(self) -> bytes:
        return commit(self.secret)

    @property
    def bet_txid(self) -> Optional[bytes]:
        if self.bet_tx is not None:
            return self.bet_tx.txid
        if self.refund_bet is not None:
            return self.refund_bet.inputs[0].outpoint.txid
        return None

    @property
    def reveal_txid(self) -> Optional[bytes]:
        if self.reveal_tx is not None:
            return self.reveal_tx.txid
        if self.refund_reveal is not None:
            return self.refund_reveal.inputs[0].outpoint.txid
        return None

    @property
    def finished(self) -> bool:
        return self.phase in TERMINAL

    def secrets(self) -> tuple[Optional[bytes], Optional[bytes]]:
        """(A1, B1) as far as this party knows them."""
        if self.role is Role.ALICE:
            return self.secret, self.counterparty_secret
        return self.counterparty_secret, self.secret


def new_party(role: Role, secret: bytes, secret_key: bytes, funding) -> PartyState:
    return PartyState(role, secret, secret_key, tuple(funding))


# A refund can lose the race against the counterparty's claim, after which the
# bet may still be ours to redeem.
_LATE_EDGES = frozenset({(Phase.REFUNDED, Phase.BET_REDEEMED)})


def _go(state: PartyState, phase: Phase, **changes) -> PartyState:
    backwards = PHASE_ORDER[phase] <= PHASE_ORDER[state.phase]
    if backwards and (state.phase, phase) not in _LATE_EDGES:
        raise ProtocolViolation(f"{state.role.value}: {state.phase.value} -> {phase.value}")
    return replace(state, phase=phase, **changes)


def step_party(
    state: PartyState, params: BetParams, observation: Observation
) -> tuple[PartyState, list[Action]]:
    """Honest transition function for either role.  Pure."""
    if state.finished:
        return state, []
    if isinstance(observation, BlockTick):
        state = replace(state, height=observation.view.height)
    elif isinstance(observation, SessionStart):
        state = replace(state, start_height=state.height)
    elif isinstance(observation, Commit):
        return _on_commit(state, params, observation)
    handler = _alice if state.role is Role.ALICE else _bob
    return handler(state, params, observation)


def _on_commit(state: PartyState, params: BetParams, msg: Commit):
    if state.counterparty_commit is not None:
        if msg.digest != state.counterparty_commit:
            raise ProtocolViolation("counterparty sent two different commitments")
        return state, []
    if state.role is Role.ALICE:
        phase = Phase.COMMIT_EXCHANGED if state.phase is Phase.COMMIT_SENT else state.phase
        return replace(state, counterparty_commit=msg.digest, phase=phase), []
    if state.phase is not Phase.INIT:
        raise ProtocolViolation("unexpected commitment")
    bet = build_bet_transaction(params, state.funding, msg.digest, state.own_commit)
    bet = sign_inputs(bet, state.secret_key)
    refund = build_refund_transaction(bet, 0, params.bet_locktime, state.height, state.pubkey)
    state = _go(
        state, Phase.COMMIT_EXCHANGED, counterparty_commit=msg.digest, bet_tx=bet, refund_bet=refund
    )
    return state, [
        SendMessage(Commit(state.own_commit), step=2),
        SendMessage(RefundSignatureRequest(refund), step=4),
    ]


def _refund_request_ok(state: PartyState, params: BetParams, tx: Transaction,
                       dest_pk: bytes, value: int, offset: int) -> bool:
    if len(tx.inputs) != 1 or len(tx.outputs) != 1:
        return False
    own = {op for op, _ in state.funding}
    out = tx.outputs[0]
    return (
        tx.inputs[0].outpoint not in own
        and out.script == Sig(dest_pk)
        and out.value == value
        and tx.locktime >= state.height + offset
    )


# -- Alice -----------------------------------------------------------------


def _alice(state: PartyState, params: BetParams, obs) -> tuple[PartyState, list[Action]]:
    if isinstance(obs, SessionStart):
        if state.phase is Phase.INIT:
            phase = Phase.COMMIT_EXCHANGED if state.counterparty_commit else Phase.COMMIT_SENT
            return _go(state, phase), [SendMessage(Commit(state.own_commit), step=1)]
        return state, []
    if isinstance(obs, RefundSignatureRequest):
        if state.phase is not Phase.COMMIT_EXCHANGED:
            raise ProtocolViolation(f"refund request in phase {state.phase.value}")
        tx = obs.tx
        if not _refund_request_ok(state, params, tx, params.pubkey(Role.BOB), params.pot,
                                  params.bet_locktime):
            raise ProtocolViolation("refund_bet request does not match the agreed terms")
        token = sign(state.secret_key, tx.txid)
        return _go(state, Phase.REFUND_BET_SIGNED, refund_bet=tx), [
            SendMessage(RefundSignature(token), step=4)
        ]
    if isinstance(obs, RefundSignature):
        if state.phase is not Phase.BET_BROADCAST or state.refund_reveal is None:
            raise ProtocolViolation(f"unexpected refund signature in {state.phase.value}")
        tok = obs.token
        if tok.pubkey != params.pubkey(Role.BOB) or tok.message != state.refund_reveal.txid:
            raise ProtocolViolation("refund_reveal signature is for the wrong key or tx")
        own = sign(state.secret_key, state.refund_reveal.txid)
        signed = attach_signatures(state.refund_reveal, own, tok)
        return _go(state, Phase.REFUND_REVEAL_SIGNED, refund_reveal=signed), []
    if isinstance(obs, SecretDisclosure):
        raise ProtocolViolation("Alice never receives a secret disclosure")
    if isinstance(obs, BlockTick):
        return _alice_tick(state, params, obs.view)
    return state, []


def _alice_gives_up(state: PartyState, params: BetParams) -> bool:
    lb = state.refund_bet.locktime
    if state.height >= lb:
        return True
    return not params.unsound_mode and state.height + params.reveal_locktime >= lb


def _bet_ready(state: PartyState, params: BetParams, view: ChainView) -> bool:
    """The bet is buried deep enough, unspent, and pays what was agreed."""
    txid = state.bet_txid
    depth = view.depth(txid)
    if depth is None or depth < params.confirmation_depth:
        return False
    if not view.is_unspent(OutPoint(txid, 0)):
        return False
    bet = view.transactions[txid]
    expected = Output(params.pot, bet_script(params, state.own_commit, state.counterparty_commit))
    return bet.outputs == (expected,)


def _alice_tick(state: PartyState, params: BetParams, view: ChainView):
    phase = state.phase
    if phase in (Phase.INIT, Phase.COMMIT_SENT, Phase.COMMIT_EXCHANGED):
        if state.height >= state.start_height + params.setup_timeout:
            return _go(state, Phase.DONE), []
        return state, []

    if phase is Phase.REFUND_BET_SIGNED:
        if _alice_gives_up(state, params):
            return _go(state, Phase.DONE), []
        if not _bet_ready(state, params, view):
            return state, []
        bet = view.transactions[state.bet_txid]
        reveal = build_reveal_transaction(params, state.funding, state.counterparty_commit)
        reveal = sign_inputs(reveal, state.secret_key)
        refund = build_refund_transaction(
            reveal, 0, params.reveal_locktime, state.height, state.pubkey
        )
        state = _go(state, Phase.BET_BROADCAST, bet_tx=bet, reveal_tx=reveal, refund_reveal=refund)
        return state, [SendMessage(RefundSignatureRequest(refund), step=7)]

    if phase is Phase.BET_BROADCAST:
        if _alice_gives_up(state, params):
            return _go(state, Phase.DONE), []
        return state, []

    if phase is Phase.REFUND_REVEAL_SIGNED:
        if _alice_gives_up(state, params):
            return _go(state, Phase.DONE), []
        if not _bet_ready(state, params, view):
            return state, []
        return _go(state, Phase.REVEAL_BROADCAST), [Broadcast(state.reveal_tx, 8, "reveal")]

    reveal_op = OutPoint(state.reveal_txid, 0)
    spender = view.spender(reveal_op)
    if phase in (Phase.REVEAL_BROADCAST, Phase.REFUNDED) and state.counterparty_secret is None:
        if spender is not None and spender.txid != state.refund_reveal.txid:
            b1 = spender.inputs[0].witness.slots.get("B")
            if b1 is not None and commit(b1) == state.counterparty_commit:
                return _alice_settle(replace(state, counterparty_secret=b1), params, view)
    if phase is Phase.REVEAL_BROADCAST:
        if not view.knows(state.reveal_txid):
            return _go(state, Phase.DONE), []
        if spender is None and state.height >= state.refund_reveal.locktime:
            refund = state.refund_reveal
            return _go(state, Phase.REFUNDED, last_tx=refund), [
                Broadcast(refund, None, "refund_reveal")
            ]
        return state, []
    # REFUNDED / BET_REDEEMED: wait for the final spend to confirm.
    target = reveal_op if phase is Phase.REFUNDED else OutPoint(state.bet_txid, 0)
    return _await_final(state, view, target)


def _await_final(state: PartyState, view: ChainView, target: OutPoint):
    if not view.knows(target.txid):
        return _go(state, Phase.DONE), []
    spender = view.spender(target)
    if spender is None:
        if view.is_unspent(target) and state.last_tx is not None:
            label = "rebroadcast"
            return state, [Broadcast(state.last_tx, None, label)]
        return state, []
    if view.depth(spender.txid) is not None:
        return _go(state, Phase.DONE), []
    return state, []


def _alice_settle(state: PartyState, params: BetParams, view: ChainView):
    a1, b1 = state.secrets()
    if decide_winner(params, a1, b1) is Role.ALICE:
        bet_op = OutPoint(state.bet_txid, 0)
        if not view.is_unspent(bet_op):
            return _go(state, Phase.DONE), []
        redeem = build_redeem_transaction(
            state.bet_tx, 0, {"A": a1, "B": b1}, state.secret_key, state.pubkey
        )
        return _go(state, Phase.BET_REDEEMED, last_tx=redeem), [
            Broadcast(redeem, 10, "redeem_bet")
        ]
    return _go(state, Phase.DONE), [SendMessage(SecretDisclosure(state.secret), step=10)]


# -- Bob -------------------------------------------------------------------


def _bob(state: PartyState, params: BetParams, obs) -> tuple[PartyState, list[Action]]:
    if isinstance(obs, SessionStart):
        return state, []
    if isinstance(obs, RefundSignature):
        if state.phase is not Phase.COMMIT_EXCHANGED:
            raise ProtocolViolation(f"unexpected refund signature in {state.phase.value}")
        tok = obs.token
        if tok.pubkey != params.pubkey(Role.ALICE) or tok.message != state.refund_bet.txid:
            raise ProtocolViolation("refund_bet signature is for the wrong key or tx")
        own = sign(state.secret_key, state.refund_bet.txid)
        signed = attach_signatures(state.refund_bet, tok, own)
        return _go(state, Phase.REFUND_BET_SIGNED, refund_bet=signed), [
            Broadcast(state.bet_tx, 5, "bet")
        ]
    if isinstance(obs, RefundSignatureRequest):
        if state.phase not in (Phase.REFUND_BET_SIGNED, Phase.BET_BROADCAST):
            raise ProtocolViolation(f"refund request in phase {state.phase.value}")
        tx = obs.tx
        ok = _refund_request_ok(state, params, tx, params.pubkey(Role.ALICE),
                                params.alice_stake, params.reveal_locktime)
        if not ok or tx.inputs[0].outpoint.txid == state.bet_txid:
            raise ProtocolViolation("refund_reveal request does not match the agreed terms")
        token = sign(state.secret_key, tx.txid)
        return _go(state, Phase.REFUND_REVEAL_SIGNED, refund_reveal=tx), [
            SendMessage(RefundSignature(token), step=7)
        ]
    if isinstance(obs, SecretDisclosure):
        if state.phase not in (Phase.REVEAL_REDEEMED, Phase.REFUNDED, Phase.BET_REDEEMED):
            raise ProtocolViolation(f"secret disclosed in phase {state.phase.value}")
        if commit(obs.secret) != state.counterparty_commit:
            raise ProtocolViolation("disclosed secret does not match the commitment")
        state = replace(state, counterparty_secret=obs.secret)
        if state.phase is Phase.REVEAL_REDEEMED:
            return _bob_claim(state, params, None)
        return state, []
    if isinstance(obs, BlockTick):
        return _bob_tick(state, params, obs.view)
    return state, []


def _bob_claim(state: PartyState, params: BetParams, view: Optional[ChainView]):
    a1, b1 = state.secrets()
    if a1 is None or decide_winner(params, a1, b1) is not Role.BOB:
        return state, []
    if view is not None and not view.is_unspent(OutPoint(state.bet_txid, 0)):
        return state, []
    redeem = build_redeem_transaction(
        state.bet_tx, 0, {"A": a1, "B": b1}, state.secret_key, state.pubkey
    )
    return _go(state, Phase.BET_REDEEMED, last_tx=redeem), [Broadcast(redeem, 10, "redeem_bet")]


def _reveal_ready(state: PartyState, params: BetParams, view: ChainView) -> bool:
    txid = state.reveal_txid
    depth = view.depth(txid)
    if depth is None or depth < params.confirmation_depth:
        return False
    if not view.is_unspent(OutPoint(txid, 0)):
        return False
    expected = Output(params.alice_stake, reveal_script(params, state.own_commit))
    return view.transactions[txid].outputs == (expected,)


def _bob_tick(state: PartyState, params: BetParams, view: ChainView):
    phase = state.phase
    if phase in (Phase.INIT, Phase.COMMIT_EXCHANGED):
        if state.height >= state.start_height + params.setup_timeout:
            return _go(state, Phase.DONE), []
        return state, []
    bet_txid = state.bet_txid
    bet_op = OutPoint(bet_txid, 0)
    if phase is Phase.REFUND_BET_SIGNED:
        if view.knows(bet_txid):
            return _go(state, Phase.BET_BROADCAST), []
        return _go(state, Phase.DONE), []
    if phase in (Phase.REFUNDED, Phase.BET_REDEEMED):
        return _await_final(state, view, bet_op)

    if phase is Phase.REFUND_REVEAL_SIGNED and _reveal_ready(state, params, view):
        redeem = build_redeem_transaction(
            view.transactions[state.reveal_txid], 0, {"B": state.secret},
            state.secret_key, state.pubkey,
        )
        return _go(state, Phase.REVEAL_REDEEMED), [Broadcast(redeem, 9, "redeem_reveal")]

    if not view.knows(bet_txid):
        # Only our own double spend can make the bet vanish.
        reveal_txid = state.reveal_txid
        if (
            phase is Phase.REFUND_REVEAL_SIGNED
            and view.knows(reveal_txid)
            and view.spender(OutPoint(reveal_txid, 0)) is None
        ):
            return state, []
        return _go(state, Phase.DONE), []
    spender = view.spender(bet_op)
    if spender is not None:
        # Alice redeemed; her witness carries A1.
        a1 = spender.inputs[0].witness.slots.get("A")
        if a1 is not None and commit(a1) == state.counterparty_commit:
            state = replace(state, counterparty_secret=a1)
        if view.depth(spender.txid) is not None:
            return _go(state, Phase.DONE), []
        return state, []
    if phase is Phase.REVEAL_REDEEMED and state.counterparty_secret is not None:
        new_state, actions = _bob_claim(state, params, view)
        if actions:
            return new_state, actions
    if state.height >= state.refund_bet.locktime and view.is_unspent(bet_op):
        refund = state.refund_bet
        return _go(state, Phase.REFUNDED, last_tx=refund), [Broadcast(refund, None, "refund_bet")]
    return state, []
