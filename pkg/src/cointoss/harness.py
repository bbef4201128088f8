"""Session driver, trace recording, outcome audit and Monte Carlo batches."""

from __future__ import annotations

import random
from collections import Counter, deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

from .ledger import (
    KeyRegistry,
    Ledger,
    LedgerError,
    OutPoint,
    faucet_transaction,
)
from .protocol import (
    BetParams,
    BlockTick,
    Broadcast,
    Commit,
    Message,
    RefundSignature,
    RefundSignatureRequest,
    Role,
    SendMessage,
    SessionStart,
    decide_winner,
    new_party,
)
from .strategies import HONEST, Player, Reorg, Strategy

MAX_ROUNDS_PER_BLOCK = 32


@dataclass(frozen=True)
class SessionConfig:
    params: BetParams = field(default_factory=BetParams)
    strategy_alice: Strategy = HONEST
    strategy_bob: Strategy = HONEST
    max_height: Optional[int] = None
    rng_seed: int = 1
    reorg_budget: int = 1

    def __post_init__(self):
        if self.max_height is None:
            object.__setattr__(self, "max_height", 2 * self.params.bet_locktime + 10)
        if self.max_height <= self.params.bet_locktime:
            raise ValueError("max_height must exceed the bet locktime")
        if self.reorg_budget < 0:
            raise ValueError("reorg budget must be >= 0")

    def strategy(self, role: Role) -> Strategy:
        return self.strategy_alice if role is Role.ALICE else self.strategy_bob


@dataclass(frozen=True)
class TraceEvent:
    height: int
    actor: str
    event: str
    fields: tuple[tuple[str, str], ...] = ()

    def line(self) -> str:
        parts = [str(self.height), self.actor, self.event]
        parts += [f"{k}={v}" for k, v in self.fields]
        return " ".join(parts)


@dataclass(frozen=True)
class ChainEntry:
    """A transaction that ended up in the final chain."""

    height: int
    txid: bytes
    actor: str
    label: str
    spends: tuple[OutPoint, ...]


@dataclass
class SessionTrace:
    events: list[TraceEvent]
    alice_net: int
    bob_net: int
    height: int
    reason: str
    secrets: tuple[bytes, bytes]
    chain: list[ChainEntry]
    locktimes: dict[str, int]
    phases: dict[str, list[str]]
    ledger_problems: list[str]
    protocol_errors: list[str]
    stakes: tuple[int, int]

    def serialize(self) -> str:
        lines = [e.line() for e in self.events]
        lines.append(
            f"RESULT alice_net={self.alice_net} bob_net={self.bob_net} "
            f"height={self.height} reason={self.reason}"
        )
        return "\n".join(lines) + "\n"

    def net(self, role: Role) -> int:
        return self.alice_net if role is Role.ALICE else self.bob_net

    def labelled(self, label: str) -> list[ChainEntry]:
        return [c for c in self.chain if c.label == label]


def _short(b: bytes) -> str:
    return b.hex()[:16]


def _describe(msg: Message) -> tuple[str, tuple[tuple[str, str], ...]]:
    if isinstance(msg, Commit):
        return "commit", (("digest", msg.digest.hex()),)
    if isinstance(msg, RefundSignatureRequest):
        return "refund_request", (("txid", _short(msg.tx.txid)), ("locktime", str(msg.tx.locktime)))
    if isinstance(msg, RefundSignature):
        return "refund_signature", (("txid", _short(msg.token.message)),)
    return "secret", (("value", msg.secret.hex()),)


class _Session:
    def __init__(self, config: SessionConfig) -> None:
        self.config = config
        rng = random.Random(config.rng_seed)
        alice_sk, bob_sk = rng.randbytes(32), rng.randbytes(32)
        a1, b1 = rng.randbytes(32), rng.randbytes(32)
        registry = KeyRegistry()
        pk_a, pk_b = registry.register(alice_sk), registry.register(bob_sk)
        params = replace(config.params, pk_alice=pk_a, pk_bob=pk_b)
        self.params = params
        self.pubkeys = {Role.ALICE: pk_a, Role.BOB: pk_b}
        faucet = faucet_transaction([(pk_a, params.alice_stake), (pk_b, params.pot)])
        self.ledger = Ledger(faucet, registry, max_reorg_depth=config.reorg_budget)
        self.start_balance = {Role.ALICE: params.alice_stake, Role.BOB: params.pot}
        self.secrets = (a1, b1)
        self.labels: dict[bytes, tuple[str, str]] = {faucet.txid: ("Ledger", "faucet")}
        self.events: list[TraceEvent] = []
        self.players: dict[Role, Player] = {}
        for role, secret, sk, index in ((Role.ALICE, a1, alice_sk, 0), (Role.BOB, b1, bob_sk, 1)):
            funding = [(OutPoint(faucet.txid, index), faucet.outputs[index].value)]
            state = new_party(role, secret, sk, funding)
            self.players[role] = config.strategy(role).spawn(state, params)
        self.inbox: dict[Role, deque] = {Role.ALICE: deque(), Role.BOB: deque()}
        self.phases = {r.value: [p.state.phase.value] for r, p in self.players.items()}
        self.progress = False

        self.log("Ledger", "genesis", txid=_short(faucet.txid),
                 alice=params.alice_stake, bob=params.pot)
        for role, secret in ((Role.ALICE, a1), (Role.BOB, b1)):
            strategy = config.strategy(role)
            self.log(role.value, "setup", strategy=strategy.name, secret=secret.hex())

    def log(self, actor: str, event: str, **fields) -> None:
        self.events.append(
            TraceEvent(self.ledger.height, actor, event, tuple((k, str(v)) for k, v in fields.items()))
        )

    # -- event loop ---------------------------------------------------------

    def feed(self, role: Role, obs) -> None:
        player = self.players[role]
        before = player.state.phase
        actions = player.observe(obs)
        if player.state.phase is not before:
            self.phases[role.value].append(player.state.phase.value)
            self.log(role.value, "phase", to=player.state.phase.value)
            self.progress = True
        for act in actions:
            self.execute(role, act)

    def execute(self, role: Role, act) -> None:
        actor = role.value
        if isinstance(act, SendMessage):
            kind, fields = _describe(act.message)
            self.events.append(TraceEvent(self.ledger.height, actor, "send",
                                          (("msg", kind),) + fields))
            self.inbox[role.other].append(act.message)
            self.progress = True
        elif isinstance(act, Broadcast):
            tx = act.tx
            self.labels.setdefault(tx.txid, (actor, act.label))
            label = self.labels[tx.txid][1]
            try:
                self.ledger.submit_transaction(tx)
            except LedgerError as exc:
                self.log(actor, "broadcast", tx=label, txid=_short(tx.txid),
                         result="rejected", reason=exc.reason.value)
                return
            self.log(actor, "broadcast", tx=label, txid=_short(tx.txid), result="accepted")
            self.progress = True
        elif isinstance(act, Reorg):
            for tx in act.replacement:
                self.labels.setdefault(tx.txid, (actor, act.label))
            try:
                dropped = self.ledger.reorg(act.depth, act.replacement)
            except LedgerError as exc:
                self.log(actor, "reorg", depth=act.depth, result="rejected",
                         reason=exc.reason.value)
                return
            self.log(actor, "reorg", depth=act.depth, result="accepted",
                     dropped=",".join(self.labels.get(t.txid, ("", "?"))[1] for t in dropped)
                     or "-")
            self.progress = True

    def tick(self) -> None:
        for _ in range(MAX_ROUNDS_PER_BLOCK):
            self.progress = False
            for role in (Role.ALICE, Role.BOB):
                self.feed(role, BlockTick(self.ledger.view()))
                inbox = self.inbox[role]
                while inbox:
                    self.feed(role, inbox.popleft())
                    self.progress = True
            if not self.progress:
                return

    def finished(self) -> bool:
        return (
            all(p.finished for p in self.players.values())
            and not self.ledger.mempool
            and not any(self.inbox.values())
        )

    def run(self) -> SessionTrace:
        for role in (Role.ALICE, Role.BOB):
            self.feed(role, BlockTick(self.ledger.view()))
            self.feed(role, SessionStart())
        max_height = self.config.max_height
        while True:
            self.tick()
            if self.finished():
                reason = None
                break
            if self.ledger.height >= max_height:
                reason = "horizon"
                break
            self.ledger.advance_blocks(1)
            for tx in self.ledger.blocks[-1]:
                actor, label = self.labels.get(tx.txid, ("?", "unknown"))
                self.log("Ledger", "confirm", tx=label, by=actor, txid=_short(tx.txid))
        return self.result(reason)

    # -- results ------------------------------------------------------------

    def result(self, reason: Optional[str]) -> SessionTrace:
        ledger = self.ledger
        chain = []
        for h, block in enumerate(ledger.blocks):
            for tx in block:
                actor, label = self.labels.get(tx.txid, ("?", "unknown"))
                chain.append(ChainEntry(h, tx.txid, actor, label,
                                        tuple(i.outpoint for i in tx.inputs)))
        nets = {
            role: ledger.balance_of(pk) - self.start_balance[role]
            for role, pk in self.pubkeys.items()
        }
        if reason is None:
            labels = {c.label for c in chain}
            if "redeem_bet" in labels:
                reason = "settled"
            elif labels & {"refund_bet", "refund_reveal"}:
                reason = "refunded"
            elif labels & {"bet", "reveal"}:
                reason = "reverted"
            else:
                reason = "no-stake"
        locktimes = {}
        bob, alice = self.players[Role.BOB].state, self.players[Role.ALICE].state
        if bob.refund_bet is not None:
            locktimes["refund_bet"] = bob.refund_bet.locktime
        if alice.refund_reveal is not None:
            locktimes["refund_reveal"] = alice.refund_reveal.locktime
        errors = [
            f"{role.value}: {msg}" for role, p in self.players.items() for msg in p.violations
        ]
        return SessionTrace(
            events=self.events,
            alice_net=nets[Role.ALICE],
            bob_net=nets[Role.BOB],
            height=ledger.height,
            reason=reason,
            secrets=self.secrets,
            chain=chain,
            locktimes=locktimes,
            phases=self.phases,
            ledger_problems=ledger.audit(),
            protocol_errors=errors,
            stakes=(self.params.alice_stake, self.params.bob_stake),
        )


def run_session(config: SessionConfig) -> SessionTrace:
    """Play one seeded session to completion (or to the horizon)."""
    return _Session(config).run()


# -- audit -------------------------------------------------------------------


def audit_trace(trace: SessionTrace, config: SessionConfig) -> list[str]:
    """Check a finished session; each violation string starts with its class."""
    violations = []
    params = config.params
    if trace.alice_net + trace.bob_net != 0:
        violations.append(f"(a) not zero-sum: {trace.alice_net} + {trace.bob_net}")

    a1, b1 = trace.secrets
    toss = decide_winner(params, a1, b1)
    # The chain entry through which each side's stake is legitimately claimed.
    claim = {Role.ALICE: ("redeem_reveal", Role.BOB), Role.BOB: ("redeem_bet", Role.ALICE)}
    stakes = dict(zip((Role.ALICE, Role.BOB), trace.stakes))
    for role in (Role.ALICE, Role.BOB):
        if not config.strategy(role).honest:
            continue
        net, stake = trace.net(role), stakes[role]
        if net < -stake:
            violations.append(f"(b) honest {role.value} lost {-net} > stake {stake}")
        elif net == -stake:
            label, claimant = claim[role]
            completed = any(c.actor == claimant.value for c in trace.labelled(label))
            if toss is not role.other or not completed:
                violations.append(
                    f"(b) honest {role.value} lost its stake but toss favoured {toss.value}"
                    f" and counterparty claim completed={completed}"
                )

    consumed = Counter(op for c in trace.chain for op in c.spends)
    for op, count in consumed.items():
        if count > 1:
            violations.append(f"(c) outpoint {op} spent {count} times")

    lb, lr = trace.locktimes.get("refund_bet"), trace.locktimes.get("refund_reveal")
    if not params.unsound_mode and lb is not None and lr is not None and lr >= lb:
        violations.append(f"(d) refund_reveal locktime {lr} >= refund_bet locktime {lb}")

    violations += [f"(ledger) {p}" for p in trace.ledger_problems]
    return violations


# -- Monte Carlo ---------------------------------------------------------------


@dataclass
class Statistics:
    n: int
    alice_wins: int
    mean_height: float
    max_height: int
    violations: int
    outcomes: Counter = field(default_factory=Counter)
    reasons: Counter = field(default_factory=Counter)

    @property
    def alice_freq(self) -> float:
        return self.alice_wins / self.n

    def lines(self) -> list[str]:
        out = [
            f"n={self.n}",
            f"alice_wins={self.alice_wins}",
            f"alice_freq={self.alice_freq:.6f}",
            f"mean_height={self.mean_height:.4f}",
            f"max_height={self.max_height}",
            f"violations={self.violations}",
        ]
        for (a, b), count in sorted(self.outcomes.items()):
            out.append(f"outcome[{a},{b}]={count}")
        for reason, count in sorted(self.reasons.items()):
            out.append(f"reason[{reason}]={count}")
        return out


def _summarize(config: SessionConfig) -> tuple[int, int, int, str, int]:
    trace = run_session(config)
    return trace.alice_net, trace.bob_net, trace.height, trace.reason, len(
        audit_trace(trace, config)
    )


def monte_carlo(template: SessionConfig, n: int, workers: int = 1) -> Statistics:
    """Run ``n`` sessions with seeds ``template.rng_seed + i`` and aggregate."""
    if n < 1:
        raise ValueError("n must be >= 1")
    configs = [replace(template, rng_seed=template.rng_seed + i) for i in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_summarize, configs, chunksize=max(1, n // (8 * workers))))
    else:
        rows = [_summarize(c) for c in configs]
    heights = [r[2] for r in rows]
    return Statistics(
        n=n,
        alice_wins=sum(1 for r in rows if r[0] > 0),
        mean_height=sum(heights) / n,
        max_height=max(heights),
        violations=sum(r[4] for r in rows),
        outcomes=Counter((r[0], r[1]) for r in rows),
        reasons=Counter(r[3] for r in rows),
    )
