"""Honest and adversarial players.

Every strategy drives the honest state machine and then edits what comes out
of it: dropping actions, holding them back, or slipping in a reorg.  Players
only ever act through messages, broadcasts and (for their own coins) reorgs,
so none of them can forge a signature or guess a preimage.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

from .ledger import ChainView, OutPoint, Output, Transaction, TxIn
from .protocol import (
    Action,
    BetParams,
    BlockTick,
    Broadcast,
    Observation,
    PartyState,
    Phase,
    ProtocolViolation,
    Role,
    SecretDisclosure,
    SendMessage,
    commit,
    sign_inputs,
    step_party,
)
from .scriptvm import Sig


@dataclass(frozen=True)
class Reorg:
    """Rewrite the last ``depth`` blocks with ``replacement`` in the first one."""

    depth: int
    replacement: tuple[Transaction, ...]
    label: str = "double_spend"


PlayerAction = Union[Action, Reorg]


class Player:
    """One party's seat in a session, running the honest protocol."""

    def __init__(self, state: PartyState, params: BetParams) -> None:
        self.state = state
        self.params = params
        self.violations: list[str] = []

    @property
    def role(self) -> Role:
        return self.state.role

    @property
    def finished(self) -> bool:
        return self.state.finished

    def honest_step(self, obs: Observation) -> list[Action]:
        try:
            self.state, actions = step_party(self.state, self.params, obs)
        except ProtocolViolation as exc:
            self.violations.append(str(exc))
            self.state = replace(self.state, phase=Phase.DONE)
            return []
        return actions

    def observe(self, obs: Observation) -> list[PlayerAction]:
        return self.honest_step(obs)


def _fully_signed(tx: Optional[Transaction]) -> bool:
    return tx is not None and len(tx.inputs[0].witness.signatures) >= 2


class AbortingPlayer(Player):
    """Stops the protocol at step ``n`` but still collects its own refunds."""

    def __init__(self, state, params, step: int) -> None:
        super().__init__(state, params)
        self.step = step
        self.aborted = False
        self._view: Optional[ChainView] = None

    def _refunds(self) -> list[tuple[Transaction, str]]:
        s = self.state
        if s.role is Role.BOB:
            return [(s.refund_bet, "refund_bet")] if _fully_signed(s.refund_bet) else []
        return [(s.refund_reveal, "refund_reveal")] if _fully_signed(s.refund_reveal) else []

    @property
    def finished(self) -> bool:
        if not self.aborted:
            return self.state.finished
        view = self._view
        if view is None:
            return False
        for refund, _ in self._refunds():
            parent = refund.inputs[0].outpoint
            if not view.knows(parent.txid):
                continue
            spender = view.spender(parent)
            if spender is None or view.depth(spender.txid) is None:
                return False
        return True

    def observe(self, obs):
        if isinstance(obs, BlockTick):
            self._view = obs.view
        if self.aborted:
            if not isinstance(obs, BlockTick):
                return []
            view = obs.view
            out = []
            for refund, label in self._refunds():
                parent = refund.inputs[0].outpoint
                if view.is_unspent(parent) and view.height >= refund.locktime:
                    out.append(Broadcast(refund, None, label))
            return out
        actions = self.honest_step(obs)
        kept = []
        for act in actions:
            if act.step is not None and act.step >= self.step:
                self.aborted = True
                break
            kept.append(act)
        return kept


class DroppingPlayer(Player):
    """Silently drops one kind of action."""

    def __init__(self, state, params, drop) -> None:
        super().__init__(state, params)
        self.drop = drop

    def observe(self, obs):
        return [a for a in self.honest_step(obs) if not self.drop(a)]


class RefundThenRevealPlayer(Player):
    """Bob sits on his reveal redemption until his bet refund matures, then does both."""

    def __init__(self, state, params) -> None:
        super().__init__(state, params)
        self.held: Optional[Broadcast] = None

    def observe(self, obs):
        actions = []
        for act in self.honest_step(obs):
            if isinstance(act, Broadcast) and act.label == "redeem_reveal":
                self.held = act
            else:
                actions.append(act)
        refund_bet = self.state.refund_bet
        if (
            self.held is not None
            and isinstance(obs, BlockTick)
            and obs.view.height >= refund_bet.locktime
        ):
            if not any(isinstance(a, Broadcast) and a.label == "refund_bet" for a in actions):
                if obs.view.is_unspent(refund_bet.inputs[0].outpoint):
                    actions.append(Broadcast(refund_bet, None, "refund_bet"))
            actions.append(self.held)
            self.held = None
        return actions


class ReorgPlayer(Player):
    """Double-spends its own funding once the counterparty has acted on it.

    Bob reverts the bet after Alice publishes the reveal; Alice reverts the
    reveal after Bob's redemption has shown her B1.  The attack is tried once,
    and only if the funding block is within ``max_depth`` of the tip.
    """

    def __init__(self, state, params, max_depth: int) -> None:
        super().__init__(state, params)
        self.max_depth = max_depth
        self.attacked = False

    def _double_spend(self) -> Transaction:
        value = sum(v for _, v in self.state.funding)
        tx = Transaction(
            tuple(TxIn(op) for op, _ in self.state.funding),
            (Output(value, Sig(self.state.pubkey)),),
            0,
        )
        return sign_inputs(tx, self.state.secret_key)

    def _trigger(self, view: ChainView) -> Optional[int]:
        s = self.state
        if s.role is Role.BOB:
            funded, reaction = s.bet_txid, s.reveal_txid
            if funded is None or reaction is None or not view.knows(reaction):
                return None
        else:
            funded = s.reveal_txid
            if funded is None:
                return None
            spender = view.spender(OutPoint(funded, 0))
            if spender is None or spender.txid == s.refund_reveal.txid:
                return None
            b1 = spender.inputs[0].witness.slots.get("B")
            if b1 is None or commit(b1) != s.counterparty_commit:
                return None
        depth = view.depth(funded)
        if depth is None:
            return None
        needed = depth + 1
        return needed if needed <= self.max_depth else None

    def observe(self, obs):
        if isinstance(obs, BlockTick) and not self.attacked:
            needed = self._trigger(obs.view)
            if needed is not None:
                self.attacked = True
                attack: list[PlayerAction] = [Reorg(needed, (self._double_spend(),))]
                if self.role is Role.ALICE:
                    attack += [
                        a for a in self.honest_step(obs)
                        if not (isinstance(a, SendMessage)
                                and isinstance(a.message, SecretDisclosure))
                    ]
                return attack
        return self.honest_step(obs)


# -- strategy descriptors --------------------------------------------------


@dataclass(frozen=True)
class Strategy:
    """A named, picklable recipe for building a :class:`Player`."""

    kind: str
    arg: int = 0

    @property
    def name(self) -> str:
        if self.kind in ("abort", "reorg"):
            return f"{self.kind}-{self.arg}"
        return self.kind

    @property
    def honest(self) -> bool:
        return self.kind == "honest"

    def spawn(self, state: PartyState, params: BetParams) -> Player:
        role = state.role
        if self.kind == "abort":
            return AbortingPlayer(state, params, self.arg)
        if self.kind == "reorg":
            return ReorgPlayer(state, params, self.arg)
        if self.kind == "withhold-reveal" and role is Role.BOB:
            return DroppingPlayer(
                state, params, lambda a: isinstance(a, Broadcast) and a.label == "redeem_reveal"
            )
        if self.kind == "withhold-secret" and role is Role.ALICE:
            return DroppingPlayer(
                state, params,
                lambda a: isinstance(a, SendMessage) and isinstance(a.message, SecretDisclosure),
            )
        if self.kind == "refund-then-reveal" and role is Role.BOB:
            return RefundThenRevealPlayer(state, params)
        # Role-specific deviations play honestly in the other seat.
        return Player(state, params)


HONEST = Strategy("honest")


def abort_at_step(n: int) -> Strategy:
    if not 1 <= n <= 10:
        raise ValueError("protocol steps are numbered 1..10")
    return Strategy("abort", n)


WITHHOLD_REVEAL = Strategy("withhold-reveal")
WITHHOLD_SECRET = Strategy("withhold-secret")
REFUND_THEN_REVEAL = Strategy("refund-then-reveal")


def reorg_double_spend(depth: int) -> Strategy:
    if depth < 1:
        raise ValueError("reorg depth must be at least 1")
    return Strategy("reorg", depth)


def enumerate_adversaries() -> list[Strategy]:
    """The fixed attack catalogue, in a stable order (honest play excluded)."""
    return (
        [abort_at_step(n) for n in range(1, 11)]
        + [WITHHOLD_REVEAL, WITHHOLD_SECRET, REFUND_THEN_REVEAL]
        + [reorg_double_spend(1), reorg_double_spend(2)]
    )


def strategy_from_name(name: str) -> Strategy:
    if name == "honest":
        return HONEST
    if name in ("withhold-reveal", "withhold-secret", "refund-then-reveal"):
        return Strategy(name)
    kind, _, arg = name.partition("-")
    if kind == "abort" and arg.isdigit():
        return abort_at_step(int(arg))
    if kind == "reorg" and arg.isdigit():
        return reorg_double_spend(int(arg))
    raise ValueError(f"unknown strategy {name!r}")
