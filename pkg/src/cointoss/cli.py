"""Command-line entry point: ``cointoss {run,attack,montecarlo,vectors}``.

Exit codes: 0 when the outcome is the documented expectation, 1 when it is
not, 2 on an internal error, 64 on a usage error.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass
from typing import Optional, Sequence

from .harness import SessionConfig, audit_trace, monte_carlo, run_session
from .ledger import faucet_transaction
from .protocol import (
    PARITY,
    SHA1_COMPARE,
    BetParams,
    ParameterError,
    Role,
    bet_script,
    bias_stakes,
    commit,
    decide_winner,
    reveal_script,
)
from .scriptvm import encode_script
from .strategies import (
    HONEST,
    REFUND_THEN_REVEAL,
    WITHHOLD_REVEAL,
    WITHHOLD_SECRET,
    Strategy,
    reorg_double_spend,
    strategy_from_name,
)

EX_USAGE = 64

ATTACKS = ("refund-then-reveal", "reorg-double-spend", "withhold-reveal", "withhold-secret")

# Placeholders for the golden script encodings.
GOLDEN_PK_ALICE = bytes([0x11]) * 32
GOLDEN_PK_BOB = bytes([0x22]) * 32
GOLDEN_A_COMMIT = commit(bytes(32))
GOLDEN_B_COMMIT = commit(bytes([1]) * 32)


@dataclass(frozen=True)
class CliConfig:
    subcommand: str
    stake: int = 50
    bet_locktime: int = 20
    reveal_locktime: int = 10
    alice: str = "honest"
    bob: str = "honest"
    bias: Optional[tuple[int, int]] = None
    confirmation_depth: int = 1
    reorg_budget: int = 1
    seed: int = 1
    n: int = 1000
    unsound: bool = False
    predicate: str = PARITY
    attack: str = "refund-then-reveal"
    output: Optional[str] = None
    workers: int = 1

    def params(self) -> BetParams:
        bias = bias_stakes(self.stake, *self.bias) if self.bias else None
        return BetParams(
            stake_x=self.stake,
            bet_locktime=self.bet_locktime,
            reveal_locktime=self.reveal_locktime,
            bias=bias,
            confirmation_depth=self.confirmation_depth,
            unsound_mode=self.unsound,
            predicate=self.predicate,
        )

    def session(self, alice: Optional[Strategy] = None, bob: Optional[Strategy] = None):
        return SessionConfig(
            params=self.params(),
            strategy_alice=alice or strategy_from_name(self.alice),
            strategy_bob=bob or strategy_from_name(self.bob),
            rng_seed=self.seed,
            reorg_budget=self.reorg_budget,
        )


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


def _nonneg(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--stake", type=int, default=50, help="X, the stake per side")
    common.add_argument("--bet-locktime", type=int, default=20)
    common.add_argument("--reveal-locktime", type=int, default=10)
    common.add_argument("--alice", default="honest", help="Alice's strategy")
    common.add_argument("--bob", default="honest", help="Bob's strategy")
    common.add_argument("--bias", type=int, nargs=2, metavar=("K", "T"),
                        help="Alice wins with probability T/2^K")
    common.add_argument("--confirmation-depth", type=_nonneg, default=1)
    common.add_argument("--reorg-budget", type=_nonneg, default=1)
    common.add_argument("--seed", type=int, default=1)
    common.add_argument("--unsound", action="store_true",
                        help="allow reveal locktime >= bet locktime")
    common.add_argument("--predicate", choices=(PARITY, SHA1_COMPARE), default=PARITY)
    common.add_argument("-o", "--output", help="write to this file instead of stdout")

    parser = _Parser(prog="cointoss", description="Trust-free coin toss over a simulated ledger.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    sub.add_parser("run", parents=[common], help="run one session and print its trace")
    attack = sub.add_parser("attack", parents=[common], help="run a named attack scenario")
    attack.add_argument("--name", choices=ATTACKS, default="refund-then-reveal")
    mc = sub.add_parser("montecarlo", parents=[common], help="run a batch and print statistics")
    mc.add_argument("-n", type=int, default=1000)
    mc.add_argument("--workers", type=int, default=1)
    sub.add_parser("vectors", parents=[common], help="print golden scripts and txids")
    return parser


def parse_args(argv: Sequence[str]) -> CliConfig:
    parser = _build_parser()
    ns = parser.parse_args(list(argv))
    config = CliConfig(
        subcommand=ns.subcommand,
        stake=ns.stake,
        bet_locktime=ns.bet_locktime,
        reveal_locktime=ns.reveal_locktime,
        alice=ns.alice,
        bob=ns.bob,
        bias=tuple(ns.bias) if ns.bias else None,
        confirmation_depth=ns.confirmation_depth,
        reorg_budget=ns.reorg_budget,
        seed=ns.seed,
        n=getattr(ns, "n", 1000),
        unsound=ns.unsound,
        predicate=ns.predicate,
        attack=getattr(ns, "name", "refund-then-reveal"),
        output=ns.output,
        workers=getattr(ns, "workers", 1),
    )
    try:
        strategy_from_name(config.alice)
        strategy_from_name(config.bob)
        config.session()
    except (ParameterError, ValueError) as exc:
        parser.error(str(exc))
    if config.n < 1:
        parser.error("-n must be at least 1")
    return config


# -- subcommands ---------------------------------------------------------------


def _run(config: CliConfig, out: list[str]) -> int:
    session = config.session()
    trace = run_session(session)
    out.append(trace.serialize().rstrip("\n"))
    return 0


def _attack(config: CliConfig, out: list[str]) -> int:
    name = config.attack
    if name == "refund-then-reveal":
        alice, bob = HONEST, REFUND_THEN_REVEAL
    elif name == "reorg-double-spend":
        alice, bob = HONEST, reorg_double_spend(max(1, config.reorg_budget))
    elif name == "withhold-reveal":
        alice, bob = HONEST, WITHHOLD_REVEAL
    else:
        alice, bob = WITHHOLD_SECRET, HONEST
    session = config.session(alice, bob)
    params = session.params
    trace = run_session(session)
    violations = audit_trace(trace, session)
    out.append(trace.serialize().rstrip("\n"))
    for v in violations:
        out.append(f"VIOLATION {v}")

    toss = decide_winner(params, *trace.secrets)
    exploitable = {
        "refund-then-reveal": params.unsound_mode,
        "reorg-double-spend": params.confirmation_depth < session.reorg_budget,
    }.get(name, False)
    if exploitable:
        # The cheat takes Alice's stake whatever the toss; it only shows up as a
        # violation when the toss was hers.
        stolen = trace.alice_net == -params.alice_stake and trace.bob_net == params.alice_stake
        flagged = any(v.startswith("(b)") for v in violations)
        expected = stolen and flagged == (toss is Role.ALICE)
        expectation = "attack succeeds"
    else:
        expected = not violations
        expectation = "no violations"
    out.append(
        f"EXPECT {expectation} toss={toss.value} "
        f"violations={len(violations)} matched={'yes' if expected else 'no'}"
    )
    return 0 if expected else 1


def _montecarlo(config: CliConfig, out: list[str]) -> int:
    session = config.session()
    stats = monte_carlo(session, config.n, workers=config.workers)
    out.extend(stats.lines())
    params = session.params
    both_honest = session.strategy_alice.honest and session.strategy_bob.honest
    ok = True
    if both_honest:
        p = params.bias.threshold / (1 << params.bias.k_bits) if params.bias else 0.5
        band = 3 * math.sqrt(p * (1 - p) / config.n)
        out.append(f"expected_freq={p:.6f}")
        out.append(f"band={max(0.0, p - band):.6f},{min(1.0, p + band):.6f}")
        ok = abs(stats.alice_freq - p) <= band
    if both_honest or (
        not params.unsound_mode and params.confirmation_depth >= session.reorg_budget
    ):
        ok = ok and stats.violations == 0
    return 0 if ok else 1


def golden_vectors() -> list[str]:
    params = BetParams(pk_alice=GOLDEN_PK_ALICE, pk_bob=GOLDEN_PK_BOB)
    faucet = faucet_transaction([(bytes(32), 1000)])
    lines = [
        f"faucet_bytes={faucet.serialize().hex()}",
        f"faucet_txid={faucet.txid.hex()}",
        f"bet_script={encode_script(bet_script(params, GOLDEN_A_COMMIT, GOLDEN_B_COMMIT))}",
        f"reveal_script={encode_script(reveal_script(params, GOLDEN_B_COMMIT))}",
    ]
    sha1 = BetParams(pk_alice=GOLDEN_PK_ALICE, pk_bob=GOLDEN_PK_BOB, predicate=SHA1_COMPARE)
    lines.append(
        f"bet_script_sha1={encode_script(bet_script(sha1, GOLDEN_A_COMMIT, GOLDEN_B_COMMIT))}"
    )
    biased = BetParams(pk_alice=GOLDEN_PK_ALICE, pk_bob=GOLDEN_PK_BOB, bias=bias_stakes(50, 2, 1))
    lines.append(
        f"bet_script_bias_2_1={encode_script(bet_script(biased, GOLDEN_A_COMMIT, GOLDEN_B_COMMIT))}"
    )
    return lines


def _vectors(config: CliConfig, out: list[str]) -> int:
    out.extend(golden_vectors())
    return 0


COMMANDS = {"run": _run, "attack": _attack, "montecarlo": _montecarlo, "vectors": _vectors}


def execute(config: CliConfig) -> int:
    out: list[str] = []
    try:
        code = COMMANDS[config.subcommand](config, out)
    except Exception as exc:  # noqa: BLE001 - any escape here is a bug
        print(f"cointoss: internal error: {exc!r}", file=sys.stderr)
        return 2
    text = "\n".join(out) + "\n"
    if config.output:
        with open(config.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    config = parse_args(sys.argv[1:] if argv is None else argv)
    return execute(config)


def entry() -> None:
    sys.exit(main())
