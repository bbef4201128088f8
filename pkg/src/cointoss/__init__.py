"""Fair coin toss between two mutually distrusting parties on a simulated UTXO ledger."""

from .harness import SessionConfig, SessionTrace, Statistics, audit_trace, monte_carlo, run_session
from .ledger import KeyRegistry, Ledger, Transaction, faucet_transaction
from .protocol import BetParams, Role, bias_stakes, biased_winner, commit, step_party, winner
from .strategies import Strategy, enumerate_adversaries, strategy_from_name

__all__ = [
    "BetParams",
    "KeyRegistry",
    "Ledger",
    "Role",
    "SessionConfig",
    "SessionTrace",
    "Statistics",
    "Strategy",
    "Transaction",
    "audit_trace",
    "bias_stakes",
    "biased_winner",
    "commit",
    "enumerate_adversaries",
    "faucet_transaction",
    "monte_carlo",
    "run_session",
    "step_party",
    "strategy_from_name",
    "winner",
]
