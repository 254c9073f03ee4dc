from .contracts import CODE_REGISTRY, ContractCode, MethodSpec, Visibility, fallback, method
from .fixtures import (
    AltLedgerHead,
    Attacker,
    Bank,
    BuggyLedgerHead,
    ChainLink,
    Counter,
    Echo,
    LedgerHead,
    bank_attacker_fixture,
    call_chain_fixture,
)
from .sim import (
    Account,
    CallContext,
    CallFrame,
    Chain,
    ContractInstance,
    CostMeter,
    Guard,
    Receipt,
    Transaction,
    guard_data,
    storage_digest,
    verify_token_onchain,
)

__all__ = [
    "Account", "AltLedgerHead", "Attacker", "Bank", "BuggyLedgerHead", "CODE_REGISTRY",
    "CallContext", "CallFrame", "Chain", "ChainLink", "ContractCode", "ContractInstance",
    "CostMeter", "Counter", "Echo", "Guard", "LedgerHead", "MethodSpec", "Receipt",
    "Transaction", "Visibility", "bank_attacker_fixture", "call_chain_fixture", "fallback",
    "guard_data", "method", "storage_digest", "verify_token_onchain",
]
