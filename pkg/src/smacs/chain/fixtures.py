"""Toy contracts used by tests, scenarios and the validators.

Storage holds only JSON-friendly values; addresses are stored as hex.
"""

from __future__ import annotations

from ..errors import Reverted
from ..token_core import KeyPair, hex_address, to_address
from .contracts import ContractCode, fallback, method


class Echo(ContractCode):
    @method("public", "echo(bytes)")
    def echo(self, ctx):
        return ctx.msg_data


class Bank(ContractCode):
    """Deposit/withdraw bank that pays out before zeroing the balance.

    ``withdraw`` accepts an optional ``account`` argument. When present it
    must name ``msg.sender``, which lets an argument token pin down the
    immediate caller of the withdrawal.
    """

    @method("public", "addBalance()", payable=True)
    def addBalance(self, ctx):
        key = "balance:" + hex_address(ctx.msg_sender)
        ctx.store(key, ctx.load(key, 0) + ctx.value)

    @method("public", "withdraw(address)")
    def withdraw(self, ctx):
        account = ctx.arg("account")
        if account is not None and account.lower() != hex_address(ctx.msg_sender):
            raise Reverted("account is not msg.sender", site="Bank.withdraw")
        key = "balance:" + hex_address(ctx.msg_sender)
        amount = ctx.load(key, 0)
        ctx.send(ctx.msg_sender, amount)
        ctx.store(key, 0)

    @method("public", "balanceOf(address)")
    def balanceOf(self, ctx):
        return ctx.load("balance:" + ctx.arg("account", hex_address(ctx.msg_sender)).lower(), 0)


class Attacker(ContractCode):
    """Re-enters ``Bank.withdraw`` once from its fallback while ``isAttack`` is set."""

    DEPOSIT = 2

    def setup(self, ctx, bank: bytes | str, is_attack: bool = True):
        ctx.store("bank", bank if isinstance(bank, str) else hex_address(bank))
        ctx.store("isAttack", bool(is_attack))

    @fallback(payable=True)
    def receive(self, ctx):
        if ctx.load("isAttack"):
            ctx.store("isAttack", False)
            ctx.call(to_address(ctx.load("bank")), "withdraw", ctx.load("withdrawArgs", []))

    @method("public", "deposit()", payable=True)
    def deposit(self, ctx):
        ctx.call(to_address(ctx.load("bank")), "addBalance", value=self.DEPOSIT)

    @method("public", "withdraw(address)")
    def withdraw(self, ctx):
        forwarded = [[a.name, a.value] for a in ctx.args]
        ctx.store("withdrawArgs", forwarded)
        ctx.call(to_address(ctx.load("bank")), "withdraw", forwarded)


class Counter(ContractCode):
    @method("public", "increment(uint256)")
    def increment(self, ctx):
        count = ctx.load("count", 0) + int(ctx.arg("amount", "1"))
        ctx.store("count", count)
        return count


class LedgerHead(ContractCode):
    """Head implementation for N-version checks: credits ``amount`` to the sender."""

    def _credit(self, old: int, amount: int) -> int:
        return old + amount

    @method("public", "deposit(uint256)")
    def deposit(self, ctx):
        key = "balance:" + hex_address(ctx.msg_sender)
        new = self._credit(ctx.load(key, 0), int(ctx.arg("amount", "0")))
        ctx.store(key, new)
        return new


class AltLedgerHead(LedgerHead):
    """Independent rewrite of LedgerHead with the same observable behaviour."""

    def _credit(self, old: int, amount: int) -> int:
        return sum((old, amount))


class BuggyLedgerHead(LedgerHead):
    def _credit(self, old: int, amount: int) -> int:
        return old + amount + 1


class ChainLink(ContractCode):
    """Counts pings and forwards each one to ``next`` with the same arguments."""

    def setup(self, ctx, next: bytes | str | None = None):
        if next is not None:
            ctx.store("next", next if isinstance(next, str) else hex_address(next))

    @method("public", "ping(string)")
    def ping(self, ctx):
        hits = ctx.load("hits", 0) + 1
        ctx.store("hits", hits)
        nxt = ctx.load("next")
        if nxt:
            ctx.call(to_address(nxt), "ping", ctx.args)
        return hits


def bank_attacker_fixture(chain, *, attacker_key: KeyPair, guard_pk: bytes | None = None,
                          bitmap_bits: int | None = None, is_attack: bool = True) -> dict:
    """Deploy Bank and an Attacker aimed at it; the attacker account creates Attacker."""
    bank = chain.register_contract(Bank, label="Bank", guard_pk=guard_pk, bitmap_bits=bitmap_bits)
    attacker = chain.register_contract(Attacker, label="Attacker", creator=attacker_key.address,
                                       bank=bank, is_attack=is_attack)
    return {"bank": bank, "attacker": attacker}


def call_chain_fixture(chain, depth: int, *, guard_pk: bytes | None = None,
                       bitmap_bits: int | None = None) -> list[bytes]:
    """``depth`` ChainLinks wired first -> ... -> last; returns them in call order."""
    links: list[bytes] = []
    nxt = None
    for k in reversed(range(depth)):
        nxt = chain.register_contract(ChainLink, label=f"SC_{chr(ord('A') + k)}",
                                      guard_pk=guard_pk, bitmap_bits=bitmap_bits, next=nxt)
        links.append(nxt)
    return links[::-1]
