"""Simulated finalized main chain: blocks, events, native balances, gas.

Gas is table driven: each contract method costs a fixed amount taken from
the measured per-method costs. Methods without a measured cost use the
simple-transfer figure and are marked uncalibrated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Callable, Iterable

from . import encoding as enc
from .crypto import Digest, PublicKey, hash

MEASURED_GAS = {
    "Deposit": 48_551,
    "UpdateState": 156_263,
    "StartChallenge": 47_118,
    "ResolveChallenge": 146_618,
    "SettleRollup": 29_078,
    "SettleWithdraw": 124_511,
    "Transfer": 21_000,
}
UNCALIBRATED_METHODS = (
    "Register",
    "RefundDeposit",
    "DapRegister",
    "DapRequest",
    "DapRespond",
    "DapAudit",
)


@dataclass
class GasTable:
    gas: dict[str, int] = field(
        default_factory=lambda: {**MEASURED_GAS, **{m: MEASURED_GAS["Transfer"] for m in UNCALIBRATED_METHODS}}
    )
    gas_price_gwei: Decimal = Decimal("19.26")
    token_usd: Decimal = Decimal("3376.77")

    def __post_init__(self):
        self.gas_price_gwei = Decimal(str(self.gas_price_gwei))
        self.token_usd = Decimal(str(self.token_usd))
        for name, units in self.gas.items():
            if units <= 0:
                raise ValueError(f"gas for {name} must be positive")

    def __getitem__(self, method: str) -> int:
        return self.gas[method]

    def calibrated(self, method: str) -> bool:
        return method in MEASURED_GAS


def gas_to_usd(gas: int, table: GasTable | None = None) -> Decimal:
    table = table or GasTable()
    usd = Decimal(gas) * table.gas_price_gwei * Decimal("1e-9") * table.token_usd
    return usd.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


class ContractError(Exception):
    """A failed Require; ``code`` is the receipt code."""

    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


class InsufficientFunds(ContractError):
    def __init__(self, detail: str = ""):
        super().__init__("E_FUNDS", detail)


def canon(obj: Any) -> bytes:
    """Deterministic byte form of call arguments, for call hashes and traces."""
    if obj is None:
        return b"N"
    if isinstance(obj, bool):
        return b"B" + (b"\x01" if obj else b"\x00")
    if isinstance(obj, int):
        return b"I" + enc.varbytes(str(obj).encode())
    if isinstance(obj, (bytes, bytearray)):
        return b"Y" + enc.varbytes(bytes(obj))
    if isinstance(obj, str):
        return b"S" + enc.varbytes(obj.encode())
    if isinstance(obj, (list, tuple)):
        return b"L" + enc.u32(len(obj)) + b"".join(canon(o) for o in obj)
    if isinstance(obj, dict):
        return b"D" + enc.u32(len(obj)) + b"".join(canon(k) + canon(obj[k]) for k in sorted(obj))
    if hasattr(obj, "encode"):
        return b"O" + enc.varbytes(type(obj).__name__.encode()) + enc.varbytes(obj.encode())
    raise TypeError(f"cannot canonicalise {type(obj).__name__}")


@dataclass(frozen=True)
class ChainCall:
    sender: PublicKey
    method: str
    args: dict = field(default_factory=dict)
    value: int = 0

    def call_hash(self) -> Digest:
        return hash(self.sender + canon(self.method) + canon(self.args) + canon(self.value))


@dataclass(frozen=True)
class Event:
    height: int
    time: float
    name: str
    data: dict

    def to_json(self) -> dict:
        return {"height": self.height, "time": self.time, "name": self.name, "data": _jsonable(self.data)}


@dataclass
class Receipt:
    call: ChainCall
    ok: bool
    code: str
    gas_used: int
    height: int
    time: float
    result: Any = None
    events: list[Event] = field(default_factory=list)


def _jsonable(v: Any) -> Any:
    if isinstance(v, (bytes, bytearray)):
        return bytes(v).hex()
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, Decimal):
        return str(v)
    if hasattr(v, "encode") and not isinstance(v, str):
        return v.encode().hex()
    return v


class Context:
    """What a contract method sees: msg.sender, msg.value, block.timestamp."""

    def __init__(self, ledger: "ChainLedger", call: ChainCall):
        self.ledger = ledger
        self.sender = call.sender
        self.value = call.value
        self.time = ledger.time
        self.height = ledger.height
        self.events: list[Event] = []
        self.payments: list[tuple[PublicKey, int]] = []

    def emit(self, name: str, **data) -> None:
        self.events.append(Event(self.height, self.time, name, data))

    def pay(self, to: PublicKey, amount: int) -> None:
        # settled by the ledger only if the call succeeds
        if amount < 0:
            raise ValueError("negative payment")
        self.payments.append((to, amount))


Handler = Callable[[Context, dict], Any]


class ChainLedger:
    """Finalized chain state. Calls either all apply or leave no trace."""

    def __init__(self, gas_table: GasTable | None = None, start_time: float = 0.0):
        self.gas_table = gas_table or GasTable()
        self.time = float(start_time)
        self.height = 0
        self.native: dict[PublicKey, int] = {}
        self.events: list[Event] = []
        self.receipts: list[Receipt] = []
        self.gas_by_method: dict[str, int] = {}
        self.gas_by_actor: dict[PublicKey, int] = {}
        self.calls_by_method: dict[str, int] = {}
        self.log: list[tuple[str, float, Any]] = []
        self.handlers: dict[str, Handler] = {"Transfer": _native_transfer}
        self.contracts: dict[str, Any] = {}

    # -- setup -----------------------------------------------------------
    def install(self, name: str, contract: Any, methods: dict[str, Handler]) -> None:
        self.contracts[name] = contract
        self.handlers.update(methods)

    def faucet(self, addr: PublicKey, amount: int) -> None:
        if amount < 0:
            raise ValueError("negative mint")
        self.native[addr] = self.native.get(addr, 0) + amount
        self.log.append(("faucet", self.time, (addr, amount)))

    def balance(self, addr: PublicKey) -> int:
        return self.native.get(addr, 0)

    # -- time ------------------------------------------------------------
    def advance_time(self, delta: float) -> None:
        if delta < 0:
            raise ValueError("time cannot go backwards")
        self.time += delta

    def set_time(self, t: float) -> None:
        if t < self.time:
            raise ValueError("time cannot go backwards")
        self.time = t

    # -- blocks ----------------------------------------------------------
    def produce_block(self, calls: Iterable[ChainCall], at: float | None = None) -> list[Receipt]:
        """Apply ``calls`` (already in arrival order) in one new block."""
        if at is not None:
            self.set_time(at)
        self.height += 1
        self.log.append(("block", self.time, self.height))
        return [self._apply(c) for c in calls]

    def submit(self, call: ChainCall, at: float | None = None) -> Receipt:
        """Convenience: one call in its own block."""
        return self.produce_block([call], at)[0]

    def _apply(self, call: ChainCall) -> Receipt:
        self.log.append(("call", self.time, call))
        gas = self.gas_table.gas.get(call.method, self.gas_table["Transfer"])
        self.gas_by_method[call.method] = self.gas_by_method.get(call.method, 0) + gas
        self.gas_by_actor[call.sender] = self.gas_by_actor.get(call.sender, 0) + gas
        self.calls_by_method[call.method] = self.calls_by_method.get(call.method, 0) + 1
        ctx = Context(self, call)
        try:
            handler = self.handlers[call.method]
        except KeyError:
            receipt = Receipt(call, False, "E_METHOD", gas, self.height, self.time)
            self.receipts.append(receipt)
            return receipt
        try:
            if self.native.get(call.sender, 0) < call.value:
                raise InsufficientFunds("value exceeds sender balance")
            result = handler(ctx, call.args)
        except ContractError as exc:
            receipt = Receipt(call, False, exc.code, gas, self.height, self.time)
            self.receipts.append(receipt)
            return receipt
        except (KeyError, TypeError, AttributeError) as exc:
            # malformed call data reverts like any other failed call
            receipt = Receipt(call, False, "E_ARGS", gas, self.height, self.time, repr(exc))
            self.receipts.append(receipt)
            return receipt
        self.native[call.sender] = self.native.get(call.sender, 0) - call.value
        for to, amount in ctx.payments:
            self.native[to] = self.native.get(to, 0) + amount
        self.events.extend(ctx.events)
        receipt = Receipt(call, True, "OK", gas, self.height, self.time, result, ctx.events)
        self.receipts.append(receipt)
        return receipt

    # -- inspection --------------------------------------------------------
    def state_digest(self) -> Digest:
        parts = [enc.u64(self.height), enc.timestamp(self.time)]
        for addr in sorted(self.native):
            parts.append(addr + canon(self.native[addr]))
        for name in sorted(self.contracts):
            parts.append(canon(name) + self.contracts[name].state_digest())
        parts.append(canon([e.name for e in self.events]))
        return hash(b"".join(parts))

    def total_native(self) -> int:
        held = sum(getattr(c, "held_funds", lambda: 0)() for c in self.contracts.values())
        return sum(self.native.values()) + held

    def export_events(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.events:
                fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")

    def events_named(self, name: str) -> list[Event]:
        return [e for e in self.events if e.name == name]


def _native_transfer(ctx: Context, args: dict) -> None:
    to = args["to"]
    # msg.value already covers the amount; forward it
    ctx.pay(to, ctx.value)
    ctx.emit("Transfer", sender=ctx.sender, to=to, value=ctx.value)


def replay_log(log: list[tuple[str, float, Any]], make_ledger: Callable[[], ChainLedger]) -> ChainLedger:
    """Rebuild a ledger from its append-only log."""
    ledger = make_ledger()
    for kind, t, payload in log:
        if kind == "faucet":
            ledger.time = t
            ledger.faucet(*payload)
        elif kind == "block":
            ledger.set_time(t)
            ledger.height = payload
            ledger.log.append(("block", t, payload))
        elif kind == "call":
            ledger._apply(payload)
    return ledger
