"""Trace verification with an independent interpreter.

The oracle here deliberately shares no code with ``core`` or ``merkle``: it
parses batches from their byte layout, applies the transfer rules with plain
dictionaries, and rebuilds the account root level by level from scratch.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

BURN = bytes(32)
ZERO = bytes(32)


def _h(b: bytes) -> bytes:
    return hashlib.sha256(b).digest()


EMPTY = _h(b"\x02teerollup/empty-leaf")


@dataclass(frozen=True)
class Violation:
    check: str
    detail: str

    def __str__(self) -> str:
        return f"[{self.check}] {self.detail}"


# -- byte-level parsing ------------------------------------------------------------


def _int(b: bytes) -> int:
    return int.from_bytes(b, "big")


def parse_batch(data: bytes) -> list[tuple]:
    """Items as ('issue', dep_id, recipient, value) or ('tx', sender, receiver, value, nonce, sig, raw)."""
    count = _int(data[:4])
    pos = 4
    items = []
    for _ in range(count):
        kind = data[pos]
        if kind == 0:
            dep, rcpt, val = data[pos + 1 : pos + 33], data[pos + 33 : pos + 65], _int(data[pos + 65 : pos + 81])
            items.append(("issue", dep, rcpt, val))
            pos += 81
        elif kind == 1:
            start = pos
            s, r = data[pos + 1 : pos + 33], data[pos + 33 : pos + 65]
            val, nonce = _int(data[pos + 65 : pos + 81]), _int(data[pos + 81 : pos + 89])
            slen = _int(data[pos + 89 : pos + 93])
            sig = data[pos + 93 : pos + 93 + slen]
            pos += 93 + slen
            items.append(("tx", s, r, val, nonce, sig, data[start:pos]))
        else:
            raise ValueError(f"unknown item kind {kind}")
    if pos != len(data):
        raise ValueError("trailing bytes")
    return items


def parse_state(data: bytes) -> tuple[int, bytes, bytes, bytes]:
    tag = b"teerollup/state"
    if data[: len(tag)] != tag or len(data) != len(tag) + 8 + 96:
        raise ValueError("bad state encoding")
    p = len(tag)
    return _int(data[p : p + 8]), data[p + 8 : p + 40], data[p + 40 : p + 72], data[p + 72 : p + 104]


def state_bytes(height: int, prev: bytes, root: bytes, txs: bytes) -> bytes:
    return b"teerollup/state" + height.to_bytes(8, "big") + prev + root + txs


def _sig_ok(sender: bytes, receiver: bytes, value: int, nonce: int, sig: bytes) -> bool:
    body = b"teerollup/tx" + sender + receiver + value.to_bytes(16, "big") + nonce.to_bytes(8, "big")
    try:
        Ed25519PublicKey.from_public_bytes(sender).verify(sig, _h(body))
    except (InvalidSignature, ValueError):
        return False
    return True


# -- naive account root ----------------------------------------------------------------


def naive_root(accounts: dict[bytes, tuple[int, int]], depth: int) -> bytes:
    empties = [EMPTY]
    for _ in range(depth):
        empties.append(_h(b"\x01" + empties[-1] + empties[-1]))
    level: dict[int, bytes] = {}
    for addr, (bal, nonce) in accounts.items():
        if bal == 0 and nonce == 0:
            continue
        idx = _int(_h(addr)[:8]) >> (64 - depth)
        if idx in level:
            raise ValueError("leaf collision")
        level[idx] = _h(b"\x00" + addr + bal.to_bytes(16, "big") + nonce.to_bytes(8, "big"))
    for d in range(depth):
        nxt: dict[int, bytes] = {}
        for idx in sorted({i >> 1 for i in level}):
            left = level.get(2 * idx, empties[d])
            right = level.get(2 * idx + 1, empties[d])
            nxt[idx] = _h(b"\x01" + left + right)
        level = nxt
    return level.get(0, empties[depth])


# -- oracle interpreter -------------------------------------------------------------------


class Oracle:
    def __init__(self, depth: int, genesis: bytes):
        self.depth = depth
        self.accounts: dict[bytes, tuple[int, int]] = {}
        self.state = genesis
        self.unsolved: dict[bytes, tuple[bytes, int]] = {}

    def apply(self, batch: bytes) -> tuple[bytes, list, list]:
        """Execute a batch; returns (state encoding, locks, refunds) without committing."""
        acc = dict(self.accounts)
        locks, refunds = [], []
        used: set[bytes] = set()

        def get(a):
            return acc.get(a, (0, 0))

        for item in parse_batch(batch):
            if item[0] == "issue":
                _, dep, rcpt, val = item
                if dep in used or self.unsolved.get(dep) != (rcpt, val) or val <= 0:
                    continue
                used.add(dep)
                b, n = get(rcpt)
                acc[rcpt] = (b + val, n)
                locks.append([dep.hex(), val])
                continue
            _, s, r, val, nonce, sig, _raw = item
            if val <= 0 or s == BURN or not _sig_ok(s, r, val, nonce, sig):
                continue
            sb, sn = get(s)
            if nonce != sn or sb < val:
                continue
            acc[s] = (sb - val, sn + 1)
            rb, rn = get(r)
            acc[r] = (rb + val, rn)
            if r == BURN:
                refunds.append([s.hex(), val])
        h, _, _, _ = parse_state(self.state)
        enc = state_bytes(h + 1, _h(self.state), naive_root(acc, self.depth), _h(batch))
        self._pending = (acc, enc, [bytes.fromhex(d) for d, _ in locks])
        return enc, locks, refunds

    def commit(self) -> None:
        acc, enc, locked = self._pending
        self.accounts, self.state = acc, enc
        for d in locked:
            self.unsolved.pop(d, None)


# -- trace checks ----------------------------------------------------------------------

ACTIVE_ONLY = ("Deposit", "UpdateState", "StartChallenge", "ResolveChallenge", "SettleRollup")


def verify_records(records: list[dict]) -> list[Violation]:
    out: list[Violation] = []
    header = records[0]
    scenario = header["scenario"]
    setup = next((r for r in records if r["kind"] == "setup"), None)
    if setup is None:
        return [Violation("structure", "trace has no setup record")]

    # clock monotonicity
    last = float("-inf")
    for i, r in enumerate(records):
        if "t" in r:
            if r["t"] < last:
                out.append(Violation("clock", f"record {i} goes back in time"))
            last = r["t"]

    # gas metering equals the declared table
    gas = header["gas"]
    for r in records:
        if r["kind"] == "receipt":
            want = gas.get(r["method"], gas["Transfer"])
            if r["gas"] != want:
                out.append(Violation("gas", f"{r['method']} charged {r['gas']}, table says {want}"))

    # no honest node votes for two digests at one height
    votes: dict[tuple[str, int], set[str]] = {}
    for r in records:
        if r["kind"] == "vote" and r["honest"]:
            votes.setdefault((r["node"], r["height"]), set()).add(r["digest"])
    for (node, h), ds in sorted(votes.items()):
        if len(ds) > 1:
            out.append(Violation("equivocation", f"honest {node} voted {len(ds)} digests at height {h}"))

    out += _check_states(records, scenario, setup)
    out += _check_funds(records)

    summary = next((r for r in reversed(records) if r["kind"] == "summary"), None)
    if summary is None:
        out.append(Violation("structure", "trace has no summary record"))
    elif summary.get("breach"):
        out.append(Violation("runtime", summary["breach"]))
    return out


def _check_states(records: list[dict], scenario: dict, setup: dict) -> list[Violation]:
    out = []
    proposals: dict[str, str] = {}
    oracle = Oracle(scenario["tree_depth"], bytes.fromhex(setup["genesis"]))
    chain_prev = bytes.fromhex(setup["genesis"])
    locked: set[str] = set()
    refunded: set[str] = set()
    known: set[str] = set()
    for r in records:
        if r["kind"] == "proposal":
            proposals.setdefault(r["digest"], r["batch"])
            continue
        if r["kind"] != "receipt" or not r["ok"]:
            continue
        for e in r.get("events", []):
            if e["name"] == "Deposit":
                known.add(e["id"])
                oracle.unsolved[bytes.fromhex(e["id"])] = (bytes.fromhex(e["sender"]), e["value"])
            elif e["name"] == "DepositRefunded":
                if e["id"] in locked:
                    out.append(Violation("deposit", f"deposit {e['id'][:16]} refunded after being issued"))
                refunded.add(e["id"])
                oracle.unsolved.pop(bytes.fromhex(e["id"]), None)
        if r["method"] != "UpdateState":
            continue
        st = bytes.fromhex(r["state"])
        height, prev, root, txs = parse_state(st)
        ph = parse_state(chain_prev)[0]
        if height != ph + 1 or prev != _h(chain_prev):
            out.append(Violation("linkage", f"state at height {height} does not extend its predecessor"))
        chain_prev = st
        for dep, _ in r["locks"]:
            if dep in locked or dep in refunded or dep not in known:
                out.append(Violation("deposit", f"lock of {dep[:16]} at height {height} is not atomic"))
            locked.add(dep)
        batch = proposals.get(r["digest"])
        if batch is None:
            out.append(Violation("missing-batch", f"no batch was ever proposed for the state at height {height}"))
            continue
        try:
            want, locks, refunds = oracle.apply(bytes.fromhex(batch))
        except ValueError as exc:
            out.append(Violation("safety", f"height {height}: batch does not parse ({exc})"))
            continue
        if _h(bytes.fromhex(batch)) != txs:
            out.append(Violation("safety", f"height {height}: batch does not match txs_hash"))
        if want != st or locks != r["locks"] or refunds != r["refunds"]:
            what = []
            if want[-96:-64] != st[-96:-64] or want[:-96] != st[:-96]:
                what.append("parent")
            if want[-64:-32] != root:
                what.append("account root")
            if locks != r["locks"]:
                what.append("locks")
            if refunds != r["refunds"]:
                what.append("refunds")
            out.append(Violation(
                "safety",
                f"accepted state at height {height} deviates from oracle re-execution ({', '.join(what) or 'encoding'})",
            ))
        oracle.commit()
    return out


def _check_funds(records: list[dict]) -> list[Violation]:
    out = []
    frozen = False
    escrow = 0
    withdrawn: set[str] = set()
    for r in records:
        if r["kind"] != "receipt" or not r["ok"]:
            continue
        if frozen and r["method"] in ACTIVE_ONLY:
            out.append(Violation("frozen", f"{r['method']} succeeded after settlement"))
        for e in r.get("events", []):
            name = e["name"]
            if name == "Deposit":
                escrow += e["value"]
            elif name == "DepositRefunded":
                escrow -= e["value"]
            elif name == "StateUpdated":
                escrow -= e["refunds"]
            elif name == "Withdrawn":
                escrow -= e["value"]
                if e["t_addr"] in withdrawn:
                    out.append(Violation("withdraw", f"{e['t_addr'][:16]} withdrew twice"))
                withdrawn.add(e["t_addr"])
            elif name == "Settle":
                frozen = True
        if escrow < 0:
            out.append(Violation("escrow", "escrow went negative"))
    summary = next((r for r in reversed(records) if r["kind"] == "summary"), None)
    if summary is not None:
        if summary["escrow"] != escrow:
            out.append(Violation("escrow", f"escrow {summary['escrow']} != replayed {escrow}"))
        if summary["native_total"] != summary["faucet_total"]:
            out.append(Violation("supply", "native supply not conserved"))
    return out
