"""Data availability provider: stores metadata, serves proofs, answers audits."""

from __future__ import annotations

import json
from pathlib import Path
from typing import TYPE_CHECKING

from .adversary import DapProfile
from .chain import ChainCall, Event
from .contracts import AuditResponse, sign_dap_register
from .core import Batch, Metadata, RollupState, SideEffects
from .crypto import KeyPair, PublicKey
from .merkle import AccountTree, MerkleProof

if TYPE_CHECKING:
    from .sim.harness import Simulation
    from .sim.network import Message

METADATA_PUSH = "METADATA_PUSH"

# reasons a push is not stored
REJECT_INCONSISTENT = "E_INCONSISTENT"
REJECT_UNKNOWN_STATE = "E_UNKNOWN_STATE"
DISCARD_LAZY = "lazy-discard"


class DapNode:
    def __init__(self, index: int, key: KeyPair, sim: "Simulation", archive: Path | None = None):
        self.index = index
        self.name = f"dap-{index}"
        self.key = key
        self.sim = sim
        self.profile = DapProfile(index)
        self.store: dict[int, Metadata] = {}
        self.archive = archive
        self.rejected: list[tuple[int, str]] = []

    @property
    def address(self) -> PublicKey:
        return self.key.public_key

    def register_call(self, collateral: int) -> ChainCall:
        return ChainCall(self.address, "DapRegister", {"sig": sign_dap_register(self.key, collateral)}, collateral)

    def on_message(self, msg: "Message") -> None:
        if msg.kind == METADATA_PUSH:
            self.on_metadata_push(msg.payload)
        elif isinstance(msg.payload, Event) and msg.payload.name == "AuditRequest":
            self.on_audit_request(msg.payload)

    def on_metadata_push(self, md: Metadata) -> str:
        h = md.state.height
        onchain = self.sim.tsc.states.get(h)
        if onchain is None:
            reason = REJECT_UNKNOWN_STATE
        elif not md.consistent(onchain):
            reason = REJECT_INCONSISTENT
        elif self.profile.behavior == "lazy" and self._drops():
            reason = DISCARD_LAZY
        else:
            if h not in self.store:
                self.store[h] = md
                if self.archive is not None:
                    self._append_archive(md)
            return "stored"
        self.rejected.append((h, reason))
        return reason

    def _drops(self) -> bool:
        p = self.profile.drop_prob
        if p >= 1.0:
            return True
        return float(self.sim.streams.get(f"dap/{self.name}").random()) < p

    def latest_height(self) -> int | None:
        return max(self.store) if self.store else None

    def serve_balance_proof(self, addr: PublicKey, height: int | None = None) -> tuple[int, MerkleProof] | None:
        if height is None:
            height = self.latest_height()
        md = self.store.get(height) if height is not None else None
        if md is None:
            return None
        proof = md.tree.prove(addr)
        return proof.value, proof

    def serve_nonce(self, addr: PublicKey) -> int | None:
        h = self.latest_height()
        return None if h is None else self.store[h].tree.nonce(addr)

    def on_audit_request(self, ev: Event) -> None:
        rid = ev.data["id"]
        req = self.sim.tsc.audits.get(rid)
        if req is None or self.address not in req.daps:
            return
        behavior = self.profile.behavior
        if behavior == "lazy":
            md = self.store.get(req.height)
            if md is None:
                return
        elif behavior == "garbage":
            resp = AuditResponse(req.height, Batch(), ())
            self.sim.submit(self.name, ChainCall(self.address, "DapRespond", {"id": rid, "response": resp}))
            return
        md = self.store.get(req.height)
        if md is None:
            return
        resp = AuditResponse(req.height, md.batch, tuple(md.tree.prove(k) for k in req.keys))
        self.sim.submit(self.name, ChainCall(self.address, "DapRespond", {"id": rid, "response": resp}))

    # -- archive -------------------------------------------------------------
    def _append_archive(self, md: Metadata) -> None:
        with open(self.archive, "a") as fh:
            fh.write(json.dumps(archive_record(md), sort_keys=True) + "\n")


def archive_record(md: Metadata) -> dict:
    return {
        "height": md.state.height,
        "state": md.state.encode().hex(),
        "batch": md.batch.encode().hex(),
        "effects": md.effects.encode().hex(),
        "depth": md.tree.depth,
        "accounts": [[a.hex(), b, n] for a, b, n in sorted(md.tree.items())],
    }


def load_archive(path: str | Path) -> dict[int, Metadata]:
    """Read a height-indexed JSON-lines archive back into Metadata objects."""
    out: dict[int, Metadata] = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        tree = AccountTree(rec["depth"])
        for a, b, n in rec["accounts"]:
            tree.set_balance(bytes.fromhex(a), b, n)
        md = Metadata(
            RollupState.decode(bytes.fromhex(rec["state"])),
            tree,
            Batch.decode(bytes.fromhex(rec["batch"])),
            SideEffects.decode(bytes.fromhex(rec["effects"])),
        )
        if not md.consistent():
            raise ValueError(f"archive entry at height {rec['height']} is inconsistent")
        out[rec["height"]] = md
    return out
