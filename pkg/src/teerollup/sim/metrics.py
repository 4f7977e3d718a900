"""Report computed from a trace alone, so a replay reproduces it exactly."""

from __future__ import annotations

import csv
import io
import json
from decimal import Decimal

from ..chain import GasTable, MEASURED_GAS, gas_to_usd
from ..core import Batch

REPORT_VERSION = 1


def _pct(sorted_vals: list[float], q: float) -> float:
    if not sorted_vals:
        return 0.0
    # nearest-rank percentile
    k = max(0, min(len(sorted_vals) - 1, int(-(-q * len(sorted_vals) // 100)) - 1))
    return sorted_vals[k]


def accepted_batches(records: list[dict]) -> list[dict]:
    """Accepted UpdateState receipts joined with the proposal that carried their batch."""
    proposals: dict[str, dict] = {}
    for r in records:
        if r["kind"] == "proposal":
            proposals.setdefault(r["digest"], r)
    out = []
    for r in records:
        if r["kind"] == "receipt" and r["method"] == "UpdateState" and r["ok"]:
            p = proposals.get(r["digest"])
            out.append({"receipt": r, "proposal": p})
    return out


def _usd_per_item(gas: int, items: int, table: GasTable) -> Decimal:
    if not items:
        return Decimal("0")
    usd = Decimal(gas) * table.gas_price_gwei * Decimal("1e-9") * table.token_usd / items
    return usd.quantize(Decimal("0.000001"))


def table_from_header(header: dict) -> GasTable:
    return GasTable(dict(header["gas"]), Decimal(header["gas_price_gwei"]), Decimal(header["token_usd"]))


def compute_report(records: list[dict]) -> dict:
    header = records[0]
    table = table_from_header(header)
    scenario = header["scenario"]
    receipts = [r for r in records if r["kind"] == "receipt"]
    summary = next((r for r in reversed(records) if r["kind"] == "summary"), {})

    # -- finality and latency ------------------------------------------------
    submitted = {r["tx"]: r["t"] for r in records if r["kind"] == "client_tx"}
    confirmed: dict[str, float] = {}
    items_total = 0
    full_batches = 0
    consensus = []
    batch_size = scenario["committee"]["batch_size"]
    for ab in accepted_batches(records):
        rc, prop = ab["receipt"], ab["proposal"]
        if prop is None:
            continue
        batch = Batch.decode(bytes.fromhex(prop["batch"]))
        items_total += len(batch)
        full_batches += len(batch) == batch_size
        consensus.append(rc["t"] - prop["t"])
        for item in batch.items:
            h = item.tx_hash().hex()
            if h in submitted and h not in confirmed:
                confirmed[h] = rc["t"]
    lat = sorted(confirmed[h] - submitted[h] for h in confirmed)
    if confirmed:
        start = min(submitted[h] for h in confirmed)
        duration = max(confirmed.values()) - start
    else:
        duration = 0.0
    throughput = len(confirmed) / duration if duration > 0 else 0.0

    # -- gas -----------------------------------------------------------------
    gas: dict[str, dict] = {}
    for r in receipts:
        g = gas.setdefault(r["method"], {"calls": 0, "failed": 0, "gas": 0})
        g["calls"] += 1
        g["failed"] += not r["ok"]
        g["gas"] += r["gas"]
    for m, g in gas.items():
        g["usd"] = str(gas_to_usd(g["gas"], table))
        g["calibrated"] = m in MEASURED_GAS
    upd = [ab["receipt"]["gas"] for ab in accepted_batches(records)]
    amortized = sum(upd) / items_total if items_total else 0.0

    # -- challenges and settlement -------------------------------------------------
    events = [(r["t"], e) for r in receipts for e in r.get("events", [])]
    started = {e["id"]: t for t, e in events if e["name"] == "Challenge"}
    resolved = {e["id"]: (t, e["pledge"]) for t, e in events if e["name"] == "ChallengeResolved"}
    settle = [t for t, e in events if e["name"] == "Settle"]
    deposits = sum(e["value"] for _, e in events if e["name"] == "Deposit")
    dep_refunds = sum(e["value"] for _, e in events if e["name"] == "DepositRefunded")
    burn_refunds = sum(e["refunds"] for _, e in events if e["name"] == "StateUpdated")
    payouts = [e["value"] for _, e in events if e["name"] == "Withdrawn"]
    tau = scenario["chain"]["challenge_timeout"]
    challenge_rows = []
    for cid, t0 in started.items():
        t1, outcome = resolved.get(cid, (None, None))
        challenge_rows.append({
            "id": cid,
            "start": t0,
            "resolved_at": t1,
            "pledge": outcome,
            "within_timeout": t1 is not None and t1 - t0 <= tau,
        })

    # -- DAP slashing and economics --------------------------------------------------
    audits = [e for _, e in events if e["name"] == "Audit"]
    d = scenario["dap"]
    w, eps, c_min = d["response_cost"], d["surcharge"], d["min_collateral"]
    slashed: dict[str, int] = {}
    names = {v: k for k, v in next((r for r in records if r["kind"] == "setup"), {}).get("daps", {}).items()}
    lazy_loss = 0.0
    for a in audits:
        for dap, s in zip(a["daps"], a["slashes"]):
            slashed[names.get(dap, dap)] = slashed.get(names.get(dap, dap), 0) + s
        # loss of one DAP skipping this audit given the others' answers, averaged over DAPs
        x = a["responses"]
        if x:
            lazy_loss += sum((w + eps) if sum(x) - xi >= 1 else c_min for xi in x) / len(x)
    heights = summary.get("height", 0)
    diligent_cost = len(audits) * w + d["storage_cost"] * heights

    report = {
        "report_version": REPORT_VERSION,
        "scenario": scenario["name"],
        "seed": scenario["seed"],
        "finalized_txs": len(confirmed),
        "submitted_txs": len(submitted),
        "duration": duration,
        "throughput_tps": throughput,
        "latency": {
            "mean": sum(lat) / len(lat) if lat else 0.0,
            "p50": _pct(lat, 50),
            "p90": _pct(lat, 90),
            "p99": _pct(lat, 99),
            "max": lat[-1] if lat else 0.0,
        },
        "consensus_latency_mean": sum(consensus) / len(consensus) if consensus else 0.0,
        "heights": summary.get("height", 0),
        "batch_items": items_total,
        "full_batches": full_batches,
        "gas": dict(sorted(gas.items())),
        "gas_total": sum(g["gas"] for g in gas.values()),
        "amortized_update_gas_per_tx": round(amortized, 2),
        "amortized_update_gas_exact": amortized,
        "amortized_update_usd_per_tx": str(_usd_per_item(sum(upd), items_total, table)),
        "challenges": challenge_rows,
        "settlement": {
            "contract_state": summary.get("contract_state"),
            "frozen_at": settle[0] if settle else None,
            "deposits": deposits,
            "deposit_refunds": dep_refunds,
            "burn_refunds": burn_refunds,
            "withdrawals": len(payouts),
            "payouts": sum(payouts),
            "escrow_end": summary.get("escrow"),
        },
        "slashing": {
            "audits": len(audits),
            "per_dap": dict(sorted(slashed.items())),
            "slashed_pool": summary.get("slashed_pool"),
            "lazy_expected_loss": lazy_loss,
            "diligent_cost": diligent_cost,
            "diligence_dominates": lazy_loss > diligent_cost if audits else None,
        },
        "stuck_sequencers": summary.get("stuck", []),
        "breach": summary.get("breach"),
    }
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def _flatten(prefix: str, v, out: list[tuple[str, str]]) -> None:
    if isinstance(v, dict):
        for k in sorted(v):
            _flatten(f"{prefix}.{k}" if prefix else str(k), v[k], out)
    elif isinstance(v, list):
        for i, x in enumerate(v):
            _flatten(f"{prefix}[{i}]", x, out)
    else:
        out.append((prefix, "" if v is None else str(v)))


def report_csv(report: dict) -> str:
    rows: list[tuple[str, str]] = []
    _flatten("", report, rows)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "value"])
    writer.writerows(rows)
    return buf.getvalue()
