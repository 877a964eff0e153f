"""JSON-lines file formats for traces and session lists.

A trace file starts with a header line carrying the format name, version and
router identity, followed by one record per line.  Round-trips are lossless,
including the optional ground-truth annotation.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from .model import (
    Ability,
    CongestionFlag,
    EndQuality,
    OnlineSession,
    Protocol,
    Reachability,
    RouterAddressSummary,
    RouterIdentity,
    RouterInfoRecord,
    RouterTrace,
    StartQuality,
    TraceFormatError,
    TruthKind,
)

TRACE_FORMAT = "i2plive-trace"
SESSION_FORMAT = "i2plive-sessions"
FORMAT_VERSION = 1

_RECORD_FIELDS = {"t", "ff", "congestion", "reach", "addrs", "truth"}
_ADDR_FIELDS = {"proto", "cost", "ip", "intro", "abilities"}


def _identity_to_json(identity: RouterIdentity) -> dict:
    return {"id": identity.id_bytes.hex(), "label": identity.label}


def _identity_from_json(obj: dict) -> RouterIdentity:
    return RouterIdentity(bytes.fromhex(obj["id"]), obj["label"])


def _addr_to_json(addr: RouterAddressSummary) -> dict:
    out = {"proto": addr.protocol.value, "cost": addr.cost}
    if not addr.ip_present:
        out["ip"] = False
    if addr.introducer_set_id:
        out["intro"] = addr.introducer_set_id
    if addr.abilities:
        out["abilities"] = sorted(a.value for a in addr.abilities)
    return out


def _addr_from_json(obj: dict) -> RouterAddressSummary:
    unknown = set(obj) - _ADDR_FIELDS
    if unknown:
        raise TraceFormatError(f"unknown address field: {sorted(unknown)[0]}")
    return RouterAddressSummary(
        protocol=Protocol(obj["proto"]),
        cost=obj["cost"],
        ip_present=obj.get("ip", True),
        introducer_set_id=obj.get("intro", 0),
        abilities=frozenset(Ability(a) for a in obj.get("abilities", ())),
    )


def record_to_json(rec: RouterInfoRecord) -> dict:
    out = {
        "t": rec.publish_time,
        "ff": rec.floodfill_flag,
        "congestion": rec.congestion.name,
        "reach": rec.reachability.value,
        "addrs": [_addr_to_json(a) for a in rec.addresses],
    }
    if rec.truth_kind is not None:
        out["truth"] = rec.truth_kind.value
    return out


def record_from_json(obj: dict, identity: RouterIdentity) -> RouterInfoRecord:
    unknown = set(obj) - _RECORD_FIELDS
    if unknown:
        raise TraceFormatError(f"unknown record field: {sorted(unknown)[0]}")
    return RouterInfoRecord(
        identity=identity,
        publish_time=obj["t"],
        floodfill_flag=obj["ff"],
        congestion=CongestionFlag[obj["congestion"]],
        reachability=Reachability(obj["reach"]),
        addresses=tuple(_addr_from_json(a) for a in obj["addrs"]),
        truth_kind=TruthKind(obj["truth"]) if "truth" in obj else None,
    )


def write_trace(trace: RouterTrace, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "format": TRACE_FORMAT,
            "version": FORMAT_VERSION,
            "identity": _identity_to_json(trace.identity),
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in trace.records:
            fh.write(json.dumps(record_to_json(rec), sort_keys=True) + "\n")


def read_trace(path, identity: Optional[RouterIdentity] = None) -> RouterTrace:
    """Read a trace file; `identity` is only consulted for empty files."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        if identity is None:
            raise TraceFormatError(f"{path}: empty file and no identity declared")
        return RouterTrace(identity, ())
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"{path}:1: malformed header: {exc}") from exc
    if header.get("format") != TRACE_FORMAT:
        raise TraceFormatError(f"{path}:1: not a {TRACE_FORMAT} file")
    ident = _identity_from_json(header["identity"])
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append(record_from_json(obj, ident))
        except TraceFormatError as exc:
            raise TraceFormatError(f"{path}:{lineno}: {exc}") from exc
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise TraceFormatError(f"{path}:{lineno}: malformed record: {exc}") from exc
    return RouterTrace(ident, tuple(records))


def session_to_json(s: OnlineSession) -> dict:
    return {
        "start": s.start,
        "end": s.end,
        "records": list(s.record_indices),
        "start_q": s.start_quality.value,
        "end_q": s.end_quality.value,
    }


def session_from_json(obj: dict) -> OnlineSession:
    return OnlineSession(
        start=obj["start"],
        end=obj["end"],
        record_indices=tuple(obj["records"]),
        start_quality=StartQuality(obj["start_q"]),
        end_quality=EndQuality(obj["end_q"]),
    )


def write_sessions(sessions, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(
            json.dumps({"format": SESSION_FORMAT, "version": FORMAT_VERSION}) + "\n"
        )
        for s in sessions:
            fh.write(json.dumps(session_to_json(s), sort_keys=True) + "\n")


def read_sessions(path) -> list:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        return []
    header = json.loads(lines[0])
    if header.get("format") != SESSION_FORMAT:
        raise TraceFormatError(f"{path}:1: not a {SESSION_FORMAT} file")
    return [session_from_json(json.loads(line)) for line in lines[1:] if line.strip()]
