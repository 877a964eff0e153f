"""Shared domain types for RouterInfo traces, schedules, and online sessions.

All internal time arithmetic is integer milliseconds since the simulation
epoch.  Schedule patterns are given in signed minutes (positive = online,
negative = offline) and converted on expansion.  Every type here is an
immutable value; the functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Iterable, Optional

SECOND_MS = 1_000
MINUTE_MS = 60_000
DAY_MS = 24 * 60 * MINUTE_MS


class I2PLiveError(Exception):
    """Base class for errors raised by this package."""


class InvalidScheduleError(I2PLiveError):
    pass


class InvalidConfigError(I2PLiveError):
    pass


class TraceFormatError(I2PLiveError):
    pass


class ImplementationKind(Enum):
    JAVA = "java"
    CPP = "cpp"


class CongestionFlag(IntEnum):
    """Congestion level published in the options field; G is maximal."""

    NONE = 0
    D = 1
    E = 2
    G = 3


class Reachability(Enum):
    R = "R"
    U = "U"
    UNDETERMINED = "undetermined"


class Protocol(Enum):
    NTCP2 = "NTCP2"
    SSU = "SSU"
    SSU2 = "SSU2"


class Ability(Enum):
    PEER_TEST = "B"
    INTRODUCER = "C"


class TruthKind(Enum):
    """Ground-truth annotation of why a record was published.

    Present only in simulator output; stripped from observed traces and
    never read by inference.
    """

    INITIAL = "initial"
    ROUTINE = "routine"
    PEER_TEST = "peer_test"
    LEAVE = "leave"
    INTRODUCER_UPDATE = "introducer_update"
    OTHER = "other"


class StartQuality(Enum):
    EXACT_JOIN = "exact_join"
    SUPPLEMENTED_JOIN = "supplemented_join"
    COARSE_ONLY = "coarse_only"


class EndQuality(Enum):
    EXACT_LEAVE = "exact_leave"
    SUPPLEMENTED_LEAVE = "supplemented_leave"
    COARSE_ONLY = "coarse_only"


@dataclass(frozen=True)
class RouterIdentity:
    """32-byte opaque identifier plus a short human-readable label."""

    id_bytes: bytes
    label: str

    def __post_init__(self) -> None:
        if len(self.id_bytes) != 32:
            raise InvalidConfigError(
                f"identity must be 32 bytes, got {len(self.id_bytes)}"
            )


@dataclass(frozen=True)
class RouterAddressSummary:
    protocol: Protocol
    cost: int
    ip_present: bool = True
    introducer_set_id: int = 0
    abilities: frozenset = frozenset()


@dataclass(frozen=True)
class RouterConfig:
    identity: RouterIdentity
    impl: ImplementationKind
    floodfill: bool = False
    reachable: bool = True
    patched: bool = False

    def category(self) -> str:
        """One of the five evaluation categories: J-R-FF, J-R-nFF, J-U, C-R, C-U."""
        if self.impl is ImplementationKind.JAVA:
            if not self.reachable:
                return "J-U"
            return "J-R-FF" if self.floodfill else "J-R-nFF"
        return "C-R" if self.reachable else "C-U"


@dataclass(frozen=True)
class RouterInfoRecord:
    identity: RouterIdentity
    publish_time: int
    floodfill_flag: bool = False
    congestion: CongestionFlag = CongestionFlag.NONE
    reachability: Reachability = Reachability.R
    addresses: tuple = ()
    truth_kind: Optional[TruthKind] = None


@dataclass(frozen=True)
class RouterTrace:
    """Time-ordered publication records of a single router."""

    identity: RouterIdentity
    records: tuple = ()

    def observed(self) -> "RouterTrace":
        """View with ground-truth annotations stripped; feed this to inference."""
        return RouterTrace(
            self.identity,
            tuple(replace(r, truth_kind=None) for r in self.records),
        )

    def times(self) -> list:
        return [r.publish_time for r in self.records]


@dataclass(frozen=True)
class BehaviorSchedule:
    """Alternating on/off durations in minutes, repeated for a number of days.

    A "day" is the pattern's own total duration; the S1–S4 patterns happen to
    sum to exactly 24 h.
    """

    epoch_start: int
    pattern: tuple
    repeat_days: int = 1

    def day_span_ms(self) -> int:
        return sum(abs(v) for v in self.pattern) * MINUTE_MS


@dataclass(frozen=True)
class OnlineSession:
    start: int
    end: int
    record_indices: tuple = ()
    start_quality: StartQuality = StartQuality.COARSE_ONLY
    end_quality: EndQuality = EndQuality.COARSE_ONLY


def expand_schedule(schedule: BehaviorSchedule) -> list:
    """Expand a schedule into its ground-truth online sessions.

    Intervals are laid end-to-end from epoch_start and the whole pattern is
    repeated repeat_days times; only the online intervals are returned, with
    exact join/leave quality.
    """
    if any(v == 0 for v in schedule.pattern):
        raise InvalidScheduleError("schedule pattern must not contain zero entries")
    sessions = []
    day_span = schedule.day_span_ms()
    for day in range(schedule.repeat_days):
        t = schedule.epoch_start + day * day_span
        for entry in schedule.pattern:
            dur = abs(entry) * MINUTE_MS
            if entry > 0:
                sessions.append(
                    OnlineSession(
                        start=t,
                        end=t + dur,
                        start_quality=StartQuality.EXACT_JOIN,
                        end_quality=EndQuality.EXACT_LEAVE,
                    )
                )
            t += dur
    return sessions


def merge_adjacent_sessions(sessions: Iterable[OnlineSession]) -> list:
    """Coalesce sessions that abut exactly (end == next start).

    A pattern like [100, -45] repeated daily can make the last online block of
    one day touch the first block of the next; ground truth treats that as one
    continuous session.
    """
    merged: list = []
    for s in sorted(sessions, key=lambda x: x.start):
        if merged and merged[-1].end == s.start:
            prev = merged[-1]
            merged[-1] = replace(prev, end=s.end, end_quality=s.end_quality)
        else:
            merged.append(s)
    return merged


@dataclass(frozen=True)
class TraceViolation:
    index: int
    kind: str
    message: str


def validate_trace(trace: RouterTrace, observed: bool = False) -> list:
    """Diagnostic check of a trace; returns a (possibly empty) violation list.

    Flags non-monotone timestamps, identity mismatches and, for traces that
    claim to be observed, leaked ground-truth annotations.
    """
    violations = []
    prev_time = None
    for i, rec in enumerate(trace.records):
        if rec.identity != trace.identity:
            violations.append(
                TraceViolation(i, "identity mismatch", f"record {i} has foreign identity")
            )
        if prev_time is not None and rec.publish_time <= prev_time:
            violations.append(
                TraceViolation(i, "non-increasing time", f"record {i} does not advance time")
            )
        if observed and rec.truth_kind is not None:
            violations.append(
                TraceViolation(i, "truth leakage", f"record {i} carries a truth annotation")
            )
        prev_time = rec.publish_time
    return violations


def sessions_disjoint(sessions: Iterable[OnlineSession]) -> bool:
    ordered = sorted(sessions, key=lambda s: s.start)
    for a, b in zip(ordered, ordered[1:]):
        if a.end > b.start:
            return False
    return True
