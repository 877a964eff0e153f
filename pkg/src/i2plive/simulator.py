"""Ground-truth RouterInfo publication simulators.

Models the Java-based publication process (periodic update tasks, the
every-fourth-task routine publication, the two startup branches, the 9-minute
republish delay, floodfill leave records, the patched-router behavior) and the
C++-based process (12-minute congestion evaluations, 71-minute peer tests,
30-minute forced publications, graceful-shutdown G records).  Firewalled
Java routers are produced by re-simulating the same task timeline with
introducer-expiry events layered in.

Simulation is deterministic per (inputs, seed): one router, one seeded
generator; routers can be simulated in parallel with independent seeds.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field, replace
from typing import Optional

from .model import (
    Ability,
    BehaviorSchedule,
    CongestionFlag,
    ImplementationKind,
    InvalidConfigError,
    MINUTE_MS,
    OnlineSession,
    Protocol,
    Reachability,
    RouterAddressSummary,
    RouterConfig,
    RouterInfoRecord,
    RouterTrace,
    SECOND_MS,
    TruthKind,
    expand_schedule,
    merge_adjacent_sessions,
)


@dataclass(frozen=True)
class JavaSimParams:
    T: int = 43                                  # minutes
    S_max: int = 10                              # minutes
    min_republish_delay: int = 9 * MINUTE_MS
    startup_first_publish_window: int = 10 * SECOND_MS
    second_task_offset: int = 90 * SECOND_MS
    ack_success_prob: float = 0.5
    routine_skip_prob: float = 1.0 / 32.0        # patched mode only
    introducer_expiry_min: int = 15 * MINUTE_MS  # firewalled overlay
    introducer_expiry_max: int = 45 * MINUTE_MS

    def dc_min_ms(self) -> int:
        return self.T * 45_000 // 4

    def dc_max_ms(self) -> int:
        return (self.T * 45_000 + self.S_max * MINUTE_MS) // 4


@dataclass(frozen=True)
class CppSimParams:
    congestion_eval_period: int = 12 * MINUTE_MS
    initial_publish_delay: int = 500
    peer_test_period: int = 71 * MINUTE_MS
    forced_publish_gap: int = 30 * MINUTE_MS
    graceful_shutdown_window: int = 10 * MINUTE_MS
    congestion_change_prob: float = 0.5
    graceful_prob: float = 0.5


@dataclass(frozen=True)
class SimOutput:
    full_trace: RouterTrace
    ground_truth_sessions: tuple
    config: RouterConfig = None
    schedule: BehaviorSchedule = None
    seed: int = 0


def derive_seed(root: int, *labels) -> int:
    """Stable sub-seed derivation, independent of hash randomization."""
    text = ":".join([str(root)] + [str(x) for x in labels])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def _identity_hash(identity) -> int:
    return int.from_bytes(hashlib.sha256(identity.id_bytes).digest()[:4], "big")


def build_addresses(config: RouterConfig, introducer_set_id: int = 0, ip_present: bool = True) -> tuple:
    """Per-implementation RouterAddress cost semantics (NTCP2/SSU2)."""
    h = _identity_hash(config.identity)
    if config.impl is ImplementationKind.CPP:
        return (
            RouterAddressSummary(Protocol.NTCP2, 3, ip_present=ip_present),
            RouterAddressSummary(Protocol.SSU2, 8, ip_present=ip_present,
                                 abilities=frozenset({Ability.PEER_TEST}) if config.reachable else frozenset()),
        )
    ntcp2_cost = 10 + h % 3
    ssu_cost = 4 + (h >> 4) % 4  # stay below 8: a bare SSU2 cost-8 address reads as C++
    if ip_present and introducer_set_id == 0:
        return (
            RouterAddressSummary(Protocol.NTCP2, ntcp2_cost),
            RouterAddressSummary(Protocol.SSU2, ssu_cost,
                                 abilities=frozenset({Ability.PEER_TEST})),
        )
    # Firewalled: SSU2 only, null IP, introducer references.
    return (
        RouterAddressSummary(Protocol.SSU2, ssu_cost, ip_present=False,
                             introducer_set_id=introducer_set_id),
    )


def _ground_truth(schedule: BehaviorSchedule) -> list:
    return merge_adjacent_sessions(expand_schedule(schedule))


def _assemble(identity, sessions, raw_records) -> tuple:
    """Attach record indices to sessions; enforce strictly increasing times."""
    records = []
    last_t = None
    for rec in sorted(raw_records, key=lambda r: r.publish_time):
        t = rec.publish_time
        if last_t is not None and t <= last_t:
            t = last_t + 1
            rec = replace(rec, publish_time=t)
        records.append(rec)
        last_t = t
    out_sessions = []
    for s in sessions:
        idx = tuple(
            i for i, r in enumerate(records) if s.start <= r.publish_time <= s.end
        )
        out_sessions.append(replace(s, record_indices=idx))
    return RouterTrace(identity, tuple(records)), tuple(out_sessions)


def _draw_dc(rng: random.Random, params: JavaSimParams) -> int:
    # Exact integer-ms form of (T*3/4 + uniform[0,S_max]) / 4 minutes.
    u = rng.randrange(0, params.S_max * MINUTE_MS + 1)
    return (params.T * 45_000 + u) // 4


def _java_session_events(
    ts: int,
    te: int,
    config: RouterConfig,
    params: JavaSimParams,
    task_rng: random.Random,
    intro_rng: Optional[random.Random],
    intro_id_start: int,
) -> tuple:
    """One session's publications as (time, truth_kind, intro_id, is_first) tuples.

    Returns (events, next_intro_id).  The task RNG stream is consumed in a
    fixed order regardless of introducer events, so overlaying events onto a
    previously simulated run preserves the nominal update-interval draws.
    """
    firewalled = intro_rng is not None
    intro_id = intro_id_start + 1 if firewalled else 0
    next_intro_id = intro_id + 1 if firewalled else intro_id_start

    pending_events = []
    if firewalled:
        t = ts
        while True:
            t += intro_rng.randrange(params.introducer_expiry_min, params.introducer_expiry_max + 1)
            if t >= te:
                break
            pending_events.append(t)

    out = []  # (time, TruthKind, intro_id)
    ev_i = 0
    last_pub: Optional[int] = None

    def consume_events(until: int):
        nonlocal ev_i, intro_id, next_intro_id, last_pub
        while ev_i < len(pending_events) and pending_events[ev_i] <= until:
            et = pending_events[ev_i]
            intro_id += 1
            next_intro_id = intro_id + 1
            out.append((et, TruthKind.INTRODUCER_UPDATE, intro_id))
            last_pub = et
            ev_i += 1

    def exec_time(nominal: int) -> int:
        # Update tasks wait out the 9-minute republish delay; publications
        # that land meanwhile (introducer updates) can push the task further.
        t = nominal
        while True:
            consume_events(t)
            pushed = t if last_pub is None else max(t, last_pub + params.min_republish_delay)
            if pushed == t:
                return t
            t = pushed

    if config.patched:
        # No initial-publication branch: plain task cadence from startup.
        counter = 0
        t_task = ts + _draw_dc(task_rng, params)
    else:
        t_init = ts + task_rng.randrange(0, params.startup_first_publish_window + 1)
        branch_a = task_rng.random() < params.ack_success_prob
        if t_init > te:
            return out, next_intro_id
        consume_events(t_init)
        out.append((t_init, TruthKind.INITIAL, intro_id))
        counter = 1
        if branch_a:
            last_pub = t_init
            t_task = t_init + _draw_dc(task_rng, params)
        else:
            # No acknowledgment: the delayed second task fires at +90 s and
            # the delay rule has no successful publication to count from.
            last_pub = None
            t_task = t_init + params.second_task_offset

    while True:
        t = exec_time(t_task)
        if t > te:
            break
        counter += 1
        if counter % 4 == 0:
            skipped = config.patched and task_rng.random() < params.routine_skip_prob
            if not skipped:
                out.append((t, TruthKind.ROUTINE, intro_id))
                last_pub = t
        t_task = t + _draw_dc(task_rng, params)

    consume_events(te)
    if config.floodfill and not config.patched and any(k is not TruthKind.INTRODUCER_UPDATE for _, k, _ in out):
        out.append((te, TruthKind.LEAVE, intro_id))
    return out, next_intro_id


def _simulate_java(schedule, config, params, seed, firewalled: bool) -> SimOutput:
    sessions = _ground_truth(schedule)
    raw = []
    intro_id = 0
    for i, s in enumerate(sessions):
        task_rng = random.Random(derive_seed(seed, "java-task", i))
        intro_rng = random.Random(derive_seed(seed, "java-intro", i)) if firewalled else None
        events, intro_id = _java_session_events(
            s.start, s.end, config, params, task_rng, intro_rng, intro_id
        )
        first_in_session = True
        for t, kind, iid in sorted(events):
            if firewalled:
                reach = Reachability.UNDETERMINED if first_in_session else Reachability.U
                addrs = build_addresses(config, introducer_set_id=iid, ip_present=False)
            else:
                reach = Reachability.R
                addrs = build_addresses(config)
            first_in_session = False
            raw.append(
                RouterInfoRecord(
                    identity=config.identity,
                    publish_time=t,
                    floodfill_flag=config.floodfill and kind is not TruthKind.LEAVE,
                    congestion=CongestionFlag.NONE,
                    reachability=reach,
                    addresses=addrs,
                    truth_kind=kind,
                )
            )
    trace, gt = _assemble(config.identity, sessions, raw)
    return SimOutput(trace, gt, config=config, schedule=schedule, seed=seed)


def simulate_java(schedule: BehaviorSchedule, config: RouterConfig,
                  params: JavaSimParams = JavaSimParams(), seed: int = 0) -> SimOutput:
    """Simulate a Java-based router's publications over its schedule.

    Produces the base (reachable-style) record pattern; run
    :func:`apply_firewalled_overlay` afterwards for routers declared
    unreachable.
    """
    if config.impl is not ImplementationKind.JAVA:
        raise InvalidConfigError("simulate_java requires a JavaI2P config")
    return _simulate_java(schedule, config, params, seed, firewalled=False)


def apply_firewalled_overlay(output: SimOutput, seed: int,
                             params: JavaSimParams = JavaSimParams()) -> SimOutput:
    """Layer firewalled-router behavior over a simulated Java run.

    Re-simulates the same task timeline (same task RNG stream, so the nominal
    4-update-interval grid is unchanged) with introducer-expiry publications
    inserted; the 9-minute delay rule then pushes routine records as needed.
    The first record of each session loses both reachability flags and all
    addresses lose their IPs.
    """
    if output.config is None or output.config.impl is not ImplementationKind.JAVA:
        raise InvalidConfigError("firewalled overlay applies to Java simulations")
    if output.config.reachable:
        raise InvalidConfigError("firewalled overlay requires reachable=False config")
    if not output.full_trace.records:
        return output
    return _simulate_java(output.schedule, output.config, params, output.seed, firewalled=True)


_CPP_LEVELS = (CongestionFlag.NONE, CongestionFlag.D, CongestionFlag.E)


def _cpp_session_events(ts, te, params: CppSimParams, rng: random.Random) -> list:
    out = []  # (time, TruthKind, CongestionFlag)
    t_init = ts + params.initial_publish_delay
    if t_init > te:
        return out
    level = CongestionFlag.NONE
    out.append((t_init, TruthKind.INITIAL, level))
    last_pub = t_init

    graceful = rng.random() < params.graceful_prob
    shutdown_start = te - params.graceful_shutdown_window

    next_eval = ts + params.congestion_eval_period
    next_pt = ts + params.peer_test_period
    while True:
        next_forced = last_pub + params.forced_publish_gap
        t = min(next_eval, next_pt, next_forced)
        if t > te:
            break
        if t == next_eval:
            next_eval += params.congestion_eval_period
            if graceful and t >= shutdown_start:
                out.append((t, TruthKind.LEAVE, CongestionFlag.G))
                return out
            if rng.random() < params.congestion_change_prob:
                level = rng.choice([l for l in _CPP_LEVELS if l is not level])
                out.append((t, TruthKind.ROUTINE, level))
                last_pub = t
        elif t == next_pt:
            next_pt += params.peer_test_period
            out.append((t, TruthKind.PEER_TEST, level))
            last_pub = t
        else:
            out.append((t, TruthKind.OTHER, level))
            last_pub = t
    return out


def simulate_cpp(schedule: BehaviorSchedule, config: RouterConfig,
                 params: CppSimParams = CppSimParams(), seed: int = 0) -> SimOutput:
    """Simulate a C++-based router: congestion evaluations every 12 min
    publishing on flag change, peer tests every 71 min, forced publication
    after 30 silent minutes, and a G-flagged leave record when a congestion
    evaluation falls inside a graceful shutdown window."""
    if config.impl is not ImplementationKind.CPP:
        raise InvalidConfigError("simulate_cpp requires a CppI2P config")
    sessions = _ground_truth(schedule)
    reach = Reachability.R if config.reachable else Reachability.U
    addrs = build_addresses(config, ip_present=config.reachable)
    raw = []
    for i, s in enumerate(sessions):
        rng = random.Random(derive_seed(seed, "cpp", i))
        for t, kind, level in _cpp_session_events(s.start, s.end, params, rng):
            raw.append(
                RouterInfoRecord(
                    identity=config.identity,
                    publish_time=t,
                    floodfill_flag=config.floodfill,
                    congestion=level,
                    reachability=reach,
                    addresses=addrs,
                    truth_kind=kind,
                )
            )
    trace, gt = _assemble(config.identity, sessions, raw)
    return SimOutput(trace, gt, config=config, schedule=schedule, seed=seed)


def simulate_router(schedule: BehaviorSchedule, config: RouterConfig, seed: int,
                    java_params: JavaSimParams = JavaSimParams(),
                    cpp_params: CppSimParams = CppSimParams()) -> SimOutput:
    """Simulate whichever implementation the config declares, including the
    firewalled overlay for unreachable Java routers."""
    if config.impl is ImplementationKind.JAVA:
        out = simulate_java(schedule, config, java_params, seed)
        if not config.reachable:
            out = apply_firewalled_overlay(out, derive_seed(seed, "overlay"), java_params)
        return out
    return simulate_cpp(schedule, config, cpp_params, seed)
