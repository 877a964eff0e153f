"""Online-session reconstruction from observed RouterInfo traces.

The pipeline has three passes per implementation:

* coarse grouping - chain records whose spacing matches the routine
  publication signature (32-43 min update cadence for Java, 12-minute
  congestion-evaluation multiples for C++);
* leave identification - explicit pre-shutdown publications (floodfill flag
  removal / maximal congestion flag) are hard session boundaries;
* join identification - the startup publication signature re-anchors session
  starts, splitting or re-claiming records that coarse grouping misassigned.

Leave marks win over join re-segmentation; the join pass then re-anchors
within the resulting segments.  All passes are pure functions of the observed
records and never read ground-truth annotations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .model import (
    CongestionFlag,
    EndQuality,
    I2PLiveError,
    ImplementationKind,
    MINUTE_MS,
    OnlineSession,
    Protocol,
    Reachability,
    RouterTrace,
    SECOND_MS,
    StartQuality,
)


class InferenceError(I2PLiveError):
    pass


@dataclass(frozen=True)
class InferenceParams:
    java_routine_window: tuple = (32 * MINUTE_MS, 43 * MINUTE_MS)
    java_startup_window_a: tuple = (24 * MINUTE_MS, 32 * MINUTE_MS)  # 3 update intervals
    java_startup_window_b: tuple = (17 * MINUTE_MS, 23 * MINUTE_MS)  # 90 s + 2 intervals
    cpp_period: int = 12 * MINUTE_MS
    cpp_initial_offset: int = 500
    cpp_tolerance: int = 2 * SECOND_MS
    # The -0.5 s startup signature needs sub-half-offset precision; the coarse
    # tolerance above may absorb it when chaining, which is harmless.
    cpp_initial_offset_tolerance: int = 200
    cpp_trailing_window: int = 30 * MINUTE_MS + 2 * SECOND_MS  # forced-publish bound
    peer_test_period: int = 71 * MINUTE_MS
    min_republish_delay: int = 9 * MINUTE_MS


@dataclass(frozen=True)
class SessionInference:
    sessions: tuple = ()
    routine_marks: tuple = ()
    diagnostics: tuple = ()


def identify_implementation(trace: RouterTrace) -> ImplementationKind:
    """Classify a router's software from RouterAddress cost semantics.

    NTCP2 cost 3 or a bare SSU2 cost-8 address means C++; NTCP2 cost 10-12 or
    SSU/SSU2 cost 4-8 (alongside other addresses) means Java.  Conflicting
    records are resolved by majority.
    """
    votes = []
    for rec in trace.records:
        if not rec.addresses:
            continue
        vote = None
        protos = {a.protocol for a in rec.addresses}
        for addr in rec.addresses:
            if addr.protocol is Protocol.NTCP2:
                if addr.cost == 3:
                    vote = ImplementationKind.CPP
                elif 10 <= addr.cost <= 12:
                    vote = ImplementationKind.JAVA
                break
        if vote is None:
            for addr in rec.addresses:
                if addr.protocol in (Protocol.SSU, Protocol.SSU2):
                    if addr.cost == 8 and Protocol.SSU not in protos and len(protos) == 1:
                        vote = ImplementationKind.CPP
                    elif 4 <= addr.cost <= 8:
                        vote = ImplementationKind.JAVA
                    break
        if vote is not None:
            votes.append(vote)
    if not votes:
        raise InferenceError("implementation undeterminable: no address data")
    java = sum(1 for v in votes if v is ImplementationKind.JAVA)
    return ImplementationKind.JAVA if java * 2 >= len(votes) else ImplementationKind.CPP


def trace_has_firewalled_indicators(trace: RouterTrace) -> bool:
    """Null-IP addresses or introducer references mark a firewalled Java router."""
    for rec in trace.records:
        for addr in rec.addresses:
            if not addr.ip_present or addr.introducer_set_id:
                return True
    return False


def _intro_id(rec) -> int:
    return max((a.introducer_set_id for a in rec.addresses), default=0)


class _Seg:
    """Mutable working session: sorted member record indices, routine marks,
    and optional exact/supplemented boundary anchors."""

    __slots__ = ("members", "marks", "start_anchor", "start_q", "end_anchor", "end_q")

    def __init__(self, members, marks=()):
        self.members = sorted(members)
        self.marks = sorted(marks)
        self.start_anchor: Optional[int] = None
        self.start_q = StartQuality.COARSE_ONLY
        self.end_anchor: Optional[int] = None
        self.end_q = EndQuality.COARSE_ONLY


class _Work:
    """Shared state for the inference passes over one observed trace."""

    def __init__(self, trace: RouterTrace, params: InferenceParams,
                 impl: ImplementationKind, firewalled: bool):
        self.records = trace.records
        self.t = [r.publish_time for r in trace.records]
        self.params = params
        self.impl = impl
        self.firewalled = firewalled
        self.segs: list = []
        self.diags: list = []
        if impl is ImplementationKind.JAVA:
            self.trailing_hi = params.java_routine_window[1]
            seen_ff = False
            leaves = set()
            for i, rec in enumerate(self.records):
                if rec.floodfill_flag:
                    seen_ff = True
                elif seen_ff:
                    leaves.add(i)
            self.leaves = leaves
        else:
            self.trailing_hi = params.cpp_trailing_window
            self.leaves = {
                i for i, rec in enumerate(self.records)
                if rec.congestion is CongestionFlag.G
            }

    # -- bookkeeping ---------------------------------------------------

    def seg_of(self, idx: int) -> Optional[int]:
        for k, seg in enumerate(self.segs):
            if seg.members and seg.members[0] <= idx <= seg.members[-1] and idx in seg.members:
                return k
        return None

    def sort_segs(self) -> None:
        self.segs = [s for s in self.segs if s.members]
        self.segs.sort(key=lambda s: s.members[0])

    def claim(self, seg: _Seg, lo: int, hi: int) -> None:
        """Move every record index in [lo, hi) from other segs into `seg`,
        demoting any routine marks among them."""
        moved = []
        for other in self.segs:
            if other is seg:
                continue
            take = [m for m in other.members if lo <= m < hi]
            if take:
                other.members = [m for m in other.members if m not in take]
                other.marks = [m for m in other.marks if m not in take]
                moved.extend(take)
        if moved:
            seg.members = sorted(set(seg.members) | set(moved))
        self.sort_segs()

    def expel_before(self, seg: _Seg, cut: int) -> None:
        """Push a seg's members with index < cut out: into the previous seg
        when they chain within the trailing window, else into crumb segs."""
        early = [m for m in seg.members if m < cut]
        if not early:
            return
        seg.members = [m for m in seg.members if m >= cut]
        seg.marks = [m for m in seg.marks if m >= cut]
        pos = self.segs.index(seg)
        prev = self.segs[pos - 1] if pos > 0 else None
        crumbs = []
        for m in early:
            if prev is not None and prev.members and prev.end_q is not EndQuality.EXACT_LEAVE \
                    and self.t[m] - self.t[prev.members[-1]] <= self.trailing_hi:
                prev.members.append(m)
                prev.members.sort()
            elif crumbs and self.t[m] - self.t[crumbs[-1][-1]] <= self.trailing_hi:
                crumbs[-1].append(m)
            else:
                crumbs.append([m])
        for c in crumbs:
            self.segs.append(_Seg(c))
        self.sort_segs()

    # -- snapshots -------------------------------------------------------

    def snapshot(self) -> SessionInference:
        self.sort_segs()
        marks = [False] * len(self.records)
        sessions = []
        for seg in self.segs:
            for m in seg.marks:
                marks[m] = True
            start = seg.start_anchor if seg.start_anchor is not None else self.t[seg.members[0]]
            end = seg.end_anchor if seg.end_anchor is not None else self.t[seg.members[-1]]
            end = max(end, start)
            sessions.append(
                OnlineSession(
                    start=start,
                    end=end,
                    record_indices=tuple(seg.members),
                    start_quality=seg.start_q,
                    end_quality=seg.end_q,
                )
            )
        return SessionInference(tuple(sessions), tuple(marks), tuple(self.diags))

    @classmethod
    def from_inference(cls, trace, inference: SessionInference, params,
                       impl, firewalled) -> "_Work":
        work = cls(trace, params, impl, firewalled)
        marks = inference.routine_marks or (False,) * len(trace.records)
        for sess in inference.sessions:
            seg = _Seg(sess.record_indices,
                       [i for i in sess.record_indices if marks[i]])
            if sess.start_quality is not StartQuality.COARSE_ONLY:
                seg.start_anchor, seg.start_q = sess.start, sess.start_quality
            if sess.end_quality is not EndQuality.COARSE_ONLY:
                seg.end_anchor, seg.end_q = sess.end, sess.end_quality
            work.segs.append(seg)
        work.diags = list(inference.diagnostics)
        work.sort_segs()
        return work


# ---------------------------------------------------------------------------
# Java passes
# ---------------------------------------------------------------------------


def _java_relax(work: _Work, n_between: int) -> int:
    if not work.firewalled:
        return 0
    return n_between * work.params.min_republish_delay


def _java_eligible(work: _Work) -> list:
    if not work.firewalled:
        return [True] * len(work.records)
    out = [False] * len(work.records)
    for i in range(1, len(work.records)):
        out[i] = _intro_id(work.records[i]) == _intro_id(work.records[i - 1])
    return out


def _java_chains(work: _Work) -> list:
    lo, hi = work.params.java_routine_window
    t = work.t
    n = len(t)
    eligible = _java_eligible(work)

    def next_mark(cur: int) -> Optional[int]:
        for cand in range(cur + 1, n):
            gap = t[cand] - t[cur]
            hi_eff = hi + _java_relax(work, cand - cur - 1)
            if gap > hi_eff + _java_relax(work, 1):
                # even one more interposed publication cannot stretch this far
                return None
            if eligible[cand] and lo <= gap <= hi_eff:
                return cand
        return None

    chains = []
    i = 0
    while i < n - 1:
        start = None
        for p in range(i, n - 1):
            if not eligible[p] and work.firewalled:
                continue
            q = next_mark(p)
            if q is not None:
                start = (p, q)
                break
        if start is None:
            break
        p, cur = start
        chain = [p, cur]
        while True:
            nxt = next_mark(cur)
            if nxt is None:
                break
            chain.append(nxt)
            cur = nxt
        chains.append(chain)
        i = cur + 1
    return chains


def _crumb_segs(work: _Work, indices: list) -> list:
    segs = []
    for idx in indices:
        if segs and work.t[idx] - work.t[segs[-1].members[-1]] <= work.trailing_hi:
            segs[-1].members.append(idx)
        else:
            segs.append(_Seg([idx]))
    return segs


def _assign_members(work: _Work, chains: list) -> None:
    """Build working sessions from chains: spanned records join the chain,
    trailing records stick within the routine interval, remaining records
    lead the following chain or form crumb sessions."""
    n = len(work.records)
    if not chains:
        work.segs = _crumb_segs(work, list(range(n)))
        work.sort_segs()
        return
    segs = []
    cursor = 0
    for k, chain in enumerate(chains):
        seg = _Seg([], chain)
        next_first = chains[k + 1][0] if k + 1 < len(chains) else n
        # trailing tail of the previous seg
        if segs:
            prev = segs[-1]
            while cursor < chain[0]:
                ref = prev.members[-1]
                if work.t[cursor] - work.t[ref] <= work.trailing_hi + _java_relax(work, 0):
                    prev.members.append(cursor)
                    cursor += 1
                else:
                    break
        lead = list(range(cursor, chain[0]))
        span = list(range(chain[0], chain[-1] + 1))
        seg.members = lead + span
        segs.append(seg)
        cursor = chain[-1] + 1
    # tail after the last chain
    prev = segs[-1]
    while cursor < n and work.t[cursor] - work.t[prev.members[-1]] <= work.trailing_hi:
        prev.members.append(cursor)
        cursor += 1
    segs.extend(_crumb_segs(work, list(range(cursor, n))))
    work.segs = segs
    work.sort_segs()


def _leave_pass(work: _Work) -> None:
    """Exact-leave marks are hard boundaries: they end their session, spill
    later records forward, and a leave that heads a session folds back into
    the previous one."""
    for leave in sorted(work.leaves):
        k = work.seg_of(leave)
        if k is None:
            continue
        seg = work.segs[k]
        later = [m for m in seg.members if m > leave]
        if later:
            seg.members = [m for m in seg.members if m <= leave]
            new = _Seg(later, [m for m in seg.marks if m > leave])
            seg.marks = [m for m in seg.marks if m <= leave]
            new.end_anchor, new.end_q = seg.end_anchor, seg.end_q
            work.segs.insert(k + 1, new)
            work.diags.append(f"leave-split@{work.t[leave]}")
        seg.end_anchor = work.t[leave]
        seg.end_q = EndQuality.EXACT_LEAVE
        # a leave record stranded at the head of a session belongs to the
        # previous one when it sits within a routine interval of its tail
        if seg.members[0] == leave and k > 0:
            prev = work.segs[k - 1]
            if (prev.end_q is not EndQuality.EXACT_LEAVE and prev.members
                    and work.t[leave] - work.t[prev.members[-1]] <= work.trailing_hi):
                seg.members.remove(leave)
                if leave in seg.marks:
                    seg.marks.remove(leave)
                prev.members.append(leave)
                prev.members.sort()
                prev.end_anchor = work.t[leave]
                prev.end_q = EndQuality.EXACT_LEAVE
                seg.end_anchor, seg.end_q = None, EndQuality.COARSE_ONLY
                if later:
                    # the split end-anchor moved with `new`; nothing to restore
                    pass
                work.diags.append(f"leave-absorb@{work.t[leave]}")
        work.sort_segs()


def _java_join_candidate(work: _Work, mark: int, lo_bound_idx: int,
                         hi_idx: int, exclude_marks: set) -> Optional[int]:
    """Latest record before `mark` whose gap matches a startup window."""
    p = work.params
    (a_lo, a_hi), (b_lo, b_hi) = p.java_startup_window_a, p.java_startup_window_b
    for i in range(hi_idx - 1, lo_bound_idx, -1):
        if i in exclude_marks or i in work.leaves:
            continue
        if work.firewalled and work.records[i].reachability is not Reachability.UNDETERMINED:
            continue
        gap = work.t[mark] - work.t[i]
        relax = _java_relax(work, mark - i - 1)
        if gap > a_hi + relax + _java_relax(work, 1) and gap > b_hi + relax + _java_relax(work, 1):
            break
        if a_lo <= gap <= a_hi + relax or b_lo <= gap <= b_hi + relax:
            return i
    return None


def _join_pass_java(work: _Work) -> None:
    work.sort_segs()
    k = 0
    while k < len(work.segs):
        seg = work.segs[k]
        if not seg.marks:
            k += 1
            continue
        first_mark = seg.marks[0]
        # hard lower boundary: previous exact leave, if any
        lo_idx = -1
        for prev in work.segs[:k]:
            if prev.end_q is EndQuality.EXACT_LEAVE and prev.members:
                lo_idx = max(lo_idx, prev.members[-1])
        cand = _java_join_candidate(work, first_mark, lo_idx, first_mark, set(seg.marks))
        if cand is not None and work.t[cand] != seg.start_anchor:
            work.claim(seg, cand, first_mark)
            work.expel_before(seg, cand)
            seg.start_anchor = work.t[cand]
            seg.start_q = StartQuality.EXACT_JOIN
            work.diags.append(f"join-reanchor@{work.t[cand]}")
            work.sort_segs()
            k = work.segs.index(seg)
        elif cand is not None:
            seg.start_q = StartQuality.EXACT_JOIN
        # interior marks: a startup-shaped gap inside a session splits it
        for mark in list(seg.marks[1:]):
            prev_mark = max(m for m in seg.marks if m < mark)
            cand = _java_join_candidate(work, mark, prev_mark, mark, set(seg.marks))
            if cand is None:
                continue
            later = [m for m in seg.members if m >= cand]
            new = _Seg(later, [m for m in seg.marks if m >= mark])
            new.start_anchor = work.t[cand]
            new.start_q = StartQuality.EXACT_JOIN
            new.end_anchor, new.end_q = seg.end_anchor, seg.end_q
            seg.members = [m for m in seg.members if m < cand]
            seg.marks = [m for m in seg.marks if m < mark]
            seg.end_anchor, seg.end_q = None, EndQuality.COARSE_ONLY
            work.segs.insert(work.segs.index(seg) + 1, new)
            work.diags.append(f"join-split@{work.t[cand]}")
            break
        k += 1
    work.sort_segs()


def infer_sessions_java_coarse(trace: RouterTrace,
                               params: InferenceParams = InferenceParams(),
                               firewalled: Optional[bool] = None) -> SessionInference:
    """Coarse grouping by the 32-43 min routine cadence alone."""
    if firewalled is None:
        firewalled = trace_has_firewalled_indicators(trace)
    work = _Work(trace, params, ImplementationKind.JAVA, firewalled)
    if not trace.records:
        return work.snapshot()
    _assign_members(work, _java_chains(work))
    return work.snapshot()


def identify_leave_java(inference: SessionInference, trace: RouterTrace,
                        params: InferenceParams = InferenceParams()) -> SessionInference:
    """Floodfill-flag removal after floodfill history marks the leave time."""
    firewalled = trace_has_firewalled_indicators(trace)
    work = _Work.from_inference(trace, inference, params, ImplementationKind.JAVA, firewalled)
    _leave_pass(work)
    return work.snapshot()


def identify_join_java(inference: SessionInference, trace: RouterTrace,
                       params: InferenceParams = InferenceParams()) -> SessionInference:
    """Anchor session starts on the two-branch startup interval signature."""
    firewalled = trace_has_firewalled_indicators(trace)
    work = _Work.from_inference(trace, inference, params, ImplementationKind.JAVA, firewalled)
    _join_pass_java(work)
    return work.snapshot()


def identify_routine_firewalled_java(trace: RouterTrace,
                                     params: InferenceParams = InferenceParams()) -> SessionInference:
    """Full Java pipeline with firewalled-router handling: only records whose
    introducer set matches their predecessor count as routine, interval
    windows stretch by the republish delay per interposed publication, and
    join candidates must lack both reachability flags."""
    if not trace_has_firewalled_indicators(trace):
        return infer_trace_java(trace, params)
    coarse = infer_sessions_java_coarse(trace, params, firewalled=True)
    step = identify_leave_java(coarse, trace, params)
    return identify_join_java(step, trace, params)


def infer_trace_java(trace: RouterTrace,
                     params: InferenceParams = InferenceParams()) -> SessionInference:
    coarse = infer_sessions_java_coarse(trace, params)
    step = identify_leave_java(coarse, trace, params)
    return identify_join_java(step, trace, params)


# ---------------------------------------------------------------------------
# C++ passes
# ---------------------------------------------------------------------------


def _centered_mod(value: int, period: int) -> int:
    r = value % period
    return r - period if r > period // 2 else r


def _cpp_candidates(work: _Work) -> list:
    out = []
    for i in range(1, len(work.records)):
        if work.records[i].congestion is not work.records[i - 1].congestion:
            out.append(i)
    return out


def _cpp_chains(work: _Work) -> list:
    p = work.params
    chains = []
    for c in _cpp_candidates(work):
        if chains:
            gap = work.t[c] - work.t[chains[-1][-1]]
            if abs(_centered_mod(gap, p.cpp_period)) <= p.cpp_tolerance:
                chains[-1].append(c)
                continue
        chains.append([c])
    return chains


def _cpp_connected(work: _Work, lo: int, hi: int) -> bool:
    """Forced publication bounds in-session silence to 30 min: records from
    lo..hi belong to one session only if no consecutive gap exceeds it."""
    for i in range(lo, hi):
        if work.t[i + 1] - work.t[i] > work.params.cpp_trailing_window:
            return False
    return True


def _cpp_join_pass(work: _Work) -> None:
    p = work.params
    for seg in list(work.segs):
        if not seg.marks or seg.start_q is not StartQuality.COARSE_ONLY:
            continue
        first_mark = seg.marks[0]
        lo_idx = -1
        for prev in work.segs:
            if prev.members and prev.members[-1] < first_mark \
                    and prev.end_q is EndQuality.EXACT_LEAVE:
                lo_idx = max(lo_idx, prev.members[-1])
        # earliest chain-connected record matching the 12n - 0.5 s signature
        # (forced republishes inherit the phase, so later matches are echoes)
        cand = None
        for i in range(first_mark - 1, lo_idx, -1):
            if i in work.leaves:
                continue
            if not _cpp_connected(work, i, first_mark):
                break
            gap = work.t[first_mark] - work.t[i]
            if abs(_centered_mod(gap + p.cpp_initial_offset, p.cpp_period)) \
                    <= p.cpp_initial_offset_tolerance:
                cand = i
        if cand is not None:
            work.claim(seg, cand, first_mark)
            work.expel_before(seg, cand)
            seg.start_anchor = work.t[cand]
            seg.start_q = StartQuality.EXACT_JOIN
            work.diags.append(f"join-reanchor@{work.t[cand]}")
            continue
        if len(seg.marks) >= 2:
            m1, m2 = seg.marks[0], seg.marks[1]
            gap = work.t[m2] - work.t[m1]
            if abs(_centered_mod(gap + p.cpp_initial_offset, p.cpp_period)) \
                    <= p.cpp_initial_offset_tolerance:
                # the first "routine" is the initial publication itself
                seg.marks.remove(m1)
                seg.start_anchor = work.t[m1]
                seg.start_q = StartQuality.EXACT_JOIN
                work.diags.append(f"cpp-initial-mark@{work.t[m1]}")
    work.sort_segs()


def infer_sessions_cpp(trace: RouterTrace,
                       params: InferenceParams = InferenceParams()) -> SessionInference:
    """Coarse grouping by congestion-flag changes on the 12-minute grid."""
    work = _Work(trace, params, ImplementationKind.CPP, firewalled=False)
    if not trace.records:
        return work.snapshot()
    _assign_members(work, _cpp_chains(work))
    return work.snapshot()


def identify_leave_cpp(inference: SessionInference, trace: RouterTrace,
                       params: InferenceParams = InferenceParams()) -> SessionInference:
    """A maximal-congestion (G) record ends its session; later records open
    the next one."""
    work = _Work.from_inference(trace, inference, params, ImplementationKind.CPP, False)
    _leave_pass(work)
    return work.snapshot()


def identify_join_cpp(inference: SessionInference, trace: RouterTrace,
                      params: InferenceParams = InferenceParams()) -> SessionInference:
    """Anchor session starts on the 12 min x n - 0.5 s startup signature."""
    work = _Work.from_inference(trace, inference, params, ImplementationKind.CPP, False)
    _cpp_join_pass(work)
    return work.snapshot()


def infer_trace_cpp(trace: RouterTrace,
                    params: InferenceParams = InferenceParams()) -> SessionInference:
    coarse = infer_sessions_cpp(trace, params)
    step = identify_leave_cpp(coarse, trace, params)
    return identify_join_cpp(step, trace, params)


def infer_trace(trace: RouterTrace,
                params: InferenceParams = InferenceParams(),
                impl: Optional[ImplementationKind] = None) -> SessionInference:
    """Full fine-grained inference: implementation identification, coarse
    grouping, leave-first re-segmentation, then join anchoring."""
    if impl is None:
        impl = identify_implementation(trace)
    if impl is ImplementationKind.CPP:
        return infer_trace_cpp(trace, params)
    if trace_has_firewalled_indicators(trace):
        return identify_routine_firewalled_java(trace, params)
    return infer_trace_java(trace, params)
