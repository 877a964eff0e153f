"""Attacker-side collection model: routing keys and lossy trace capture.

Record loss is i.i.d. per record (the churn-induced loss of a small floodfill
deployment, summarized by its capture rate); an optional burst mode drops
geometric runs to stress session concatenation.  Captured traces are stripped
of ground-truth annotations.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field, replace
from typing import Optional

from .model import I2PLiveError, RouterTrace
from .simulator import SimOutput, derive_seed


class CaptureError(I2PLiveError):
    pass


@dataclass(frozen=True)
class RoutingKey:
    key_bytes: bytes


def compute_routing_key(identifier: bytes, date: str) -> RoutingKey:
    """SHA-256(SHA-256(identifier) || date) with an 8-character UTC day string.

    The key changes when the UTC day changes, which is what forces routers to
    re-select their target floodfill daily.
    """
    if len(identifier) != 32:
        raise CaptureError(f"identifier must be 32 bytes, got {len(identifier)}")
    if len(date) != 8 or not date.isdigit():
        raise CaptureError(f"date must be an 8-digit day string, got {date!r}")
    inner = hashlib.sha256(identifier).digest()
    return RoutingKey(hashlib.sha256(inner + date.encode("ascii")).digest())


@dataclass(frozen=True)
class CaptureModel:
    """Either a fixed per-record retention probability or a curve mapping the
    number of controlled floodfill routers to a capture rate (15 -> 0.90)."""

    mode: str = "fixed"           # "fixed" | "floodfill_curve"
    p: float = 1.0
    table: dict = field(default_factory=lambda: {13: 0.88, 15: 0.90, 18: 0.91})
    ff_count: int = 15
    burst_drop_prob: float = 0.0  # per-record chance to start a geometric drop run
    burst_continue_prob: float = 0.5

    def rate(self) -> float:
        if self.mode == "fixed":
            return self.p
        return capture_rate_for(self.ff_count, self)


def capture_rate_for(ff_count: int, model: CaptureModel) -> float:
    """Capture rate for a floodfill deployment size: table lookup with linear
    interpolation, clamped at the table edges."""
    if not model.table:
        raise CaptureError("floodfill curve table is empty")
    keys = sorted(model.table)
    if ff_count <= keys[0]:
        return model.table[keys[0]]
    if ff_count >= keys[-1]:
        return model.table[keys[-1]]
    for lo, hi in zip(keys, keys[1:]):
        if lo <= ff_count <= hi:
            frac = (ff_count - lo) / (hi - lo)
            return model.table[lo] + frac * (model.table[hi] - model.table[lo])
    raise CaptureError("unreachable")


def capture(output: SimOutput, model: CaptureModel, seed: int = 0) -> RouterTrace:
    """Lossy observation of a simulated trace.

    Each record is retained independently with the model's rate; order is
    preserved and every retained record loses its truth annotation.
    """
    p = model.rate()
    if not 0.0 <= p <= 1.0:
        raise CaptureError(f"capture rate must be in [0,1], got {p}")
    rng = random.Random(derive_seed(seed, "capture", output.config.identity.label if output.config else ""))
    kept = []
    burst_left = 0
    for rec in output.full_trace.records:
        if burst_left > 0:
            burst_left -= 1
            continue
        drop = rng.random() >= p
        if model.burst_drop_prob and rng.random() < model.burst_drop_prob:
            drop = True
            while rng.random() < model.burst_continue_prob:
                burst_left += 1
        if not drop:
            kept.append(replace(rec, truth_kind=None))
    return RouterTrace(output.full_trace.identity, tuple(kept))
