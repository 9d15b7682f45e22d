"""SoC-spoofing generators applied to ΔSoC test data, with ground-truth labels."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CapacityError, ParseError, PlanError
from .telemetry import FLOAT_FMT, DeltaSocSeries, PortId

DECIMAL_SHIFT_LIMIT = 0.009
RANDOM_LIMIT = 0.01
DEFAULT_LENGTH = 10
DEFAULT_GUARD = 5

CLEAN = "clean"
LABELS = (CLEAN, "DecimalShift", "IncrementalArray", "Random")


@dataclass(frozen=True)
class DecimalShift:
    offset: float
    name = "DecimalShift"

    def __post_init__(self):
        if not -DECIMAL_SHIFT_LIMIT <= self.offset <= DECIMAL_SHIFT_LIMIT:
            raise PlanError(f"decimal shift offset {self.offset} outside ±{DECIMAL_SHIFT_LIMIT}")

    @property
    def params(self):
        return self.offset, None


@dataclass(frozen=True)
class IncrementalArray:
    start: float
    step: float
    name = "IncrementalArray"

    def __post_init__(self):
        if self.step == 0:
            raise PlanError("incremental step must be non-zero")

    @property
    def params(self):
        return self.start, self.step


@dataclass(frozen=True)
class Random:
    lo: float = -RANDOM_LIMIT
    hi: float = RANDOM_LIMIT
    name = "Random"

    def __post_init__(self):
        if not -RANDOM_LIMIT <= self.lo < self.hi <= RANDOM_LIMIT:
            raise PlanError(f"random range [{self.lo}, {self.hi}] must lie inside ±{RANDOM_LIMIT}")

    @property
    def params(self):
        return self.lo, self.hi


SpoofKind = Union[DecimalShift, IncrementalArray, Random]
KINDS = {k.name: k for k in (DecimalShift, IncrementalArray, Random)}


@dataclass(frozen=True)
class SpoofEvent:
    port: PortId
    start_index: int
    kind: SpoofKind
    length: int = DEFAULT_LENGTH
    seed: Optional[int] = None

    def __post_init__(self):
        if self.length < 2:
            raise PlanError("spoof windows need at least 2 samples")
        if self.start_index < 0:
            raise PlanError("negative window start")
        if isinstance(self.kind, Random) and self.seed is None:
            raise PlanError("random spoofing needs a seed")

    @property
    def stop(self) -> int:
        return self.start_index + self.length


@dataclass(frozen=True)
class SpoofPlan:
    events: Tuple[SpoofEvent, ...]
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        by_port: Dict[PortId, List[SpoofEvent]] = {}
        for ev in self.events:
            by_port.setdefault(ev.port, []).append(ev)
        for port, evs in by_port.items():
            evs.sort(key=lambda e: e.start_index)
            for a, b in zip(evs, evs[1:]):
                if b.start_index < a.stop:
                    raise PlanError(f"events overlap on {port.value} at index {b.start_index}")

    def for_port(self, port: PortId) -> List[SpoofEvent]:
        port = PortId.parse(port)
        return sorted((e for e in self.events if e.port is port), key=lambda e: e.start_index)


def _forbidden(mask: np.ndarray, guard: int) -> np.ndarray:
    """Indices closer than ``guard`` samples to a transition."""
    hits = np.flatnonzero(mask)
    bad = np.zeros(len(mask), dtype=bool)
    for off in range(-(guard - 1), guard):
        idx = hits + off
        bad[idx[(idx >= 0) & (idx < len(mask))]] = True
    return bad


def eligible_starts(delta: DeltaSocSeries, length: int, guard: int) -> np.ndarray:
    n = len(delta)
    if length > n:
        return np.zeros(0, dtype=np.int64)
    bad = _forbidden(np.asarray(delta.transition_mask, dtype=bool), guard).astype(np.int64)
    csum = np.concatenate([[0], np.cumsum(bad)])
    starts = np.arange(n - length + 1)
    return starts[csum[starts + length] - csum[starts] == 0]


def _greedy_pack(starts: np.ndarray, length: int) -> List[int]:
    out, free_from = [], -1
    for s in starts:
        if s >= free_from:
            out.append(int(s))
            free_from = s + length
    return out


def select_windows(
    delta: DeltaSocSeries, count: int, length: int = DEFAULT_LENGTH, guard: int = DEFAULT_GUARD, seed: int = 0
) -> List[Tuple[int, int]]:
    """Draw ``count`` disjoint windows uniformly among starts clear of transitions.

    Every index of a chosen window is at least ``guard`` samples from any
    transition. Returned sorted by start.
    """
    if guard < 1:
        raise PlanError("guard must be at least 1 sample")
    if length < 2:
        raise PlanError("window length must be at least 2")
    starts = eligible_starts(delta, length, guard)
    packed = _greedy_pack(starts, length)
    if count > len(packed):
        raise CapacityError(
            f"only {len(packed)} disjoint windows of length {length} fit; {count} requested",
            len(packed),
        )
    rng = np.random.default_rng(seed)
    free = np.zeros(len(delta), dtype=bool)
    free[starts] = True
    chosen = []
    while len(chosen) < count:
        cand = np.flatnonzero(free)
        if len(cand) == 0:
            break
        s = int(cand[rng.integers(len(cand))])
        chosen.append(s)
        free[max(0, s - length + 1): s + length] = False
    if len(chosen) < count:
        # random placement fragmented the series; fall back to a random subset of the tight packing
        chosen = rng.choice(packed, size=count, replace=False).tolist()
    return [(s, length) for s in sorted(chosen)]


def spoof_values(kind: SpoofKind, original: np.ndarray, seed: Optional[int] = None) -> np.ndarray:
    n = len(original)
    if isinstance(kind, DecimalShift):
        return original + kind.offset
    if isinstance(kind, IncrementalArray):
        return kind.start + kind.step * np.arange(n)
    if isinstance(kind, Random):
        return np.random.default_rng(seed).uniform(kind.lo, kind.hi, n)
    raise PlanError(f"unknown spoof kind {kind!r}")


def inject(delta: DeltaSocSeries, plan: SpoofPlan) -> Tuple[DeltaSocSeries, np.ndarray]:
    """Apply the plan's events for ``delta.port``.

    Returns the spoofed series and an integer label per sample indexing
    :data:`LABELS` (0 = clean).
    """
    values = np.array(delta.values, dtype=float, copy=True)
    labels = np.zeros(len(values), dtype=np.int8)
    for ev in plan.for_port(delta.port):
        if ev.stop > len(values):
            raise PlanError(f"window [{ev.start_index}, {ev.stop}) exceeds series length {len(values)}")
        if np.any(delta.transition_mask[ev.start_index:ev.stop]):
            raise PlanError(f"window at {ev.start_index} covers an arrival/departure transition")
        sl = slice(ev.start_index, ev.stop)
        values[sl] = spoof_values(ev.kind, values[sl], ev.seed)
        labels[sl] = LABELS.index(ev.kind.name)
    return delta.replace_values(values), labels


def labels_for(plan: SpoofPlan, port: PortId, n: int) -> np.ndarray:
    labels = np.zeros(n, dtype=np.int8)
    for ev in plan.for_port(port):
        labels[ev.start_index:ev.stop] = LABELS.index(ev.kind.name)
    return labels


PLAN_COLUMNS = ["port", "start_index", "length", "kind", "param1", "param2", "seed"]


def _fmt(v) -> str:
    return "" if v is None else FLOAT_FMT % v


def dumps_plan(plan: SpoofPlan) -> str:
    buf = io.StringIO()
    buf.write(",".join(PLAN_COLUMNS) + "\n")
    for ev in plan.events:
        p1, p2 = ev.kind.params
        seed = "" if ev.seed is None else str(ev.seed)
        buf.write(f"{ev.port.value},{ev.start_index},{ev.length},{ev.kind.name},{_fmt(p1)},{_fmt(p2)},{seed}\n")
    return buf.getvalue()


def write_plan(plan: SpoofPlan, path) -> None:
    Path(path).write_text(dumps_plan(plan), encoding="ascii", newline="\n")


def read_plan(path, source: str = "") -> SpoofPlan:
    events = []
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != PLAN_COLUMNS:
            raise ParseError(f"expected header {PLAN_COLUMNS}", 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                port, start, length, kind, p1, p2, seed = row
                cls = KINDS[kind]
                args = [float(p1)] + ([] if cls is DecimalShift else [float(p2)])
                events.append(SpoofEvent(PortId.parse(port), int(start), cls(*args), int(length),
                                         int(seed) if seed else None))
            except (ValueError, KeyError, PlanError) as exc:
                raise ParseError(f"bad plan row: {exc}", lineno) from None
    return SpoofPlan(tuple(events), source)


def draw_kind(kind_name: str, rng: np.random.Generator, clean_value: float = 0.0) -> SpoofKind:
    """Sample attack parameters in the ranges used by the default scenario.

    Decimal shifts take |offset| in [0.004, 0.009] with a random sign. The
    incremental ramp starts a little above the value it replaces and climbs
    with a step in [0.005, 0.01], i.e. the EV appears to charge ever faster.
    """
    if kind_name == "DecimalShift":
        return DecimalShift(float(rng.choice([-1.0, 1.0]) * rng.uniform(0.004, DECIMAL_SHIFT_LIMIT)))
    if kind_name == "IncrementalArray":
        return IncrementalArray(float(clean_value + rng.uniform(0.001, 0.01)), float(rng.uniform(0.005, 0.01)))
    if kind_name == "Random":
        return Random(-RANDOM_LIMIT, RANDOM_LIMIT)
    raise PlanError(f"unknown spoof kind {kind_name!r}")


def build_plan(
    deltas: Sequence[DeltaSocSeries],
    per_kind: int,
    kinds: Sequence[str] = ("DecimalShift", "IncrementalArray", "Random"),
    length: int = DEFAULT_LENGTH,
    guard: int = DEFAULT_GUARD,
    seed: int = 0,
    source: str = "",
) -> SpoofPlan:
    """Scatter ``per_kind`` windows of each kind over every given port."""
    events = []
    for delta in deltas:
        n_windows = per_kind * len(kinds)
        rng = np.random.default_rng([seed, delta.port.index])
        windows = select_windows(delta, n_windows, length, guard, int(rng.integers(2**31)))
        order = rng.permutation(n_windows)
        for slot, (start, ln) in zip(order, windows):
            name = kinds[slot % len(kinds)]
            kind = draw_kind(name, rng, float(delta.values[start]))
            ev_seed = int(rng.integers(2**31)) if name == "Random" else None
            events.append(SpoofEvent(delta.port, start, kind, ln, ev_seed))
    return SpoofPlan(tuple(events), source)
