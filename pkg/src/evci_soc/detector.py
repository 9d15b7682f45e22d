"""Windowed residual-threshold anomaly detection and spoof classification."""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from ._accel import USE_NUMBA, maybe_njit
from .errors import CalibrationError, ConfigError, ParseError, ShapeError
from .injector import SpoofEvent
from .telemetry import DeltaSocSeries, PortId

CLASSES = ("DecimalShift", "Incremental", "Random")
MISSED = "Missed"
# injector kind name -> verdict class
KIND_TO_CLASS = {"DecimalShift": "DecimalShift", "IncrementalArray": "Incremental", "Random": "Random"}
THRESHOLD_FLOOR = 1e-6
SIGMA_MULTIPLIER = 6.0
QUANTILE = 1 - 1e-4


@dataclass(frozen=True)
class DetectorConfig:
    threshold: float
    max_iter: int = 10
    eps_eq: float = 1e-4
    eps_prog: float = 1e-4

    def __post_init__(self):
        if not self.threshold > 0:
            raise ConfigError("threshold must be positive")
        if self.max_iter < 2:
            raise ConfigError("window length max_iter must be at least 2")
        if not (self.eps_eq > 0 and self.eps_prog > 0):
            raise ConfigError("tolerances must be positive")


@dataclass(frozen=True, eq=False)
class ResidualSeries:
    port: PortId
    values: np.ndarray

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class Verdict:
    start_index: int
    length: int
    cls: str
    port: Optional[PortId] = None

    @property
    def stop(self) -> int:
        return self.start_index + self.length


def compute_residuals(actual, predicted) -> ResidualSeries:
    port = actual.port if isinstance(actual, DeltaSocSeries) else None
    a = np.asarray(actual.values if isinstance(actual, DeltaSocSeries) else actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape:
        raise ShapeError(f"length mismatch: actual {a.shape} vs predicted {p.shape}")
    return ResidualSeries(port, np.abs(a - p))


@maybe_njit
def _scan_loop(dm, mask, threshold, width):
    n = dm.shape[0]
    starts = np.empty(n // width + 1, dtype=np.int64)
    found = 0
    i = 0
    while i + width <= n:
        if mask[i] or dm[i] < threshold:
            i += 1
            continue
        ok = True
        for j in range(1, width):
            if mask[i + j] or dm[i + j] < threshold:
                # no window can start before the failing sample
                i = i + j + 1
                ok = False
                break
        if ok:
            starts[found] = i
            found += 1
            i += width
    return starts[:found]


def _scan_runs(dm, mask, threshold, width):
    """Vectorized equivalent of the left-to-right scan.

    A greedy scan over a run of r consecutive qualifying samples confirms
    ``r // width`` back-to-back windows from the run start.
    """
    hot = (dm >= threshold) & ~mask
    if not hot.any():
        return np.zeros(0, dtype=np.int64)
    edges = np.diff(np.concatenate([[0], hot.view(np.int8), [0]]))
    run_start = np.flatnonzero(edges == 1)
    run_len = np.flatnonzero(edges == -1) - run_start
    reps = run_len // width
    keep = reps > 0
    run_start, reps = run_start[keep], reps[keep]
    offsets = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
    return (np.repeat(run_start, reps) + offsets * width).astype(np.int64)


def scan_windows(dm: np.ndarray, mask: np.ndarray, threshold: float, width: int) -> np.ndarray:
    dm = np.ascontiguousarray(dm, dtype=np.float64)
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if USE_NUMBA:
        return _scan_loop(dm, mask, float(threshold), int(width))
    return _scan_runs(dm, mask, float(threshold), int(width))


def classify(window, cfg: DetectorConfig) -> str:
    """Decimal shift if the residual stays flat, incremental if it ramps
    linearly, random otherwise; tested in that order."""
    w = np.asarray(window, dtype=float)
    if len(w) < cfg.max_iter:
        raise ShapeError(f"window of {len(w)} samples is shorter than max_iter={cfg.max_iter}")
    if np.max(np.abs(w - w[0])) <= cfg.eps_eq:
        return "DecimalShift"
    diffs = np.diff(w)
    if np.max(np.abs(diffs - diffs[0])) <= cfg.eps_prog:
        return "Incremental"
    return "Random"


def detect(residuals: ResidualSeries, cfg: DetectorConfig, mask=None) -> List[Verdict]:
    dm = residuals.values
    mask = np.zeros(len(dm), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != dm.shape:
        raise ShapeError("transition mask must align with the residuals")
    starts = scan_windows(dm, mask, cfg.threshold, cfg.max_iter)
    w = cfg.max_iter
    return [Verdict(int(s), w, classify(dm[s:s + w], cfg), residuals.port) for s in starts]


def calibrate_threshold(clean_residuals, policy: str = "sigma", floor: float = THRESHOLD_FLOOR) -> float:
    """Threshold from spoof-free residuals (transition samples already removed).

    ``sigma``: mean + 6 standard deviations. ``quantile``: the 1 - 1e-4
    empirical quantile. Never below ``floor``.
    """
    r = np.asarray(getattr(clean_residuals, "values", clean_residuals), dtype=float)
    if r.size == 0:
        raise CalibrationError("no clean residuals to calibrate on")
    if policy == "sigma":
        value = r.mean() + SIGMA_MULTIPLIER * r.std()
    elif policy == "quantile":
        value = np.quantile(r, QUANTILE)
    else:
        raise CalibrationError(f"unknown calibration policy {policy!r}")
    return float(max(value, floor))


@dataclass(frozen=True, eq=False)
class DetectionReport:
    verdicts: List[Verdict]
    confusion: Dict[str, Dict[str, int]]  # true class -> predicted class (or Missed) -> count
    accuracy: Dict[str, Optional[float]]
    overall_accuracy: Optional[float]
    detection_rate: Optional[float]
    false_positive_windows: int
    false_positive_rate: float
    spurious_windows: int = 0  # verdicts in spoofed data overlapping no injected window

    def confusion_csv(self) -> str:
        cols = list(CLASSES) + [MISSED]
        buf = io.StringIO()
        buf.write("true_class," + ",".join(cols) + "\n")
        for true in CLASSES:
            buf.write(true + "," + ",".join(str(self.confusion[true][c]) for c in cols) + "\n")
        return buf.getvalue()

    def to_text(self) -> str:
        def pct(v):
            return "n/a" if v is None else f"{100 * v:.2f}%"

        lines = ["Detection report", "----------------"]
        for c in CLASSES:
            n = sum(self.confusion[c].values())
            lines.append(f"{c:<13} injected={n:<5d} correct={self.confusion[c][c]:<5d} accuracy={pct(self.accuracy[c])}")
        lines.append(f"overall accuracy   {pct(self.overall_accuracy)}")
        lines.append(f"detection rate     {pct(self.detection_rate)}")
        lines.append(f"clean-data false-positive windows {self.false_positive_windows} "
                     f"(rate {self.false_positive_rate:.3g} per candidate window)")
        lines.append(f"spurious verdicts in spoofed data {self.spurious_windows}")
        lines.append("An injected window counts as detected when any verdict overlaps it and as")
        lines.append("correct when the verdict with the largest overlap carries the injected class.")
        return "\n".join(lines) + "\n"


def _overlap(a0, a1, b0, b1):
    return max(0, min(a1, b1) - max(a0, b0))


def evaluate(
    verdicts: Sequence[Verdict],
    ground_truth: Sequence[SpoofEvent],
    clean_verdicts: Sequence[Verdict] = (),
    clean_samples: int = 0,
    window: int = 10,
) -> DetectionReport:
    """Per-window scoring of verdicts against the injected events.

    Verdicts and events are matched per port; a verdict without a port
    matches events on any port.
    """
    confusion = {c: {p: 0 for p in CLASSES + (MISSED,)} for c in CLASSES}
    used = set()
    for ev in ground_truth:
        true = KIND_TO_CLASS[ev.kind.name]
        best, best_ov = None, 0
        for k, v in enumerate(verdicts):
            if v.port is not None and v.port is not ev.port:
                continue
            ov = _overlap(v.start_index, v.stop, ev.start_index, ev.stop)
            if ov > best_ov:
                best, best_ov = k, ov
            if ov:
                used.add(k)
        confusion[true][MISSED if best is None else verdicts[best].cls] += 1
    accuracy = {}
    for c in CLASSES:
        n = sum(confusion[c].values())
        accuracy[c] = confusion[c][c] / n if n else None
    total = len(ground_truth)
    correct = sum(confusion[c][c] for c in CLASSES)
    detected = total - sum(confusion[c][MISSED] for c in CLASSES)
    fp = len(clean_verdicts)
    candidates = max(1, clean_samples // window)
    return DetectionReport(
        list(verdicts), confusion, accuracy,
        correct / total if total else None,
        detected / total if total else None,
        fp, fp / candidates,
        spurious_windows=len(verdicts) - len(used),
    )


VERDICT_COLUMNS = ["port", "start_index", "length", "class"]


def dumps_verdicts(verdicts: Sequence[Verdict]) -> str:
    buf = io.StringIO()
    buf.write(",".join(VERDICT_COLUMNS) + "\n")
    for v in verdicts:
        buf.write(f"{'' if v.port is None else v.port.value},{v.start_index},{v.length},{v.cls}\n")
    return buf.getvalue()


def loads_verdicts(text: str) -> List[Verdict]:
    lines = text.splitlines()
    if not lines or lines[0].split(",") != VERDICT_COLUMNS:
        raise ParseError(f"expected header {VERDICT_COLUMNS}", 1)
    out = []
    for lineno, ln in enumerate(lines[1:], start=2):
        if not ln.strip():
            continue
        cells = ln.split(",")
        try:
            port, start, length, cls = cells
            if cls not in CLASSES:
                raise ValueError(f"unknown class {cls!r}")
            out.append(Verdict(int(start), int(length), cls, PortId.parse(port) if port else None))
        except ValueError as exc:
            raise ParseError(f"bad verdict row: {exc}", lineno) from None
    return out
