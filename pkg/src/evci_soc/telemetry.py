"""Telemetry records, ΔSoC derivation, scaling, splitting and CSV persistence."""
from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from .errors import EmptyInputError, ParseError, RangeError, ShapeError

SECONDS_PER_DAY = 86400
TRAIN_SECONDS = 4 * SECONDS_PER_DAY
TEST_SECONDS = SECONDS_PER_DAY
FLOAT_FMT = "%.17g"


class PortId(str, enum.Enum):
    EV0_Terra53 = "EV0_Terra53"
    EV1_TerraHP_Cord_a = "EV1_TerraHP-Cord_a"
    EV1_TerraHP_Cord_b = "EV1_TerraHP-Cord_b"
    EV2_TerraHP_Cord_a = "EV2_TerraHP-Cord_a"
    EV2_TerraHP_Cord_b = "EV2_TerraHP-Cord_b"
    EV3_TerraHP = "EV3_TerraHP"

    @property
    def index(self) -> int:
        return PORTS.index(self)

    @property
    def board(self) -> int:
        """Charging board CB-k hosting this port."""
        return PORT_BOARD[self]

    @classmethod
    def parse(cls, text) -> "PortId":
        if isinstance(text, cls):
            return text
        try:
            return cls(text)
        except ValueError:
            pass
        for port in cls:
            if port.name == text:
                return port
        raise ValueError(f"unknown port {text!r}; expected one of {[p.value for p in cls]}")

    def __str__(self) -> str:
        return self.value


PORTS: Tuple[PortId, ...] = tuple(PortId)
PORT_BOARD: Dict[PortId, int] = {
    PortId.EV0_Terra53: 0,
    PortId.EV1_TerraHP_Cord_a: 1,
    PortId.EV1_TerraHP_Cord_b: 1,
    PortId.EV2_TerraHP_Cord_a: 2,
    PortId.EV2_TerraHP_Cord_b: 2,
    PortId.EV3_TerraHP: 3,
}
N_PORTS = len(PORTS)
N_BOARDS = 4

PORT_FIELDS = ("i", "p", "q", "cs", "soc")
# Measurement points reach the backend over different links: substation-side
# meters via IEC 61850 GOOSE, charger-side values via OCPP.
CHANNELS = {"i_pcc": "GOOSE", "i_bess": "GOOSE"}
CHANNELS.update({f"{f}_{p.value}": "OCPP" for p in PORTS for f in PORT_FIELDS})


def csv_columns() -> list:
    cols = ["t", "i_pcc", "i_bess"]
    for port in PORTS:
        cols.extend(f"{f}_{port.value}" for f in PORT_FIELDS)
    return cols


@dataclass(frozen=True)
class PortReading:
    i_ev: float
    p_ev: float
    q_ev: float
    cs: int
    soc_ev: float


@dataclass(frozen=True)
class TelemetryRecord:
    timestamp: int
    i_pcc: float
    i_bess: float
    ports: Dict[PortId, PortReading]


@dataclass(frozen=True)
class SeriesMeta:
    seed: Optional[int] = None
    duration: Optional[int] = None
    generator: str = ""


@dataclass(frozen=True, eq=False)
class TelemetrySeries:
    """Column-oriented telemetry at a fixed 1 s cadence.

    Per-port arrays have shape ``(n, 6)`` with columns in :data:`PORTS` order.
    """

    t: np.ndarray
    i_pcc: np.ndarray
    i_bess: np.ndarray
    i_ev: np.ndarray
    p_ev: np.ndarray
    q_ev: np.ndarray
    cs: np.ndarray
    soc_ev: np.ndarray
    meta: SeriesMeta = field(default_factory=SeriesMeta)

    def __post_init__(self):
        n = len(self.t)
        for name in ("i_pcc", "i_bess"):
            if getattr(self, name).shape != (n,):
                raise ShapeError(f"{name} must have shape ({n},)")
        for name in ("i_ev", "p_ev", "q_ev", "cs", "soc_ev"):
            if getattr(self, name).shape != (n, N_PORTS):
                raise ShapeError(f"{name} must have shape ({n}, {N_PORTS})")
        if n > 1 and not np.all(np.diff(self.t) == 1):
            raise RangeError("timestamps must increase by exactly 1 s with no gaps")
        for name in ("t", "i_pcc", "i_bess", "i_ev", "p_ev", "q_ev", "cs", "soc_ev"):
            getattr(self, name).setflags(write=False)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, k: int) -> TelemetryRecord:
        ports = {
            port: PortReading(
                float(self.i_ev[k, j]), float(self.p_ev[k, j]), float(self.q_ev[k, j]),
                int(self.cs[k, j]), float(self.soc_ev[k, j]),
            )
            for j, port in enumerate(PORTS)
        }
        return TelemetryRecord(int(self.t[k]), float(self.i_pcc[k]), float(self.i_bess[k]), ports)

    def __iter__(self) -> Iterator[TelemetryRecord]:
        for k in range(len(self)):
            yield self[k]

    def slice(self, start: int, stop: int) -> "TelemetrySeries":
        sl = slice(start, stop)
        return TelemetrySeries(
            self.t[sl].copy(), self.i_pcc[sl].copy(), self.i_bess[sl].copy(),
            self.i_ev[sl].copy(), self.p_ev[sl].copy(), self.q_ev[sl].copy(),
            self.cs[sl].copy(), self.soc_ev[sl].copy(), self.meta,
        )

    def equals(self, other: "TelemetrySeries") -> bool:
        names = ("t", "i_pcc", "i_bess", "i_ev", "p_ev", "q_ev", "cs", "soc_ev")
        return self.meta == other.meta and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in names
        )

    def kcl_residual(self) -> np.ndarray:
        """``i_pcc - i_bess - sum(i_ev)`` per record; zero up to rounding."""
        return self.i_pcc - self.i_bess - self.i_ev.sum(axis=1)

    def as_matrix(self) -> np.ndarray:
        n = len(self)
        out = np.empty((n, 3 + len(PORT_FIELDS) * N_PORTS))
        out[:, 0] = self.t
        out[:, 1] = self.i_pcc
        out[:, 2] = self.i_bess
        for j in range(N_PORTS):
            base = 3 + len(PORT_FIELDS) * j
            out[:, base] = self.i_ev[:, j]
            out[:, base + 1] = self.p_ev[:, j]
            out[:, base + 2] = self.q_ev[:, j]
            out[:, base + 3] = self.cs[:, j]
            out[:, base + 4] = self.soc_ev[:, j]
        return out

    @classmethod
    def from_matrix(cls, data: np.ndarray, meta: SeriesMeta = SeriesMeta()) -> "TelemetrySeries":
        data = np.asarray(data, dtype=float)
        blocks = [data[:, 3 + len(PORT_FIELDS) * j: 3 + len(PORT_FIELDS) * (j + 1)] for j in range(N_PORTS)]
        stack = np.stack(blocks, axis=1)  # (n, port, field)
        return cls(
            t=data[:, 0].astype(np.int64),
            i_pcc=data[:, 1].copy(),
            i_bess=data[:, 2].copy(),
            i_ev=stack[:, :, 0].copy(),
            p_ev=stack[:, :, 1].copy(),
            q_ev=stack[:, :, 2].copy(),
            cs=stack[:, :, 3].astype(np.int8),
            soc_ev=stack[:, :, 4].copy(),
            meta=meta,
        )


@dataclass(frozen=True, eq=False)
class DeltaSocSeries:
    port: PortId
    values: np.ndarray
    transition_mask: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def replace_values(self, values: np.ndarray) -> "DeltaSocSeries":
        values = np.asarray(values, dtype=float)
        if values.shape != self.values.shape:
            raise ShapeError("replacement values must keep the series length")
        return DeltaSocSeries(self.port, values, self.transition_mask)


def compute_delta_soc(series: TelemetrySeries, port: PortId) -> DeltaSocSeries:
    """ΔSoC(t) = SoC(t+1) - SoC(t), flagged wherever the charge status flips."""
    if len(series) < 2:
        raise EmptyInputError("ΔSoC needs at least 2 records")
    port = PortId.parse(port)
    soc = series.soc_ev[:, port.index]
    cs = series.cs[:, port.index]
    return DeltaSocSeries(port, np.diff(soc), cs[1:] != cs[:-1])


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0:
            raise EmptyInputError("cannot fit scaling statistics on an empty matrix")
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        # zero-variance columns keep their slot with unit scale; a spread at
        # rounding level of the column magnitude counts as zero
        scale[scale <= 1e-12 * np.abs(X).max(axis=0)] = 1.0
        return cls(mean, scale)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.mean):
            raise ShapeError(f"expected {len(self.mean)} columns, got shape {X.shape}")
        return (X - self.mean) / self.scale


def standardize(train_matrix: np.ndarray, apply_to: np.ndarray) -> Tuple[Standardizer, np.ndarray]:
    train_matrix = np.asarray(train_matrix, dtype=float)
    apply_to = np.asarray(apply_to, dtype=float)
    if train_matrix.ndim != 2 or apply_to.ndim != 2 or train_matrix.shape[1] != apply_to.shape[1]:
        raise ShapeError(
            f"column-count mismatch: train {train_matrix.shape} vs apply_to {apply_to.shape}"
        )
    scaler = Standardizer.fit(train_matrix)
    return scaler, scaler.transform(apply_to)


def split_dataset(
    series: TelemetrySeries, train_seconds: int = TRAIN_SECONDS, test_seconds: int = TEST_SECONDS
) -> Tuple[TelemetrySeries, TelemetrySeries]:
    """Contiguous prefix split: ``[0, train)`` and ``[train, train + test)``."""
    if train_seconds < 0 or test_seconds < 0:
        raise RangeError("split lengths must be non-negative")
    if train_seconds + test_seconds > len(series):
        raise RangeError(
            f"requested {train_seconds} + {test_seconds} samples from a series of {len(series)}"
        )
    return (
        series.slice(0, train_seconds),
        series.slice(train_seconds, train_seconds + test_seconds),
    )


def _format_meta(meta: SeriesMeta) -> str:
    lines = []
    if meta.seed is not None:
        lines.append(f"# seed={meta.seed}")
    if meta.duration is not None:
        lines.append(f"# duration={meta.duration}")
    if meta.generator:
        lines.append(f"# generator={meta.generator}")
    return "".join(line + "\n" for line in lines)


def _column_formats() -> list:
    fmts = ["%d", FLOAT_FMT, FLOAT_FMT]
    for _ in PORTS:
        fmts.extend([FLOAT_FMT, FLOAT_FMT, FLOAT_FMT, "%d", FLOAT_FMT])
    return fmts


def dumps_series(series: TelemetrySeries) -> str:
    buf = io.StringIO()
    buf.write(_format_meta(series.meta))
    buf.write(",".join(csv_columns()) + "\n")
    if len(series):
        np.savetxt(buf, series.as_matrix(), fmt=_column_formats(), delimiter=",")
    return buf.getvalue()


def serialize_series(series: TelemetrySeries, path) -> None:
    Path(path).write_text(dumps_series(series), encoding="ascii", newline="\n")


def _parse_meta(lines) -> SeriesMeta:
    kw = {}
    for lineno, line in lines:
        key, sep, value = line[1:].strip().partition("=")
        if not sep:
            continue
        key = key.strip()
        try:
            if key in ("seed", "duration"):
                kw[key] = int(value)
            elif key == "generator":
                kw[key] = value.strip()
        except ValueError:
            raise ParseError(f"bad metadata value for {key!r}", lineno) from None
    return SeriesMeta(**kw)


def _locate_bad_row(rows, first_lineno: int, width: int):
    for offset, row in enumerate(rows):
        lineno = first_lineno + offset
        cells = row.rstrip("\r\n").split(",")
        if len(cells) != width:
            raise ParseError(f"expected {width} fields, found {len(cells)}", lineno)
        for name, cell in zip(csv_columns(), cells):
            try:
                float(cell)
            except ValueError:
                raise ParseError(f"column {name!r}: cannot parse {cell!r}", lineno) from None
    raise ParseError("malformed data row", first_lineno)


def loads_series(text: str) -> TelemetrySeries:
    if not text.strip():
        raise EmptyInputError("telemetry file is empty")
    lines = text.splitlines(keepends=True)
    comments = []
    k = 0
    while k < len(lines) and lines[k].startswith("#"):
        comments.append((k + 1, lines[k]))
        k += 1
    if k == len(lines):
        raise ParseError("missing header row", k)
    header = lines[k].strip().split(",")
    expected = csv_columns()
    if header != expected:
        missing = [c for c in expected if c not in header]
        extra = [c for c in header if c not in expected]
        detail = f"missing {missing}" if missing else ""
        if extra:
            detail += (", " if detail else "") + f"unexpected {extra}"
        raise ParseError(f"malformed header ({detail or 'column order differs'})", k + 1)
    meta = _parse_meta(comments)
    rows = [ln for ln in lines[k + 1:] if ln.strip()]
    if not rows:
        data = np.empty((0, len(expected)))
    else:
        try:
            data = np.loadtxt(rows, delimiter=",", ndmin=2, dtype=float)
        except ValueError:
            _locate_bad_row(lines[k + 1:], k + 2, len(expected))
        if data.shape[1] != len(expected):
            _locate_bad_row(lines[k + 1:], k + 2, len(expected))
    try:
        return TelemetrySeries.from_matrix(data, meta)
    except (RangeError, ShapeError) as exc:
        raise ParseError(str(exc), k + 2) from None


def load_series(path) -> TelemetrySeries:
    return loads_series(Path(path).read_text(encoding="ascii"))
