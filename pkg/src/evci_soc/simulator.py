"""Synthetic EVCI plant: session scheduling, coulomb counting, BESS dispatch, KCL."""
from __future__ import annotations

import configparser
import csv
import enum
import io
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import __version__
from ._accel import maybe_njit
from .errors import ConfigError, DomainError, ParseError, SimulationError
from .telemetry import (
    FLOAT_FMT,
    N_BOARDS,
    N_PORTS,
    PORT_BOARD,
    PORTS,
    SECONDS_PER_DAY,
    PortId,
    SeriesMeta,
    TelemetrySeries,
)

DC_BUS_VOLTAGE = 480.0


class ChargerKind(str, enum.Enum):
    Terra53 = "Terra53"
    TerraHP = "TerraHP"


class BatteryKind(str, enum.Enum):
    BEV300 = "BEV300"
    BEV150 = "BEV150"
    Other = "Other"


@dataclass(frozen=True)
class ChargerSpec:
    kind: ChargerKind
    max_power: float
    dc_bus_voltage: float = DC_BUS_VOLTAGE

    def __post_init__(self):
        if self.kind is ChargerKind.Terra53 and not 0 < self.max_power <= 50:
            raise DomainError("Terra53 chargers are rated up to 50 kW")
        if self.kind is ChargerKind.TerraHP and not 175 <= self.max_power <= 350:
            raise DomainError("TerraHP chargers are rated 175-350 kW")


@dataclass(frozen=True)
class BatterySpec:
    kind: BatteryKind
    capacity_q: float  # Ah
    max_charge_power: float  # kW

    def __post_init__(self):
        if self.capacity_q <= 0:
            raise DomainError("battery capacity must be positive")


BATTERIES: Dict[BatteryKind, BatterySpec] = {
    BatteryKind.BEV300: BatterySpec(BatteryKind.BEV300, 250.0, 300.0),
    # nominally "up to 300 kW", but the Terra53 it pairs with tops out at 50 kW
    BatteryKind.BEV150: BatterySpec(BatteryKind.BEV150, 125.0, 50.0),
    BatteryKind.Other: BatterySpec(BatteryKind.Other, 100.0, 50.0),
}

CHARGERS: Dict[PortId, ChargerSpec] = {
    PortId.EV0_Terra53: ChargerSpec(ChargerKind.Terra53, 50.0),
    PortId.EV1_TerraHP_Cord_a: ChargerSpec(ChargerKind.TerraHP, 350.0),
    PortId.EV1_TerraHP_Cord_b: ChargerSpec(ChargerKind.TerraHP, 350.0),
    PortId.EV2_TerraHP_Cord_a: ChargerSpec(ChargerKind.TerraHP, 350.0),
    PortId.EV2_TerraHP_Cord_b: ChargerSpec(ChargerKind.TerraHP, 350.0),
    PortId.EV3_TerraHP: ChargerSpec(ChargerKind.TerraHP, 350.0),
}
# two-cord TerraHP boards share one 350 kW power cabinet
BOARD_LIMIT_KW = (50.0, 350.0, 350.0, 350.0)


def compatible(port: PortId, battery: BatteryKind) -> bool:
    if CHARGERS[port].kind is ChargerKind.TerraHP:
        return battery is BatteryKind.BEV300
    return battery in (BatteryKind.BEV150, BatteryKind.Other)


@dataclass(frozen=True)
class ChargingSession:
    port: PortId
    battery: BatterySpec
    arrival_t: int
    departure_t: int
    initial_soc: float
    target_soc: float

    def __post_init__(self):
        if not self.arrival_t < self.departure_t:
            raise DomainError("arrival must precede departure")
        if not 0 <= self.initial_soc < self.target_soc <= 100:
            raise DomainError("need 0 <= initial_soc < target_soc <= 100")
        if not compatible(self.port, self.battery.kind):
            raise DomainError(f"{self.battery.kind.value} cannot charge on {self.port.value}")


@dataclass(frozen=True)
class BessState:
    soc: float = 50.0
    energy_capacity: float = 250.0
    max_charge_power: float = 500.0
    max_discharge_power: float = 500.0
    charge_eff: float = 0.95
    discharge_eff: float = 0.95
    soc_max: float = 90.0
    soc_min: float = 20.0
    initial_soc: float = 50.0

    def __post_init__(self):
        if not 0 <= self.soc_min <= self.initial_soc <= self.soc_max <= 100:
            raise DomainError("BESS SoC limits must bracket the initial SoC")
        if self.energy_capacity <= 0 or not (0 < self.charge_eff <= 1 and 0 < self.discharge_eff <= 1):
            raise DomainError("invalid BESS capacity or efficiency")


@dataclass(frozen=True)
class SimConfig:
    seed: int = 42
    duration: int = 5 * SECONDS_PER_DAY
    arrival_rate: Tuple[float, ...] = (1.0,) * N_PORTS  # sessions/hour, PORTS order
    dwell_min: float = 15 * 60.0
    dwell_max: float = 120 * 60.0
    initial_soc_lo: float = 10.0
    initial_soc_hi: float = 60.0
    target_soc_lo: float = 70.0
    target_soc_hi: float = 100.0
    grid_cap_kw: float = 1000.0
    dc_bus_voltage: float = DC_BUS_VOLTAGE
    other_fraction: float = 0.0  # share of Terra53 arrivals that are not BEV150
    reactive_fraction: float = 0.02
    min_gap: int = 60  # idle seconds enforced between visits on one port
    bess: BessState = field(default_factory=BessState)

    def __post_init__(self):
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if len(self.arrival_rate) != N_PORTS or any(r < 0 for r in self.arrival_rate):
            raise ConfigError("arrival_rate needs one non-negative rate per port")
        if not 0 < self.dwell_min <= self.dwell_max:
            raise ConfigError("need 0 < dwell_min <= dwell_max")
        if not 0 <= self.initial_soc_lo <= self.initial_soc_hi < self.target_soc_lo <= self.target_soc_hi <= 100:
            raise ConfigError("SoC ranges must satisfy 0 <= initial < target <= 100")
        if not 0 <= self.other_fraction <= 1:
            raise ConfigError("other_fraction must lie in [0, 1]")
        if self.min_gap < 1:
            raise ConfigError("min_gap must be at least 1 s so every visit flips the charge status")
        if self.grid_cap_kw <= 0 or self.dc_bus_voltage <= 0:
            raise ConfigError("grid cap and bus voltage must be positive")

    def rate_for(self, port: PortId) -> float:
        return self.arrival_rate[port.index]


_BESS_KEYS = {f.name for f in fields(BessState)}
_SIM_KEYS = {f.name for f in fields(SimConfig)} - {"bess", "arrival_rate"}


def load_config(path, **overrides) -> SimConfig:
    """Read an INI-style run config.

    Keys of ``[sim]`` mirror :class:`SimConfig` fields; ``days`` is accepted as
    a shorthand for ``duration``, ``arrival_rate`` sets all ports at once and
    ``arrival_rate.<port>`` a single port. ``[bess]`` mirrors :class:`BessState`.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # port names in keys are case-sensitive
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_mapping(
        dict(parser["sim"]) if parser.has_section("sim") else {},
        dict(parser["bess"]) if parser.has_section("bess") else {},
        **overrides,
    )


def config_from_mapping(sim: dict, bess: dict = None, **overrides) -> SimConfig:
    kw = {}
    rates = list(SimConfig.arrival_rate)
    types = {f.name: f.type for f in fields(SimConfig)}
    try:
        for key, raw in sim.items():
            key = key.strip()
            if key == "days":
                kw["duration"] = int(round(float(raw) * SECONDS_PER_DAY))
            elif key == "arrival_rate":
                rates = [float(raw)] * N_PORTS
            elif key.startswith("arrival_rate."):
                rates[PortId.parse(key.split(".", 1)[1]).index] = float(raw)
            elif key in _SIM_KEYS:
                kw[key] = int(raw) if types[key] in ("int", int) else float(raw)
            else:
                raise ConfigError(f"unknown [sim] key {key!r}")
        bess_kw = {}
        for key, raw in (bess or {}).items():
            if key not in _BESS_KEYS:
                raise ConfigError(f"unknown [bess] key {key!r}")
            bess_kw[key] = float(raw)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config value: {exc}") from None
    if "initial_soc" in bess_kw and "soc" not in bess_kw:
        bess_kw["soc"] = bess_kw["initial_soc"]
    kw["arrival_rate"] = tuple(rates)
    kw["bess"] = BessState(**bess_kw)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SimConfig(**kw)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


def schedule_sessions(config: SimConfig) -> List[ChargingSession]:
    """Per-port Poisson arrivals; arrivals that collide with a visit are dropped.

    Each port draws from its own stream seeded by ``(seed, port index)`` so
    changing one port's rate leaves the other ports' schedules untouched.
    """
    sessions = []
    for port in PORTS:
        rate = config.rate_for(port)
        if rate <= 0:
            continue
        rng = np.random.default_rng([config.seed, port.index])
        mean_gap = 3600.0 / rate
        clock = 0.0
        busy_until = -config.min_gap
        while True:
            clock += rng.exponential(mean_gap)
            arrival = int(clock)
            if arrival >= config.duration:
                break
            dwell = rng.uniform(config.dwell_min, config.dwell_max)
            initial = rng.uniform(config.initial_soc_lo, config.initial_soc_hi)
            target = rng.uniform(config.target_soc_lo, config.target_soc_hi)
            other = rng.random() < config.other_fraction
            if arrival < busy_until + config.min_gap:
                continue
            if CHARGERS[port].kind is ChargerKind.TerraHP:
                kind = BatteryKind.BEV300
            else:
                kind = BatteryKind.Other if other else BatteryKind.BEV150
            departure = arrival + max(1, int(round(dwell)))
            sessions.append(ChargingSession(port, BATTERIES[kind], arrival, departure, initial, target))
            busy_until = departure
    return sessions


def _validate_sessions(sessions: Sequence[ChargingSession]) -> List[ChargingSession]:
    ordered = sorted(sessions, key=lambda s: (s.port.index, s.arrival_t))
    for prev, cur in zip(ordered, ordered[1:]):
        if prev.port is cur.port and cur.arrival_t <= prev.departure_t:
            raise ConfigError(
                f"sessions overlap on {cur.port.value}: arrival {cur.arrival_t} "
                f"is not after departure {prev.departure_t}"
            )
    return ordered


@maybe_njit
def _step_soc(soc_prev, current, capacity_q, dt):
    soc = soc_prev + 100.0 * current * dt / (capacity_q * 3600.0)
    if soc > 100.0:
        return 100.0, True
    if soc < 0.0:
        return 0.0, True
    return soc, False


def step_soc(soc_prev: float, current: float, capacity_q: float, dt: float = 1.0) -> Tuple[float, bool]:
    """One coulomb-counting step; returns ``(soc, clamped)``."""
    if capacity_q <= 0:
        raise DomainError("battery capacity must be positive")
    if dt <= 0:
        raise DomainError("time step must be positive")
    soc, clamped = _step_soc(float(soc_prev), float(current), float(capacity_q), float(dt))
    return float(soc), bool(clamped)


@maybe_njit
def _simulate_kernel(
    n_steps, dt, ptr, arrival, departure, initial, target, capacity_q, batt_pmax,
    charger_pmax, port_board, board_limit, voltage, reactive_frac, grid_cap,
    bess_pch, bess_pdis, bess_energy, bess_eta_c, bess_eta_d, bess_smin, bess_smax, bess_s0,
):
    n_ports = charger_pmax.shape[0]
    n_boards = board_limit.shape[0]
    n_sess = arrival.shape[0]

    i_ev = np.zeros((n_steps, n_ports))
    p_ev = np.zeros((n_steps, n_ports))
    q_ev = np.zeros((n_steps, n_ports))
    cs = np.zeros((n_steps, n_ports), dtype=np.int8)
    soc_out = np.zeros((n_steps, n_ports))
    i_bess = np.zeros(n_steps)
    i_pcc = np.zeros(n_steps)
    bess_soc = np.zeros(n_steps)
    end_t = np.full(n_sess, -1, dtype=np.int64)
    final_soc = np.full(n_sess, np.nan)
    charge_ah = np.zeros(n_sess)

    cur = ptr[:-1].copy()
    active = np.zeros(n_ports, dtype=np.bool_)
    soc = np.zeros(n_ports)
    req = np.zeros(n_ports)
    board_total = np.zeros(n_boards)
    bsoc = bess_s0

    for t in range(n_steps):
        for b in range(n_boards):
            board_total[b] = 0.0
        for p in range(n_ports):
            k = cur[p]
            if active[p] and t >= departure[k]:
                active[p] = False
                end_t[k] = t
                final_soc[k] = soc[p]
                cur[p] += 1
                k += 1
            if not active[p] and k < ptr[p + 1] and arrival[k] <= t:
                active[p] = True
                soc[p] = initial[k]
            req[p] = 0.0
            if active[p]:
                req[p] = min(charger_pmax[p], batt_pmax[k])
                board_total[port_board[p]] += req[p]

        demand = 0.0
        for p in range(n_ports):
            if not active[p]:
                continue
            k = cur[p]
            b = port_board[p]
            alloc = req[p]
            if board_total[b] > board_limit[b]:
                alloc = req[p] * (board_limit[b] / board_total[b])
            current = alloc * 1000.0 / voltage
            needed = (target[k] - soc[p]) * capacity_q[k] * 3600.0 / (100.0 * dt)
            done = current >= needed
            if done:
                current = needed
            power = current * voltage / 1000.0
            i_ev[t, p] = current
            p_ev[t, p] = power
            q_ev[t, p] = reactive_frac * power
            cs[t, p] = 1
            soc_out[t, p] = soc[p]
            charge_ah[k] += current * dt / 3600.0
            demand += power
            if done:
                soc[p] = target[k]
                active[p] = False
                end_t[k] = t + 1
                final_soc[k] = soc[p]
                cur[p] += 1
            else:
                soc[p] = _step_soc(soc[p], current, capacity_q[k], dt)[0]

        bess_soc[t] = bsoc
        if demand > grid_cap:
            need = demand - grid_cap
            avail = (bsoc - bess_smin) / 100.0 * bess_energy * 3600.0 / dt * bess_eta_d
            if need > bess_pdis or need > avail:
                return (i_ev, p_ev, q_ev, cs, soc_out, i_bess, i_pcc, bess_soc,
                        end_t, final_soc, charge_ah, 1, t, demand)
            bess_power = -need
            bsoc = max(bsoc - need * dt / 3600.0 / bess_eta_d / bess_energy * 100.0, bess_smin)
        else:
            room = (bess_smax - bsoc) / 100.0 * bess_energy * 3600.0 / (dt * bess_eta_c)
            bess_power = max(min(bess_pch, grid_cap - demand, room), 0.0)
            bsoc = min(bsoc + bess_power * dt / 3600.0 * bess_eta_c / bess_energy * 100.0, bess_smax)

        i_bess[t] = bess_power * 1000.0 / voltage
        total = i_bess[t]
        for p in range(n_ports):
            total += i_ev[t, p]
        i_pcc[t] = total

    for p in range(n_ports):
        if active[p]:
            end_t[cur[p]] = n_steps
            final_soc[cur[p]] = soc[p]
    return (i_ev, p_ev, q_ev, cs, soc_out, i_bess, i_pcc, bess_soc,
            end_t, final_soc, charge_ah, 0, -1, 0.0)


@dataclass(frozen=True, eq=False)
class SimResult:
    series: TelemetrySeries
    sessions: List[ChargingSession]
    end_t: np.ndarray  # -1 for visits that never started inside the run
    final_soc: np.ndarray
    charge_ah: np.ndarray
    bess_soc: np.ndarray


def kernel_inputs(config: SimConfig, sessions: Sequence[ChargingSession]):
    ordered = _validate_sessions(sessions)
    counts = np.zeros(N_PORTS + 1, dtype=np.int64)
    for s in ordered:
        counts[s.port.index + 1] += 1
    b = config.bess
    args = (
        int(config.duration), 1.0, np.cumsum(counts),
        np.array([s.arrival_t for s in ordered], dtype=np.int64),
        np.array([s.departure_t for s in ordered], dtype=np.int64),
        np.array([s.initial_soc for s in ordered], dtype=float),
        np.array([s.target_soc for s in ordered], dtype=float),
        np.array([s.battery.capacity_q for s in ordered], dtype=float),
        np.array([s.battery.max_charge_power for s in ordered], dtype=float),
        np.array([CHARGERS[p].max_power for p in PORTS], dtype=float),
        np.array([PORT_BOARD[p] for p in PORTS], dtype=np.int64),
        np.array(BOARD_LIMIT_KW[:N_BOARDS], dtype=float),
        float(config.dc_bus_voltage), float(config.reactive_fraction), float(config.grid_cap_kw),
        float(b.max_charge_power), float(b.max_discharge_power), float(b.energy_capacity),
        float(b.charge_eff), float(b.discharge_eff), float(b.soc_min), float(b.soc_max),
        float(b.initial_soc),
    )
    return ordered, args


def simulate_detailed(config: SimConfig, sessions: Sequence[ChargingSession], kernel=None) -> SimResult:
    ordered, args = kernel_inputs(config, sessions)
    out = (kernel or _simulate_kernel)(*args)
    i_ev, p_ev, q_ev, cs, soc, i_bess, i_pcc, bess_soc, end_t, final_soc, charge_ah, status, bad_t, demand = out
    if status:
        raise SimulationError(
            f"infeasible dispatch: demand {demand:.3f} kW exceeds grid cap "
            f"{config.grid_cap_kw} kW plus available BESS discharge (BESS SoC {bess_soc[bad_t]:.3f}%)",
            int(bad_t),
        )
    meta = SeriesMeta(seed=config.seed, duration=config.duration, generator=f"evci_soc {__version__}")
    series = TelemetrySeries(
        np.arange(config.duration, dtype=np.int64), i_pcc, i_bess, i_ev, p_ev, q_ev, cs, soc, meta
    )
    return SimResult(series, ordered, end_t, final_soc, charge_ah, bess_soc)


def simulate(config: SimConfig, sessions: Sequence[ChargingSession]) -> TelemetrySeries:
    return simulate_detailed(config, sessions).series


SESSION_COLUMNS = ["port", "arrival_t", "departure_t", "initial_soc", "target_soc", "battery_kind"]


def dumps_sessions(sessions: Sequence[ChargingSession]) -> str:
    buf = io.StringIO()
    buf.write(",".join(SESSION_COLUMNS) + "\n")
    for s in sessions:
        buf.write(
            f"{s.port.value},{s.arrival_t},{s.departure_t},"
            f"{FLOAT_FMT % s.initial_soc},{FLOAT_FMT % s.target_soc},{s.battery.kind.value}\n"
        )
    return buf.getvalue()


def write_sessions(sessions: Sequence[ChargingSession], path) -> None:
    Path(path).write_text(dumps_sessions(sessions), encoding="ascii", newline="\n")


def read_sessions(path) -> List[ChargingSession]:
    with open(path, newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SESSION_COLUMNS:
            raise ParseError(f"expected header {SESSION_COLUMNS}", 1)
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                port, arr, dep, init, targ, kind = row
                out.append(ChargingSession(
                    PortId.parse(port), BATTERIES[BatteryKind(kind)],
                    int(arr), int(dep), float(init), float(targ),
                ))
            except (ValueError, DomainError) as exc:
                raise ParseError(str(exc), lineno) from None
    return out


def config_dict(config: SimConfig) -> dict:
    d = {f.name: getattr(config, f.name) for f in fields(config) if f.name != "bess"}
    d["arrival_rate"] = list(config.arrival_rate)
    d["bess"] = {f.name: getattr(config.bess, f.name) for f in fields(config.bess)}
    return d

