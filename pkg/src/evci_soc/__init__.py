"""EV charging telemetry simulation, ridge ΔSoC prediction and SoC-spoofing detection."""

__version__ = "0.1.0"

from .telemetry import (  # noqa: E402
    PORTS,
    DeltaSocSeries,
    PortId,
    Standardizer,
    TelemetrySeries,
    compute_delta_soc,
    load_series,
    serialize_series,
    split_dataset,
    standardize,
)

__all__ = [
    "PORTS", "DeltaSocSeries", "PortId", "Standardizer", "TelemetrySeries", "compute_delta_soc",
    "load_series", "serialize_series", "split_dataset", "standardize",
]
