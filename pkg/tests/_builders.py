"""Small constructors shared by the test modules."""
import time
from pathlib import Path

import numpy as np

from evci_soc.cli import file_digest, main
from evci_soc.telemetry import N_PORTS, TelemetrySeries

GOLDEN = Path(__file__).parent / "golden"

# files compared byte-for-byte against copies under golden/
GOLDEN_COPIES = [
    "gen/sessions.csv",
    "spoof/plan.csv",
    "detect/verdicts.csv",
    "detect/clean_verdicts.csv",
    "eval/confusion.csv",
    "eval/accuracy.csv",
]
# large files compared by sha256 only
GOLDEN_DIGESTS = ["gen/telemetry.csv", "spoof/delta.csv"]
# compared numerically (last digits depend on the BLAS build)
GOLDEN_SUMMARY = "train/summary.csv"

PIPELINE = [
    ["gen"],
    ["train"],
    ["spoof"],
    ["detect"],
    ["eval"],
]


def make_series(soc=None, cs=None, n=None, i_ev=None, i_bess=None):
    """Series with arbitrary per-port soc/cs columns and KCL-consistent currents."""
    if n is None:
        n = len(soc if soc is not None else cs)
    soc_m = np.zeros((n, N_PORTS))
    cs_m = np.zeros((n, N_PORTS), dtype=np.int8)
    if soc is not None:
        soc_m[:, 0] = soc
    if cs is not None:
        cs_m[:, 0] = cs
    i = np.zeros((n, N_PORTS)) if i_ev is None else np.asarray(i_ev, dtype=float)
    ib = np.zeros(n) if i_bess is None else np.asarray(i_bess, dtype=float)
    return TelemetrySeries(
        np.arange(n, dtype=np.int64), ib + i.sum(axis=1), ib, i, i * 0.48, i * 0.48 * 0.02, cs_m, soc_m
    )


def run_pipeline(root: Path):
    """Run gen -> train -> spoof -> detect -> eval with defaults; return (exit codes, seconds)."""
    codes = []
    t0 = time.perf_counter()
    for argv in PIPELINE:
        codes.append(main(argv + ["--out", str(root)]))
    return codes, time.perf_counter() - t0


def pipeline_digests(root: Path) -> dict:
    return {rel: file_digest(root / rel) for rel in GOLDEN_DIGESTS}


CRITERIA = {
    1: "ridge matches explicit-inverse oracle",
    2: "ridge coefficients minimize the penalized objective",
    3: "current balance at the PCC",
    4: "per-session coulomb counting reconciles",
    5: "ridge beats mean and collinear least-squares baselines",
    6: "decimal-shift detection",
    7: "incremental-array classification",
    8: "random-spoof classification",
    9: "grid-search CV determinism",
    10: "no verdict overlaps a transition",
    11: "end-to-end pipeline time and golden files",
}
RESULTS = {}


def record(number: int, ok: bool, detail: str) -> None:
    """Remember a criterion outcome for the terminal summary, then assert it."""
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {CRITERIA[number]}: {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line
