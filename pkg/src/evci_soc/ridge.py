"""Ridge regression of per-port ΔSoC on plant currents, with grid-search k-fold CV."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .errors import ConfigError, EmptyInputError, ParseError, ShapeError, SolverError
from .telemetry import FLOAT_FMT, PORTS, PortId, Standardizer, TelemetrySeries, compute_delta_soc

REFERENCE_ALPHA = 10.05
DEFAULT_FOLDS = 20
TIE_TOL = 1e-15


def default_alpha_grid() -> Tuple[float, ...]:
    grid = set(np.logspace(-3, 3, 30).tolist())
    grid.add(REFERENCE_ALPHA)
    return tuple(sorted(grid))


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    feature_names: Tuple[str, ...]
    transition_mask: np.ndarray

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] != len(self.y):
            raise ShapeError(f"X has shape {self.X.shape} but y has length {len(self.y)}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ShapeError("design matrix contains non-finite entries")

    def clean(self) -> "DesignMatrix":
        """Rows away from arrival/departure transitions."""
        keep = ~self.transition_mask
        return DesignMatrix(self.X[keep], self.y[keep], self.feature_names, self.transition_mask[keep])


def feature_names(port: PortId, include_cs: bool = True) -> Tuple[str, ...]:
    names = ["i_pcc", "i_bess"] + [f"i_{p.value}" for p in PORTS]
    if include_cs:
        names.append(f"cs_{PortId.parse(port).value}")
    return tuple(names)


def design_matrix(series: TelemetrySeries, port: PortId, include_cs: bool = True) -> DesignMatrix:
    """Row t holds the currents flowing during [t, t+1); the target is ΔSoC(t)."""
    port = PortId.parse(port)
    delta = compute_delta_soc(series, port)
    n = len(delta)
    cols = [series.i_pcc[:n], series.i_bess[:n]] + [series.i_ev[:n, j] for j in range(len(PORTS))]
    if include_cs:
        cols.append(series.cs[:n, port.index].astype(float))
    return DesignMatrix(np.column_stack(cols), delta.values.copy(), feature_names(port, include_cs),
                        delta.transition_mask.copy())


@dataclass(frozen=True, eq=False)
class RidgeModel:
    coefficients: np.ndarray
    alpha: float
    standardizer: Standardizer
    target_mean: float
    feature_names: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if len(self.coefficients) != len(self.standardizer.mean):
            raise ShapeError("one coefficient per feature required")


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ShapeError(f"incompatible shapes X {X.shape}, y {y.shape}")
    if X.shape[0] == 0:
        raise EmptyInputError("no training rows")
    return X, y


def _solve_spd(gram: np.ndarray, rhs: np.ndarray, alpha: float) -> np.ndarray:
    p = gram.shape[0]
    A = gram + alpha * np.eye(p)
    if alpha == 0 and p and np.linalg.matrix_rank(A, hermitian=True) < p:
        raise SolverError("X is rank-deficient; least squares with alpha = 0 is singular, use alpha > 0")
    try:
        return linalg.cho_solve(linalg.cho_factor(A, lower=True, check_finite=False), rhs,
                                check_finite=False)
    except linalg.LinAlgError:
        raise SolverError("normal equations are not positive definite; use alpha > 0") from None


def solve_ridge(Xs, yc, alpha: float) -> np.ndarray:
    """β solving (XᵀX + αI)β = Xᵀy for already standardized X and centered y."""
    if alpha < 0:
        raise ConfigError("alpha must be non-negative")
    Xs, yc = _check_xy(Xs, yc)
    return _solve_spd(Xs.T @ Xs, Xs.T @ yc, float(alpha))


def fit_ridge(X, y, alpha: float, feature_names: Sequence[str] = ()) -> RidgeModel:
    """Ridge fit with internal standardization of X and centering of y."""
    if alpha < 0:
        raise ConfigError("alpha must be non-negative")
    X, y = _check_xy(X, y)
    scaler = Standardizer.fit(X)
    ym = float(y.mean())
    coef = solve_ridge(scaler.transform(X), y - ym, alpha)
    return RidgeModel(coef, float(alpha), scaler, ym, tuple(feature_names))


def fit_least_squares(X, y, feature_names: Sequence[str] = ()) -> RidgeModel:
    """Unpenalized baseline on standardized X without an intercept.

    Uses the minimum-norm solution so exactly collinear columns do not abort.
    """
    X, y = _check_xy(X, y)
    scaler = Standardizer.fit(X)
    coef, *_ = np.linalg.lstsq(scaler.transform(X), y, rcond=None)
    return RidgeModel(coef, 0.0, scaler, 0.0, tuple(feature_names))


def fit_mean(X, y, feature_names: Sequence[str] = ()) -> RidgeModel:
    X, y = _check_xy(X, y)
    return RidgeModel(np.zeros(X.shape[1]), 0.0, Standardizer.fit(X), float(y.mean()),
                      tuple(feature_names))


def predict(model: RidgeModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.coefficients):
        raise ShapeError(f"model expects {len(model.coefficients)} features, got shape {X.shape}")
    return model.standardizer.transform(X) @ model.coefficients + model.target_mean


def mse(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise EmptyInputError("mse of empty vectors")
    return float(np.mean((y_true - y_pred) ** 2))


@dataclass(frozen=True)
class CvConfig:
    alpha_grid: Tuple[float, ...] = field(default_factory=default_alpha_grid)
    folds: int = DEFAULT_FOLDS
    seed: int = 0

    def __post_init__(self):
        grid = tuple(float(a) for a in self.alpha_grid)
        object.__setattr__(self, "alpha_grid", grid)
        if not grid:
            raise ConfigError("alpha grid is empty")
        if any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 0:
            raise ConfigError("alpha grid must be non-negative and strictly ascending")
        if self.folds < 2:
            raise ConfigError("need at least 2 folds")


@dataclass(frozen=True, eq=False)
class FitReport:
    alphas: Tuple[float, ...]
    fold_mse: np.ndarray  # (n_alpha, folds)
    chosen_alpha: float
    train_mse: float
    test_mse: Optional[float] = None

    @property
    def mean_fold_mse(self) -> np.ndarray:
        return self.fold_mse.mean(axis=1)

    def with_test_mse(self, value: float) -> "FitReport":
        return FitReport(self.alphas, self.fold_mse, self.chosen_alpha, self.train_mse, float(value))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# chosen_alpha={FLOAT_FMT % self.chosen_alpha}\n")
        buf.write(f"# train_mse={FLOAT_FMT % self.train_mse}\n")
        if self.test_mse is not None:
            buf.write(f"# test_mse={FLOAT_FMT % self.test_mse}\n")
        buf.write("alpha,fold,mse\n")
        for a, row in zip(self.alphas, self.fold_mse):
            for f, v in enumerate(row):
                buf.write(f"{FLOAT_FMT % a},{f},{FLOAT_FMT % v}\n")
        return buf.getvalue()


def _fold_blocks(n: int, k: int, seed: int) -> List[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, k)


def grid_search_cv(X, y, cv: CvConfig = CvConfig(), feature_names: Sequence[str] = ()) -> Tuple[RidgeModel, FitReport]:
    """Pick α by mean validation MSE over k shuffled contiguous folds.

    Scaling statistics are re-fitted on each fold's training part. Ties within
    ``TIE_TOL`` go to the smaller α; the returned model is refitted on all rows.
    """
    X, y = _check_xy(X, y)
    n = len(y)
    if cv.folds > n:
        raise ConfigError(f"{cv.folds} folds requested for {n} samples")
    alphas = cv.alpha_grid
    scores = np.empty((len(alphas), cv.folds))
    for f, val in enumerate(_fold_blocks(n, cv.folds, cv.seed)):
        train = np.ones(n, dtype=bool)
        train[val] = False
        scaler = Standardizer.fit(X[train])
        Xs = scaler.transform(X[train])
        ym = y[train].mean()
        gram = Xs.T @ Xs
        rhs = Xs.T @ (y[train] - ym)
        Xv = scaler.transform(X[val])
        for a, alpha in enumerate(alphas):
            try:
                coef = _solve_spd(gram, rhs, alpha)
            except SolverError:
                scores[a, f] = np.inf
                continue
            scores[a, f] = mse(y[val], Xv @ coef + ym)
    means = scores.mean(axis=1)
    best = means.min()
    if not np.isfinite(best):
        raise SolverError("no alpha in the grid produced a solvable fit")
    chosen = alphas[int(np.flatnonzero(means <= best + TIE_TOL)[0])]
    model = fit_ridge(X, y, chosen, feature_names)
    report = FitReport(alphas, scores, chosen, mse(y, predict(model, X)))
    return model, report


def dumps_model(model: RidgeModel) -> str:
    names = model.feature_names or tuple(f"x{j}" for j in range(len(model.coefficients)))
    buf = io.StringIO()
    buf.write(f"alpha,{FLOAT_FMT % model.alpha}\n")
    buf.write(f"target_mean,{FLOAT_FMT % model.target_mean}\n")
    buf.write("feature,mean,scale,coefficient\n")
    for name, m, s, c in zip(names, model.standardizer.mean, model.standardizer.scale, model.coefficients):
        buf.write(f"{name},{FLOAT_FMT % m},{FLOAT_FMT % s},{FLOAT_FMT % c}\n")
    return buf.getvalue()


def save_model(model: RidgeModel, path) -> None:
    Path(path).write_text(dumps_model(model), encoding="ascii", newline="\n")


def loads_model(text: str) -> RidgeModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 3:
        raise ParseError("model file is truncated", len(lines) + 1)
    header = {}
    for lineno, ln in enumerate(lines[:2], start=1):
        key, _, value = ln.partition(",")
        try:
            header[key] = float(value)
        except ValueError:
            raise ParseError(f"bad value for {key!r}", lineno) from None
    if set(header) != {"alpha", "target_mean"}:
        raise ParseError("expected alpha and target_mean rows", 1)
    if lines[2] != "feature,mean,scale,coefficient":
        raise ParseError("bad feature table header", 3)
    names, stats = [], []
    for lineno, ln in enumerate(lines[3:], start=4):
        cells = ln.split(",")
        if len(cells) != 4:
            raise ParseError("expected 4 fields", lineno)
        try:
            stats.append([float(c) for c in cells[1:]])
        except ValueError:
            raise ParseError("non-numeric feature statistics", lineno) from None
        names.append(cells[0])
    stats = np.array(stats, dtype=float).reshape(-1, 3)
    return RidgeModel(stats[:, 2].copy(), header["alpha"], Standardizer(stats[:, 0].copy(), stats[:, 1].copy()),
                      header["target_mean"], tuple(names))


def load_model(path) -> RidgeModel:
    return loads_model(Path(path).read_text(encoding="ascii"))
