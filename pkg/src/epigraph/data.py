"""Weekly series ingestion and tensor preparation.

The canonical object is a SeriesTable: a gap-free weekly grid on the MMWR
calendar with one column per variable. Raw daily sources are aggregated to
weeks, aligned by intersecting their spans, imputed, lag-expanded, min-max
scaled on the training split, and cut into supervised windows.

Week positions are 1-based indices into the canonical table ("week 850"
means the 850th row), matching how train/test boundaries are specified.
"""

from __future__ import annotations

import csv
import datetime as dt
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, DataQualityError, SchemaError
from .mmwr import MmwrWeek, mmwr_week_of, mmwr_year_start, weeks_in_mmwr_year

SOURCES = ("surveillance", "weather", "air-quality", "synthetic")
POLICIES = ("mean", "min", "max", "sum")


@dataclass(frozen=True)
class Variable:
    name: str
    source: str = "weather"
    policy: str = "mean"


@dataclass
class SeriesTable:
    weeks: list[MmwrWeek]
    variables: list[Variable]
    values: np.ndarray  # (T, M) float64; NaN marks missing
    start_index: int = 1  # 1-based canonical position of row 0
    imputed: np.ndarray | None = None  # bool (T, M), provenance of filled cells
    partial: np.ndarray | None = None  # bool (T, M), weeks aggregated from <7 days

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.weeks), len(self.variables)):
            raise ContractError(
                f"table values shape {self.values.shape} != "
                f"({len(self.weeks)}, {len(self.variables)})"
            )

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def index_of(self, position: int) -> int:
        """Row offset of 1-based canonical week position."""
        row = position - self.start_index
        if not 0 <= row < len(self.weeks):
            raise ContractError(f"week position {position} outside table")
        return row


def infer_policy(name: str) -> str:
    """Aggregation default from the variable name: totals sum, extremes keep."""
    if "Total" in name:
        return "sum"
    if "Min" in name:
        return "min"
    if "Max" in name:
        return "max"
    return "mean"


# --- daily-to-weekly aggregation ---


def aggregate_daily(records, policy: str):
    """Collapse dated daily values to one value per MMWR week.

    Returns (week -> value, week -> observation count); weeks with no
    records are simply absent. Counts below 7 flag partially observed weeks.
    """
    if policy not in POLICIES:
        raise ContractError(f"unknown aggregation policy {policy!r}")
    buckets: dict[MmwrWeek, list[float]] = {}
    for date, value in records:
        buckets.setdefault(mmwr_week_of(date), []).append(float(value))
    reduce = {"mean": np.mean, "min": np.min, "max": np.max, "sum": np.sum}[policy]
    values = {wk: float(reduce(vs)) for wk, vs in buckets.items()}
    counts = {wk: len(vs) for wk, vs in buckets.items()}
    return values, counts


def align(series: list[tuple[Variable, dict, dict]]) -> tuple[SeriesTable, list[MmwrWeek]]:
    """Join per-variable weekly dicts on the intersection of their spans.

    Returns the aligned table plus the weeks dropped from the union span.
    """
    if not series:
        raise ContractError("align: no input series")
    starts = [min(vals) for _, vals, _ in series if vals]
    ends = [max(vals) for _, vals, _ in series if vals]
    if len(starts) != len(series):
        raise DataQualityError("align: a source produced no weekly values")
    lo, hi = max(starts), min(ends)
    if hi.start_date < lo.start_date:
        raise DataQualityError("align: source date ranges do not overlap")
    grid: list[MmwrWeek] = []
    cursor = lo
    while cursor.start_date <= hi.start_date:
        grid.append(cursor)
        cursor = cursor.plus_weeks(1)
    values = np.full((len(grid), len(series)), np.nan)
    partial = np.zeros_like(values, dtype=bool)
    for j, (_, vals, counts) in enumerate(series):
        for i, wk in enumerate(grid):
            if wk in vals:
                values[i, j] = vals[wk]
                partial[i, j] = counts.get(wk, 7) < 7
    union_lo = min(starts)
    union_hi = max(ends)
    dropped = []
    cursor = union_lo
    while cursor.start_date <= union_hi.start_date:
        if cursor.start_date < lo.start_date or cursor.start_date > hi.start_date:
            dropped.append(cursor)
        cursor = cursor.plus_weeks(1)
    table = SeriesTable(grid, [v for v, _, _ in series], values, partial=partial)
    return table, dropped


# --- imputation ---


def impute(table: SeriesTable, max_gap: int = 4) -> SeriesTable:
    """Fill missing cells: linear interpolation inside, nearest value at edges.

    Any run of missing weeks longer than ``max_gap`` is a data-quality error.
    """
    values = table.values.copy()
    imputed = np.zeros_like(values, dtype=bool)
    for j, var in enumerate(table.variables):
        col = values[:, j]
        missing = np.isnan(col)
        if not missing.any():
            continue
        if missing.all():
            raise DataQualityError(f"variable {var.name!r} has no observed values")
        runs = _missing_runs(missing)
        for start, stop in runs:  # stop exclusive
            length = stop - start
            if length > max_gap:
                raise DataQualityError(
                    f"variable {var.name!r}: {length}-week gap at weeks "
                    f"{table.weeks[start]}..{table.weeks[stop - 1]} exceeds max {max_gap}"
                )
        observed = np.flatnonzero(~missing)
        col[: observed[0]] = col[observed[0]]
        col[observed[-1] + 1 :] = col[observed[-1]]
        interior = np.isnan(col)
        if interior.any():
            col[interior] = np.interp(
                np.flatnonzero(interior), np.flatnonzero(~interior), col[~interior]
            )
        imputed[:, j] = missing
    return replace(table, values=values, imputed=imputed)


def _missing_runs(missing: np.ndarray) -> list[tuple[int, int]]:
    runs = []
    start = None
    for i, m in enumerate(missing):
        if m and start is None:
            start = i
        elif not m and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(missing)))
    return runs


# --- scaling ---


@dataclass
class ScalerState:
    """Per-series min/max fitted on the training split only."""

    entries: dict[str, tuple[float, float]] = field(default_factory=dict)

    def fit_series(self, name: str, values: np.ndarray) -> None:
        values = values[np.isfinite(values)]
        if values.size == 0:
            raise ContractError(f"scaler fit on empty training split for {name!r}")
        self.entries[name] = (float(values.min()), float(values.max()))

    def scale(self, name: str, values: np.ndarray) -> np.ndarray:
        lo, hi = self.entries[name]
        if hi == lo:
            return np.zeros_like(np.asarray(values, dtype=np.float64))
        return (np.asarray(values, dtype=np.float64) - lo) / (hi - lo)

    def unscale(self, name: str, values: np.ndarray) -> np.ndarray:
        lo, hi = self.entries[name]
        return np.asarray(values, dtype=np.float64) * (hi - lo) + lo

    def unscale_delta(self, name: str, deltas: np.ndarray) -> np.ndarray:
        """Inverse map for differences: the additive offset cancels."""
        lo, hi = self.entries[name]
        return np.asarray(deltas, dtype=np.float64) * (hi - lo)


def fit_scaler(table: SeriesTable, train_end_week: int) -> ScalerState:
    """Min-max statistics over rows at canonical positions <= train_end_week."""
    rows = train_end_week - table.start_index + 1
    if rows < 1:
        raise ContractError(
            f"train_end_week {train_end_week} precedes table start {table.start_index}"
        )
    rows = min(rows, len(table.weeks))
    state = ScalerState()
    for j, var in enumerate(table.variables):
        state.fit_series(var.name, table.values[:rows, j])
        lo, hi = state.entries[var.name]
        if hi == lo:
            warnings.warn(f"variable {var.name!r} is constant on the training split; scales to 0")
    return state


def apply_scaler(table: SeriesTable, state: ScalerState) -> SeriesTable:
    values = np.column_stack(
        [state.scale(var.name, table.values[:, j]) for j, var in enumerate(table.variables)]
    )
    return replace(table, values=values)


# --- differencing ---


def difference(series: np.ndarray) -> np.ndarray:
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 1 or series.size < 2:
        raise ContractError(f"difference needs a 1-d series of length >= 2, got {series.shape}")
    return np.diff(series)


def inverse_difference(deltas: np.ndarray, last_observed: float) -> np.ndarray:
    """Rebuild levels from first differences, anchored at the last observation."""
    deltas = np.asarray(deltas, dtype=np.float64)
    if last_observed is None or not np.isfinite(last_observed):
        raise ContractError("inverse_difference requires a finite anchor value")
    return np.cumsum(deltas) + float(last_observed)


# --- lagged features ---


def lag_column_name(name: str, lag: int) -> str:
    return f"{name} ({-lag if lag else 0})"


def build_lags(table: SeriesTable, max_lag: int = 6) -> SeriesTable:
    """Expand every variable into offset copies at lags 0..max_lag.

    Column order is by variable then lag; the first ``max_lag`` rows are
    dropped because their earliest lags are undefined.
    """
    T = len(table.weeks)
    if max_lag < 0:
        raise ContractError("max_lag must be non-negative")
    if max_lag >= T:
        raise ContractError(f"max_lag {max_lag} >= table length {T}")
    cols = []
    variables = []
    for j, var in enumerate(table.variables):
        base = table.values[:, j]
        for lag in range(max_lag + 1):
            variables.append(replace(var, name=lag_column_name(var.name, lag)))
            cols.append(base[max_lag - lag : T - lag])
    values = np.column_stack(cols)
    return SeriesTable(
        table.weeks[max_lag:],
        variables,
        values,
        start_index=table.start_index + max_lag,
    )


# --- supervised windows ---


@dataclass
class WindowedDataset:
    inputs: np.ndarray  # (N, w, M) scaled lagged features, times t-w..t-1
    decoder_inputs: np.ndarray  # (N, w) scaled differenced target history
    targets: np.ndarray  # (N, H) scaled differenced target future
    origins: list[int]  # 1-based canonical week position t per sample
    origin_weeks: list[MmwrWeek]
    last_observed: np.ndarray  # (N,) raw target y_{t-1}
    actuals: np.ndarray  # (N, H) raw target future, for evaluation

    def __len__(self) -> int:
        return len(self.origins)

    def subset(self, idx) -> "WindowedDataset":
        idx = np.asarray(idx)
        return WindowedDataset(
            self.inputs[idx],
            self.decoder_inputs[idx],
            self.targets[idx],
            [self.origins[i] for i in idx],
            [self.origin_weeks[i] for i in idx],
            self.last_observed[idx],
            self.actuals[idx],
        )


@dataclass
class PreparedData:
    """Aligned, scaled arrays ready for windowing; rows match ``weeks``."""

    feature_names: list[str]
    features: np.ndarray  # (T', M) scaled lag-expanded predictors
    diff_scaled: np.ndarray  # (T',) scaled first differences of the target
    raw_target: np.ndarray  # (T',) target in original units
    weeks: list[MmwrWeek]
    start_index: int
    scaler: ScalerState
    target_name: str
    diff_name: str

    def window(self, w: int, horizon: int, stride: int = 1) -> WindowedDataset:
        return window(self, w, horizon, stride)


TARGET_DIFF_SUFFIX = " [diff]"


def prepare(
    table: SeriesTable,
    target: str,
    train_end_week: int,
    max_lag: int = 6,
) -> PreparedData:
    """Lag-expand, fit scalers on the training split, and align target series."""
    if np.isnan(table.values).any():
        raise ContractError("prepare requires an imputed, gap-free table")
    if target not in table.names:
        raise ContractError(f"target {target!r} not among table variables")
    lagged = build_lags(table, max_lag)
    scaler = fit_scaler(lagged, train_end_week)
    scaled = apply_scaler(lagged, scaler)

    raw = table.column(target)
    diff_name = target + TARGET_DIFF_SUFFIX
    deltas = np.concatenate([[np.nan], difference(raw)])  # aligned to table rows
    train_rows = train_end_week - table.start_index + 1
    scaler.fit_series(diff_name, deltas[1:train_rows])
    diff_scaled = np.where(np.isnan(deltas), 0.0, scaler.scale(diff_name, deltas))

    trim = max_lag
    return PreparedData(
        feature_names=scaled.names,
        features=scaled.values,
        diff_scaled=diff_scaled[trim:],
        raw_target=raw[trim:],
        weeks=lagged.weeks,
        start_index=lagged.start_index,
        scaler=scaler,
        target_name=target,
        diff_name=diff_name,
    )


def window(prepared: PreparedData, w: int, horizon: int, stride: int = 1) -> WindowedDataset:
    """Cut sliding samples: inputs cover t-w..t-1, targets cover t..t+H-1."""
    if w < 1 or horizon < 1 or stride < 1:
        raise ContractError(f"window: w={w}, horizon={horizon}, stride={stride} invalid")
    T = len(prepared.weeks)
    if T < w + horizon:
        raise ContractError(f"window: table length {T} < w + horizon = {w + horizon}")
    positions = range(w, T - horizon + 1, stride)
    inputs = np.stack([prepared.features[p - w : p] for p in positions])
    dec = np.stack([prepared.diff_scaled[p - w : p] for p in positions])
    targets = np.stack([prepared.diff_scaled[p : p + horizon] for p in positions])
    actuals = np.stack([prepared.raw_target[p : p + horizon] for p in positions])
    last = np.array([prepared.raw_target[p - 1] for p in positions])
    return WindowedDataset(
        inputs=inputs,
        decoder_inputs=dec,
        targets=targets,
        origins=[prepared.start_index + p for p in positions],
        origin_weeks=[prepared.weeks[p] for p in positions],
        last_observed=last,
        actuals=actuals,
    )


# --- synthetic data ---


@dataclass
class SynthSpec:
    """Layout of a generated table with one known lagged driver."""

    weeks: int = 200
    predictors: int = 5  # driver plus seasonal nuisance variables
    period: int = 52
    noise: float = 0.1
    driver_lag: int = 4
    driver_wander: float = 0.25  # weight of the aperiodic component in the driver
    driver_ar: float = 0.2  # persistence of the wander; lower = sharper innovations
    target_base: float = 100.0
    target_scale: float = 50.0
    start: dt.date = dt.date(2006, 1, 1)

    def __post_init__(self):
        if self.weeks < 2 or self.predictors < 1:
            raise ContractError("synth spec needs weeks >= 2 and predictors >= 1")
        if not 0 <= self.driver_lag < self.weeks:
            raise ContractError("driver_lag outside table span")


DRIVER_NAME = "env_driver"
TARGET_NAME = "cases"


def synth_generate(spec: SynthSpec, seed: int):
    """Deterministic synthetic SeriesTable plus ground-truth metadata.

    The target is target_base + target_scale * s(t - L) + noise, where s is
    the driver's latent signal: a period-``period`` sinusoid mixed with a
    smooth AR(1) wander so the driver is informative beyond pure seasonality.
    """
    rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
    T = spec.weeks
    t = np.arange(T)

    ar = np.zeros(T)
    shocks = rng.normal(size=T)
    for i in range(1, T):
        ar[i] = spec.driver_ar * ar[i - 1] + shocks[i]
    sd = ar.std()
    if sd > 0:
        ar /= sd

    signal = np.sin(2 * np.pi * t / spec.period) + spec.driver_wander * ar
    columns = {DRIVER_NAME: signal + spec.noise * rng.normal(size=T)}
    # nuisance predictors are white noise: unambiguously uninformative, so
    # driver recovery has a clean ground truth
    for m in range(1, spec.predictors):
        columns[f"env_noise_{m}"] = rng.normal(size=T)

    lagged_signal = np.concatenate([np.full(spec.driver_lag, signal[0]), signal])[:T]
    target = (
        spec.target_base
        + spec.target_scale * lagged_signal
        + spec.noise * spec.target_scale * rng.normal(size=T)
    )

    variables = [Variable(TARGET_NAME, "surveillance", "sum")]
    values = [target]
    for name, col in columns.items():
        variables.append(Variable(name, "synthetic", "mean"))
        values.append(col)

    week0 = mmwr_week_of(spec.start)
    weeks = [week0.plus_weeks(i) for i in range(T)]
    table = SeriesTable(weeks, variables, np.column_stack(values))
    truth = {
        "target": TARGET_NAME,
        "driver": DRIVER_NAME,
        "lag": spec.driver_lag,
        "driver_columns": [lag_column_name(DRIVER_NAME, k) for k in range(7)],
        "relationship": "target = base + scale * driver_signal(t - lag) + noise",
    }
    return table, truth


# --- delimited text I/O ---


def write_canonical(table: SeriesTable, path) -> None:
    """Canonical aligned table: week_start, mmwr_year, mmwr_week, features."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["week_start", "mmwr_year", "mmwr_week"] + table.names)
        for i, wk in enumerate(table.weeks):
            row = [wk.start_date.isoformat(), wk.year, wk.week]
            row += [_fmt(v) for v in table.values[i]]
            writer.writerow(row)


def write_provenance(table: SeriesTable, path) -> None:
    """Sidecar listing imputed and partially observed cells."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["variable", "week_start", "flag"])
        for kind, mask in (("imputed", table.imputed), ("partial", table.partial)):
            if mask is None:
                continue
            for i, j in zip(*np.nonzero(mask)):
                writer.writerow(
                    [table.variables[j].name, table.weeks[i].start_date.isoformat(), kind]
                )


def read_canonical(path) -> SeriesTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:3] != ["week_start", "mmwr_year", "mmwr_week"]:
            raise SchemaError(f"{path}: not a canonical table (bad header)")
        names = header[3:]
        weeks, rows = [], []
        for ln, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(f"{path}:{ln}: expected {len(header)} fields")
            date = dt.date.fromisoformat(row[0])
            weeks.append(MmwrWeek(int(row[1]), int(row[2]), date))
            rows.append([float(v) if v != "" else np.nan for v in row[3:]])
    variables = [Variable(n, "weather", infer_policy(n)) for n in names]
    return SeriesTable(weeks, variables, np.array(rows, dtype=np.float64))


def _fmt(v: float) -> str:
    return "" if np.isnan(v) else repr(float(v))


def load_surveillance(path, name: str = "cases"):
    """Weekly counts keyed by (mmwr_year, mmwr_week); no date parsing needed."""
    values: dict[MmwrWeek, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"mmwr_year", "mmwr_week", "cases"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise SchemaError(f"{path}: surveillance header must contain {sorted(required)}")
        for ln, row in enumerate(reader, start=2):
            try:
                year = int(row["mmwr_year"])
                week = int(row["mmwr_week"])
            except ValueError as exc:
                raise SchemaError(f"{path}:{ln}: bad week key: {exc}") from None
            if not 1 <= week <= weeks_in_mmwr_year(year):
                raise SchemaError(f"{path}:{ln}: week {week} invalid for MMWR year {year}")
            if row["cases"] == "":
                continue
            start = mmwr_year_start(year) + dt.timedelta(weeks=week - 1)
            values[MmwrWeek(year, week, start)] = float(row["cases"])
    counts = {wk: 7 for wk in values}
    return Variable(name, "surveillance", "sum"), values, counts


def load_weather(path, policies: dict[str, str] | None = None):
    """Daily weather file: ISO date column plus one column per variable."""
    policies = policies or {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "date" not in reader.fieldnames:
            raise SchemaError(f"{path}: weather header must contain a 'date' column")
        names = [c for c in reader.fieldnames if c != "date"]
        records: dict[str, list] = {n: [] for n in names}
        for ln, row in enumerate(reader, start=2):
            try:
                date = dt.date.fromisoformat(row["date"])
            except ValueError as exc:
                raise SchemaError(f"{path}:{ln}: bad date: {exc}") from None
            for n in names:
                if row[n] != "":
                    records[n].append((date, float(row[n])))
    out = []
    for n in names:
        policy = policies.get(n, infer_policy(n))
        values, counts = aggregate_daily(records[n], policy)
        out.append((Variable(n, "weather", policy), values, counts))
    return out


def load_airquality(path, name: str = "Daily Mean PM10 Concentration"):
    """Daily PM10 file: date, pm10_daily_mean."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"date", "pm10_daily_mean"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise SchemaError(f"{path}: air-quality header must contain {sorted(required)}")
        for ln, row in enumerate(reader, start=2):
            try:
                date = dt.date.fromisoformat(row["date"])
            except ValueError as exc:
                raise SchemaError(f"{path}:{ln}: bad date: {exc}") from None
            if row["pm10_daily_mean"] != "":
                records.append((date, float(row["pm10_daily_mean"])))
    values, counts = aggregate_daily(records, "mean")
    return Variable(name, "air-quality", "mean"), values, counts
