"""Training, fixed-weight walk-forward evaluation, metrics, importance.

A run is fully determined by (config, seed, data): parameter init, batch
shuffling, and dropout all draw from counter-based generators keyed by the
seed. Weeks after the training boundary but before the test range are never
training targets; they may appear inside input windows only.
"""

from __future__ import annotations

import concurrent.futures
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as tt
from .data import PreparedData, SeriesTable, WindowedDataset, prepare, window
from .errors import ContractError
from .graph import graph_from_table
from .model import ModelConfig, ModelState, init_params, model_forward
from .tensor import AdamState, Tensor, adam_step, backward, make_rng, mse_loss, zero_grads


@dataclass
class TrainConfig:
    horizon: int = 2
    window: int | None = None  # defaults to 3 * horizon
    learning_rate: float = 1e-4
    max_epochs: int = 100
    patience: int = 20
    batch_size: int = 32
    seed: int = 0
    train_end_week: int = 850
    test_start_week: int = 900
    test_end_week: int = 991
    val_fraction: float = 0.10
    max_lag: int = 6
    target: str = "cases"
    corr_threshold: float = 0.05
    min_improvement: float = 1e-8
    model: ModelConfig = field(default_factory=ModelConfig)

    @property
    def effective_window(self) -> int:
        return self.window if self.window is not None else 3 * self.horizon

    def validate(self):
        if self.horizon < 1:
            raise ContractError("horizon must be >= 1")
        if self.effective_window < self.horizon:
            raise ContractError("window shorter than horizon")
        if self.test_start_week <= self.train_end_week:
            raise ContractError("test range must start after the training boundary")
        if not 0.0 < self.val_fraction < 1.0:
            raise ContractError("val_fraction must be in (0, 1)")


@dataclass
class EpochLog:
    epoch: int
    train_mse: float
    val_mse: float


@dataclass
class TrainLog:
    epochs: list[EpochLog] = field(default_factory=list)
    best_epoch: int = -1
    best_val_mse: float = float("inf")
    steps: int = 0
    stopped_early: bool = False

    @property
    def best_train_mse(self) -> float:
        return min((e.train_mse for e in self.epochs), default=float("inf"))


def split_train_val(dataset: WindowedDataset, config: TrainConfig):
    """Training windows end at or before the boundary; last fraction is validation."""
    usable = [
        i
        for i, origin in enumerate(dataset.origins)
        if origin + config.horizon - 1 <= config.train_end_week
    ]
    if not usable:
        raise ContractError("no training windows before the training boundary")
    n_val = max(1, int(np.ceil(config.val_fraction * len(usable))))
    if n_val >= len(usable):
        raise ContractError(
            f"validation split ({n_val}) would consume all {len(usable)} training windows"
        )
    return dataset.subset(usable[:-n_val]), dataset.subset(usable[-n_val:])


def _eval_mse(params, config: TrainConfig, graph, ds: WindowedDataset, chunk: int = 256) -> float:
    total, count = 0.0, 0
    for lo in range(0, len(ds), chunk):
        sub = ds.subset(np.arange(lo, min(lo + chunk, len(ds))))
        out, _ = model_forward(
            params, config.model, graph, sub.inputs, sub.decoder_inputs, config.horizon
        )
        total += float(np.sum((out.data - sub.targets) ** 2))
        count += sub.targets.size
    return total / count


def train(config: TrainConfig, table: SeriesTable):
    """Fit a model; returns (best-validation ModelState, TrainLog)."""
    config.validate()
    prepared = prepare(table, config.target, config.train_end_week, config.max_lag)
    graph = _training_graph(prepared, config)
    dataset = window(prepared, config.effective_window, config.horizon)
    train_ds, val_ds = split_train_val(dataset, config)
    state, log = fit(config, graph, prepared, train_ds, val_ds)
    return state, log


def _training_graph(prepared: PreparedData, config: TrainConfig):
    rows = config.train_end_week - prepared.start_index + 1
    if rows < 2:
        raise ContractError("training split too short for correlation graph")
    return graph_from_table(
        prepared.features[:rows], prepared.feature_names, config.corr_threshold
    )


def fit(
    config: TrainConfig,
    graph,
    prepared: PreparedData,
    train_ds: WindowedDataset,
    val_ds: WindowedDataset,
):
    """Adam + early stopping on validation loss; returns the best checkpoint."""
    if len(val_ds) == 0:
        raise ContractError("empty validation split")
    model_cfg = config.model
    init_rng = make_rng(config.seed, 0)
    drop_rng = make_rng(config.seed, 1)
    shuffle_rng = make_rng(config.seed, 2)
    params = init_params(model_cfg, len(prepared.feature_names), init_rng)
    adam = AdamState(learning_rate=config.learning_rate)
    log = TrainLog()
    best_params = {k: p.data.copy() for k, p in params.items()}
    since_best = 0
    n = len(train_ds)
    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(n)
        epoch_sse, epoch_terms = 0.0, 0
        for lo in range(0, n, config.batch_size):
            batch = train_ds.subset(order[lo : lo + config.batch_size])
            zero_grads(params)
            with tt.Tape():
                out, _ = model_forward(
                    params,
                    model_cfg,
                    graph,
                    batch.inputs,
                    batch.decoder_inputs,
                    config.horizon,
                    rng=drop_rng,
                    training=True,
                )
                loss = mse_loss(out, Tensor(batch.targets))
            backward(loss)
            adam_step(params, {k: p.grad for k, p in params.items()}, adam)
            log.steps += 1
            epoch_sse += loss.item() * batch.targets.size
            epoch_terms += batch.targets.size
        val_mse = _eval_mse(params, config, graph, val_ds)
        log.epochs.append(EpochLog(epoch, epoch_sse / epoch_terms, val_mse))
        if log.best_val_mse - val_mse > config.min_improvement:
            log.best_val_mse = val_mse
            log.best_epoch = epoch
            best_params = {k: p.data.copy() for k, p in params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                log.stopped_early = True
                break
    for k, p in params.items():
        p.data = best_params[k]
        p.grad = None
    state = ModelState(
        config=model_cfg,
        params=params,
        graph=graph,
        scaler=prepared.scaler,
        feature_names=prepared.feature_names,
        target_name=prepared.target_name,
        diff_name=prepared.diff_name,
        horizon=config.horizon,
        window=config.effective_window,
        seed=config.seed,
        train_end_week=config.train_end_week,
        extra={
            "best_epoch": log.best_epoch,
            "best_val_mse": log.best_val_mse,
            "steps": log.steps,
        },
    )
    return state, log


# --- walk-forward evaluation ---


@dataclass
class ForecastReport:
    """Per-origin, per-step forecasts with provenance."""

    origins: list[int]
    origin_week_labels: list[str]
    horizon: int
    y_true: np.ndarray  # (N, H)
    y_pred: np.ndarray  # (N, H)
    seed: int
    history: np.ndarray | None = None  # (N, w) raw target inputs, for charts

    def flat_rows(self):
        for i, origin in enumerate(self.origins):
            for h in range(self.horizon):
                yield origin, self.origin_week_labels[i], h + 1, self.y_true[i, h], self.y_pred[i, h]


def walk_forward(
    state: ModelState,
    table: SeriesTable,
    test_range: tuple[int, int] | None = None,
    max_lag: int = 6,
) -> ForecastReport:
    """Forecast from every origin in the test range with frozen weights, stride 1.

    Origins whose full horizon extends past the range end are skipped, so
    every emitted forecast is complete.
    """
    if test_range is None:
        test_range = (state.train_end_week + 1, state.train_end_week + 1)
    prepared = _prepare_for_state(state, table, max_lag)
    dataset = window(prepared, state.window, state.horizon)
    lo, hi = test_range
    keep = [
        i
        for i, origin in enumerate(dataset.origins)
        if lo <= origin <= hi and origin + state.horizon - 1 <= hi
    ]
    if not keep:
        raise ContractError(
            f"no complete forecast origins in test range {lo}..{hi}; "
            f"windows need {state.window} preceding weeks"
        )
    first_needed = lo - state.window
    if dataset.origins[0] > lo and first_needed >= prepared.start_index:
        raise ContractError(f"insufficient preceding history before origin {lo}")
    sub = dataset.subset(keep)
    preds = []
    for chunk_lo in range(0, len(sub), 256):
        part = sub.subset(np.arange(chunk_lo, min(chunk_lo + 256, len(sub))))
        preds.append(state.forecast(part.inputs, part.decoder_inputs, part.last_observed))
    raw_hist = np.stack(
        [
            prepared.raw_target[
                origin - prepared.start_index - state.window : origin - prepared.start_index
            ]
            for origin in sub.origins
        ]
    )
    return ForecastReport(
        origins=sub.origins,
        origin_week_labels=[str(w) for w in sub.origin_weeks],
        horizon=state.horizon,
        y_true=sub.actuals,
        y_pred=np.concatenate(preds, axis=0),
        seed=state.seed,
        history=raw_hist,
    )


def _prepare_for_state(state: ModelState, table: SeriesTable, max_lag: int) -> PreparedData:
    """Rebuild the feature pipeline and verify it matches the checkpoint."""
    prepared = prepare(table, state.target_name, state.train_end_week, max_lag)
    if prepared.feature_names != state.feature_names:
        raise ContractError("table features do not match the checkpoint")
    if prepared.scaler.entries != state.scaler.entries:
        raise ContractError("table training-split statistics do not match the checkpoint")
    return prepared


def latest_forecast(state: ModelState, table: SeriesTable, max_lag: int = 6):
    """Forecast the H weeks after the last table row.

    Returns (origin position, origin MmwrWeek, level forecasts).
    """
    prepared = _prepare_for_state(state, table, max_lag)
    T = len(prepared.weeks)
    w = state.window
    if T < w:
        raise ContractError(f"table has {T} usable rows; window needs {w}")
    inputs = prepared.features[T - w :][None]
    decoder = prepared.diff_scaled[T - w :][None]
    anchor = prepared.raw_target[-1:]
    values = state.forecast(inputs, decoder, anchor)[0]
    origin_week = prepared.weeks[-1].plus_weeks(1)
    return prepared.start_index + T, origin_week, values


# --- metrics ---


@dataclass
class MetricsReport:
    mape: float
    mae: float
    mse: float
    rse: float
    n_terms: int
    zero_actual_terms: int  # excluded from MAPE only
    rse_numerator: float
    rse_denominator: float

    def as_dict(self) -> dict:
        return {
            "mape": self.mape,
            "mae": self.mae,
            "mse": self.mse,
            "rse": self.rse,
            "n_terms": self.n_terms,
            "zero_actual_terms": self.zero_actual_terms,
            "rse_numerator": self.rse_numerator,
            "rse_denominator": self.rse_denominator,
        }


def metrics(predictions: np.ndarray, actuals: np.ndarray) -> MetricsReport:
    """MAPE / MAE / MSE / RSE aggregated over all origins and steps."""
    predictions = np.asarray(predictions, dtype=np.float64).ravel()
    actuals = np.asarray(actuals, dtype=np.float64).ravel()
    if predictions.shape != actuals.shape or predictions.size == 0:
        raise ContractError(
            f"metrics need matching non-empty arrays, got {predictions.shape} vs {actuals.shape}"
        )
    err = predictions - actuals
    nonzero = actuals != 0
    mape = float(np.mean(np.abs(err[nonzero]) / np.abs(actuals[nonzero]))) if nonzero.any() else float("nan")
    sse = float(np.sum(err**2))
    denom = float(np.sum((actuals - actuals.mean()) ** 2))
    rse = float(np.sqrt(sse / denom)) if denom > 0 else float("inf") if sse > 0 else 0.0
    return MetricsReport(
        mape=mape,
        mae=float(np.mean(np.abs(err))),
        mse=float(np.mean(err**2)),
        rse=rse,
        n_terms=predictions.size,
        zero_actual_terms=int((~nonzero).sum()),
        rse_numerator=sse,
        rse_denominator=denom,
    )


def report_metrics(report: ForecastReport) -> MetricsReport:
    return metrics(report.y_pred, report.y_true)


# --- multi-seed feature importance ---


@dataclass
class ImportanceEntry:
    name: str
    frequency: float  # fraction of seeds selecting the feature
    mean_rank: float  # mean rank among selected (1 = largest gate), nan if never
    mean_gate: float  # mean gate value across all seeds


@dataclass
class ImportanceReport:
    horizon: int
    seeds: list[int]
    k: int
    entries: list[ImportanceEntry]
    selections: list[list[str]]  # per-seed selected feature names, rank order

    def frequency_of(self, name: str) -> float:
        for e in self.entries:
            if e.name == name:
                return e.frequency
        return 0.0


def _run_importance_seed(config: TrainConfig, table: SeriesTable, seed: int):
    state, _ = train(replace(config, seed=seed), table)
    gates = state.gate_values()
    mask = state.selection_mask()
    selected = np.flatnonzero(mask)
    order = selected[np.argsort(-gates[selected], kind="stable")]
    return gates, [state.feature_names[i] for i in order]


def worker_count(n_tasks: int, requested: int | None = None) -> int:
    cap = os.environ.get("EPIGRAPH_THREADS")
    limit = requested if requested is not None else (int(cap) if cap else 1)
    return max(1, min(limit, n_tasks))


def importance(
    config: TrainConfig,
    table: SeriesTable,
    n_seeds: int = 20,
    max_workers: int | None = None,
) -> ImportanceReport:
    """Train independent seeds and aggregate gate selections and ranks."""
    if n_seeds < 1:
        raise ContractError("importance needs n_seeds >= 1")
    seeds = [config.seed + i for i in range(n_seeds)]
    workers = worker_count(n_seeds, max_workers)
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: _run_importance_seed(config, table, s), seeds))
    else:
        results = [_run_importance_seed(config, table, s) for s in seeds]

    rank_lists: dict[str, list[int]] = {}
    count: dict[str, int] = {}
    selections = []
    for _, selected in results:
        selections.append(selected)
        for rank, name in enumerate(selected, start=1):
            count[name] = count.get(name, 0) + 1
            rank_lists.setdefault(name, []).append(rank)
    all_gates = np.stack([g for g, _ in results])
    layout = _feature_layout(config, table)
    entries = []
    for name in sorted(count):
        j = layout.index(name)
        entries.append(
            ImportanceEntry(
                name=name,
                frequency=count[name] / n_seeds,
                mean_rank=float(np.mean(rank_lists[name])),
                mean_gate=float(all_gates[:, j].mean()),
            )
        )
    entries.sort(key=lambda e: (-e.frequency, e.mean_rank, e.name))
    return ImportanceReport(
        horizon=config.horizon,
        seeds=seeds,
        k=len(results[0][1]),
        entries=entries,
        selections=selections,
    )


def _feature_layout(config: TrainConfig, table: SeriesTable) -> list[str]:
    prepared = prepare(table, config.target, config.train_end_week, config.max_lag)
    return prepared.feature_names
