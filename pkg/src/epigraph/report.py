"""Report writers: delimited text, structured JSON, and SVG line charts.

All writers are deterministic: floats are serialized with repr (CSV/JSON) or
fixed decimals (SVG), keys are sorted, and no timestamps appear in any
artifact except the run manifest.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .train import ForecastReport, ImportanceReport, MetricsReport

HORIZON_COLORS = {2: "#1f77b4", 4: "#2ca02c", 8: "#ff7f0e", 16: "#d62728"}
FALLBACK_COLOR = "#9467bd"


def horizon_color(horizon: int) -> str:
    return HORIZON_COLORS.get(horizon, FALLBACK_COLOR)


def write_forecast_report(report: ForecastReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["origin_week", "origin_label", "step", "horizon", "y_true", "y_pred"])
        for origin, label, step, y_true, y_pred in report.flat_rows():
            writer.writerow([origin, label, step, report.horizon, repr(float(y_true)), repr(float(y_pred))])


def write_metrics(
    report: MetricsReport,
    csv_path,
    json_path,
    config_echo: dict | None = None,
    seeds: list[int] | None = None,
) -> None:
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "value"])
        for key, value in report.as_dict().items():
            writer.writerow([key, repr(float(value)) if isinstance(value, float) else value])
    doc = {"metrics": report.as_dict(), "config": config_echo or {}, "seeds": seeds or []}
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_importance(
    report: ImportanceReport,
    csv_path,
    json_path,
    config_echo: dict | None = None,
) -> None:
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["feature", "frequency", "mean_rank", "mean_gate"])
        for e in report.entries:
            writer.writerow([e.name, repr(e.frequency), repr(e.mean_rank), repr(e.mean_gate)])
    doc = {
        "horizon": report.horizon,
        "k": report.k,
        "seeds": report.seeds,
        "entries": [
            {
                "feature": e.name,
                "frequency": e.frequency,
                "mean_rank": e.mean_rank,
                "mean_gate": e.mean_gate,
            }
            for e in report.entries
        ],
        "selections": report.selections,
        "config": config_echo or {},
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_importance_rank_table(reports: list[ImportanceReport], path) -> None:
    """Cross-horizon rank table: per-horizon rank of each feature, empty outside top-k."""
    ranked: dict[int, dict[str, int]] = {}
    for rep in reports:
        ranked[rep.horizon] = {e.name: i + 1 for i, e in enumerate(rep.entries[: rep.k])}
    features: list[str] = []
    for rep in reports:
        for e in rep.entries:
            if e.name not in features:
                features.append(e.name)
    horizons = [rep.horizon for rep in reports]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["feature"] + [f"{h}-week" for h in horizons])
        for name in features:
            writer.writerow([name] + [ranked[h].get(name, "") for h in horizons])


# --- SVG charts ---


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def svg_line_chart(
    series: list[dict],
    title: str = "",
    width: int = 720,
    height: int = 360,
) -> str:
    """Plain line chart; each series dict has label, color, x, y."""
    margin = 48
    xs = np.concatenate([np.asarray(s["x"], dtype=np.float64) for s in series])
    ys = np.concatenate([np.asarray(s["y"], dtype=np.float64) for s in series])
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo -= pad
    y_hi += pad

    def px(x):
        return margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def py(y):
        return height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width // 2}" y="20" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black" stroke-width="1"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black" stroke-width="1"/>',
        f'<text x="{margin}" y="{height - margin + 16}" font-family="sans-serif" '
        f'font-size="11" text-anchor="middle">{_fmt(x_lo)}</text>',
        f'<text x="{width - margin}" y="{height - margin + 16}" font-family="sans-serif" '
        f'font-size="11" text-anchor="middle">{_fmt(x_hi)}</text>',
        f'<text x="{margin - 6}" y="{height - margin}" font-family="sans-serif" '
        f'font-size="11" text-anchor="end">{_fmt(y_lo)}</text>',
        f'<text x="{margin - 6}" y="{margin + 4}" font-family="sans-serif" '
        f'font-size="11" text-anchor="end">{_fmt(y_hi)}</text>',
    ]
    legend_y = 36
    for s in series:
        points = " ".join(
            f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(s["x"], s["y"])
        )
        parts.append(
            f'<polyline fill="none" stroke="{s["color"]}" stroke-width="1.5" points="{points}"/>'
        )
        parts.append(
            f'<text x="{width - margin - 140}" y="{legend_y}" font-family="sans-serif" '
            f'font-size="11" fill="{s["color"]}">{s["label"]}</text>'
        )
        legend_y += 14
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def forecast_sample_chart(report: ForecastReport, index: int) -> str:
    """One test sample: observed counts in black, forecast in the horizon color."""
    origin = report.origins[index]
    H = report.horizon
    series = []
    if report.history is not None:
        w = report.history.shape[1]
        obs_x = list(range(origin - w, origin)) + list(range(origin, origin + H))
        obs_y = list(report.history[index]) + list(report.y_true[index])
    else:
        obs_x = list(range(origin, origin + H))
        obs_y = list(report.y_true[index])
    series.append({"label": "observed", "color": "black", "x": obs_x, "y": obs_y})
    series.append(
        {
            "label": f"{H}-week forecast",
            "color": horizon_color(H),
            "x": list(range(origin, origin + H)),
            "y": list(report.y_pred[index]),
        }
    )
    title = f"origin week {origin} ({report.origin_week_labels[index]})"
    return svg_line_chart(series, title=title)


def write_forecast_charts(report: ForecastReport, out_dir) -> list:
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, origin in enumerate(report.origins):
        path = os.path.join(out_dir, f"sample_{origin:04d}.svg")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(forecast_sample_chart(report, i))
        paths.append(path)
    return paths


def write_train_log(log, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_mse", "val_mse"])
        for e in log.epochs:
            writer.writerow([e.epoch, repr(e.train_mse), repr(e.val_mse)])
