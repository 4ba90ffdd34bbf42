import json
import os

import numpy as np
import pytest

from epigraph.cli import main

DESK_CFG = """
target = cases
horizon = 2
seed = 3
train_end_week = 70
test_start_week = 80
test_end_week = 100
max_epochs = 3
batch_size = 16
model.d_model = 16
model.n_heads = 2
model.d_ff = 16
model.encoder_layers = 1
model.decoder_layers = 1
model.node_dim = 4
model.gat_layers = 1
model.gat_heads = 2
model.gat_head_dim = 4
synth.weeks = 110
synth.predictors = 2
synth.noise = 0.05
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "desk.cfg"
    cfg.write_text(DESK_CFG)
    assert main(["synth", "--config", str(cfg), "--out", str(root / "synth")]) == 0
    return root, cfg


def test_synth_outputs(workspace):
    root, _ = workspace
    assert (root / "synth" / "table.csv").exists()
    truth = json.loads((root / "synth" / "truth.json").read_text())
    assert truth["driver"] == "env_driver"
    assert (root / "synth" / "config.resolved").exists()
    assert (root / "synth" / "manifest.json").exists()


def test_synth_deterministic_bytes(workspace, tmp_path):
    root, cfg = workspace
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    assert (root / "synth" / "table.csv").read_bytes() == (tmp_path / "again" / "table.csv").read_bytes()


def test_train_eval_forecast_graph(workspace):
    root, cfg = workspace
    table = str(root / "synth" / "table.csv")
    assert main(["train", "--config", str(cfg), "--table", table, "--out", str(root / "train")]) == 0
    ckpt = root / "train" / "checkpoint.bin"
    assert ckpt.exists() and (root / "train" / "train_log.csv").exists()

    assert (
        main(
            [
                "eval",
                "--config",
                str(cfg),
                "--table",
                table,
                "--checkpoint",
                str(ckpt),
                "--out",
                str(root / "eval"),
            ]
        )
        == 0
    )
    assert (root / "eval" / "forecast_report.csv").exists()
    metrics = json.loads((root / "eval" / "metrics.json").read_text())
    assert set(metrics["metrics"]) >= {"mape", "mae", "mse", "rse"}
    charts = list((root / "eval" / "charts").glob("sample_*.svg"))
    assert len(charts) == 20  # origins 80..99 at horizon 2 within range 80..100

    assert (
        main(
            [
                "forecast",
                "--config",
                str(cfg),
                "--table",
                table,
                "--checkpoint",
                str(ckpt),
                "--out",
                str(root / "fc"),
            ]
        )
        == 0
    )
    lines = (root / "fc" / "forecast.csv").read_text().splitlines()
    assert lines[0] == "origin_week,origin_label,step,y_pred"
    assert len(lines) == 3  # header + horizon rows

    assert (
        main(
            [
                "graph",
                "--config",
                str(cfg),
                "--table",
                table,
                "--checkpoint",
                str(ckpt),
                "--out",
                str(root / "graph"),
            ]
        )
        == 0
    )
    edges = (root / "graph" / "edges.csv").read_text().splitlines()
    assert edges[0] == "u_name,v_name,weight"
    mask_lines = (root / "graph" / "gate_mask.csv").read_text().splitlines()
    selected = [l for l in mask_lines[1:] if l.endswith(",1")]
    assert len(selected) == 3  # ceil(0.1 * 21)


def test_eval_rerun_byte_identical(workspace, tmp_path):
    root, cfg = workspace
    table = str(root / "synth" / "table.csv")
    ckpt = str(root / "train" / "checkpoint.bin")
    out2 = tmp_path / "eval2"
    assert main(["eval", "--config", str(cfg), "--table", table, "--checkpoint", ckpt, "--out", str(out2)]) == 0
    for name in ("forecast_report.csv", "metrics.csv", "metrics.json"):
        assert (root / "eval" / name).read_bytes() == (out2 / name).read_bytes()
    for chart in (root / "eval" / "charts").iterdir():
        assert chart.read_bytes() == (out2 / "charts" / chart.name).read_bytes()


def test_exit_codes(workspace, tmp_path, capsys):
    root, cfg = workspace
    table = str(root / "synth" / "table.csv")
    # unknown config key -> 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense_key = 1\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    # missing checkpoint -> 4
    assert (
        main(
            [
                "eval",
                "--config",
                str(cfg),
                "--table",
                table,
                "--checkpoint",
                str(tmp_path / "none.bin"),
                "--out",
                str(tmp_path / "y"),
            ]
        )
        == 4
    )
    # missing table -> 4
    assert main(["train", "--config", str(cfg), "--table", str(tmp_path / "no.csv"), "--out", str(tmp_path / "z")]) == 4
    # no table configured -> 2
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "w")]) == 2
    capsys.readouterr()


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--horizon", "5"])  # not one of 2/4/8/16
    assert exc.value.code == 2


def test_ingest_pipeline(tmp_path):
    surveillance = tmp_path / "sur.csv"
    weather = tmp_path / "wx.csv"
    air = tmp_path / "aq.csv"
    # weeks 2020W10..W13 (starting 2020-03-01)
    rows = ["mmwr_year,mmwr_week,cases"]
    for wk in range(10, 14):
        rows.append(f"2020,{wk},{wk * 10}")
    surveillance.write_text("\n".join(rows) + "\n")

    wx = ["date,Air Temp - Mean,Solar Rad. - Total"]
    import datetime as dt

    for day in range(28):  # 2020-03-01 .. 2020-03-28
        d = dt.date(2020, 3, 1) + dt.timedelta(days=day)
        wx.append(f"{d.isoformat()},{10 + day % 7},{day % 5}")
    weather.write_text("\n".join(wx) + "\n")

    aq = ["date,pm10_daily_mean"]
    for day in range(0, 28, 2):  # every other day
        d = dt.date(2020, 3, 1) + dt.timedelta(days=day)
        aq.append(f"{d.isoformat()},{20 + day}")
    air.write_text("\n".join(aq) + "\n")

    out = tmp_path / "ingest"
    assert (
        main(
            [
                "ingest",
                "--surveillance",
                str(surveillance),
                "--weather",
                str(weather),
                "--airquality",
                str(air),
                "--out",
                str(out),
            ]
        )
        == 0
    )
    table = (out / "table.csv").read_text().splitlines()
    header = table[0].split(",")
    assert header[:3] == ["week_start", "mmwr_year", "mmwr_week"]
    assert set(header[3:]) == {
        "cases",
        "Air Temp - Mean",
        "Solar Rad. - Total",
        "Daily Mean PM10 Concentration",
    }
    assert len(table) == 5  # 4 aligned weeks + header
    # totals policy: first week of solar = sum of 7 daily values
    solar_col = header.index("Solar Rad. - Total")
    first = table[1].split(",")
    assert float(first[solar_col]) == sum(d % 5 for d in range(7))


def test_ingest_weather_daily_to_weekly_rows(tmp_path):
    weather = tmp_path / "wx.csv"
    import datetime as dt

    lines = ["date,Air Temp - Mean"]
    for day in range(14):
        d = dt.date(2020, 3, 1) + dt.timedelta(days=day)
        lines.append(f"{d.isoformat()},{day}")
    weather.write_text("\n".join(lines) + "\n")
    out = tmp_path / "only_wx"
    assert main(["ingest", "--weather", str(weather), "--out", str(out)]) == 0
    rows = (out / "table.csv").read_text().splitlines()
    assert len(rows) == 3  # 14 daily rows -> 2 weekly rows


def test_ingest_schema_violation_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("wrong,header\n1,2\n")
    assert main(["ingest", "--surveillance", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "mmwr_year" in err


def test_ingest_gap_overflow_exit_3(tmp_path, capsys):
    surveillance = tmp_path / "sur.csv"
    rows = ["mmwr_year,mmwr_week,cases"]
    for wk in list(range(1, 5)) + list(range(11, 15)):  # 6-week hole
        rows.append(f"2020,{wk},{wk}")
    surveillance.write_text("\n".join(rows) + "\n")
    assert main(["ingest", "--surveillance", str(surveillance), "--out", str(tmp_path / "o")]) == 3
    capsys.readouterr()


def test_gradcheck_cli(tmp_path):
    assert main(["gradcheck", "--out", str(tmp_path / "gc")]) == 0
    text = (tmp_path / "gc" / "gradcheck.txt").read_text()
    assert "full_pipeline" in text and "FAIL" not in text
