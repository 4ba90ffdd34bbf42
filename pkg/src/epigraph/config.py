"""Flat key=value run configuration and run manifests.

The config format is one ``key = value`` per line, ``#`` starts a comment,
unknown keys are rejected. Every run writes the fully resolved configuration
(defaults included) next to its outputs, plus a manifest with input digests
so a run can be reproduced exactly.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import os

from .data import SynthSpec
from .errors import ConfigError
from .model import ModelConfig
from .train import TrainConfig


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_opt_int(text: str):
    return None if text.strip() == "" else int(text)


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "data.table": (str, ""),
    "data.surveillance": (str, ""),
    "data.weather": (str, ""),
    "data.airquality": (str, ""),
    "out.dir": (str, ""),
    "target": (str, "cases"),
    "horizon": (int, 2),
    "window": (_parse_opt_int, None),  # blank means 3 * horizon
    "learning_rate": (float, 1e-4),
    "max_epochs": (int, 100),
    "patience": (int, 20),
    "batch_size": (int, 32),
    "keep_fraction": (float, 0.10),
    "seed": (int, 0),
    "train_end_week": (int, 850),
    "test_start_week": (int, 900),
    "test_end_week": (int, 991),
    "val_fraction": (float, 0.10),
    "max_lag": (int, 6),
    "corr_threshold": (float, 0.05),
    "min_improvement": (float, 1e-8),
    "model.d_model": (int, 256),
    "model.n_heads": (int, 8),
    "model.d_ff": (int, 256),
    "model.dropout": (float, 0.05),
    "model.encoder_layers": (int, 2),
    "model.decoder_layers": (int, 2),
    "model.node_dim": (int, 16),
    "model.gat_layers": (int, 2),
    "model.gat_heads": (int, 4),
    "model.gat_head_dim": (int, 8),
    "model.leaky_slope": (float, 0.2),
    "impute.max_gap": (int, 4),
    "synth.weeks": (int, 200),
    "synth.predictors": (int, 5),
    "synth.period": (int, 52),
    "synth.noise": (float, 0.1),
    "synth.driver_lag": (int, 4),
    "synth.driver_wander": (float, 0.5),
    "synth.target_base": (float, 100.0),
    "synth.target_scale": (float, 50.0),
    "synth.start": (str, "2006-01-01"),
    "importance.seeds": (int, 20),
    "importance.workers": (_parse_opt_int, None),
    "importance.horizons": (str, ""),  # comma list; blank means the horizon key
    "eval.charts": (_parse_bool, True),
}

DYNAMIC_PREFIXES = ("aggregate.",)


class RunConfig:
    """Typed view over the flat configuration keys."""

    def __init__(self, values: dict | None = None):
        self.values = {key: default for key, (_, default) in SCHEMA.items()}
        self.dynamic: dict[str, str] = {}
        if values:
            for key, value in values.items():
                self.set(key, value)

    def set(self, key: str, raw) -> None:
        if key in SCHEMA:
            parser, _ = SCHEMA[key]
            if isinstance(raw, str):
                try:
                    self.values[key] = parser(raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key!r}: {exc}") from None
            else:
                self.values[key] = raw
        elif any(key.startswith(p) for p in DYNAMIC_PREFIXES):
            self.dynamic[key] = str(raw)
        else:
            raise ConfigError(f"unknown configuration key {key!r}")

    def __getitem__(self, key: str):
        if key in self.values:
            return self.values[key]
        return self.dynamic[key]

    def aggregation_policies(self) -> dict[str, str]:
        return {
            key[len("aggregate.") :]: value
            for key, value in self.dynamic.items()
            if key.startswith("aggregate.")
        }

    def train_config(self) -> TrainConfig:
        v = self.values
        model = ModelConfig(
            d_model=v["model.d_model"],
            n_heads=v["model.n_heads"],
            d_ff=v["model.d_ff"],
            dropout=v["model.dropout"],
            n_encoder_layers=v["model.encoder_layers"],
            n_decoder_layers=v["model.decoder_layers"],
            node_dim=v["model.node_dim"],
            gat_layers=v["model.gat_layers"],
            gat_heads=v["model.gat_heads"],
            gat_head_dim=v["model.gat_head_dim"],
            leaky_slope=v["model.leaky_slope"],
            keep_fraction=v["keep_fraction"],
        )
        return TrainConfig(
            horizon=v["horizon"],
            window=v["window"],
            learning_rate=v["learning_rate"],
            max_epochs=v["max_epochs"],
            patience=v["patience"],
            batch_size=v["batch_size"],
            seed=v["seed"],
            train_end_week=v["train_end_week"],
            test_start_week=v["test_start_week"],
            test_end_week=v["test_end_week"],
            val_fraction=v["val_fraction"],
            max_lag=v["max_lag"],
            target=v["target"],
            corr_threshold=v["corr_threshold"],
            min_improvement=v["min_improvement"],
            model=model,
        )

    def synth_spec(self) -> SynthSpec:
        v = self.values
        return SynthSpec(
            weeks=v["synth.weeks"],
            predictors=v["synth.predictors"],
            period=v["synth.period"],
            noise=v["synth.noise"],
            driver_lag=v["synth.driver_lag"],
            driver_wander=v["synth.driver_wander"],
            target_base=v["synth.target_base"],
            target_scale=v["synth.target_scale"],
            start=dt.date.fromisoformat(v["synth.start"]),
        )

    def importance_horizons(self) -> list[int]:
        raw = self.values["importance.horizons"].strip()
        if not raw:
            return [self.values["horizon"]]
        try:
            return [int(part) for part in raw.split(",") if part.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad importance.horizons: {exc}") from None

    def resolved_text(self, exclude: tuple = ()) -> str:
        lines = ["# resolved configuration (defaults included)"]
        items = {**self.values, **self.dynamic}
        for key in sorted(items):
            if key in exclude:
                continue
            value = items[key]
            if value is None:
                value = ""
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        """Digest of the run semantics; the output location does not count."""
        return hashlib.sha256(
            self.resolved_text(exclude=("out.dir",)).encode("utf-8")
        ).hexdigest()

    def echo(self) -> dict:
        """Config copy for embedding in reports; output location excluded."""
        items = {**self.values, **self.dynamic}
        items.pop("out.dir", None)
        return items


def parse_config_text(text: str) -> RunConfig:
    config = RunConfig()
    for ln, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw_line!r}")
        config.set(key.strip(), value.strip())
    return config


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_run_artifacts(
    out_dir,
    config: RunConfig,
    inputs: list,
    artifacts: list,
    started_at: str,
) -> None:
    """Resolved config plus manifest; identical manifest inputs reproduce outputs."""
    os.makedirs(out_dir, exist_ok=True)
    resolved = config.resolved_text()
    with open(os.path.join(out_dir, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(resolved)
    manifest = {
        "config_hash": config.config_hash(),
        "seed": config.values["seed"],
        "started_at": started_at,
        "finished_at": dt.datetime.now(dt.timezone.utc).isoformat(),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "artifacts": sorted(os.path.relpath(str(a), out_dir) for a in artifacts),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def utc_now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat()
