"""Command-line entry point for reproducible runs.

Verbs: download | ingest | quantify | fit | predict | bench | histogram
| synth. Every verb reads an optional JSON config file, lets flags
override it, validates strictly (unknown keys are rejected) and writes a
machine-readable run manifest next to its output. Result files are
byte-deterministic for a fixed config and seed; the run manifest also
records wall-clock timings and is the one provenance file exempt from
that guarantee.

Logs are line-delimited JSON on stderr; stdout carries the human summary.
Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    HyperGrid,
    NoiseSpec,
    SplitSpec,
    SynthSpec,
    fit_loglog_slope,
    generate_synthetic,
    loglog_histogram,
    run_external_benchmark,
    run_prediction_benchmark,
)
from .ingest import (
    download_month,
    ingest_month,
    month_file_urls,
    read_month,
    write_month,
)
from .losses import LossSpec
from .seriesstore import CATEGORY_BOUNDS, MonthTable, categorize
from .solvers import build_design, fit_model
from .sparsear import SparseArProblem, accumulate_gram, solve_branch_and_bound

__all__ = ["main", "load_config", "RunConfig", "ConfigError"]

ENV_DATA_DIR = "TAILEDTS_DATA_DIR"


class ConfigError(ValueError):
    pass


def _log(event: str, **fields) -> None:
    payload = {"event": event}
    payload.update(fields)
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def _resolve_path(value: str) -> Path:
    """Relative paths resolve under TAILEDTS_DATA_DIR when it is set."""
    p = Path(value)
    root = os.environ.get(ENV_DATA_DIR)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


# Per-verb schema: name -> (python type, required, default).
_SCHEMAS: dict[str, dict[str, tuple[type, bool, object]]] = {
    "download": {
        "year": (int, True, None),
        "month": (int, True, None),
        "out_dir": (str, True, None),
        "days": (int, False, None),
        "base_url": (str, False, "https://dumps.wikimedia.org/other/pageviews/"),
        "manifest_only": (bool, False, False),
    },
    "ingest": {
        "source": (str, True, None),
        "year": (int, True, None),
        "month": (int, True, None),
        "out": (str, True, None),
        "threshold": (int, False, 10),
        "days": (int, False, None),
    },
    "quantify": {
        "input": (str, True, None),
        "order": (int, False, 168),
        "sparsity": (int, False, 8),
        "categories": (str, False, "O2,O3,O4"),
        "report": (str, True, None),
        "node_limit": (int, False, None),
        "time_limit": (float, False, None),
        "big_m": (float, False, 5.0),
        "workers": (int, False, None),
    },
    "fit": {
        "input": (str, True, None),
        "order": (int, True, None),
        "loss": (str, True, None),
        "delta": (float, False, 1.0),
        "tau": (float, False, 0.3),
        "p": (float, False, 0.5),
        "method": (str, False, "auto"),
        "rows": (int, False, None),
        "seed": (int, False, 0),
        "out": (str, True, None),
    },
    "predict": {
        "input": (str, True, None),
        "order": (int, False, 168),
        "losses": (str, False, "l2,l1,huber,quantile,lp"),
        "split": (str, False, "1-17,18-24,25-31"),
        "sample_cap": (int, False, 10_000),
        "seed": (int, False, 0),
        "workers": (int, False, None),
        "dump_dir": (str, False, None),
        "huber_deltas": (str, False, "1"),
        "quantile_taus": (str, False, "0.3"),
        "lp_powers": (str, False, "0.3333333333333333,0.5,0.6666666666666666"),
        "out": (str, True, None),
    },
    "external": {
        "input": (str, True, None),
        "order": (int, False, 24),
        "losses": (str, False, "l2,l1,huber,quantile,lp"),
        "workers": (int, False, None),
        "huber_deltas": (str, False, "1"),
        "quantile_taus": (str, False, "0.3"),
        "lp_powers": (str, False, "0.3333333333333333,0.5,0.6666666666666666"),
        "out": (str, True, None),
    },
    "histogram": {
        "input": (str, True, None),
        "format": (str, False, "month"),
        "hour": (int, False, 0),
        "bins": (str, False, "auto"),
        "out": (str, True, None),
    },
    "synth": {
        "seed": (int, False, 0),
        "count": (int, False, 8),
        "days": (int, False, 31),
        "weights": (str, False, "24:0.5,168:0.3"),
        "noise": (str, False, "gaussian"),
        "sigma": (float, False, 1.0),
        "nu": (float, False, 3.0),
        "alpha": (float, False, 1.5),
        "scale": (float, False, 1.0),
        "centered": (bool, False, False),
        "level": (float, False, 20.0),
        "year": (int, False, 2024),
        "month": (int, False, 1),
        "out": (str, True, None),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved, validated parameters for one verb."""

    verb: str
    params: dict

    def __getitem__(self, key):
        return self.params[key]

    def to_dict(self) -> dict:
        return {"verb": self.verb, **self.params}


def load_config(verb: str, config_path: str | None, overrides: dict) -> RunConfig:
    """Merge config file and flag overrides against the verb's schema.

    Flags win over file values; unknown keys and type mismatches are
    rejected by name; missing required fields are an error.
    """
    schema = _SCHEMAS[verb]
    merged: dict = {}
    if config_path:
        try:
            raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in raw.items():
            if key == "verb":
                if value != verb:
                    raise ConfigError(f"config is for verb {value!r}, not {verb!r}")
                continue
            if key not in schema:
                raise ConfigError(f"unknown config key {key!r} for verb {verb!r}")
            merged[key] = value
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in schema:
            raise ConfigError(f"unknown option {key!r} for verb {verb!r}")
        merged[key] = value

    params: dict = {}
    for key, (typ, required, default) in schema.items():
        if key in merged:
            value = merged[key]
            if typ is bool:
                if not isinstance(value, bool):
                    raise ConfigError(f"config key {key!r} must be a boolean")
            elif typ is int:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"config key {key!r} must be an integer")
            elif typ is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"config key {key!r} must be a number")
                value = float(value)
            elif typ is str and not isinstance(value, str):
                raise ConfigError(f"config key {key!r} must be a string")
            params[key] = value
        elif required:
            raise ConfigError(f"missing required option {key!r} for verb {verb!r}")
        else:
            params[key] = default
    return RunConfig(verb=verb, params=params)


def _write_run_manifest(out_path: Path, config: RunConfig, started: float) -> None:
    manifest = {
        "verb": config.verb,
        "config": config.to_dict(),
        "versions": {
            "tailedts": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "timings": {"total_s": round(time.monotonic() - started, 6)},
    }
    Path(str(out_path) + ".run.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _workers(value) -> int:
    if value is None:
        return os.cpu_count() or 1
    if value < 1:
        raise ConfigError("workers must be >= 1")
    return value


def _parse_losses(text: str) -> list[str]:
    families = [f.strip() for f in text.split(",") if f.strip()]
    for fam in families:
        if fam not in ("l2", "l1", "huber", "quantile", "lp"):
            raise ConfigError(f"unknown loss family {fam!r}")
    if not families:
        raise ConfigError("no loss families given")
    return families


def _parse_float_list(text: str, name: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad {name}: {exc}") from exc
    if not values:
        raise ConfigError(f"empty {name}")
    return values


def _parse_split(text: str) -> SplitSpec:
    try:
        parts = [p.split("-") for p in text.split(",")]
        (a, b), (c, d), (e, f) = [(int(x), int(y)) for x, y in parts]
        return SplitSpec(train=(a, b), validation=(c, d), test=(e, f))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad split {text!r}: expected like 1-17,18-24,25-31") from exc


def _parse_categories(text: str) -> list[str]:
    mapping = {"O2": "O(10^2)", "O3": "O(10^3)", "O4": "O(10^4)"}
    out = []
    for token in text.split(","):
        token = token.strip()
        label = mapping.get(token, token)
        if label not in CATEGORY_BOUNDS:
            raise ConfigError(f"unknown category {token!r} (use O2,O3,O4)")
        out.append(label)
    if not out:
        raise ConfigError("no categories given")
    return out


def _parse_weights(text: str) -> dict[int, float]:
    weights = {}
    try:
        for token in text.split(","):
            lag, value = token.split(":")
            weights[int(lag)] = float(value)
    except ValueError as exc:
        raise ConfigError(f"bad weights {text!r}: expected like 24:0.5,168:0.3") from exc
    return weights


def _grid_from(cfg: RunConfig) -> HyperGrid:
    return HyperGrid(
        huber_deltas=_parse_float_list(cfg["huber_deltas"], "huber_deltas"),
        quantile_taus=_parse_float_list(cfg["quantile_taus"], "quantile_taus"),
        lp_powers=_parse_float_list(cfg["lp_powers"], "lp_powers"),
    )


def _dump_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- verbs


def _cmd_download(cfg: RunConfig) -> Path:
    out_dir = _resolve_path(cfg["out_dir"])
    urls = month_file_urls(cfg["year"], cfg["month"], cfg["days"], cfg["base_url"])
    out_dir.mkdir(parents=True, exist_ok=True)
    listing = out_dir / f"download-{cfg['year']:04d}{cfg['month']:02d}.urls.txt"
    listing.write_text("\n".join(urls) + "\n", encoding="utf-8")
    if cfg["manifest_only"]:
        _log("download_plan", files=len(urls), listing=str(listing))
        print(f"planned {len(urls)} files; URL list at {listing}")
        return listing
    fetched = download_month(out_dir, cfg["year"], cfg["month"], cfg["days"],
                             cfg["base_url"], log=_log)
    print(f"downloaded {len(fetched)} new files into {out_dir}")
    return listing


def _cmd_ingest(cfg: RunConfig) -> Path:
    out = _resolve_path(cfg["out"])
    table, manifest = ingest_month(_resolve_path(cfg["source"]), cfg["year"], cfg["month"],
                                   threshold=cfg["threshold"], days=cfg["days"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_month(table, out)
    Path(str(out) + ".ingest.json").write_text(manifest.to_json(), encoding="utf-8")
    _log("ingest_done", pages=manifest.pages, data_points=manifest.data_points,
         zero_fraction=manifest.zero_fraction, skipped_lines=manifest.skipped_lines)
    print(f"ingested {manifest.pages} pages, {manifest.data_points} data points, "
          f"zero fraction {manifest.zero_fraction:.4f}")
    return out


def _load_table(cfg_value: str) -> MonthTable:
    return read_month(_resolve_path(cfg_value))


def _cmd_quantify(cfg: RunConfig) -> Path:
    if cfg["sparsity"] < 1:
        raise ConfigError("sparsity must be >= 1")
    if cfg["order"] < 1:
        raise ConfigError("order must be >= 1")
    if cfg["sparsity"] > cfg["order"]:
        raise ConfigError("sparsity cannot exceed order")
    table = _load_table(cfg["input"])
    labels = _parse_categories(cfg["categories"])
    partition = categorize(table)
    grams = []
    for label in labels:
        indices = partition.buckets.get(label, ())
        if not indices:
            _log("empty_category", category=label)
            continue
        pool = [table.series[i] for i in indices]
        grams.append(accumulate_gram(pool, cfg["order"], label))
        _log("gram_ready", category=label, series=len(pool))
    if not grams:
        raise ConfigError("no category has any series; nothing to quantify")
    problem = SparseArProblem(tuple(grams), cfg["order"], cfg["sparsity"], cfg["big_m"])
    result = solve_branch_and_bound(problem, node_limit=cfg["node_limit"],
                                    time_limit=cfg["time_limit"],
                                    workers=_workers(cfg["workers"]))
    report = {
        "support": list(result.support),
        "weights": {
            cat: {str(lag): float(w[lag - 1]) for lag in result.support}
            for cat, w in sorted(result.weights.items())
        },
        "objective": result.objective,
        "optimality": result.optimality,
        "nodes": result.nodes,
    }
    out = _resolve_path(cfg["report"])
    _dump_json(out, report)
    _log("quantify_done", support=list(result.support), optimality=result.optimality,
         nodes=result.nodes)
    print(f"support {list(result.support)} ({result.optimality}, {result.nodes} nodes)")
    return out


def _spec_from(cfg: RunConfig) -> LossSpec:
    family = cfg["loss"]
    if family == "huber":
        return LossSpec.huber(cfg["delta"])
    if family == "quantile":
        return LossSpec.quantile(cfg["tau"])
    if family == "lp":
        return LossSpec.lp(cfg["p"])
    if family in ("l2", "l1"):
        return LossSpec(family)
    raise ConfigError(f"unknown loss family {family!r}")


def _cmd_fit(cfg: RunConfig) -> Path:
    table = _load_table(cfg["input"])
    spec = _spec_from(cfg)
    series = list(table.series)
    if cfg["rows"] is not None and len(series) > cfg["rows"]:
        rng = np.random.default_rng(cfg["seed"])
        chosen = sorted(rng.choice(len(series), size=cfg["rows"], replace=False))
        series = [series[i] for i in chosen]
    pair = build_design(series, cfg["order"])
    result = fit_model(pair, spec, method=cfg["method"])
    out = _resolve_path(cfg["out"])
    _dump_json(out, result.to_dict())
    _log("fit_done", loss=spec.label, objective=result.objective,
         iterations=result.iterations, converged=result.converged)
    print(f"fit {spec.label}: objective {result.objective:.6g} "
          f"({result.iterations} iterations, converged={result.converged})")
    return out


def _cmd_predict(cfg: RunConfig) -> Path:
    table = _load_table(cfg["input"])
    families = _parse_losses(cfg["losses"])
    split = _parse_split(cfg["split"])
    partition = categorize(table)
    report = run_prediction_benchmark(
        table, partition, families, split, cfg["order"], grid=_grid_from(cfg),
        sample_cap=cfg["sample_cap"], seed=cfg["seed"],
        workers=_workers(cfg["workers"]),
        dump_dir=_resolve_path(cfg["dump_dir"]) if cfg["dump_dir"] else None, log=_log)
    out = _resolve_path(cfg["out"])
    _dump_json(out, report)
    print(report["table"])
    return out


def _cmd_external(cfg: RunConfig) -> Path:
    families = _parse_losses(cfg["losses"])
    report = run_external_benchmark(_resolve_path(cfg["input"]), families, cfg["order"],
                                    grid=_grid_from(cfg), workers=_workers(cfg["workers"]),
                                    log=_log)
    out = _resolve_path(cfg["out"])
    _dump_json(out, report)
    print(report["table"])
    return out


def _cmd_histogram(cfg: RunConfig) -> Path:
    fmt = cfg["format"]
    if fmt == "month":
        table = _load_table(cfg["input"])
        hour = cfg["hour"]
        if not (0 <= hour < table.t):
            raise ConfigError(f"hour {hour} outside table span of {table.t}")
        values = np.array([int(s.values[hour]) for s in table.series], dtype=float)
    elif fmt == "values":
        path = _resolve_path(cfg["input"])
        values = np.loadtxt(path, dtype=float, ndmin=1)
    else:
        raise ConfigError(f"unknown histogram format {fmt!r} (use month or values)")
    bins = cfg["bins"]
    hist = loglog_histogram(values, "auto" if bins == "auto" else int(bins))
    out = _resolve_path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center", "count", "density"])
        for center, count, density in hist.rows():
            writer.writerow([f"{center:.10g}", count, f"{density:.10g}"])
    try:
        slope = fit_loglog_slope(hist)
        slope_text = f"{slope:.4f}"
    except ValueError:
        slope_text = "n/a"
    _log("histogram_done", bins=len(hist.counts), zeros=hist.zero_count, slope=slope_text)
    print(f"{len(hist.counts)} bins, {hist.zero_count} zeros, mid-bin slope {slope_text}")
    return out


def _cmd_synth(cfg: RunConfig) -> Path:
    noise = NoiseSpec(kind=cfg["noise"], sigma=cfg["sigma"], nu=cfg["nu"],
                      alpha=cfg["alpha"], scale=cfg["scale"], centered=cfg["centered"])
    weights = _parse_weights(cfg["weights"])
    length = cfg["days"] * 24
    order = max(weights)
    # A constant pre-seed block at the traffic level gives the recursion a
    # realistic operating point before burn-in.
    init = tuple([cfg["level"]] * order)
    spec = SynthSpec(weights=weights, noise=noise, length=length, seed=cfg["seed"],
                     count=cfg["count"], init=init)
    series = generate_synthetic(spec)
    table = MonthTable.build((cfg["year"], cfg["month"]), series)
    out = _resolve_path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_month(table, out)
    _dump_json(Path(str(out) + ".synth.json"), spec.to_dict())
    _log("synth_done", series=len(series), hours=length)
    print(f"wrote {len(series)} synthetic series of {length} hours to {out}")
    return out


_HANDLERS = {
    "download": _cmd_download,
    "ingest": _cmd_ingest,
    "quantify": _cmd_quantify,
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "external": _cmd_external,
    "histogram": _cmd_histogram,
    "synth": _cmd_synth,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        raise ConfigError(message)


def _add_common(parser):
    parser.add_argument("--config", help="JSON config file; flags override it")


def _schema_flags(parser, verb):
    for key, (typ, _required, _default) in _SCHEMAS[verb].items():
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            parser.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction,
                                default=None)
        else:
            parser.add_argument(flag, dest=key, type=typ, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tailedts",
                     description="Heavy-tailed pageview time series toolkit")
    parser.add_argument("--version", action="version", version=f"tailedts {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)

    descriptions = {
        "download": "fetch hourly dump files for one month",
        "ingest": "align hourly dumps into one monthly table",
        "quantify": "shared-support sparse AR periodicity report",
        "fit": "fit one AR model under a chosen loss",
        "predict": "loss-by-category prediction benchmark on a month table",
        "histogram": "log-log histogram export",
        "synth": "generate a seeded synthetic month table",
    }
    for verb in ("download", "ingest", "quantify", "fit", "predict", "histogram", "synth"):
        p = sub.add_parser(verb, help=descriptions[verb])
        _add_common(p)
        _schema_flags(p, verb)

    bench = sub.add_parser("bench", help="benchmark verbs (predict|external|histogram|synth)")
    bench_sub = bench.add_subparsers(dest="bench_verb", required=True)
    for verb in ("predict", "external", "histogram", "synth"):
        p = bench_sub.add_parser(verb)
        _add_common(p)
        _schema_flags(p, verb)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        verb = ns.verb
        if verb == "bench":
            verb = ns.bench_verb
        overrides = {
            key: getattr(ns, key)
            for key in _SCHEMAS[verb]
            if hasattr(ns, key)
        }
        cfg = load_config(verb, getattr(ns, "config", None), overrides)
    except ConfigError as exc:
        _log("config_error", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1

    started = time.monotonic()
    _log("run_start", verb=cfg.verb, config=cfg.to_dict())
    try:
        out = _HANDLERS[cfg.verb](cfg)
    except ConfigError as exc:
        _log("config_error", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - boundary: report and exit 2
        _log("run_failed", verb=cfg.verb, error=str(exc),
             error_type=type(exc).__name__)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _write_run_manifest(out, cfg, started)
    _log("run_done", verb=cfg.verb, seconds=round(time.monotonic() - started, 3))
    return 0


if __name__ == "__main__":
    sys.exit(main())
