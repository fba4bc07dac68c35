"""Experiment harness: splits, tuning, metric grids and synthetic data.

Reproduces the benchmark protocol shapes at any scale: chronological
train/validation/test splits, hyperparameter selection on validation
MAPE, loss-by-category MAPE/RMSE grids, whole-file external dataset
runs, log-log histogram exports and seeded heavy-tailed AR simulation.
"""

from __future__ import annotations

import csv
import io
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .losses import LossSpec
from .seriesstore import CATEGORY_BOUNDS, MonthTable, PageKey, TimeSeries, CategoryPartition
from .solvers import DesignPair, IrlsOptions, fit_model

__all__ = [
    "SplitSpec",
    "HyperGrid",
    "Metrics",
    "NoiseSpec",
    "SynthSpec",
    "BenchError",
    "compute_metrics",
    "tune",
    "run_prediction_benchmark",
    "run_external_benchmark",
    "loglog_histogram",
    "fit_loglog_slope",
    "LogLogHistogram",
    "simulate_ar",
    "generate_synthetic",
    "render_table",
]

# MAPE convention used everywhere: mean(|pred - truth| / max(truth, 1)),
# reported as a raw ratio. The floor absorbs the dataset's exact zeros.
MAPE_CONVENTION = "mean(|pred-truth|/max(truth,1)), raw ratio"


class BenchError(RuntimeError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    """Chronological day ranges (1-based, inclusive) for train/val/test."""

    train: tuple[int, int] = (1, 17)
    validation: tuple[int, int] = (18, 24)
    test: tuple[int, int] = (25, 31)

    def __post_init__(self) -> None:
        t, v, s = self.train, self.validation, self.test
        for name, (a, b) in (("train", t), ("validation", v), ("test", s)):
            if not (1 <= a <= b):
                raise ValueError(f"bad {name} range {a}..{b}")
        if not (t[1] + 1 == v[0] and v[1] + 1 == s[0]):
            raise ValueError("split ranges must be contiguous and non-overlapping")

    def hour_windows(self) -> dict[str, tuple[int, int]]:
        def win(r):
            return ((r[0] - 1) * 24, r[1] * 24)

        return {"train": win(self.train), "validation": win(self.validation),
                "test": win(self.test)}

    def to_dict(self) -> dict:
        return {"train": list(self.train), "validation": list(self.validation),
                "test": list(self.test)}


@dataclass(frozen=True)
class HyperGrid:
    """Per-loss candidate hyperparameters for validation tuning."""

    huber_deltas: tuple[float, ...] = (1.0,)
    quantile_taus: tuple[float, ...] = (0.3,)
    lp_powers: tuple[float, ...] = (1.0 / 3.0, 0.5, 2.0 / 3.0)

    def candidates(self, family: str) -> list[LossSpec]:
        if family == "l2":
            return [LossSpec.l2()]
        if family == "l1":
            return [LossSpec.l1()]
        if family == "huber":
            if not self.huber_deltas:
                raise ValueError("empty huber grid")
            return [LossSpec.huber(d) for d in self.huber_deltas]
        if family == "quantile":
            if not self.quantile_taus:
                raise ValueError("empty quantile grid")
            return [LossSpec.quantile(t) for t in self.quantile_taus]
        if family == "lp":
            if not self.lp_powers:
                raise ValueError("empty lp grid")
            return [LossSpec.lp(p) for p in self.lp_powers]
        raise ValueError(f"unknown loss family {family!r}")

    def to_dict(self) -> dict:
        return {"huber_deltas": list(self.huber_deltas),
                "quantile_taus": list(self.quantile_taus),
                "lp_powers": list(self.lp_powers)}


@dataclass(frozen=True)
class Metrics:
    mape: float
    rmse: float

    def to_dict(self) -> dict:
        return {"mape": self.mape, "rmse": self.rmse}


def compute_metrics(predictions, truth) -> Metrics:
    """MAPE (floored-denominator ratio) and RMSE of a prediction vector."""
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("empty input")
    err = p - t
    rmse = float(np.sqrt(np.mean(err * err)))
    mape = float(np.mean(np.abs(err) / np.maximum(t, 1.0)))
    return Metrics(mape=mape, rmse=rmse)


def _values(series) -> np.ndarray:
    if isinstance(series, TimeSeries):
        return series.values.astype(float)
    return np.asarray(series, dtype=float)


def _window_design(x: np.ndarray, d: int, lo: int, hi: int):
    """Design rows for targets x_t with t in [lo, hi); lags may reach back
    before lo."""
    lo = max(lo, d)
    if hi <= lo:
        return None
    windows = np.lib.stride_tricks.sliding_window_view(x, d)
    a = windows[lo - d: hi - d][:, ::-1]
    y = x[lo:hi]
    return a, y


def _pooled_window_design(pool, d: int, window: tuple[int, int]) -> DesignPair:
    blocks = [_window_design(_values(s), d, window[0], window[1]) for s in pool]
    blocks = [blk for blk in blocks if blk is not None]
    if not blocks:
        raise BenchError(f"window {window} yields no design rows at order {d}")
    a = np.vstack([blk[0] for blk in blocks])
    y = np.concatenate([blk[1] for blk in blocks])
    return DesignPair(a=np.ascontiguousarray(a), y=y)


def _evaluate(pool, weights: np.ndarray, d: int, window: tuple[int, int]) -> Metrics:
    preds = []
    truths = []
    for s in pool:
        x = _values(s)
        blk = _window_design(x, d, window[0], window[1])
        if blk is None:
            continue
        a, y = blk
        preds.append(a @ weights)
        truths.append(y)
    if not preds:
        raise BenchError("evaluation window is empty")
    return compute_metrics(np.concatenate(preds), np.concatenate(truths))


def tune(grid: HyperGrid, family: str, pool, split: SplitSpec, d: int,
         opts: IrlsOptions | None = None, log=None) -> LossSpec:
    """Pick the candidate with the lowest one-step validation MAPE.

    Fits pooled on the train window per candidate; ties go to the first
    candidate in grid order. Failing candidates are skipped with a
    warning; if all fail, raises BenchError.
    """
    windows = split.hour_windows()
    train_pair = _pooled_window_design(pool, d, windows["train"])
    best_spec, best_mape = None, np.inf
    for spec in grid.candidates(family):
        try:
            fit = fit_model(train_pair, spec, opts)
            val = _evaluate(pool, fit.weights, d, windows["validation"])
        except Exception as exc:  # noqa: BLE001 - candidate failures are non-fatal
            if log:
                log("tune_candidate_failed", loss=spec.label, error=str(exc))
            continue
        if val.mape < best_mape:
            best_spec, best_mape = spec, val.mape
    if best_spec is None:
        raise BenchError(f"every candidate failed for family {family!r}")
    return best_spec


def _subsample(indices, cap: int | None, seed: int, label: str):
    idx = list(indices)
    if cap is None or len(idx) <= cap:
        return idx
    # Fold the category label into the stream with a stable digest (the
    # builtin hash is salted per process) so each bucket draws its own
    # deterministic subset.
    mix = np.random.default_rng([seed, zlib.crc32(label.encode("utf-8"))])
    chosen = mix.choice(len(idx), size=cap, replace=False)
    return [idx[i] for i in sorted(chosen)]


def run_prediction_benchmark(table: MonthTable, partition: CategoryPartition,
                             families, split: SplitSpec, d: int,
                             grid: HyperGrid | None = None,
                             sample_cap: int | None = 10_000,
                             seed: int = 0, workers: int = 1,
                             dump_dir=None, opts: IrlsOptions | None = None,
                             log=None) -> dict:
    """Loss-by-category MAPE/RMSE grid over a categorized month table.

    Per cell: pool the category's series, fit on the train window (tuning
    on validation when the family has multiple candidates), then score
    teacher-forced one-step predictions on the test window. Fit failures
    annotate the cell and the run continues.
    """
    grid = grid or HyperGrid()
    families = list(families)
    categories = [label for label in CATEGORY_BOUNDS if label in partition.buckets]
    windows = split.hour_windows()
    if windows["test"][1] > table.t:
        raise BenchError(f"split needs {windows['test'][1]} hours, table has {table.t}")

    pools = {}
    for label in categories:
        rows = _subsample(partition[label], sample_cap, seed, label)
        pools[label] = [table.series[i] for i in rows]

    jobs = [(family, label) for family in families for label in categories]

    def run_cell(job):
        family, label = job
        pool = pools[label]
        if not pool:
            return job, {"error": "empty category"}
        try:
            candidates = grid.candidates(family)
            spec = candidates[0] if len(candidates) == 1 else tune(
                grid, family, pool, split, d, opts, log)
            train_pair = _pooled_window_design(pool, d, windows["train"])
            fit = fit_model(train_pair, spec, opts)
            metrics = _evaluate(pool, fit.weights, d, windows["test"])
            return job, {"loss": spec.to_dict(), "mape": metrics.mape,
                         "rmse": metrics.rmse, "converged": fit.converged,
                         "weights": [float(w) for w in fit.weights]}
        except Exception as exc:  # noqa: BLE001 - annotate and continue
            if log:
                log("cell_failed", family=family, category=label, error=str(exc))
            return job, {"error": str(exc)}

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool_exec:
            results = list(pool_exec.map(run_cell, jobs))
    else:
        results = [run_cell(job) for job in jobs]

    cells: dict[str, dict] = {family: {} for family in families}
    for (family, label), payload in results:
        cells[family][label] = payload

    if dump_dir is not None:
        _dump_predictions(table, pools, cells, windows["test"], d, Path(dump_dir))

    report = {
        "kind": "prediction",
        "order": d,
        "split": split.to_dict(),
        "mape_convention": MAPE_CONVENTION,
        "sample_cap": sample_cap,
        "seed": seed,
        "families": families,
        "categories": categories,
        "grid": grid.to_dict(),
        "cells": cells,
    }
    report["table"] = render_table(report)
    return report


def _dump_predictions(table, pools, cells, test_window, d, dump_dir: Path):
    """Per-page truth/prediction CSVs for plotting, one file per page."""
    dump_dir.mkdir(parents=True, exist_ok=True)
    for family, by_cat in cells.items():
        for label, payload in by_cat.items():
            if "weights" not in payload:
                continue
            w = np.array(payload["weights"])
            safe = label.replace("(", "").replace(")", "").replace("^", "")
            for i, s in enumerate(pools[label][:9]):
                x = _values(s)
                blk = _window_design(x, d, test_window[0], test_window[1])
                if blk is None:
                    continue
                a, y = blk
                pred = a @ w
                out = dump_dir / f"{family}_{safe}_{i:02d}.csv"
                with out.open("w", newline="") as fh:
                    writer = csv.writer(fh)
                    writer.writerow(["hour", "truth", "prediction"])
                    base = max(test_window[0], d)
                    for j in range(len(y)):
                        writer.writerow([base + j, f"{y[j]:.1f}", f"{pred[j]:.6f}"])


def read_series_csv(path) -> tuple[list[str], list[np.ndarray]]:
    """External dataset format: header of series names, one row per hour."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise BenchError(f"cannot read dataset {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise BenchError(f"dataset {path} is empty") from None
    rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise BenchError(f"dataset {path} has no data rows")
    matrix = np.asarray(rows, dtype=float)
    if matrix.shape[1] != len(header):
        raise BenchError("ragged dataset: row width does not match header")
    return header, [matrix[:, j] for j in range(matrix.shape[1])]


def run_external_benchmark(path, families, d: int, grid: HyperGrid | None = None,
                           fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
                           workers: int = 1, opts: IrlsOptions | None = None,
                           log=None) -> dict:
    """Whole-file pooled benchmark with an 80/10/10 chronological split."""
    grid = grid or HyperGrid()
    families = list(families)
    names, series = read_series_csv(path)
    t_len = series[0].shape[0]
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    n_train = int(t_len * fractions[0])
    n_val = int(t_len * fractions[1])
    windows = {
        "train": (0, n_train),
        "validation": (n_train, n_train + n_val),
        "test": (n_train + n_val, t_len),
    }
    if windows["train"][1] <= d + 1:
        raise BenchError(f"dataset too short for order {d}")

    def run_family(family):
        try:
            candidates = grid.candidates(family)
            if len(candidates) == 1:
                spec = candidates[0]
            else:
                best, best_mape = None, np.inf
                train_pair = _pooled_window_design(series, d, windows["train"])
                for cand in candidates:
                    try:
                        fit = fit_model(train_pair, cand, opts)
                        val = _evaluate(series, fit.weights, d, windows["validation"])
                    except Exception as exc:  # noqa: BLE001
                        if log:
                            log("tune_candidate_failed", loss=cand.label, error=str(exc))
                        continue
                    if val.mape < best_mape:
                        best, best_mape = cand, val.mape
                if best is None:
                    raise BenchError(f"every candidate failed for family {family!r}")
                spec = best
            train_pair = _pooled_window_design(series, d, windows["train"])
            fit = fit_model(train_pair, spec, opts)
            metrics = _evaluate(series, fit.weights, d, windows["test"])
            return family, {"loss": spec.to_dict(), "mape": metrics.mape,
                            "rmse": metrics.rmse, "converged": fit.converged}
        except Exception as exc:  # noqa: BLE001
            if log:
                log("cell_failed", family=family, error=str(exc))
            return family, {"error": str(exc)}

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool_exec:
            results = list(pool_exec.map(run_family, families))
    else:
        results = [run_family(f) for f in families]

    dataset = Path(path).name
    report = {
        "kind": "external",
        "dataset": dataset,
        "order": d,
        "split_fractions": list(fractions),
        "split_rows": {k: list(v) for k, v in windows.items()},
        "mape_convention": MAPE_CONVENTION,
        "families": families,
        "categories": [dataset],
        "n_series": len(names),
        "grid": grid.to_dict(),
        "cells": {family: {dataset: payload} for family, payload in results},
    }
    report["table"] = render_table(report)
    return report


def render_table(report: dict) -> str:
    """Plain-text loss x category grid of MAPE/RMSE cells."""
    families = report["families"]
    categories = report["categories"]
    header = ["loss"] + list(categories)
    lines = []
    rows = []
    for family in families:
        row = [family]
        for label in categories:
            cell = report["cells"].get(family, {}).get(label, {})
            if "mape" in cell:
                row.append(f"{cell['mape']:.2f}/{cell['rmse']:.2f}")
            else:
                row.append("error")
        rows.append(row)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    for r in [header] + rows:
        lines.append("  ".join(val.ljust(widths[i]) for i, val in enumerate(r)))
    return "\n".join(lines)


@dataclass(frozen=True)
class LogLogHistogram:
    """Log-spaced frequency histogram; zeros are counted separately."""

    edges: np.ndarray
    centers: np.ndarray
    counts: np.ndarray
    densities: np.ndarray  # counts / bin width, the power-law readout
    zero_count: int

    def rows(self) -> list[tuple[float, int, float]]:
        return [
            (float(c), int(n), float(d))
            for c, n, d in zip(self.centers, self.counts, self.densities)
        ]


def loglog_histogram(values, bins="auto") -> LogLogHistogram:
    """Histogram positive values into logarithmically spaced bins.

    Zeros are tallied apart (they have no place on a log axis). Raises on
    negative input or when nothing is positive.
    """
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0 or np.any(arr < 0):
        raise ValueError("values must be non-negative and non-empty")
    zero_count = int(np.sum(arr == 0))
    pos = arr[arr > 0]
    if pos.size == 0:
        raise ValueError("need at least one positive value")
    vmin, vmax = float(pos.min()), float(pos.max())
    if vmin == vmax:
        edges = np.array([vmin * (1 - 1e-9), vmax * (1 + 1e-9)])
    else:
        if bins == "auto":
            n_bins = int(np.clip(math.ceil(10 * math.log10(vmax / vmin)), 4, 200))
        else:
            n_bins = int(bins)
            if n_bins < 1:
                raise ValueError("bins must be positive")
        edges = np.logspace(math.log10(vmin), math.log10(vmax), n_bins + 1)
        edges[-1] *= 1 + 1e-12  # keep the max inside the last bin
    counts, _ = np.histogram(pos, bins=edges)
    centers = np.sqrt(edges[:-1] * edges[1:])
    widths = np.diff(edges)
    densities = counts / widths
    return LogLogHistogram(edges=edges, centers=centers, counts=counts,
                           densities=densities, zero_count=zero_count)


def fit_loglog_slope(hist: LogLogHistogram, trim: float = 0.2) -> float:
    """Least-squares slope of log10(density) vs log10(center) over mid bins.

    `trim` drops that fraction of occupied bins from each end, where tail
    noise and truncation dominate.
    """
    occ = np.flatnonzero(hist.counts > 0)
    if occ.size < 2:
        raise ValueError("need at least two occupied bins for a slope")
    k = int(len(occ) * trim)
    mid = occ[k: len(occ) - k] if len(occ) - 2 * k >= 2 else occ
    lx = np.log10(hist.centers[mid])
    ly = np.log10(hist.densities[mid])
    slope, _ = np.polyfit(lx, ly, 1)
    return float(slope)


@dataclass(frozen=True)
class NoiseSpec:
    """Innovation family for synthetic AR data.

    pareto draws classical Pareto(alpha) with minimum `scale`; centered
    subtracts the finite mean (alpha > 1 required) so the innovations
    have zero mean while keeping the heavy right tail.
    """

    kind: str  # "gaussian" | "student_t" | "pareto"
    sigma: float = 1.0
    nu: float = 3.0
    alpha: float = 1.5
    scale: float = 1.0
    centered: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian", "student_t", "pareto"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "pareto" and self.centered and self.alpha <= 1.0:
            raise ValueError("centering needs alpha > 1 for a finite mean")

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.normal(0.0, self.sigma, size)
        if self.kind == "student_t":
            return rng.standard_t(self.nu, size) * self.sigma
        draws = self.scale * (1.0 + rng.pareto(self.alpha, size))
        if self.centered:
            draws = draws - self.alpha * self.scale / (self.alpha - 1.0)
        return draws

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "nu": self.nu,
                "alpha": self.alpha, "scale": self.scale, "centered": self.centered}


@dataclass(frozen=True)
class SynthSpec:
    """Seeded recipe for a pool of synthetic AR series.

    weights maps lag -> non-negative coefficient and must sum below 1 so
    the recursion stays stable; the seed fully determines the output.
    """

    weights: dict[int, float]
    noise: NoiseSpec
    length: int
    seed: int
    count: int = 1
    init: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not self.weights:
            raise ValueError("need at least one lag weight")
        if any(k < 1 for k in self.weights):
            raise ValueError("lags are 1-based")
        if any(v < 0 for v in self.weights.values()):
            raise ValueError("weights must be non-negative")
        # strictly below 1 keeps the recursion stationary; exactly 1 is the
        # marginally stable pure-copy case (exact periodic repetition)
        if sum(self.weights.values()) > 1.0:
            raise ValueError("weights must not sum above 1")
        if self.length < 1 or self.count < 1:
            raise ValueError("length and count must be positive")

    @property
    def order(self) -> int:
        return max(self.weights)

    def dense_weights(self) -> np.ndarray:
        w = np.zeros(self.order)
        for lag, value in self.weights.items():
            w[lag - 1] = value
        return w

    def to_dict(self) -> dict:
        return {"weights": {str(k): v for k, v in sorted(self.weights.items())},
                "noise": self.noise.to_dict(), "length": self.length,
                "seed": self.seed, "count": self.count,
                "init": list(self.init) if self.init else None}


def simulate_ar(weights: np.ndarray, length: int, noise: np.ndarray,
                init=None, burnin: int | None = None) -> np.ndarray:
    """Run x_t = w @ [x_{t-1}..x_{t-d}] + noise_t, discarding the burn-in.

    `noise` must cover burnin + length steps. Returns a float array.
    """
    d = weights.shape[0]
    if burnin is None:
        burnin = 10 * d
    total = burnin + length
    if noise.shape[0] < total:
        raise ValueError(f"need {total} noise draws, got {noise.shape[0]}")
    x = np.zeros(total + d)
    if init is not None:
        init = np.asarray(init, dtype=float)
        if init.shape[0] != d:
            raise ValueError(f"init must supply {d} values")
        x[:d] = init
    wrev = weights[::-1]
    for t in range(d, total + d):
        x[t] = float(wrev @ x[t - d: t]) + noise[t - d]
    return x[d + burnin:]


_SYNTH_START = datetime(2024, 1, 1, tzinfo=timezone.utc)


def generate_synthetic(spec: SynthSpec, count_mode: bool = True):
    """Seeded pool of synthetic series; counts are clipped at 0 and rounded.

    Returns TimeSeries in count mode, plain float arrays otherwise.
    """
    w = spec.dense_weights()
    children = np.random.SeedSequence(spec.seed).spawn(spec.count)
    out = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        burnin = 10 * spec.order
        noise = spec.noise.draw(rng, burnin + spec.length)
        x = simulate_ar(w, spec.length, noise, init=spec.init, burnin=burnin)
        if count_mode:
            counts = np.clip(np.round(x), 0, 2**32 - 1).astype(np.uint32)
            key = PageKey("synthetic", f"series_{i:05d}")
            out.append(TimeSeries(key=key, start=_SYNTH_START, values=counts))
        else:
            out.append(x)
    return out
