"""Mix-count ablations, the channel-count study and rolling channel correlation."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .data import Dataset, SplitSpec, synth_generate
from .errors import ConfigError, InvalidWindow
from .model import ModelConfig
from .pipeline import run_experiment
from .training import TrainConfig

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("dataset", "m", "horizon", "seed", "mse", "mae", "wall_time_s")


# ---------------------------------------------------------------------------
# Rolling correlation


@dataclass
class CorrelationSeries:
    a: int
    b: int
    window: int
    values: np.ndarray

    @property
    def n_constant(self) -> int:
        return int(np.isnan(self.values).sum())


def rolling_pearson(x: np.ndarray, y: np.ndarray, w: int) -> np.ndarray:
    """Pearson coefficient of ``x`` and ``y`` over every window ``[t, t+w)``.

    Population normalization; each window is centered on its own mean
    before the products are formed. Windows where either series is exactly
    constant give NaN.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidWindow("x and y must be 1-D series of equal length")
    if w < 2:
        raise InvalidWindow(f"window must be >= 2, got {w}")
    if x.size < w:
        raise InvalidWindow(f"window {w} longer than series of length {x.size}")
    xw = np.lib.stride_tricks.sliding_window_view(x, w)
    yw = np.lib.stride_tricks.sliding_window_view(y, w)
    xc = xw - xw.mean(axis=1, keepdims=True)
    yc = yw - yw.mean(axis=1, keepdims=True)
    sxy = (xc * yc).sum(axis=1)
    sxx = (xc * xc).sum(axis=1)
    syy = (yc * yc).sum(axis=1)
    constant = (np.ptp(xw, axis=1) == 0) | (np.ptp(yw, axis=1) == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = sxy / np.sqrt(sxx * syy)
    r = np.clip(r, -1.0, 1.0)
    r[constant] = np.nan
    return r


def rolling_correlation(ds: Dataset, a, b, w: int) -> CorrelationSeries:
    """Rolling Pearson correlation of channels ``a`` and ``b`` (index or name)."""
    try:
        ia, ib = ds.channel_index(a), ds.channel_index(b)
    except KeyError as exc:
        raise InvalidWindow(str(exc)) from None
    if ia == ib:
        raise InvalidWindow("channels a and b must differ")
    if ds.T < w:
        raise InvalidWindow(f"window {w} longer than series of length {ds.T}")
    return CorrelationSeries(ia, ib, w, rolling_pearson(ds.values[:, ia], ds.values[:, ib], w))


def export_correlation(series: CorrelationSeries, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "corr"])
        for t, v in enumerate(series.values):
            wr.writerow([t, format(float(v), ".17g")])


# ---------------------------------------------------------------------------
# Ablation sweep


@dataclass(frozen=True)
class DatasetSpec:
    """A named dataset: either a concrete :class:`Dataset` or a synth recipe.

    For recipes with ``seed=None`` the cell seed also seeds the generator.
    """

    name: str
    dataset: Optional[Dataset] = None
    kind: Optional[str] = None
    M: int = 8
    T: int = 4000
    seed: Optional[int] = 0
    params: dict = field(default_factory=dict)

    def build(self, cell_seed: int) -> Dataset:
        if self.dataset is not None:
            return self.dataset
        if self.kind is None:
            raise ConfigError(f"dataset spec {self.name!r} has neither data nor a synth kind")
        seed = cell_seed if self.seed is None else self.seed
        return synth_generate(self.kind, self.M, self.T, seed, self.params)

    @property
    def n_channels(self) -> int:
        return self.dataset.M if self.dataset is not None else self.M


@dataclass(frozen=True)
class AblationGrid:
    m_values: Sequence[int]
    datasets: Sequence[DatasetSpec]
    horizons: Sequence[int]
    seeds: Sequence[int]

    def __post_init__(self):
        for name in ("m_values", "datasets", "horizons", "seeds"):
            if len(getattr(self, name)) == 0:
                raise ConfigError("must be non-empty", key=f"ablation.{name}")
        for d in self.datasets:
            for m in self.m_values:
                if not 0 <= m < d.n_channels:
                    raise ConfigError(f"m={m} invalid for dataset {d.name!r} with M={d.n_channels}", key="ablation.m_values")

    def cells(self):
        """Grid order: dataset, then m, then horizon, then seed."""
        for d in self.datasets:
            for m in self.m_values:
                for h in self.horizons:
                    for s in self.seeds:
                        yield d, m, h, s

    def __len__(self) -> int:
        return len(self.m_values) * len(self.datasets) * len(self.horizons) * len(self.seeds)


def run_cell(spec: DatasetSpec, m: int, horizon: int, seed: int, base_model: ModelConfig,
             base_train: TrainConfig, split: SplitSpec, kind: str = "mcformer"):
    """One fit + evaluate; returns ``(fit_report, test_report)``."""
    ds = spec.build(seed)
    mcfg = replace(base_model, M=ds.M, m=m, h=horizon, seed=seed)
    tcfg = replace(base_train, seed=seed)
    _, fit_rep, test_rep = run_experiment(ds, mcfg, tcfg, split, kind)
    return fit_rep, test_rep


def _cell_row(args) -> dict:
    spec, m, horizon, seed, base_model, base_train, split, kind = args
    start = time.perf_counter()
    try:
        _, rep = run_cell(spec, m, horizon, seed, base_model, base_train, split, kind)
        mse_v, mae_v, err = rep.mse, rep.mae, None
    except Exception as exc:  # noqa: BLE001 - a failed cell must not end the sweep
        mse_v = mae_v = math.nan
        err = f"{type(exc).__name__}: {exc}"
    row = {
        "dataset": spec.name, "m": m, "horizon": horizon, "seed": seed,
        "mse": mse_v, "mae": mae_v, "wall_time_s": time.perf_counter() - start,
    }
    if err:
        row["error"] = err
    return row


def default_workers() -> int:
    try:
        cap = int(os.environ.get("MCF_THREADS", "1"))
    except ValueError:
        cap = 1
    return max(1, min(cap, os.cpu_count() or 1))


def ablation_sweep(
    grid: AblationGrid,
    base_model: ModelConfig,
    base_train: TrainConfig,
    split: SplitSpec = SplitSpec(),
    kind: str = "mcformer",
    on_row: Optional[Callable[[dict], None]] = None,
    max_runs: Optional[int] = None,
    workers: Optional[int] = None,
) -> list[dict]:
    """Fit and evaluate every grid cell; rows come back in grid order.

    ``on_row`` is called as each row becomes available (still in grid
    order), so partial sweeps can be persisted. A failing cell yields a row
    with NaN metrics and an ``error`` entry; the sweep carries on.
    """
    if max_runs is not None and len(grid) > max_runs:
        raise ConfigError(f"grid has {len(grid)} cells, above the cap of {max_runs}", key="ablation.max_runs")
    jobs = [(d, m, h, s, base_model, base_train, split, kind) for d, m, h, s in grid.cells()]
    workers = workers or default_workers()
    rows = []
    if workers <= 1:
        results: Iterable[dict] = map(_cell_row, jobs)
        for row in results:
            rows.append(row)
            if on_row:
                on_row(row)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_cell_row, jobs):
                rows.append(row)
                if on_row:
                    on_row(row)
    for row in rows:
        if "error" in row:
            log.warning("cell %s m=%s h=%s seed=%s failed: %s", row["dataset"], row["m"], row["horizon"], row["seed"], row["error"])
    return rows


def median_by(rows: Sequence[dict], key: str = "m", metric: str = "mse", dataset: Optional[str] = None) -> dict:
    """Median of ``metric`` over seeds (and horizons), grouped by ``key``."""
    groups: dict = {}
    for r in rows:
        if dataset is not None and r["dataset"] != dataset:
            continue
        groups.setdefault(r[key], []).append(r[metric])
    return {k: float(np.median(v)) for k, v in groups.items()}


def channel_count_study(
    channel_counts: Sequence[int] = (4, 8, 16, 32),
    m_values: Sequence[int] = (1, 2, 3),
    seeds: Sequence[int] = (0, 1, 2),
    base_model: ModelConfig = ModelConfig(L=48, h=12, p=8, S=4, P=32, n_heads=4, n_layers=2, d_ff=64, dropout=0.0),
    base_train: TrainConfig = TrainConfig(max_epochs=6, early_stop_patience=3),
    kind: str = "leader_follower",
    T: int = 4000,
    params: Optional[dict] = None,
    on_row=None,
) -> list[dict]:
    """Relative MSE gain of the best mixed setting over pure CI, per channel count.

    Synthetic counterpart of the improvement-versus-feature-count study.
    Returns one dict per M with keys ``M, mse_ci, best_m, mse_best, improvement``.
    """
    out = []
    for M in channel_counts:
        ms = [0] + [m for m in m_values if 0 < m < M]
        spec = DatasetSpec(name=f"{kind}_M{M}", kind=kind, M=M, T=T, seed=None, params=dict(params or {}))
        grid = AblationGrid(ms, [spec], [base_model.h], list(seeds))
        rows = ablation_sweep(grid, base_model, base_train, on_row=on_row)
        med = median_by(rows)
        best_m = min((m for m in ms if m > 0), key=lambda m: med[m])
        out.append({
            "M": M, "mse_ci": med[0], "best_m": best_m, "mse_best": med[best_m],
            "improvement": (med[0] - med[best_m]) / med[0],
        })
    return out


# ---------------------------------------------------------------------------
# Report export


def export_report(rows: Sequence[dict], path, fmt: str = "csv") -> None:
    """Write sweep rows with columns ``dataset,m,horizon,seed,mse,mae,wall_time_s``.

    Floats are written with 17 significant digits, so a read-back is exact.
    """
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown report format {fmt!r}")
    clean = [{k: r[k] for k in REPORT_COLUMNS} for r in rows]
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(clean, fh, indent=2)
            fh.write("\n")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(REPORT_COLUMNS)
        for r in clean:
            wr.writerow([_fmt(r[k]) for k in REPORT_COLUMNS])


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def read_report(path, fmt: str = "csv") -> list[dict]:
    if fmt == "json":
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({
            "dataset": r["dataset"], "m": int(r["m"]), "horizon": int(r["horizon"]), "seed": int(r["seed"]),
            "mse": float(r["mse"]), "mae": float(r["mae"]), "wall_time_s": float(r["wall_time_s"]),
        })
    return out


class RowWriter:
    """Appends sweep rows to a CSV as they arrive so interrupted sweeps keep their results."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(REPORT_COLUMNS)
        self._fh.flush()

    def __call__(self, row: dict) -> None:
        self._w.writerow([_fmt(row[k]) for k in REPORT_COLUMNS])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
