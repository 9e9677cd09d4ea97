"""Datasets, chronological splits, global scaling, windowing and synthetic series.

All metrics downstream are computed in the globally standardized space
produced by :func:`standardize` (statistics from the training segment only).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InsufficientData, OrderError, ParseError, ShapeError, SplitError


@dataclass(frozen=True)
class Dataset:
    """A time-major ``T x M`` multivariate series. Immutable.

    Loaders require ``T >= 2``; split segments may be a single row.
    """

    values: np.ndarray
    channel_names: tuple[str, ...]
    freq: str = ""
    source: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"values must be 2-D (T x M), got shape {v.shape}")
        T, M = v.shape
        if T < 1 or M < 1:
            raise ShapeError(f"need T >= 1 and M >= 1, got T={T}, M={M}")
        if not np.all(np.isfinite(v)):
            raise ValueError("dataset contains NaN or Inf")
        names = tuple(str(n) for n in self.channel_names)
        if len(names) != M:
            raise ShapeError(f"{len(names)} channel names for {M} channels")
        if len(set(names)) != M:
            raise ValueError("channel names must be unique")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "channel_names", names)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def M(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray, source: Optional[str] = None) -> "Dataset":
        return Dataset(values, self.channel_names, self.freq, self.source if source is None else source)

    def channel_index(self, key) -> int:
        """Resolve a channel by integer index or name."""
        if isinstance(key, str) and key in self.channel_names:
            return self.channel_names.index(key)
        try:
            i = int(key)
        except (TypeError, ValueError):
            raise KeyError(f"unknown channel {key!r}") from None
        if not 0 <= i < self.M:
            raise KeyError(f"channel index {i} out of range for M={self.M}")
        return i


@dataclass(frozen=True)
class WindowSample:
    x: np.ndarray  # L x M
    y: np.ndarray  # h x M
    t0: int


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    val_frac: float = 0.1
    test_frac: float = 0.2

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(not 0.0 < f < 1.0 for f in fracs):
            raise ConfigError(f"split fractions must each lie in (0, 1), got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {sum(fracs)!r}")


# ---------------------------------------------------------------------------
# CSV


def load_csv(
    path,
    has_header: bool = True,
    datetime_col: Optional[int] = None,
    fill: str = "reject",
    freq: str = "",
) -> Dataset:
    """Read a comma-separated file into a :class:`Dataset`.

    ``fill="reject"`` raises on empty/NaN cells; ``fill="ffill"`` carries the
    previous row's value forward (a missing value in the first row is still an
    error). Row numbers in errors are 1-based file lines, columns 1-based.
    """
    if fill not in ("reject", "ffill"):
        raise ConfigError(f"unknown fill policy {fill!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh)]
    rows = [r for r in rows if r]
    if not rows:
        raise ShapeError(f"{path}: empty file")

    header = None
    first_line = 1
    if has_header:
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
        first_line = 2
    width = len(header) if header is not None else len(rows[0]) if rows else 0
    if datetime_col is not None and not 0 <= datetime_col < width:
        raise ConfigError(f"datetime column {datetime_col} out of range for {width} columns")

    value_cols = [c for c in range(width) if c != datetime_col]
    values = np.empty((len(rows), len(value_cols)), dtype=np.float64)
    prev_time = None
    for r, row in enumerate(rows):
        line = first_line + r
        if len(row) != width:
            raise ShapeError(f"{path}: line {line} has {len(row)} fields, expected {width}")
        if datetime_col is not None:
            cell = row[datetime_col].strip()
            try:
                stamp = datetime.fromisoformat(cell)
            except ValueError:
                raise ParseError(line, datetime_col + 1, f"not an ISO-8601 timestamp: {cell!r}") from None
            if prev_time is not None and stamp < prev_time:
                raise OrderError(f"{path}: timestamp at line {line} precedes the previous row")
            prev_time = stamp
        for j, c in enumerate(value_cols):
            cell = row[c].strip()
            try:
                v = float(cell) if cell else math.nan
            except ValueError:
                raise ParseError(line, c + 1, f"not a number: {cell!r}") from None
            if math.isinf(v):
                raise ParseError(line, c + 1, "infinite value")
            if math.isnan(v):
                if fill == "ffill" and r > 0:
                    v = values[r - 1, j]
                else:
                    raise ParseError(line, c + 1, "missing value")
            values[r, j] = v

    if len(rows) < 2:
        raise ShapeError(f"{path}: need at least 2 data rows, got {len(rows)}")
    if header is not None:
        names = [header[c] for c in value_cols]
    else:
        names = [f"c{j}" for j in range(len(value_cols))]
    return Dataset(values, tuple(names), freq=freq, source=str(path))


def save_csv(ds: Dataset, path) -> None:
    """Write ``ds`` with a header row; floats use shortest round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.channel_names)
        for row in ds.values:
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# Splitting and scaling


def _boundary(T: int, frac: float) -> int:
    # floor(T * frac), tolerant to float representation of the fraction sums
    return int(math.floor(T * frac + 1e-9))


def chronological_split(ds: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset, Dataset]:
    """Cut ``ds`` into contiguous train/val/test segments, earliest first."""
    T = ds.T
    b1 = _boundary(T, spec.train_frac)
    b2 = _boundary(T, spec.train_frac + spec.val_frac)
    lengths = (b1, b2 - b1, T - b2)
    if min(lengths) <= 0:
        raise SplitError(f"split of T={T} by {spec} leaves an empty segment: {lengths}")
    parts = (ds.values[:b1], ds.values[b1:b2], ds.values[b2:])
    return tuple(
        Dataset(p, ds.channel_names, ds.freq, f"{ds.source}[{name}]")
        for p, name in zip(parts, ("train", "val", "test"))
    )


def split_lengths(T: int, spec: SplitSpec) -> tuple[int, int, int]:
    b1 = _boundary(T, spec.train_frac)
    b2 = _boundary(T, spec.train_frac + spec.val_frac)
    return b1, b2 - b1, T - b2


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


def fit_scaler(train: Dataset) -> Scaler:
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return Scaler(mean, std)


def standardize(train: Dataset, others: Sequence[Dataset] = ()) -> tuple[Dataset, list[Dataset], Scaler]:
    """Scale every segment with per-channel mean/std estimated on ``train``.

    Constant training channels get ``std = 1``.
    """
    sc = fit_scaler(train)
    scaled_train = train.with_values(sc.transform(train.values))
    scaled = [o.with_values(sc.transform(o.values)) for o in others]
    return scaled_train, scaled, sc


# ---------------------------------------------------------------------------
# Windows


def window_count(T: int, L: int, h: int, stride: int = 1) -> int:
    return (T - L - h) // stride + 1 if T >= L + h else 0


def make_windows(ds: Dataset, L: int, h: int, stride: int = 1) -> list[WindowSample]:
    """All (look-back, horizon) pairs in time order."""
    if L < 1 or h < 1 or stride < 1:
        raise ConfigError(f"L, h and stride must be >= 1, got {L}, {h}, {stride}")
    if ds.T < L + h:
        raise InsufficientData(f"T={ds.T} is shorter than L+h={L + h}")
    v = ds.values
    return [
        WindowSample(v[t : t + L], v[t + L : t + L + h], t)
        for t in range(0, ds.T - L - h + 1, stride)
    ]


@dataclass(frozen=True)
class WindowSet:
    """Stacked windows: ``x`` is ``n x L x M``, ``y`` is ``n x h x M``."""

    x: np.ndarray
    y: np.ndarray
    t0: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.x[idx], self.y[idx], self.t0[idx])

    @classmethod
    def from_samples(cls, samples: Sequence[WindowSample]) -> "WindowSet":
        if not samples:
            raise InsufficientData("no windows")
        return cls(
            np.stack([s.x for s in samples]),
            np.stack([s.y for s in samples]),
            np.array([s.t0 for s in samples]),
        )

    @classmethod
    def from_dataset(cls, ds: Dataset, L: int, h: int, stride: int = 1) -> "WindowSet":
        if ds.T < L + h:
            raise InsufficientData(f"T={ds.T} is shorter than L+h={L + h}")
        view = np.lib.stride_tricks.sliding_window_view(ds.values, L + h, axis=0)[::stride]
        view = np.swapaxes(view, 1, 2)  # n x (L+h) x M
        t0 = np.arange(0, ds.T - L - h + 1, stride)
        return cls(np.ascontiguousarray(view[:, :L]), np.ascontiguousarray(view[:, L:]), t0)


def as_window_set(windows) -> WindowSet:
    if isinstance(windows, WindowSet):
        return windows
    return WindowSet.from_samples(list(windows))


# ---------------------------------------------------------------------------
# Synthetic generators

SYNTH_KINDS = ("leader_follower", "independent_walks", "shared_season", "drifting_corr")

_DEFAULTS = {
    "leader_follower": {"lag": 3, "sigma": 0.1, "phi": 0.9, "ar_std": 0.3, "period": 24.0, "amplitude": 1.0},
    "independent_walks": {"phi": 0.9, "sigma": 1.0},
    "shared_season": {"period": 24.0, "sigma": 0.1, "harmonic": 0.5},
    "drifting_corr": {"phi": 0.9, "ar_std": 0.3, "period": 24.0, "amplitude": 1.0, "sigma": 0.2},
}


def _ar1(rng: np.random.Generator, n: int, phi: float, std: float, burn: int = 200) -> np.ndarray:
    e = rng.standard_normal(n + burn) * std
    out = np.empty(n + burn)
    acc = 0.0
    for t in range(n + burn):
        acc = phi * acc + e[t]
        out[t] = acc
    return out[burn:]


def synth_generate(kind: str, M: int, T: int, seed: int, params: Optional[dict] = None) -> Dataset:
    """Deterministic synthetic multivariate series.

    ``leader_follower``
        Channel 0 is an AR(1) process plus a sinusoid; channel ``j`` repeats
        channel 0 delayed by ``lag * j`` steps, plus Gaussian noise ``sigma``.
    ``independent_walks``
        ``M`` independent mean-reverting AR(1) walks (``phi=1`` gives a pure
        random walk).
    ``shared_season``
        Every channel is a phase-shifted, rescaled copy of one seasonal
        pattern (fundamental plus second harmonic) plus noise.
    ``drifting_corr``
        Channels share one AR(1)+sinusoid factor; for channels ``j >= 1`` the
        factor's sign flips at ``T // 2``, so the correlation of channel 0 with
        any other channel changes sign there.
    """
    if kind not in SYNTH_KINDS:
        raise ConfigError(f"unknown synthetic kind {kind!r}; expected one of {SYNTH_KINDS}")
    p = dict(_DEFAULTS[kind])
    for k, v in (params or {}).items():
        if k not in p:
            raise ConfigError(f"unknown parameter {k!r} for {kind}")
        p[k] = v
    if T < 64:
        raise ConfigError(f"T must be >= 64, got {T}")
    if M < 1 or (kind != "independent_walks" and M < 2):
        raise ConfigError(f"{kind} needs M >= 2, got {M}")

    rng = np.random.Generator(np.random.PCG64(seed))
    t = np.arange(T, dtype=np.float64)
    if kind == "leader_follower":
        lag = int(p["lag"])
        off = lag * (M - 1)
        n = T + off
        tt = np.arange(n, dtype=np.float64)
        driver = _ar1(rng, n, p["phi"], p["ar_std"]) + p["amplitude"] * np.sin(2 * np.pi * tt / p["period"])
        values = np.stack([driver[off - lag * j : off - lag * j + T] for j in range(M)], axis=1)
        if p["sigma"] > 0:
            values = values + p["sigma"] * rng.standard_normal((T, M))
    elif kind == "independent_walks":
        values = np.stack([_ar1(rng, T, p["phi"], p["sigma"]) for _ in range(M)], axis=1)
    elif kind == "shared_season":
        amp = rng.uniform(0.5, 1.5, size=M)
        phase = rng.uniform(0.0, 2 * np.pi, size=M)
        w = 2 * np.pi * t[:, None] / p["period"]
        values = amp * (np.sin(w + phase) + p["harmonic"] * np.sin(2 * w + 2 * phase))
        if p["sigma"] > 0:
            values = values + p["sigma"] * rng.standard_normal((T, M))
    else:
        factor = _ar1(rng, T, p["phi"], p["ar_std"]) + p["amplitude"] * np.sin(2 * np.pi * t / p["period"])
        sign = np.where(t < T // 2, 1.0, -1.0)
        cols = [factor] + [sign * factor for _ in range(1, M)]
        values = np.stack(cols, axis=1) + p["sigma"] * rng.standard_normal((T, M))

    names = tuple(f"ch{j}" for j in range(M))
    return Dataset(values, names, freq="1", source=f"synth:{kind}:M={M}:T={T}:seed={seed}")
