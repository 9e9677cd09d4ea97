"""Losses, Adam, the training loop and evaluation."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from . import numerics as nx
from .data import WindowSet, as_window_set
from .errors import ConfigError, NumericError, ShapeError
from .numerics import Tape, Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop_patience: int = 5
    seed: int = 0
    grad_clip: Optional[float] = None
    eval_batch_size: int = 256

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", key="batch_size")
        if self.max_epochs < 1:
            raise ConfigError("must be >= 1", key="max_epochs")
        if not self.learning_rate > 0:
            raise ConfigError("must be > 0", key="learning_rate")
        if self.early_stop_patience < 1:
            raise ConfigError("must be >= 1", key="early_stop_patience")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)", key="beta1")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("must be > 0 when set", key="grad_clip")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", key="train")
        return cls(**d)


@dataclass
class ForecastReport:
    """Metrics (globally standardized space) plus training provenance."""

    mse: float = float("nan")
    mae: float = float("nan")
    mse_per_step: list = field(default_factory=list)
    mae_per_step: list = field(default_factory=list)
    n_windows: int = 0
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    config_hash: str = ""
    seed: Optional[int] = None
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, allow_nan=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastReport":
        return cls(**d)


# ---------------------------------------------------------------------------
# Metrics


def _check_pair(y, yhat):
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ShapeError(f"shape mismatch: {list(y.shape)} vs {list(yhat.shape)}")
    return y, yhat


def mse(y, yhat) -> float:
    """Mean squared error over all elements."""
    y, yhat = _check_pair(y, yhat)
    return float(np.mean((y - yhat) ** 2))


def mae(y, yhat) -> float:
    """Mean absolute error over all elements."""
    y, yhat = _check_pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def mse_loss(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {list(pred.shape)} vs {list(target.shape)}")
    return nx.mean(nx.square(pred - target))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def clip_by_global_norm(grads: dict, max_norm: float) -> tuple[dict, float]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        factor = max_norm / norm
        grads = {k: g * factor for k, g in grads.items()}
    return grads, norm


def adam_step(params: dict, grads: dict, state: AdamState, t: int, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place on ``params`` (name -> Tensor).

    Parameters missing from ``grads`` are left alone. With ``cfg.grad_clip``
    set, gradients are first rescaled to that global L2 norm.
    """
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    if cfg.grad_clip is not None:
        grads, _ = clip_by_global_norm(grads, cfg.grad_clip)
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    state.t = t


# ---------------------------------------------------------------------------
# Fit / evaluate


def config_hash(model, tcfg: Optional[TrainConfig] = None) -> str:
    blob = {"kind": model.kind, "model": model.config.to_dict()}
    if tcfg is not None:
        blob["train"] = asdict(tcfg)
    text = json.dumps(blob, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *tags])))


def predict_windows(model, windows: WindowSet, batch_size: int = 256) -> np.ndarray:
    out = np.empty_like(windows.y)
    for s in range(0, len(windows), batch_size):
        out[s : s + batch_size] = model.forward(windows.x[s : s + batch_size]).data
    return out


def evaluate(model, windows, batch_size: int = 256) -> ForecastReport:
    """MSE/MAE over all windows, steps and channels; no updates, dropout off."""
    ws = as_window_set(windows)
    if ws.x.shape[1:] != (model.config.L, model.config.M) or ws.y.shape[1:] != (model.config.h, model.config.M):
        raise ShapeError(
            f"windows {list(ws.x.shape)}/{list(ws.y.shape)} do not match model "
            f"(L={model.config.L}, h={model.config.h}, M={model.config.M})"
        )
    start = time.perf_counter()
    pred = predict_windows(model, ws, batch_size)
    err = pred - ws.y
    return ForecastReport(
        mse=float(np.mean(err**2)),
        mae=float(np.mean(np.abs(err))),
        mse_per_step=[float(v) for v in np.mean(err**2, axis=(0, 2))],
        mae_per_step=[float(v) for v in np.mean(np.abs(err), axis=(0, 2))],
        n_windows=len(ws),
        config_hash=config_hash(model),
        wall_time_s=time.perf_counter() - start,
    )


def snapshot(params: dict) -> dict:
    return {k: t.data.copy() for k, t in params.items()}


def restore(params: dict, saved: dict) -> None:
    for k, arr in saved.items():
        params[k].data[...] = arr


def fit(
    model,
    train_windows,
    val_windows,
    tcfg: TrainConfig = TrainConfig(),
    on_epoch: Optional[Callable[[int, float, float], None]] = None,
):
    """Train ``model`` with Adam on the MSE loss, early-stopping on val MSE.

    Each epoch reshuffles the training windows with a generator seeded from
    ``(tcfg.seed, epoch)``. The model ends up holding the parameters of the
    best validation epoch; those are also returned (name -> array) together
    with a :class:`ForecastReport` whose metrics are the best val metrics.
    """
    tcfg.validate()
    train = as_window_set(train_windows)
    val = as_window_set(val_windows)
    if len(train) == 0 or len(val) == 0:
        raise ValueError("training and validation window sets must be non-empty")
    start = time.perf_counter()
    params = model.params
    names = list(params)
    state = AdamState()
    step = 0
    best_val, best_epoch, best = float("inf"), None, snapshot(params)
    best_report = None
    stale = 0
    train_hist, val_hist = [], []

    for epoch in range(1, tcfg.max_epochs + 1):
        order = _rng(tcfg.seed, epoch, 0).permutation(len(train))
        drop_rng = _rng(tcfg.seed, epoch, 1)
        losses = []
        for b, s in enumerate(range(0, len(train), tcfg.batch_size)):
            idx = order[s : s + tcfg.batch_size]
            nx.zero_grads(params.values())
            try:
                with Tape() as tape:
                    pred = model.forward(train.x[idx], training=True, rng=drop_rng)
                    loss = mse_loss(pred, train.y[idx])
                if not np.isfinite(loss.item()):
                    raise NumericError("non-finite loss")
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
            nx.backward(tape, loss)
            grads = {k: params[k].grad for k in names if params[k].grad is not None}
            step += 1
            adam_step(params, grads, state, step, tcfg)
            losses.append(loss.item())

        rep = evaluate(model, val, tcfg.eval_batch_size)
        train_hist.append(float(np.mean(losses)))
        val_hist.append(rep.mse)
        log.info("epoch %d train %.6g val %.6g", epoch, train_hist[-1], rep.mse)
        if on_epoch is not None:
            on_epoch(epoch, train_hist[-1], rep.mse)
        if rep.mse < best_val:
            best_val, best_epoch, best, best_report = rep.mse, epoch, snapshot(params), rep
            stale = 0
        else:
            stale += 1
            if stale >= tcfg.early_stop_patience:
                break

    restore(params, best)
    report = best_report if best_report is not None else ForecastReport()
    report.train_loss = train_hist
    report.val_loss = val_hist
    report.best_epoch = best_epoch
    report.config_hash = config_hash(model, tcfg)
    report.seed = tcfg.seed
    report.wall_time_s = time.perf_counter() - start
    return best, report
