"""Dataset -> windows -> fit -> test report, shared by the CLI and the sweeps."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from .data import Dataset, Scaler, SplitSpec, WindowSet, chronological_split, split_lengths, standardize
from .errors import InsufficientData
from .model import LinearBaseline, LinearConfig, MCformer, ModelConfig
from .training import ForecastReport, TrainConfig, evaluate, fit


@dataclass
class Prepared:
    train: WindowSet
    val: WindowSet
    test: WindowSet
    scaler: Scaler


def prepare(ds: Dataset, L: int, h: int, split: SplitSpec = SplitSpec(), stride: int = 1) -> Prepared:
    """Split chronologically, standardize on train, cut windows for each segment."""
    lengths = split_lengths(ds.T, split)
    for name, n in zip(("train", "val", "test"), lengths):
        if n < L + h:
            raise InsufficientData(f"{name} segment has {n} rows, need at least L+h={L + h}")
    tr, va, te = chronological_split(ds, split)
    tr, (va, te), scaler = standardize(tr, [va, te])
    return Prepared(
        WindowSet.from_dataset(tr, L, h, stride),
        WindowSet.from_dataset(va, L, h),
        WindowSet.from_dataset(te, L, h),
        scaler,
    )


def make_model(kind: str, cfg: ModelConfig):
    if kind == "linear":
        return LinearBaseline(
            LinearConfig(M=cfg.M, L=cfg.L, h=cfg.h, revin_affine=cfg.revin_affine, revin_eps=cfg.revin_eps, seed=cfg.seed)
        )
    return MCformer(cfg)


def run_experiment(
    ds: Dataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    split: SplitSpec = SplitSpec(),
    kind: str = "mcformer",
    prepared: Optional[Prepared] = None,
):
    """Fit on ``ds`` and evaluate on its test segment.

    Returns ``(model, fit_report, test_report)``.
    """
    if model_cfg.M != ds.M:
        model_cfg = replace(model_cfg, M=ds.M)
    prep = prepared or prepare(ds, model_cfg.L, model_cfg.h, split)
    model = make_model(kind, model_cfg)
    _, fit_report = fit(model, prep.train, prep.val, train_cfg)
    test_report: ForecastReport = evaluate(model, prep.test, train_cfg.eval_batch_size)
    test_report.seed = train_cfg.seed
    test_report.config_hash = fit_report.config_hash
    return model, fit_report, test_report
