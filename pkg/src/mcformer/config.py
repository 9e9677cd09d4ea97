"""Run configuration: one JSON document plus dotted-path overrides.

Unknown keys are rejected. Every cross-field constraint that can be checked
without loading data is checked in :func:`parse_config`; constraints that
depend on a CSV's shape are checked by :meth:`RunConfig.load_dataset`.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .data import SYNTH_KINDS, Dataset, SplitSpec, load_csv, split_lengths, synth_generate
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

DEFAULT_SYNTH = {"kind": "leader_follower", "M": None, "T": 2000, "seed": 0, "params": {}}


def _defaults() -> dict:
    model = asdict(ModelConfig())
    model["M"] = None
    return {
        "kind": "mcformer",
        "model": model,
        "train": asdict(TrainConfig()),
        "data": {
            "path": None,
            "has_header": True,
            "datetime_col": None,
            "fill": "reject",
            "synth": dict(DEFAULT_SYNTH),
        },
        "split": {"train": 0.7, "val": 0.1, "test": 0.2},
        "ablation": {"m_values": None, "horizons": None, "seeds": None, "max_runs": 200},
        "output_dir": "runs/default",
    }


# Sections whose contents are free-form (not checked key by key).
_OPEN = {("data", "synth", "params")}


def _merge(base: dict, user: dict, path=()) -> dict:
    for key, value in user.items():
        here = path + (key,)
        if key not in base:
            raise ConfigError("unknown key", key=".".join(here))
        if isinstance(base[key], dict) and here not in _OPEN:
            if not isinstance(value, dict):
                raise ConfigError("expected an object", key=".".join(here))
            _merge(base[key], value, here)
        elif here in _OPEN:
            if not isinstance(value, dict):
                raise ConfigError("expected an object", key=".".join(here))
            base[key] = dict(value)
        else:
            base[key] = value
    return base


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(doc: dict, assignment: str) -> None:
    """Apply ``"a.b.c=value"``; the value is parsed as JSON when it can be."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, _, raw = assignment.partition("=")
    parts = key.strip().lstrip("-").split(".")
    node = doc
    for i, part in enumerate(parts[:-1]):
        here = tuple(parts[: i + 1])
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError("unknown key", key=".".join(here))
        node = node[part]
    last = parts[-1]
    if tuple(parts[:-1]) not in _OPEN and last not in node:
        raise ConfigError("unknown key", key=".".join(parts))
    node[last] = _parse_value(raw)


@dataclass
class DataSpec:
    path: Optional[str]
    has_header: bool
    datetime_col: Optional[int]
    fill: str
    synth: dict


@dataclass
class RunConfig:
    kind: str
    model: ModelConfig
    train: TrainConfig
    data: DataSpec
    split: SplitSpec
    ablation: dict
    output_dir: str
    raw: dict = field(repr=False, default_factory=dict)

    def to_dict(self) -> dict:
        doc = copy.deepcopy(self.raw)
        doc["model"] = asdict(self.model)
        return doc

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def load_dataset(self) -> Dataset:
        """Materialize the configured dataset and finish cross-field validation."""
        if self.data.path is not None:
            ds = load_csv(self.data.path, self.data.has_header, self.data.datetime_col, self.data.fill)
            if ds.M != self.model.M:
                raise ConfigError(f"dataset has {ds.M} channels, model expects M={self.model.M}", key="model.M")
            _check_segments(ds.T, self.split, self.model)
            return ds
        s = self.data.synth
        return synth_generate(s["kind"], self.model.M, s["T"], s["seed"], s.get("params") or {})


def _check_segments(T: int, split: SplitSpec, model: ModelConfig) -> None:
    need = model.L + model.h
    for name, n in zip(("train", "val", "test"), split_lengths(T, split)):
        if n < need:
            raise ConfigError(f"{name} segment has {n} rows, needs at least L+h={need}", key=f"split.{name}")


def build_run_config(doc: dict, dataset_M: Optional[int] = None) -> RunConfig:
    if doc["kind"] not in ("mcformer", "linear"):
        raise ConfigError("must be 'mcformer' or 'linear'", key="kind")
    data = DataSpec(**doc["data"])
    synth = data.synth
    model_doc = dict(doc["model"])
    if data.path is None:
        if synth.get("kind") not in SYNTH_KINDS:
            raise ConfigError(f"must be one of {SYNTH_KINDS}", key="data.synth.kind")
        sM, mM = synth.get("M"), model_doc.get("M")
        if sM is not None and mM is not None and sM != mM:
            raise ConfigError(f"data.synth.M={sM} disagrees with model.M={mM}", key="model.M")
        model_doc["M"] = sM if sM is not None else (mM if mM is not None else 8)
        synth["M"] = model_doc["M"]
    elif model_doc.get("M") is None:
        if dataset_M is None:
            raise ConfigError("model.M must be set for CSV data", key="model.M")
        model_doc["M"] = dataset_M
    try:
        model = ModelConfig(**model_doc).validate()
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], key=f"model.{exc.key}" if exc.key else "model") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), key="model") from None
    try:
        train = TrainConfig(**doc["train"]).validate()
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], key=f"train.{exc.key}" if exc.key else "train") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), key="train") from None
    sp = doc["split"]
    split = SplitSpec(sp["train"], sp["val"], sp["test"])
    if data.path is None:
        if int(synth["T"]) < 64:
            raise ConfigError("must be >= 64", key="data.synth.T")
        _check_segments(int(synth["T"]), split, model)
    abl = doc["ablation"]
    for m in abl.get("m_values") or []:
        if not 0 <= m < model.M:
            raise ConfigError(f"m={m} must satisfy 0 <= m < M={model.M}", key="ablation.m_values")
    return RunConfig(doc["kind"], model, train, data, split, abl, doc["output_dir"], raw=doc)


def parse_config(path=None, overrides: Sequence[str] = (), inline: Optional[dict] = None) -> RunConfig:
    """Defaults, then the JSON file at ``path`` (or ``inline``), then overrides."""
    doc = _defaults()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {path}: {exc}") from None
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("top level must be an object")
        _merge(doc, user)
    if inline:
        _merge(doc, inline)
    for ov in overrides:
        apply_override(doc, ov)
    dataset_M = None
    d = doc["data"]
    if d["path"] is not None and doc["model"].get("M") is None:
        dataset_M = load_csv(d["path"], d["has_header"], d["datetime_col"], d["fill"]).M
    return build_run_config(doc, dataset_M)


def output_dir(cfg: RunConfig) -> Path:
    p = Path(cfg.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p
