"""``mcformer`` command line: synth, train, eval, ablate, correlate.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .analysis import (
    AblationGrid,
    DatasetSpec,
    RowWriter,
    ablation_sweep,
    export_correlation,
    export_report,
    rolling_correlation,
)
from .checkpoint import load_model, save_checkpoint
from .config import RunConfig, output_dir, parse_config
from .data import SYNTH_KINDS, load_csv, save_csv, synth_generate
from .errors import ConfigError, McformerError
from .model import ModelConfig
from .pipeline import prepare, run_experiment
from .training import evaluate

log = logging.getLogger("mcformer")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mcformer", description="Mixed-channels transformer forecasting toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic dataset as CSV")
    s.add_argument("--kind", required=True, choices=SYNTH_KINDS)
    s.add_argument("--m-channels", type=int, default=8, help="number of channels M")
    s.add_argument("--length", type=int, default=2000, help="number of timesteps T")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--param", action="append", default=[], metavar="KEY=VALUE", help="generator parameter")
    s.add_argument("--out", required=True, help="output CSV path")

    t = sub.add_parser("train", help="fit a model; writes checkpoint and report")
    t.add_argument("--config", help="run config JSON")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted-path override")

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test segment")
    e.add_argument("--config", help="run config JSON")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    a = sub.add_parser("ablate", help="sweep the mix count m")
    a.add_argument("--config", help="run config JSON")
    a.add_argument("--m-values", type=_int_list, help="comma-separated mix counts")
    a.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    c = sub.add_parser("correlate", help="rolling Pearson correlation of two channels")
    c.add_argument("--data", required=True, help="CSV file")
    c.add_argument("--channels", required=True, help="a,b (indices or names)")
    c.add_argument("--window", type=int, default=ModelConfig.h, help="window length (default: the forecast horizon, %(default)s)")
    c.add_argument("--out", required=True)
    c.add_argument("--no-header", action="store_true")
    c.add_argument("--datetime-col", type=int, default=None)
    return p


def _split_dotted(argv: list[str]) -> list[str]:
    """Turn ``--model.m=3`` / ``--model.m 3`` into ``--set model.m=3``."""
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and "." in tok.split("=", 1)[0]:
            if "=" in tok:
                out += ["--set", tok[2:]]
            elif i + 1 < len(argv):
                out += ["--set", f"{tok[2:]}={argv[i + 1]}"]
                i += 1
            else:
                raise UsageError(f"missing value for {tok}")
        else:
            out.append(tok)
        i += 1
    return out


def _snapshot(cfg: RunConfig, out: Path) -> None:
    cfg.save(out / "config.json")


def cmd_synth(args) -> int:
    params = {}
    for kv in args.param:
        k, _, v = kv.partition("=")
        try:
            params[k] = json.loads(v)
        except json.JSONDecodeError:
            params[k] = v
    ds = synth_generate(args.kind, args.m_channels, args.length, args.seed, params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(ds, out)
    snapshot = {"kind": args.kind, "M": args.m_channels, "T": args.length, "seed": args.seed, "params": params}
    with open(out.with_suffix(out.suffix + ".config.json"), "w", encoding="utf-8") as fh:
        json.dump(snapshot, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = parse_config(args.config, args.set)
    out = output_dir(cfg)
    _snapshot(cfg, out)
    ds = cfg.load_dataset()
    model, fit_rep, test_rep = run_experiment(ds, cfg.model, cfg.train, cfg.split, cfg.kind)
    save_checkpoint(model.params, model.config, out / "checkpoint", kind=model.kind)
    report = {"fit": fit_rep.to_dict(), "test": test_rep.to_dict()}
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    print(f"test mse={test_rep.mse:.6g} mae={test_rep.mae:.6g} -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = parse_config(args.config, args.set)
    out = output_dir(cfg)
    _snapshot(cfg, out)
    model = load_model(args.checkpoint)
    ds = cfg.load_dataset()
    prep = prepare(ds, model.config.L, model.config.h, cfg.split)
    rep = evaluate(model, prep.test, cfg.train.eval_batch_size)
    with open(out / "eval_report.json", "w", encoding="utf-8") as fh:
        json.dump({"test": rep.to_dict()}, fh, indent=2)
        fh.write("\n")
    print(f"test mse={rep.mse:.6g} mae={rep.mae:.6g} -> {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = parse_config(args.config, args.set)
    abl = cfg.ablation
    m_values = args.m_values or abl.get("m_values") or [0, cfg.model.m]
    for m in m_values:
        if not 0 <= m < cfg.model.M:
            raise ConfigError(f"m={m} must satisfy 0 <= m < M={cfg.model.M}", key="ablation.m_values")
    horizons = abl.get("horizons") or [cfg.model.h]
    seeds = abl.get("seeds") or [cfg.train.seed]
    out = output_dir(cfg)
    _snapshot(cfg, out)
    ds = cfg.load_dataset()
    name = Path(cfg.data.path).stem if cfg.data.path else cfg.data.synth["kind"]
    grid = AblationGrid(m_values, [DatasetSpec(name=name, dataset=ds)], horizons, seeds)
    with RowWriter(out / "ablation.partial.csv") as writer:
        rows = ablation_sweep(grid, cfg.model, cfg.train, cfg.split, cfg.kind, on_row=writer, max_runs=abl.get("max_runs"))
    export_report(rows, out / "ablation.csv", "csv")
    export_report(rows, out / "ablation.json", "json")
    (out / "ablation.partial.csv").unlink()
    failed = [r for r in rows if "error" in r]
    for r in failed:
        print(f"cell m={r['m']} h={r['horizon']} seed={r['seed']} failed: {r['error']}", file=sys.stderr)
    print(f"{len(rows)} rows -> {out / 'ablation.csv'}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_correlate(args) -> int:
    parts = [p.strip() for p in args.channels.split(",")]
    if len(parts) != 2:
        raise UsageError("--channels expects exactly two channels: a,b")
    ds = load_csv(args.data, has_header=not args.no_header, datetime_col=args.datetime_col)
    series = rolling_correlation(ds, parts[0], parts[1], args.window)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_correlation(series, out)
    print(f"{len(series.values)} positions ({series.n_constant} constant) -> {out}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "correlate": cmd_correlate,
}


def dispatch(command: str, args) -> int:
    return COMMANDS[command](args)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_split_dotted(argv))
        if args.command is None:
            raise UsageError(parser.format_usage())
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args.command, args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (McformerError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
