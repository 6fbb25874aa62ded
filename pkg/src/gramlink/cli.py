"""Command-line entry point: ``gramlink <command> [options]``.

Every protocol parameter can come from a JSON config file (``--config``);
flags given on the command line override it. Failures exit with status 1 and
a ``gramlink: [stage] message`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .core import UPPERCASE, AlphabetError, Dataset, load_dataset, save_dataset
from .embedding import GramBase, embed_dataset
from .harness import (
    ExperimentConfig,
    PerturbationSpec,
    evaluate,
    perturb_dataset,
    report_to_json,
    run_experiment,
)
from .protocol import MINERS, DataParty, MatchResult, ProtocolConfig, ProtocolError, run_protocol

# flag name -> config field
_FLAGS = {
    "miner": "miner",
    "epsilon": "epsilon",
    "k": "k",
    "qmin": "q_min",
    "qmax": "q_max",
    "ed": "ed",
    "hmax": "h_max",
    "theta": "theta",
    "seed": "seed",
    "split_budget": "split_budget",
}


class CliError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def _add_protocol_flags(p: argparse.ArgumentParser, ed: bool = True) -> None:
    p.add_argument("--config", type=Path, help="JSON file of parameters; flags override it")
    p.add_argument("--miner", choices=MINERS)
    p.add_argument("--epsilon", type=float, help="privacy budget per party")
    p.add_argument("--k", type=int, help="base size")
    p.add_argument("--qmin", type=int)
    p.add_argument("--qmax", type=int)
    if ed:
        p.add_argument("--ed", type=int, help="edit operations tolerated")
    p.add_argument("--hmax", type=int, help="prefix-tree depth (default: average record length)")
    p.add_argument("--theta", type=float, help="prefix-tree noise threshold")
    p.add_argument("--seed", type=int)
    p.add_argument("--split-budget", action="store_true", default=None,
                   help="each party mines with epsilon / 2")


def _settings(args: argparse.Namespace, allowed: set[str]) -> dict:
    """Config file values overlaid with explicitly given flags."""
    out: dict = {}
    if getattr(args, "config", None):
        try:
            out.update(json.loads(args.config.read_text()))
        except (OSError, ValueError) as exc:
            raise CliError("config", f"{args.config}: {exc}") from exc
    for flag, name in _FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            out[name] = value
    unknown = set(out) - allowed
    if unknown:
        raise CliError("config", f"unknown parameters: {', '.join(sorted(unknown))}")
    return out


def _protocol_config(args: argparse.Namespace) -> ProtocolConfig:
    try:
        return ProtocolConfig(**_settings(args, {f.name for f in fields(ProtocolConfig)}))
    except (TypeError, ValueError) as exc:
        raise CliError("config", str(exc)) from exc


def _load(path: Path, lenient: bool) -> Dataset:
    try:
        return load_dataset(path, UPPERCASE, strict=not lenient)
    except AlphabetError as exc:
        raise CliError("load", str(exc)) from exc
    except OSError as exc:
        raise CliError("load", str(exc)) from exc


def _write(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


# ---------------------------------------------------------------------------
# commands

def cmd_mine(args):
    cfg = _protocol_config(args)
    ds = _load(args.input, args.lenient)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[0])
    party = DataParty("A", ds, cfg, rng)
    try:
        grams = party.mine()
    except Exception as exc:
        raise CliError("mine", str(exc)) from exc
    _write("".join(f"{g.gram}\t{g.noisy_frequency!r}\n" for g in grams), args.output)
    logging.info("spent epsilon %.6g of %.6g", party.budget.total_spent, party.budget.epsilon_total)


def cmd_embed(args):
    ds = _load(args.input, args.lenient)
    try:
        text = args.base.read_text()
        # accept both plain gram lists and the tab-separated output of `mine`
        base = GramBase.from_text("\n".join(line.split("\t")[0] for line in text.splitlines()))
    except (OSError, ValueError) as exc:
        raise CliError("base", str(exc)) from exc
    _write(embed_dataset(ds, base).to_tsv(), args.output)


def cmd_link(args):
    cfg = _protocol_config(args)
    a = _load(args.a, args.lenient)
    b = _load(args.b, args.lenient)
    try:
        run = run_protocol(a, b, cfg)
    except ProtocolError as exc:
        raise CliError(exc.stage, str(exc.cause)) from exc
    _write(run.matches.to_tsv(), args.matches)
    report = {
        "metrics": evaluate(run.matches, a.ids, b.ids).to_dict(),
        "base": list(run.base.grams),
        "epsilon_spent": {p: b.total_spent for p, b in run.budgets.items()},
        "timings": run.timings,
        "transcript": run.transcript_summary(),
    }
    text = json.dumps(report, indent=2) + "\n"
    if args.metrics:
        args.metrics.write_text(text)
    else:
        sys.stderr.write(text)


def cmd_perturb(args):
    ds = _load(args.input, args.lenient)
    try:
        spec = PerturbationSpec(args.ed, args.seed, args.substitute, args.insert, args.delete, args.up_to)
    except ValueError as exc:
        raise CliError("config", str(exc)) from exc
    out = perturb_dataset(ds, spec)
    if args.output is None:
        sys.stdout.write("".join(t + "\n" for t in out.texts))
    else:
        save_dataset(out, args.output)


def cmd_evaluate(args):
    try:
        matches = MatchResult.from_tsv(args.matches.read_text())
    except (OSError, ValueError) as exc:
        raise CliError("matches", str(exc)) from exc
    ids_a = _load(args.a, args.lenient).ids
    ids_b = _load(args.b, args.lenient).ids if args.b else None
    print(json.dumps(evaluate(matches, ids_a, ids_b).to_dict(), indent=2))


def cmd_bench(args):
    settings = {}
    if args.config:
        try:
            settings.update(json.loads(args.config.read_text()))
        except (OSError, ValueError) as exc:
            raise CliError("config", f"{args.config}: {exc}") from exc
    overrides = {
        "dataset": args.dataset, "n": args.n, "miner": args.miner, "epsilon": args.epsilon,
        "k": args.k, "q_min": args.qmin, "q_max": args.qmax, "ed": args.ed, "h_max": args.hmax,
        "theta": args.theta, "split_budget": args.split_budget, "base": args.base,
        "repetitions": args.repetitions, "sweep": args.sweep,
    }
    settings.update({k: v for k, v in overrides.items() if v is not None})
    if args.seed is not None:
        settings["seeds"] = [args.seed]
    if args.values:
        settings["values"] = [json.loads(v) for v in args.values.split(",")]
    try:
        config = ExperimentConfig.from_dict(settings)
    except (TypeError, ValueError) as exc:
        raise CliError("config", str(exc)) from exc
    try:
        report = run_experiment(config)
    except Exception as exc:
        raise CliError("bench", str(exc)) from exc
    _write(report_to_json(report) + "\n", args.output)


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gramlink", description="Private string record linkage.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine", help="mine a private gram base from one dataset")
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--lenient", action="store_true", help="uppercase and drop unknown symbols")
    _add_protocol_flags(p, ed=False)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("embed", help="embed a dataset over a gram base")
    p.add_argument("input", type=Path)
    p.add_argument("--base", type=Path, required=True, help="one gram per line")
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--lenient", action="store_true")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("link", help="run the full protocol on two datasets")
    p.add_argument("a", type=Path)
    p.add_argument("b", type=Path)
    p.add_argument("--matches", type=Path, help="TSV of id_a, id_b, distance (default stdout)")
    p.add_argument("--metrics", type=Path, help="JSON report (default stderr)")
    p.add_argument("--lenient", action="store_true")
    _add_protocol_flags(p)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("perturb", help="write a randomly edited copy of a dataset")
    p.add_argument("input", type=Path)
    p.add_argument("--ed", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--up-to", action="store_true", help="uniform number of edits in [0, ed]")
    p.add_argument("--substitute", type=float, default=1.0)
    p.add_argument("--insert", type=float, default=1.0)
    p.add_argument("--delete", type=float, default=1.0)
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--lenient", action="store_true")
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("evaluate", help="score a matches TSV against id-equality truth")
    p.add_argument("matches", type=Path)
    p.add_argument("a", type=Path)
    p.add_argument("b", type=Path, nargs="?")
    p.add_argument("--lenient", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="run a seeded parameter sweep and emit a JSON report")
    p.add_argument("--config", type=Path)
    p.add_argument("--dataset", help="cities, names, or a path")
    p.add_argument("--n", type=int)
    p.add_argument("--miner", choices=MINERS)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--qmin", type=int)
    p.add_argument("--qmax", type=int)
    p.add_argument("--ed", type=int)
    p.add_argument("--hmax", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--seed", type=int, help="single seed instead of 1..repetitions")
    p.add_argument("--split-budget", action="store_true", default=None)
    p.add_argument("--base", choices=["mined", "random", "lipschitz"])
    p.add_argument("--repetitions", type=int)
    p.add_argument("--sweep", help="parameter to vary, e.g. ed, k, epsilon, n")
    p.add_argument("--values", help="comma-separated sweep values")
    p.add_argument("-o", "--output", type=Path)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        print(f"gramlink: [{exc.stage}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
