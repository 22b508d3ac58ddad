"""Command-line front end.

Every subcommand composes library calls; no analysis happens here.  Exit
codes: 0 success, 1 violations or (with ``--strict``) findings, 2 usage or
input error, 3 internal error.
"""

from __future__ import annotations

import argparse
import enum
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .errors import FgfuzzError


class ExitStatus(enum.IntEnum):
    Ok = 0
    Findings = 1
    Usage = 2
    Internal = 3


SEED_ENV = "FGFUZZ_SEED"


class UsageError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return 0
    try:
        return int(raw, 0)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _model(path: str):
    from .modelfile import bundled_model_path, load_bundled, load_model

    p = Path(path)
    if p.exists():
        return load_model(p)
    # the bundled model is addressable by name from any directory
    if path in ("bundled", bundled_model_path().name):
        return load_bundled()
    raise UsageError(f"model file not found: {path}")


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise UsageError(f"file not found: {path}") from None


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _fortified(model, toggles):
    from .fortify import apply_fortification, parse_toggles

    return apply_fortification(model, parse_toggles(toggles)) if toggles else model


# ------------------------------------------------------------ subcommands


def cmd_validate(args) -> int:
    from .model import validate

    violations = validate(_model(args.model))
    for v in violations:
        print(f"{v.kind.value}: {v.element}: {v.message}")
    return ExitStatus.Findings if violations else ExitStatus.Ok


def cmd_analyze(args) -> int:
    from .depgraph import DEFAULT_WEIGHTS, Mode, WeightVector, all_vectors, build_graph, rank_identifiers, vectors_to_json

    model = _fortified(_model(args.model), args.fortify)
    weights = WeightVector.parse(args.weights) if args.weights else DEFAULT_WEIGHTS
    mode = Mode(args.mode)
    graph = build_graph(model)
    vectors = all_vectors(graph, mode)
    ranking = rank_identifiers(graph, weights, mode)
    out = vectors_to_json(vectors, ranking)
    out["mode"] = mode.value
    out["weights"] = [str(w) for w in weights.as_list()]
    _write(_json(out), args.output)
    return ExitStatus.Ok


def cmd_isolate(args) -> int:
    from .knowledge import isolate, synthesize_attack_models

    model = _fortified(_model(args.model), args.fortify)
    report = isolate(model, model.profile(args.profile))
    if args.format == "text":
        text = report.render()
        if not text.endswith("\n"):
            text += "\n"
        if args.synthesize:
            for m in synthesize_attack_models(report, model):
                text += f"template {m.template.value}\n"
        _write(text, args.output)
    else:
        _write(report.to_json() + "\n", args.output)
    return ExitStatus.Ok


def cmd_plan(args) -> int:
    from .knowledge import IsolationReport
    from .planner import Scheme, order_cases, plan_bit_level, plan_command_level

    model = _model(args.model)
    report = IsolationReport.from_json(_read(args.report))
    scheme = Scheme(args.scheme)
    if args.level == "command":
        plan = plan_command_level(model, report, args.budget, scheme, args.seed)
    else:
        plan = plan_bit_level(model, report, args.seed, args.commands.split(",") if args.commands else None)
        plan.cases = order_cases(plan.cases, plan.priority_scores, scheme, args.seed)
        if args.budget is not None:
            plan.cases = plan.cases[: args.budget]
        plan.provenance["scheme"] = scheme.value
    _write(plan.to_jsonl(), args.output)
    return ExitStatus.Ok


def cmd_complexity(args) -> int:
    from .planner import CANONICAL, Strategy, complexity_csv, complexity_report

    model = _model(args.model)
    commands = [c.strip() for c in args.commands.split(",") if c.strip()]
    if not commands:
        raise UsageError("--commands needs at least one command")
    if args.strategy == "all":
        strategies = CANONICAL
    else:
        try:
            strategies = (Strategy(args.strategy),)
        except ValueError:
            raise UsageError(f"unknown strategy {args.strategy!r}") from None
    sets = [[c] for c in commands] if args.each else [commands]
    _write(complexity_csv(complexity_report(model, sets, strategies)), args.output)
    return ExitStatus.Ok


def cmd_run(args) -> int:
    from .campaign import parse_campaign, run_campaign
    from .modelfile import read_blocks
    from .planner import FuzzPlan

    cfg_path = Path(args.config)
    text = _read(args.config)
    cfg = parse_campaign(text)
    # precedence: --seed, then the file's seed key, then the environment
    if args.seed is not None:
        cfg.seed = args.seed
    elif not any(b.kind == "campaign" and "seed" in b.entries for b in read_blocks(text, {"campaign", "action"})):
        cfg.seed = default_seed()
    if cfg.model not in ("bundled",) and not Path(cfg.model).is_absolute():
        local = cfg_path.parent / cfg.model
        if local.exists():
            cfg.model = str(local)
    plan_path = args.plan or cfg.plan
    plan = None
    if plan_path:
        p = Path(plan_path)
        if not p.is_absolute() and not p.exists():
            p = cfg_path.parent / p
        plan = FuzzPlan.from_jsonl(_read(str(p)))
    result = run_campaign(cfg, plan, args.parallel)
    if args.summary:
        Path(args.summary).write_text(result.summary_csv(), encoding="utf-8")
    if args.output:
        Path(args.output).write_text(result.to_json() + "\n", encoding="utf-8")
        sys.stdout.write(result.render())
    else:
        sys.stdout.write(result.to_json() + "\n")
    return ExitStatus.Findings if args.strict and result.findings() else ExitStatus.Ok


def cmd_fortify(args) -> int:
    from .modelfile import dump_model

    model = _fortified(_model(args.model), args.toggle)
    _write(dump_model(model), args.output)
    return ExitStatus.Ok


def cmd_report(args) -> int:
    from .campaign import CampaignResult

    result = CampaignResult.from_json(_read(args.result))
    if args.format == "json":
        _write(result.to_json() + "\n", args.output)
    elif args.format == "csv":
        _write(result.to_csv() if args.cases else result.summary_csv(), args.output)
    else:
        _write(result.render(), args.output)
    return ExitStatus.Ok


def cmd_scenario(args) -> int:
    from .campaign import SCENARIOS, run_scenario

    model = _fortified(_model(args.model), args.fortify)
    names = list(SCENARIOS) if args.name == "all" else [args.name]
    rows = [run_scenario(n, model, args.seed).to_dict() for n in names]
    _write(_json(rows if args.name == "all" else rows[0]), args.output)
    findings = any(r["verdict"] not in ("NoEffect", "GracefulReject") for r in rows)
    return ExitStatus.Findings if args.strict and findings else ExitStatus.Ok


# ------------------------------------------------------------ parser


def _seed_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=lambda s: int(s, 0), default=None, help=f"random seed (default: ${SEED_ENV} or 0)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fgfuzz", description="Formal-guided fuzzing of a simulated 5G NSA authentication flow.")
    ap.add_argument("--version", action="version", version=f"fgfuzz {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="<command>")
    sub.required = True

    p = sub.add_parser("validate", help="check a model file")
    p.add_argument("model")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("analyze", help="security vectors and identifier ranking")
    p.add_argument("model")
    p.add_argument("--weights", help="comma-separated weights a,b,c,d")
    p.add_argument("--mode", choices=["frontier", "additive"], default="frontier")
    p.add_argument("--fortify", action="append", default=[], metavar="KIND")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("isolate", help="partition (identifier, property) pairs under a profile")
    p.add_argument("model")
    p.add_argument("--profile", required=True)
    p.add_argument("--fortify", action="append", default=[], metavar="KIND")
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.add_argument("--synthesize", action="store_true", help="also list attack-model templates (text format)")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_isolate)

    p = sub.add_parser("plan", help="bit- or command-level fuzz plan")
    p.add_argument("model")
    p.add_argument("--report", required=True, help="isolation report JSON")
    p.add_argument("--level", choices=["bit", "command"], required=True)
    p.add_argument("--budget", type=int)
    p.add_argument("--scheme", choices=["uniform", "priority"], default="priority")
    p.add_argument("--commands", help="bit level: only these target commands")
    _seed_arg(p)
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("complexity", help="test-case counts per strategy (CSV)")
    p.add_argument("model")
    p.add_argument("--commands", required=True)
    p.add_argument("--strategy", default="all")
    p.add_argument("--each", action="store_true", help="one row group per command instead of the combined set")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_complexity)

    p = sub.add_parser("run", help="execute a campaign file")
    p.add_argument("config")
    p.add_argument("--plan", help="saved plan (overrides the config)")
    p.add_argument("--parallel", type=int, default=None)
    p.add_argument("--strict", action="store_true", help="exit 1 when findings are present")
    p.add_argument("--summary", help="write the (verdict, count) CSV here")
    _seed_arg(p)
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("fortify", help="write a fortified model")
    p.add_argument("model")
    p.add_argument("--toggle", action="append", required=True, metavar="KIND")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_fortify)

    p = sub.add_parser("report", help="render a campaign result")
    p.add_argument("result")
    p.add_argument("--format", choices=["json", "csv", "text"], default="text")
    p.add_argument("--cases", action="store_true", help="csv: one row per case instead of the summary")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("scenario", help="run a bundled attack scenario (or 'all')")
    p.add_argument("name")
    p.add_argument("--model", default="bundled")
    p.add_argument("--fortify", action="append", default=[], metavar="KIND")
    p.add_argument("--strict", action="store_true")
    _seed_arg(p)
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_scenario)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the synopsis
        return ExitStatus.Ok if exc.code == 0 else ExitStatus.Usage
    try:
        if getattr(args, "seed", 0) is None and args.command != "run":
            args.seed = default_seed()
        if getattr(args, "parallel", None) is not None and args.parallel < 1:
            raise UsageError("--parallel must be at least 1")
        return int(args.fn(args))
    except (UsageError, FgfuzzError, ValueError, KeyError) as exc:
        parser.print_usage(sys.stderr)
        print(f"fgfuzz {args.command}: error: {exc}", file=sys.stderr)
        return ExitStatus.Usage
    except Exception as exc:  # pragma: no cover - reported, not hidden
        print(f"fgfuzz {args.command}: internal error: {exc!r}", file=sys.stderr)
        return ExitStatus.Internal


if __name__ == "__main__":
    sys.exit(main())
