"""Command-line entry point: ``rksmooth <command> ...``.

Every command exits 0 on success. On failure it prints a single line
``error: <code>: <message>`` to stderr and exits 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from . import experiments as ex
from .config import RunConfig
from .errors import ConfigError, RKSmoothError
from .integrate import PROBLEMS, empirical_order
from .tableau import (
    FAMILIES,
    NAMED_METHODS,
    ParamPoint,
    check_order_conditions,
    get_family,
    make_tableau,
    max_verified_order,
    named_method,
)

DEFAULT_STEPS = (8, 16, 32, 64)


def number(text: str) -> float:
    """Parse a float or a fraction such as ``2/255``."""
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def number_list(text: str) -> list[float]:
    return [number(t) for t in text.split(",") if t.strip()]


def int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def parse_point(text: str) -> ParamPoint:
    """``midpoint``, ``rk2_u:0.5`` or ``rk4_uv:0.3,0.7``."""
    if ":" not in text:
        if text in NAMED_METHODS:
            return named_method(text)
        return ParamPoint(text, ())
    family, _, params = text.partition(":")
    return ParamPoint(family, tuple(number_list(params)))


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _emit(text: str, out) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# --- commands ---------------------------------------------------------------


def cmd_tableau(args) -> int:
    if args.family in NAMED_METHODS and not args.params:
        point = named_method(args.family)
    else:
        point = ParamPoint(get_family(args.family).name, tuple(args.params))
    tab = make_tableau(point)
    order = max_verified_order(tab)
    if args.json:
        doc = tab.to_dict()
        doc["order"] = order
        _emit(json.dumps(doc, indent=2) + "\n", args.out)
        return 0
    report = check_order_conditions(tab, max(order, 1))
    lines = [f"{point}", tab.to_text().rstrip("\n"), f"order: {order}"]
    lines += [f"  {cid:<5} residual {r:+.3e}" for cid, r in report.residuals]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_convergence(args) -> int:
    family = get_family(args.family)
    if family.arity == 0:
        points = [ParamPoint(family.name, ())]
    else:
        if not args.points:
            raise ConfigError("give at least one parameter point, e.g. 0.5 or 0.3,0.7", "points")
        points = [ParamPoint(family.name, tuple(number_list(p))) for p in args.points]
    problem = PROBLEMS[args.problem]
    rows = []
    for pt in points:
        slope = empirical_order(problem.rhs, problem.exact, pt, args.steps, z0=problem.z0)
        p = list(pt.params) + [None, None]
        rows.append({"family": pt.family, "param0": p[0], "param1": p[1],
                     "problem": problem.name, "slope": slope})
    _emit(ex.rows_to_csv(rows, ["family", "param0", "param1", "problem", "slope"]), args.out)
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    result, _, tcfg = ex.run_training(cfg)
    run_dir = ex.make_run_dir(args.out or "runs", cfg)
    ex.write_training_artifacts(run_dir, cfg, result, tcfg)
    print(run_dir)
    return 0


def cmd_usweep(args) -> int:
    if args.checkpoint and not Path(args.checkpoint).is_file():
        raise ex.CheckpointError(f"checkpoint not found: {args.checkpoint}")
    if args.checkpoint and not args.config:
        sibling = Path(args.checkpoint).with_name("config.yaml")
        if sibling.is_file():
            args.config = str(sibling)
    cfg = _load_config(args)
    doc = cfg.doc
    for key, value in (("u_grid", args.u_grid), ("epsilons", args.epsilons),
                       ("attack", args.attack), ("family", args.family)):
        if value is not None:
            doc["sweep"][key] = value
    cfg = RunConfig(doc)
    seeds = args.seeds if args.seeds is not None else cfg["sweep"]["seeds"]
    rows = ex.usweep(cfg, args.checkpoint, seeds, args.jobs)
    run_dir = ex.make_run_dir(args.out or "runs", cfg)
    (run_dir / "config.yaml").write_text(cfg.dump())
    (run_dir / "usweep.csv").write_text(ex.rows_to_csv(rows, ex.USWEEP_COLUMNS))
    summary = ex.summarize_usweep(rows)
    (run_dir / "usweep_summary.csv").write_text(ex.rows_to_csv(summary, ex.USWEEP_SUMMARY_COLUMNS))
    (run_dir / "usweep_caption.txt").write_text(ex.usweep_caption(cfg, args.checkpoint, seeds))
    print(run_dir)
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    seeds = args.seeds if args.seeds is not None else cfg["compare"]["seeds"]
    rows = ex.compare(cfg, seeds, args.jobs)
    summary = ex.summarize_compare(rows)
    table = ex.format_compare_table(summary, cfg, seeds)
    run_dir = ex.make_run_dir(args.out or "runs", cfg)
    (run_dir / "config.yaml").write_text(cfg.dump())
    (run_dir / "compare.csv").write_text(ex.rows_to_csv(rows, ex.COMPARE_COLUMNS))
    (run_dir / "compare_summary.csv").write_text(ex.rows_to_csv(summary, ex.COMPARE_SUMMARY_COLUMNS))
    (run_dir / "compare_table.txt").write_text(table)
    sys.stdout.write(table)
    print(run_dir)
    return 0


def cmd_ensemble_eval(args) -> int:
    if args.checkpoint and not args.config:
        sibling = Path(args.checkpoint).with_name("config.yaml")
        if sibling.is_file():
            args.config = str(sibling)
    cfg = _load_config(args)
    model = ex.load_model(args.checkpoint)
    x, y = cfg.dataset().xy("test")
    points = [parse_point(p) for p in args.points]
    epsilons = args.epsilons if args.epsilons is not None else cfg["sweep"]["epsilons"]
    attack = cfg.attack(kind=args.attack or cfg["sweep"]["attack"])
    rows = ex.ensemble_eval(model, x, y, points, args.weights, epsilons, attack, cfg["seed"])
    text = ex.rows_to_csv(rows, ex.ENSEMBLE_COLUMNS)
    if args.out:
        run_dir = ex.make_run_dir(args.out, cfg)
        (run_dir / "config.yaml").write_text(cfg.dump())
        (run_dir / "ensemble.csv").write_text(text)
        print(run_dir)
    else:
        sys.stdout.write(text)
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (YAML or JSON)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (or file for tableau/convergence)")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    parser = argparse.ArgumentParser(prog="rksmooth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tableau", parents=[common], help="print a tableau and its verified order")
    p.add_argument("family", help=f"one of {sorted(FAMILIES)} or a named method")
    p.add_argument("params", nargs="*", type=number)
    p.add_argument("--json", action="store_true", help="structured output")
    p.set_defaults(fn=cmd_tableau)

    p = sub.add_parser("convergence", parents=[common], help="empirical order over parameter points")
    p.add_argument("family")
    p.add_argument("points", nargs="*", help="parameter points, e.g. 0.5 or 0.3,0.7")
    p.add_argument("--problem", choices=sorted(PROBLEMS), default="decay")
    p.add_argument("--steps", type=int_list, default=list(DEFAULT_STEPS))
    p.set_defaults(fn=cmd_convergence)

    p = sub.add_parser("train", parents=[common], help="train one model")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("usweep", parents=[common], help="accuracy versus evaluation solver parameter")
    p.add_argument("--checkpoint")
    p.add_argument("--family", choices=sorted(n for n, f in FAMILIES.items() if f.arity == 1))
    p.add_argument("--u-grid", type=number_list)
    p.add_argument("--epsilons", type=number_list)
    p.add_argument("--seeds", type=int_list)
    p.add_argument("--attack", choices=("fgsm", "fgsm_random", "pgd"))
    p.set_defaults(fn=cmd_usweep)

    p = sub.add_parser("compare", parents=[common], help="standard/smoothing/adversarial table")
    p.add_argument("--seeds", type=int_list)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("ensemble-eval", parents=[common], help="evaluate an ensemble of solver outputs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--points", nargs="+", required=True, help="e.g. rk2_u:0.4 rk2_u:0.5 heun")
    p.add_argument("--weights", type=number_list)
    p.add_argument("--epsilons", type=number_list)
    p.add_argument("--attack", choices=("fgsm", "fgsm_random", "pgd"))
    p.set_defaults(fn=cmd_ensemble_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except RKSmoothError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
