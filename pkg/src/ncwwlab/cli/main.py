"""``ncwwlab`` command line: run, describe, suite and schema."""
from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

from ..errors import ParseError, ValidationError
from .runner import describe_plan, run_scenario, strict_failures, write_outputs
from .scenario import load_scenario, scenario_json_schema

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT, EXIT_STRICT = 0, 1, 2, 3


def bundled_scenarios() -> list[Path]:
    root = resources.files("ncwwlab") / "scenarios"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))


def _threads(arg: int | None) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("NCWWLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"NCWWLAB_THREADS must be an integer, got {env!r}") from None
    return 1


def _run_one(path, out_dir, args) -> int:
    scenario, raw = load_scenario(path)
    result = run_scenario(scenario, raw, seed=args.seed, n_max=args.n_max, threads=_threads(args.threads))
    out = out_dir if out_dir is not None else scenario.output.dir
    csv_path, json_path = write_outputs(result, out)
    print(f"{scenario.name}: {len(result.csv_text.splitlines()) - 1} rows -> {csv_path}, {json_path}")
    bad = strict_failures(result)
    for o in result.outcomes:
        for wid, v in sorted(o.verdicts.items()):
            print(f"  {o.id}/{wid}: {v}")
    if args.strict and bad:
        print("strict mode: non-passing verdicts: " + "; ".join(bad), file=sys.stderr)
        return EXIT_STRICT
    return EXIT_OK


def cmd_run(args) -> int:
    return _run_one(args.scenario, args.out, args)


def cmd_suite(args) -> int:
    paths = bundled_scenarios()
    if args.list:
        for p in paths:
            print(p.stem)
        return EXIT_OK
    code = EXIT_OK
    base = Path(args.out or "ncwwlab-suite")
    for p in paths:
        code = max(code, _run_one(p, base / p.stem, args))
    return code


def cmd_describe(args) -> int:
    scenario, _ = load_scenario(args.scenario)
    print(describe_plan(scenario))
    return EXIT_OK


def cmd_schema(args) -> int:
    print(json.dumps(scenario_json_schema(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ncwwlab", description="Weighted ergodic average experiments "
                                     "on finite-dimensional tracial algebras.")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_opts(p):
        p.add_argument("--out", help="output directory (rows.csv, summary.json)")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--n-max", type=int, dest="n_max", help="override n_max")
        p.add_argument("--strict", action="store_true", help="exit 3 unless every verdict passes")
        p.add_argument("--threads", type=int, help="experiment-level workers (env NCWWLAB_THREADS)")

    p = sub.add_parser("run", help="run a scenario file")
    p.add_argument("scenario")
    run_opts(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("suite", help="run the bundled scenario suite (one subdirectory each)")
    p.add_argument("--list", action="store_true", help="only list the bundled scenarios")
    run_opts(p)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("describe", help="print the resolved plan of a scenario")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("schema", help="print the scenario JSON schema")
    p.set_defaults(func=cmd_schema)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RuntimeError as exc:
        print(f"RuntimeError: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
