"""Command-line experiment driver.

Subcommands: solve, phase, noise, rankseek, arip.  Every run reads a JSON
experiment spec, writes CSV results plus a companion gnuplot script into
the output directory, and exits 0 on success, 1 on a spec error, 2 on an
internal error.  DEMIX_THREADS sets the worker count; --threads wins on
conflict.
"""

import argparse
import json
import os
import sys

from . import experiments as xp


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="demix", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve", "solve one seeded problem and print a summary"),
        ("phase", "success-fraction grid over (s, m)"),
        ("noise", "reconstruction error against noise level"),
        ("rankseek", "rank-increasing heuristic traces"),
        ("arip", "empirical isometry-constant estimates"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--spec", required=True, help="path to the JSON experiment spec")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None, help="override the spec seed")
        p.add_argument("--threads", type=int, default=None, help="worker threads")
        p.add_argument(
            "--solver",
            choices=["iht", "fiht", "fiht-psd"],
            default=None,
            help="override the solver mode",
        )
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        p.add_argument("--full", action="store_true", help="paper-scale default grids")
        p.add_argument(
            "--timing",
            action="store_true",
            help="also write wall-clock timings (not covered by the determinism guarantee)",
        )
    return parser


def _resolve_threads(flag_value: int | None) -> int:
    if flag_value is not None:
        return max(1, flag_value)
    env = os.environ.get("DEMIX_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise xp.SpecError(f"DEMIX_THREADS must be an integer, got {env!r}")
    return 1


def _load_spec(args) -> xp.ExperimentSpec:
    path = args.spec
    if not os.path.exists(path):
        raise xp.SpecError(f"spec file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise xp.SpecError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}")
    try:
        spec = xp.spec_from_dict(data, full=args.full)
    except xp.SpecError as exc:
        raise xp.SpecError(f"{path}: {exc}")
    if args.seed is not None:
        spec.seed = args.seed
    if args.solver is not None:
        spec.solver.mode = args.solver
    expected = {"solve": "solve-one"}.get(args.command, args.command)
    if spec.experiment != expected:
        raise xp.SpecError(
            f"{path}: spec experiment is {spec.experiment!r} but the {args.command!r} "
            f"subcommand expects {expected!r}"
        )
    return spec


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message, file=sys.stderr)


def _write_timing(out_dir: str, name: str, rows: list, header: list) -> None:
    xp.write_csv(os.path.join(out_dir, f"{name}_timing.csv"), header, rows)


def _run(args) -> int:
    spec = _load_spec(args)
    threads = _resolve_threads(args.threads)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)

    if args.command == "solve":
        summary = xp.run_solve_one(spec, threads=threads)
        xp.write_json(os.path.join(out_dir, "solve.json"), summary)
        print(json.dumps(summary, indent=2, sort_keys=True, default=float))
        return 0

    if args.command == "phase":
        cells = xp.run_phase(spec, threads=threads)
        csv_path = os.path.join(out_dir, "phase.csv")
        xp.write_csv(csv_path, xp.PHASE_HEADER, xp.phase_rows(cells))
        xp.write_plot_script(os.path.join(out_dir, "phase.plt"), xp.PHASE_PLOT, "phase.csv")
        if args.timing:
            _write_timing(
                out_dir, "phase",
                [[c.s, c.m, c.mean_time] for c in cells],
                ["s", "m", "mean_time"],
            )
        _say(args, f"wrote {csv_path} ({len(cells)} cells)")
        return 0

    if args.command == "noise":
        rows = xp.run_noise(spec, threads=threads)
        csv_path = os.path.join(out_dir, "noise.csv")
        xp.write_csv(csv_path, xp.NOISE_HEADER, xp.noise_rows(rows))
        xp.write_plot_script(os.path.join(out_dir, "noise.plt"), xp.NOISE_PLOT, "noise.csv")
        if args.timing:
            _write_timing(
                out_dir, "noise",
                [[r["m"], r["sigma"], r["mean_time"]] for r in rows],
                ["m", "sigma", "mean_time"],
            )
        _say(args, f"wrote {csv_path} ({len(rows)} rows)")
        return 0

    if args.command == "rankseek":
        result = xp.run_rankseek(spec, threads=threads)
        csv_path = os.path.join(out_dir, "rankseek.csv")
        xp.write_csv(csv_path, xp.RANKSEEK_HEADER, xp.rankseek_rows(result))
        xp.write_csv(
            os.path.join(out_dir, "rankseek_summary.csv"),
            xp.RANKSEEK_SUMMARY_HEADER,
            xp.rankseek_summary_rows(result),
        )
        xp.write_plot_script(os.path.join(out_dir, "rankseek.plt"), xp.RANKSEEK_PLOT, "rankseek.csv")
        _say(args, f"wrote {csv_path}")
        return 0

    if args.command == "arip":
        rows = xp.run_arip(spec, threads=threads)
        csv_path = os.path.join(out_dir, "arip.csv")
        xp.write_csv(csv_path, xp.ARIP_HEADER, xp.arip_rows(rows))
        xp.write_plot_script(os.path.join(out_dir, "arip.plt"), xp.ARIP_PLOT, "arip.csv")
        _say(args, f"wrote {csv_path}")
        return 0

    raise AssertionError(f"unhandled command {args.command!r}")


def cli_main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except xp.SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
