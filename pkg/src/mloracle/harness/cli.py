"""Command line entry point.

    mloracle run <config> [--seed N] [--out DIR] [--format csv|json] [--no-figures]
    mloracle mc <config> --replicates N [--seed N] [--out DIR] [--format csv|json] [--no-figures]
    mloracle validate <config>

Exit codes: 0 success, 1 config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import ConfigInvalid, MlOracleError
from .config import load_config, with_seed
from .report import emit_results, monte_carlo_json, summary_json

log = logging.getLogger("mloracle")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mloracle", description="Run hybrid-model control scenarios.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="YAML or JSON scenario file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--format", choices=("csv", "json"), help="report format (default: config or csv)")
        sp.add_argument("--no-figures", action="store_true", help="skip the PNG figures")

    common(sub.add_parser("run", help="run one scenario"))
    mc = sub.add_parser("mc", help="run Monte Carlo replicates")
    common(mc)
    mc.add_argument("--replicates", type=int, required=True)
    v = sub.add_parser("validate", help="schema-check a config")
    v.add_argument("config")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _settings(cfg, args):
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    out_cfg = cfg.get("output", {})
    fmt = args.format or out_cfg.get("format", "csv")
    figures = out_cfg.get("figures", True) and not args.no_figures
    return cfg, fmt, figures


def _run(cfg, args) -> None:
    from .plotting import plot_report
    from .runner import run_scenario

    cfg, fmt, figures = _settings(cfg, args)
    out = Path(args.out)
    report = run_scenario(cfg)
    emit_results(report, fmt, out / f"report.{fmt}")
    (out / "summary.json").write_text(summary_json(report))
    if figures:
        plot_report(report, out)
    print(f"wrote {out / f'report.{fmt}'}")


def _mc(cfg, args) -> int:
    from .plotting import plot_monte_carlo
    from .runner import run_monte_carlo

    cfg, fmt, figures = _settings(cfg, args)
    out = Path(args.out)
    result = run_monte_carlo(cfg, args.replicates)
    for i, rep in enumerate(result.reports):
        if rep is not None:
            emit_results(rep, fmt, out / f"replicate_{i:04d}.{fmt}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "aggregate.json").write_text(monte_carlo_json(result))
    if figures and result.aggregate["succeeded"]:
        plot_monte_carlo(result, out)
    agg = result.aggregate
    print(f"{agg['succeeded']}/{agg['replicates']} replicates, violation rate {agg['violation_rate']:.4f}, "
          f"mean tracking RMSE {agg['mean_tracking_rmse']:.6g}")
    for i, exc in result.failures:
        print(f"replicate {i} failed: {exc}", file=sys.stderr)
    return EXIT_RUNTIME if result.failures else EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        cfg = load_config(args.config)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MlOracleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print("config ok")
        return EXIT_OK
    try:
        if args.command == "run":
            _run(cfg, args)
            return EXIT_OK
        return _mc(cfg, args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MlOracleError, OSError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
