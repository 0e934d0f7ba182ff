"""Command-line front end: analytic surfaces, single-cell runs, grid sweeps."""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .errors import ConfigError


def _grid(value: str, cast):
    return tuple(cast(tok) for tok in value.replace(",", " ").split())


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--trials", type=int, help="Monte Carlo trials per cell")
    parser.add_argument("--workers", type=int, help="parallel cell workers")
    parser.add_argument("--out", help="output file (stdout if omitted)")
    parser.add_argument("--format", dest="fmt", choices=("csv", "json"))
    parser.add_argument(
        "--estimator", choices=("training", "mm", "subspace", "all")
    )
    parser.add_argument(
        "--sos-mode", dest="sos_mode", choices=("identity", "solve", "iterative")
    )
    parser.add_argument("--synthesis", choices=("isi-free", "full-stream"))
    parser.add_argument("--N", dest="gain", type=int, help="spreading gain")
    parser.add_argument("--M", dest="symbols", type=int, help="coherence block length")
    parser.add_argument("--beta", type=lambda s: _grid(s, float), help="load values")
    parser.add_argument(
        "--sigma-n2", dest="sigma_n2", type=lambda s: _grid(s, float),
        help="noise variance values",
    )
    parser.add_argument("--P", dest="taps", type=lambda s: _grid(s, int), help="channel orders")
    parser.add_argument("--alpha", type=lambda s: _grid(s, float), help="training fractions")
    parser.add_argument("--omega", type=float, help="fixed subspace weight")
    parser.add_argument("--omega-mode", dest="omega_mode", choices=("oracle", "plugin"))
    parser.add_argument("--draws", type=int, help="channel draws for analytic surfaces")
    parser.add_argument("-v", "--verbose", action="store_true")


def _build_config(args: argparse.Namespace) -> harness.ExperimentConfig:
    overrides = {
        name: getattr(args, name)
        for name in (
            "seed", "trials", "workers", "out", "fmt", "estimator", "sos_mode",
            "synthesis", "gain", "symbols", "beta", "sigma_n2", "taps", "alpha",
            "omega", "omega_mode", "draws",
        )
        if getattr(args, name, None) is not None
    }
    if args.config:
        return harness.load_config(args.config, **overrides)
    return harness.ExperimentConfig(**overrides)


def _write(records, config: harness.ExperimentConfig) -> None:
    if config.out:
        harness.emit(records, config.out, config.fmt)
        print(f"wrote {len(records)} records to {config.out}")
    else:
        sys.stdout.write(harness.render(records, config.fmt))


def _report_failures(failures) -> int:
    if not failures:
        return 0
    print(f"{len(failures)} grid cell(s) failed:", file=sys.stderr)
    for f in failures:
        print(f"  {f.cell.key()}: {f.error}", file=sys.stderr)
    return 1


def _cmd_predict(args) -> int:
    config = _build_config(args)
    records, failures = harness.predict(config)
    _write(records, config)
    return _report_failures(failures)


def _cmd_sweep(args) -> int:
    config = _build_config(args)
    records, failures = harness.run_sweep(config)
    _write(records, config)
    return _report_failures(failures)


def _cmd_simulate(args) -> int:
    config = _build_config(args)
    cells = harness.grid_cells(config)
    if len(cells) != 1:
        raise ConfigError(
            f"simulate expects a single grid cell, got {len(cells)}; use sweep"
        )
    cell = cells[0]
    print(f"cell {cell.key()}  (K={cell.users}, N={cell.gain}, "
          f"M={cell.symbols}, M_t={cell.train_symbols})")
    records, failures = harness.run_sweep(config)
    for rec in records:
        se = f" +- {rec.sigma_g2_se:.4f}" if rec.sigma_g2_se is not None else ""
        print(
            f"  {rec.estimator:>9}: sigma_g2 = {rec.sigma_g2_emp:.4f}{se}"
            f" (analytic {rec.sigma_g2_ana:.4f})"
            f"  eta = {rec.eta_emp:+.4f} (analytic {rec.eta_ana:+.4f})"
        )
    if args.diagnostics:
        _print_diagnostics(config, cell)
    if config.out:
        harness.emit(records, config.out, config.fmt)
        print(f"wrote {len(records)} records to {config.out}")
    return _report_failures(failures)


def _print_diagnostics(config: harness.ExperimentConfig, cell) -> None:
    result = harness.run_trial(config, cell, 0)
    for name, diags in result.diagnostics.items():
        if not diags:
            continue
        iters = [d.iterations for d in diags]
        conv = sum(d.converged for d in diags)
        print(
            f"  {name} trial-0 diagnostics: iterations median {sorted(iters)[len(iters)//2]},"
            f" converged {conv}/{len(diags)}, weight {diags[0].weight:.4f}"
        )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="semiblind",
        description="Long-code DS-CDMA semi-blind channel estimation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, extra in (
        ("predict", _cmd_predict, "analytic efficiency surfaces over the grid"),
        ("simulate", _cmd_simulate, "single cell with verbose diagnostics"),
        ("sweep", _cmd_sweep, "full Monte Carlo grid sweep"),
    ):
        p = sub.add_parser(name, help=extra)
        _add_common(p)
        if name == "simulate":
            p.add_argument("--diagnostics", action="store_true",
                           help="print per-estimator fit diagnostics")
        p.set_defaults(func=fn)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
