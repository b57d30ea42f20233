"""Command-line entry point.

Exit codes: 0 success, 2 invalid configuration or input, 3 a solver did
not converge (outputs written so far are kept).
"""
from __future__ import annotations

import argparse
import sys

from . import experiments as ex
from . import llg
from .config import ConfigError, parse_config, parse_text, with_overrides
from .fields import NodalVectorField, write_snapshot
from .linalg import CompatibilityError
from .reconstruct import ConfigurationError, neumann_corrector

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 2, 3


def _load(args):
    if args.config:
        cfg = parse_config(args.config, full=args.full)
    else:
        cfg = parse_text("experiment = periodic2d\n", full=args.full)
    if args.out:
        cfg = with_overrides(cfg, out_dir=args.out)
    return cfg


def _cmd_cell(cfg, args):
    _, cells, homog = ex.cells_for(cfg)
    out = ex.analysis.ensure_dir(cfg.out_dir)
    ex.write_coeffs(out / "coeffs.txt", homog)
    write_snapshot(out / "chi.txt", NodalVectorField(cells.mesh, cells.chi.T))
    for k, v in homog.as_dict().items():
        print(f"{k} = {v + 0.0:.10g}")
    worst = max(cells.rhs_means.values())
    print(f"largest relative mean of a second-order cell source: {worst:.2e}")
    return EXIT_OK


def _cmd_corrector(cfg, args):
    """Correctors plus the corrected initial data ``m0 + corrector . grad m0`` per n."""
    coeffs, cells, homog = ex.cells_for(cfg)
    out = ex.analysis.ensure_dir(cfg.out_dir)
    mesh = ex.build_mesh(cfg.dim, cfg.N_ref, cfg.bc)
    m0 = llg.bubble_initial(mesh)
    if cfg.periodic:
        write_snapshot(out / "chi.txt", NodalVectorField(cells.mesh, cells.chi.T))
        print(f"wrote {out / 'chi.txt'} (cell mesh {cfg.cell_n})")
    for n in cfg.n_periods:
        if cfg.periodic:
            init = llg.initial_expansion(m0, cells, "periodic", 1.0 / n)
        else:
            phi = neumann_corrector(mesh, coeffs, homog, 1.0 / n)
            write_snapshot(out / f"phi_n{n}.txt", NodalVectorField(mesh, phi.phi.T))
            init = llg.initial_expansion(m0, phi, "neumann")
        write_snapshot(out / f"init_n{n}.txt", init)
    print(f"wrote corrected initial data for n = {', '.join(map(str, cfg.n_periods))} to {out}")
    return EXIT_OK


def _cmd_solve(cfg, args):
    res = ex.run_solve(cfg, cfg.out_dir)
    done = len(res.stats)
    print(f"{done}/{cfg.steps} steps, mean inner iterations {res.mean_iters:.2f}, "
          f"wall {res.wall_ms / 1e3:.2f} s")
    if not res.converged or done < cfg.steps:
        print(f"inner iteration failed at step {res.stats[-1].step}", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _cmd_converge(cfg, args):
    res = ex.run_convergence_study(cfg, cfg.out_dir, threads=args.threads)
    qs = ("e0", "e1") if cfg.periodic else ("e0", "e1", "e2")
    print(ex.error_table(res.records, qs))
    for j, q, s in res.orders:
        print(f"slope j={j} {q}: {s:.3f}")
    for n, msg in res.failures.items():
        print(f"n={n}: {msg}", file=sys.stderr)
    return EXIT_NONCONVERGED if res.failures else EXIT_OK


def _cmd_bench(cfg, args):
    rows = ex.run_scheme_benchmark(cfg, cfg.out_dir)
    print(f"{'dt':>8s} {'scheme':>9s} {'iters':>7s} {'conv':>5s} {'wall_s':>8s}")
    for r in rows:
        print(f"{r.dt:8.0e} {r.scheme:>9s} {r.mean_iters:7.2f} {'yes' if r.converged else 'no':>5s} "
              f"{r.wall_ms / 1e3:8.2f}")
    return EXIT_OK


def _cmd_algo1(cfg, args):
    res = ex.run_algorithm1(cfg, cfg.out_dir)
    for stage, t in res.timings.items():
        print(f"{stage:26s} {t:8.3f} s")
    print(f"wrote {len(res.reconstructed)} reconstructed snapshots to {cfg.out_dir}")
    return EXIT_OK


COMMANDS = {
    "cell": (_cmd_cell, "solve the cell problems and write homogenized coefficients"),
    "corrector": (_cmd_corrector, "write correctors and the corrected multiscale initial data"),
    "solve": (_cmd_solve, "integrate one LLG problem and write snapshots and stats.csv"),
    "converge": (_cmd_converge, "multiscale-vs-homogenized error study (errors.csv, orders.csv)"),
    "bench-iter": (_cmd_bench, "compare the two inner iterations over several time steps"),
    "algo1": (_cmd_algo1, "run the full two-scale pipeline and write reconstructed fields"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="configuration file")
    common.add_argument("--full", action="store_true", default=argparse.SUPPRESS,
                        help="use the full-resolution preset sizes")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="worker threads for the n sweep of 'converge'")
    parser = argparse.ArgumentParser(prog="twoscale-llg", parents=[common],
                                     description="Two-scale finite element solver for "
                                                 "multiscale Landau-Lifshitz-Gilbert dynamics.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("full", False), ("out", None), ("threads", 1)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = _load(args)
        return COMMANDS[args.command][0](cfg, args)
    except (ConfigError, ConfigurationError, CompatibilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except llg.NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except ex.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        cause = exc.__cause__
        if isinstance(cause, (ConfigError, ConfigurationError, CompatibilityError)):
            return EXIT_INVALID
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
