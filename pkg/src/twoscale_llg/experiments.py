"""End-to-end drivers: the two-scale pipeline, convergence studies, scheme benchmark.

Every driver takes an :class:`~twoscale_llg.config.ExperimentConfig` and an
optional output directory. Outputs are deterministic: the same configuration
produces byte-identical files, except for the wall-clock columns of the
statistics tables.
"""
from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import analysis, llg, reconstruct
from .cell import (CellSolutions, HomogenizedCoefficients, solve_cell_problems,
                   solve_second_order)
from .config import ExperimentConfig
from .fields import NodalVectorField, format_value, write_snapshot
from .mesh import build_mesh


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the error."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"[{stage}] {cause}")


class _stage:
    def __init__(self, name, timings):
        self.name, self.timings = name, timings

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, typ, exc, tb):
        self.timings[self.name] = time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, (StageError, llg.NonConvergenceError)):
            raise StageError(self.name, exc) from exc
        return False


def write_coeffs(path, homog: HomogenizedCoefficients) -> None:
    """``key = value`` lines at 17 significant digits."""
    lines = [f"{k} = {v + 0.0:.17g}" for k, v in homog.as_dict().items()]  # no "-0"
    Path(path).write_text("\n".join(lines) + "\n")


def read_coeffs(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            k, v = line.split("=")
            out[k.strip()] = float(v)
    return out


def write_stats(path, stats) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "iters", "residual", "wall_ms"])
        for s in stats:
            w.writerow([s.step, s.iters, format_value(s.residual), f"{s.wall_ms:.3f}"])


def cells_for(cfg: ExperimentConfig):
    """Solve all cell problems for ``cfg`` once; returns ``(coeffs, cells, homog)``."""
    coeffs = cfg.coefficient_set()
    cells, homog = solve_cell_problems(coeffs, cfg.cell_n, second_order=True)
    return coeffs, cells, homog


def _multiscale_initial(cfg, m0_init, cells, coeffs, homog, eps):
    """Multiscale initial data on the reference mesh; also returns the Neumann corrector."""
    mesh = m0_init.mesh
    if cfg.periodic:
        guess = llg.initial_expansion(m0_init, cells, "periodic", eps)
        if cfg.init_method == "projection":
            res = llg.initial_projection(m0_init, coeffs, homog, eps, initial_guess=guess)
            return res.field, None
        return guess, None
    phi = reconstruct.neumann_corrector(mesh, coeffs, homog, eps)
    return llg.initial_expansion(m0_init, phi, "neumann"), phi


def _homogenized_run(cfg, homog, coeffs, mesh, steps, checkpoints, snapshot_stride=None):
    model = llg.ModelSpec(mesh, "homogenized", terms=cfg.terms, alpha=cfg.alpha,
                          homog=homog, coeffs=coeffs)
    return llg.run(llg.bubble_initial(mesh), model, scheme=cfg.scheme, dt=cfg.dt, steps=steps,
                   threshold=cfg.threshold, max_iter=cfg.max_iter, checkpoints=checkpoints,
                   snapshot_stride=snapshot_stride)


# -- the two-scale pipeline ---------------------------------------------------

@dataclass
class PipelineResult:
    cells: CellSolutions
    homog: HomogenizedCoefficients
    homogenized: llg.RunResult
    initial: dict                       # n -> multiscale initial data
    reconstructed: dict                 # (n, j) -> NodalVectorField
    timings: dict = field(default_factory=dict)


def run_algorithm1(cfg: ExperimentConfig, out_dir=None) -> PipelineResult:
    """Cell problems once, one homogenized run, then the corrected field per ``n``.

    Periodic problems reconstruct ``m0 + eps m1 + eps^2 m2``. Neumann problems
    use the boundary-adapted first-order term ``(Phi - x) grad m0`` and stop
    at first order, since no boundary-adapted second-order term is defined.
    """
    timings: dict = {}
    mesh = build_mesh(cfg.dim, cfg.N_hom, cfg.bc)
    coeffs = cfg.coefficient_set()
    with _stage("initial-data", timings):
        m0_init = llg.bubble_initial(mesh)
    with _stage("first-order-cell", timings):
        # chi and U*, then the cell averages
        cells, homog = solve_cell_problems(coeffs, cfg.cell_n, second_order=False)
    with _stage("second-order-cell", timings):
        solve_second_order(coeffs, cells, homog)
    initial = {}
    correctors = {}
    with _stage("expansion-initial-data", timings):
        for n in cfg.n_periods:
            initial[n], correctors[n] = _multiscale_initial(cfg, m0_init, cells, coeffs,
                                                            homog, 1.0 / n)
    last = cfg.checkpoints[-1]
    with _stage("homogenized-run", timings):
        hom = _homogenized_run(cfg, homog, coeffs, mesh, last, cfg.checkpoints)
    recon = {}
    with _stage("reconstruction", timings):
        for j, m0 in hom.snapshots:
            for n in cfg.n_periods:
                eps = 1.0 / n
                if cfg.periodic:
                    m1 = reconstruct.first_order(m0, cells, eps)
                    m2 = reconstruct.second_order(m0, cells, eps, terms=cfg.terms)
                    recon[(n, j)] = reconstruct.assemble(m0, m1, m2, eps, order=2)
                else:
                    corr = reconstruct.neumann_first_order(m0, correctors[n])
                    recon[(n, j)] = NodalVectorField(mesh, m0.values + corr.values)
    if out_dir is not None:
        out = analysis.ensure_dir(out_dir)
        write_coeffs(out / "coeffs.txt", homog)
        for j, m0 in hom.snapshots:
            write_snapshot(out / f"m0_j{j}.txt", m0)
        for (n, j), f in sorted(recon.items()):
            write_snapshot(out / f"recon_n{n}_j{j}.txt", f)
        write_stats(out / "stats.csv", hom.stats)
    return PipelineResult(cells=cells, homog=homog, homogenized=hom, initial=initial,
                          reconstructed=recon, timings=timings)


# -- convergence study ----------------------------------------------------------

@dataclass
class ConvergenceResult:
    records: list
    orders: list
    failures: dict                      # n -> message
    homog: HomogenizedCoefficients
    wall_s: float = 0.0


def _errors_for_n(cfg, n, m0_ref_init, cells, coeffs, homog, hom_snaps):
    eps = 1.0 / n
    mref, phi = _multiscale_initial(cfg, m0_ref_init, cells, coeffs, homog, eps)
    model = llg.ModelSpec(mref.mesh, "multiscale", terms=cfg.terms, alpha=cfg.alpha,
                          coeffs=coeffs, n_periods=n)
    res = llg.run(mref, model, scheme="improved", dt=cfg.dt, steps=cfg.checkpoints[-1],
                  threshold=cfg.threshold, max_iter=cfg.max_iter, checkpoints=cfg.checkpoints,
                  raise_on_failure=False)
    ref_snaps = dict(res.snapshots)
    records = []
    for j in cfg.checkpoints:
        rec = analysis.ErrorRecord(n=n, j=j)
        if j in ref_snaps:
            me, m0 = ref_snaps[j], hom_snaps[j]
            l2, h1 = analysis.l2_norm(me), analysis.h1_norm(me)
            rec.e0 = analysis.error_l2(me, m0)
            rec.re0 = rec.e0 / l2
            rec.e1 = analysis.error_h1_corrected(me, m0, "chi", cells, eps)
            rec.re1 = rec.e1 / h1
            if phi is not None:
                rec.e2 = analysis.error_h1_corrected(me, m0, "neumann", phi)
                rec.re2 = rec.e2 / h1
        records.append(rec)
    failure = None
    if not res.converged:
        s = res.stats[-1]
        failure = f"reference solve did not converge at step {s.step} (residual {s.residual:.3e})"
    return records, failure


def run_convergence_study(cfg: ExperimentConfig, out_dir=None, threads: int = 1,
                          prepared=None) -> ConvergenceResult:
    """Reference multiscale solves against one homogenized solve, for each ``n``.

    ``prepared`` may pass ``(coeffs, cells, homog)`` from :func:`cells_for`.
    A reference solve that stops converging leaves NaN rows from the failing
    checkpoint on and is listed in ``failures``; the other ``n`` still run.
    """
    t0 = time.perf_counter()
    coeffs, cells, homog = prepared or cells_for(cfg)
    hom_mesh = build_mesh(cfg.dim, cfg.N_hom, cfg.bc)
    ref_mesh = hom_mesh if cfg.N_ref == cfg.N_hom else build_mesh(cfg.dim, cfg.N_ref, cfg.bc)
    hom = _homogenized_run(cfg, homog, coeffs, hom_mesh, cfg.checkpoints[-1], cfg.checkpoints)
    hom_snaps = dict(hom.snapshots)
    m0_ref_init = llg.bubble_initial(ref_mesh)

    def job(n):
        return _errors_for_n(cfg, n, m0_ref_init, cells, coeffs, homog, hom_snaps)

    if threads > 1 and len(cfg.n_periods) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(job, cfg.n_periods))
    else:
        outcomes = [job(n) for n in cfg.n_periods]
    records, failures = [], {}
    for n, (recs, fail) in zip(cfg.n_periods, outcomes):
        records.extend(recs)
        if fail:
            failures[n] = fail
    quantities = ("e0", "e1") if cfg.periodic else ("e0", "e1", "e2")
    orders = analysis.fit_orders(records, quantities)
    if out_dir is not None:
        out = analysis.ensure_dir(out_dir)
        analysis.write_errors_csv(out / "errors.csv", records)
        analysis.write_orders_csv(out / "orders.csv", orders)
        write_coeffs(out / "coeffs.txt", homog)
    return ConvergenceResult(records=sorted(records, key=lambda r: (r.n, r.j)), orders=orders,
                             failures=failures, homog=homog,
                             wall_s=time.perf_counter() - t0)


# -- scheme benchmark -------------------------------------------------------------

@dataclass
class BenchRow:
    scheme: str
    dt: float
    mean_iters: float
    converged: bool
    steps_done: int
    wall_ms: float
    stats: list


def run_scheme_benchmark(cfg: ExperimentConfig, out_dir=None, prepared=None) -> list:
    """Both inner iterations at every ``bench_dts`` entry on the ``bench_h`` mesh.

    Uses the homogenized problem unless ``scale = multiscale`` (then with
    ``n_periods[0]``). Non-convergence is a recorded outcome, not an error.
    """
    import warnings

    mesh = build_mesh(cfg.dim, cfg.bench_N, cfg.bc)
    if cfg.scale == "multiscale":
        coeffs = cfg.coefficient_set()
        model = llg.ModelSpec(mesh, "multiscale", terms=cfg.terms, alpha=cfg.alpha,
                              coeffs=coeffs, n_periods=cfg.n_periods[0])
    else:
        coeffs, _, homog = prepared or cells_for(cfg)
        model = llg.ModelSpec(mesh, "homogenized", terms=cfg.terms, alpha=cfg.alpha,
                              homog=homog, coeffs=coeffs)
    m_init = llg.bubble_initial(mesh)
    rows = []
    for dt in cfg.bench_dts:
        for scheme in ("original", "improved"):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", llg.StabilityWarning)
                res = llg.run(m_init, model, scheme=scheme, dt=dt, steps=cfg.bench_steps,
                              threshold=cfg.threshold, max_iter=cfg.max_iter,
                              raise_on_failure=False)
            rows.append(BenchRow(scheme=scheme, dt=dt, mean_iters=res.mean_iters,
                                 converged=res.converged and len(res.stats) == cfg.bench_steps,
                                 steps_done=len(res.stats), wall_ms=res.wall_ms,
                                 stats=res.stats))
    if out_dir is not None:
        out = analysis.ensure_dir(out_dir)
        with open(out / "bench.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scheme", "dt", "mean_iters", "converged", "steps_done", "wall_ms"])
            for r in rows:
                w.writerow([r.scheme, f"{r.dt:g}", f"{r.mean_iters:.2f}", int(r.converged),
                            r.steps_done, f"{r.wall_ms:.1f}"])
        for r in rows:
            write_stats(out / f"stats_{r.scheme}_dt{r.dt:g}.csv", r.stats)
    return rows


# -- single solve -------------------------------------------------------------------

def run_solve(cfg: ExperimentConfig, out_dir=None) -> llg.RunResult:
    """One time integration with the ``solve`` keys.

    ``scale = multiscale`` uses ``n_periods[0]`` and expansion initial data.
    Snapshots are written every ``snapshot_stride`` steps (0 disables) and at
    step 0; ``stats.csv`` is written even when the run stops early.
    """
    mesh = build_mesh(cfg.dim, cfg.N_ref if cfg.scale == "multiscale" else cfg.N_hom, cfg.bc)
    coeffs, cells, homog = cells_for(cfg)
    m0_init = llg.bubble_initial(mesh)
    if cfg.scale == "multiscale":
        n = cfg.n_periods[0]
        m_init, _ = _multiscale_initial(cfg, m0_init, cells, coeffs, homog, 1.0 / n)
        model = llg.ModelSpec(mesh, "multiscale", terms=cfg.terms, alpha=cfg.alpha,
                              coeffs=coeffs, n_periods=n)
    else:
        m_init = m0_init
        model = llg.ModelSpec(mesh, "homogenized", terms=cfg.terms, alpha=cfg.alpha,
                              homog=homog, coeffs=coeffs)
    res = llg.run(m_init, model, scheme=cfg.scheme, dt=cfg.dt, steps=cfg.steps,
                  snapshot_stride=cfg.snapshot_stride or None, threshold=cfg.threshold,
                  max_iter=cfg.max_iter, raise_on_failure=False)
    if out_dir is not None:
        out = analysis.ensure_dir(out_dir)
        for j, f in res.snapshots:
            write_snapshot(out / f"m_{cfg.scale}_j{j}.txt", f)
        write_stats(out / "stats.csv", res.stats)
    return res


def error_table(records, quantities=("e0", "e1")) -> str:
    """Plain-text table of error records for terminal output."""
    head = "   n      j " + "".join(f"{q:>12s}" for q in quantities)
    rows = [head]
    for r in sorted(records, key=lambda r: (r.j, r.n)):
        vals = "".join(f"{getattr(r, q):12.4e}" for q in quantities)
        rows.append(f"{r.n:4d} {r.j:6d} {vals}")
    return "\n".join(rows)


__all__ = [
    "BenchRow", "ConvergenceResult", "PipelineResult", "StageError", "cells_for",
    "error_table", "read_coeffs", "run_algorithm1", "run_convergence_study",
    "run_scheme_benchmark", "run_solve", "write_coeffs", "write_stats",
]
