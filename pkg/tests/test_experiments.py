import numpy as np
import pytest

from twoscale_llg import experiments as ex
from twoscale_llg.config import parse_text
from twoscale_llg.fields import read_snapshot
from twoscale_llg.llg import bubble_initial

SMALL = """
experiment = {experiment}
h_ref = 1/{N}
h_hom = 1/{N}
cell_n = 16
n_periods = 2, 3
checkpoints = 2, 4
dt = 1e-5
"""


def small(experiment="periodic2d", N=24, **extra):
    text = SMALL.format(experiment=experiment, N=N)
    text += "".join(f"{k} = {v}\n" for k, v in extra.items())
    return parse_text(text)


def test_algorithm1_writes_every_stage(tmp_path):
    res = ex.run_algorithm1(small(), tmp_path)
    assert list(res.timings) == ["initial-data", "first-order-cell", "second-order-cell",
                                 "expansion-initial-data", "homogenized-run", "reconstruction"]
    assert sorted(res.reconstructed) == [(n, j) for n in (2, 3) for j in (0, 2, 4)]
    names = {p.name for p in tmp_path.iterdir()}
    assert {"coeffs.txt", "stats.csv", "m0_j2.txt", "recon_n3_j4.txt"} <= names
    back = read_snapshot(tmp_path / "recon_n3_j4.txt")
    assert np.array_equal(back.values, res.reconstructed[(3, 4)].values)
    coeffs = ex.read_coeffs(tmp_path / "coeffs.txt")
    assert coeffs["a0_11"] == res.homog.a0[0, 0]
    assert (tmp_path / "stats.csv").read_text().splitlines()[0] == "step,iters,residual,wall_ms"


def test_constant_coefficients_reconstruct_to_homogenized(tmp_path):
    cfg = parse_text("experiment = custom\ncoefficients = constant\ndim = 2\nbc = periodic\n"
                     "dt = 1e-5\nn_periods = 2, 3\ncheckpoints = 3\nh_ref = 1/16\ncell_n = 8\n")
    res = ex.run_algorithm1(cfg)
    m0 = dict(res.homogenized.snapshots)[3]
    for n in (2, 3):
        assert np.abs(res.reconstructed[(n, 3)].values - m0.values).max() < 1e-12


def test_stage_failures_are_tagged(monkeypatch):
    def boom(*a, **k):
        raise FloatingPointError("injected")

    monkeypatch.setattr(ex.llg, "run", boom)
    with pytest.raises(ex.StageError) as info:
        ex.run_algorithm1(small())
    assert info.value.stage == "homogenized-run"
    assert isinstance(info.value.__cause__, FloatingPointError)


def test_convergence_study_outputs_and_determinism(tmp_path):
    cfg = small()
    a = ex.run_convergence_study(cfg, tmp_path / "a")
    b = ex.run_convergence_study(cfg, tmp_path / "b", threads=2)
    assert not a.failures
    assert [(r.n, r.j) for r in a.records] == [(2, 2), (2, 4), (3, 2), (3, 4)]
    for r in a.records:
        assert r.e0 > 0 and r.e1 > 0 and np.isnan(r.e2)
        assert r.re0 == pytest.approx(r.e0 / 1.0, rel=0.05)
    for name in ("errors.csv", "orders.csv", "coeffs.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "orders.csv").read_text().splitlines()[0] == "j,quantity,slope"


def test_neumann_study_reports_e2():
    res = ex.run_convergence_study(small("neumann2d"))
    assert all(r.e2 > 0 and r.re2 > 0 for r in res.records)


def test_solve_outputs(tmp_path):
    cfg = small(steps=3, snapshot_stride=1, scale="multiscale")
    res = ex.run_solve(cfg, tmp_path)
    assert res.converged and len(res.stats) == 3
    assert {f"m_multiscale_j{j}.txt" for j in range(4)} <= {p.name for p in tmp_path.iterdir()}
    rows = (tmp_path / "stats.csv").read_text().splitlines()
    assert len(rows) == 4


def test_benchmark_rows(tmp_path):
    cfg = small(bench_dts="1e-4, 1e-6", bench_steps=1, bench_h="1/16")
    rows = ex.run_scheme_benchmark(cfg, tmp_path)
    assert [(r.scheme, r.dt) for r in rows] == [("original", 1e-4), ("improved", 1e-4),
                                                ("original", 1e-6), ("improved", 1e-6)]
    assert all(r.converged and r.mean_iters >= 1 for r in rows)
    improved, original = rows[1], rows[0]
    assert improved.mean_iters <= original.mean_iters
    head = (tmp_path / "bench.csv").read_text().splitlines()[0]
    assert head.startswith("scheme,dt,mean_iters")


def test_initial_data_is_the_bubble():
    cfg = small()
    res = ex.run_algorithm1(cfg)
    m0 = res.homogenized.snapshots[0][1]
    assert np.array_equal(m0.values, bubble_initial(m0.mesh).values)
