import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twoscale_llg import fem, llg
from twoscale_llg.cell import HomogenizedCoefficients, solve_cell_problems
from twoscale_llg.coefficients import constant_coefficients, layered_coefficients
from twoscale_llg.fields import NodalVectorField
from twoscale_llg.mesh import build_mesh
from twoscale_llg.reconstruct import ConfigurationError, neumann_corrector

TWO_PI = 2 * np.pi


def hom_model(mesh, a=1.0, terms=("exchange",), **kw):
    return llg.ModelSpec(mesh, "homogenized", terms=terms,
                         homog=HomogenizedCoefficients.constant(a, mesh.dim, **{k: kw.pop(k) for k in ("K", "mu") if k in kw}),
                         **kw)


def wavy(mesh, amp=0.4):
    x = mesh.dof_points
    g = amp * np.sin(TWO_PI * x[:, 0]) * np.cos(TWO_PI * x[:, 1])
    k = TWO_PI * x[:, 0]
    m = np.stack([np.sin(g) * np.cos(k), np.sin(g) * np.sin(k), np.cos(g)], axis=1)
    return NodalVectorField(mesh, m)


# -- elementary operators -----------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_cross_matrix_is_cross_product(vals):
    v = np.array(vals).reshape(2, 3)
    x = np.random.default_rng(0).standard_normal((2, 3))
    assert np.allclose((llg.cross_matrix(v) @ x.ravel()).reshape(2, 3), np.cross(v, x))


def test_energy_trivial_cases():
    mesh = build_mesh(2, 6, "periodic")
    ones = NodalVectorField(mesh, np.tile([0.0, 0.0, 1.0], (mesh.n_dof, 1)))
    assert llg.discrete_energy(ones, hom_model(mesh)) == pytest.approx(0.0, abs=1e-14)
    aniso = hom_model(mesh, terms=("anisotropy",), K=0.8, easy_axis=(0, 0, 1))
    assert llg.discrete_energy(ones, aniso) == pytest.approx(0.4, abs=1e-14)
    assert np.abs(llg.effective_field(ones, hom_model(mesh)).values).max() < 1e-12


def test_exchange_energy_converges_at_second_order():
    """Against a fine midpoint-rule value of 1/2 int |grad m|^2 for the same field."""
    n = 2000
    t = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(t, t, indexing="ij")
    amp = 0.4
    g = amp * np.sin(TWO_PI * X) * np.cos(TWO_PI * Y)
    gx = amp * TWO_PI * np.cos(TWO_PI * X) * np.cos(TWO_PI * Y)
    gy = -amp * TWO_PI * np.sin(TWO_PI * X) * np.sin(TWO_PI * Y)
    exact = 0.5 * np.mean(gx**2 + gy**2 + np.sin(g) ** 2 * TWO_PI**2)
    errs = []
    for N in (16, 32, 64):
        mesh = build_mesh(2, N, "periodic")
        errs.append(abs(llg.discrete_energy(wavy(mesh, amp), hom_model(mesh)) - exact))
    slopes = np.diff(np.log(errs)) / np.log(0.5)
    assert np.all(slopes > 1.8), errs


def test_model_validation():
    mesh = build_mesh(2, 4, "periodic")
    h = HomogenizedCoefficients.constant(1.0, 2)
    with pytest.raises(ConfigurationError):
        llg.ModelSpec(mesh, terms=("magic",), homog=h)
    with pytest.raises(ConfigurationError):
        llg.ModelSpec(mesh, homog=h, alpha=0.0)
    with pytest.raises(ConfigurationError):
        llg.ModelSpec(mesh, "multiscale", coeffs=constant_coefficients(2))
    with pytest.raises(ConfigurationError):
        llg.ModelSpec(build_mesh(3, 2, "periodic"), terms=("stray2d",),
                      homog=HomogenizedCoefficients.constant(1.0, 3))
    with pytest.raises(ConfigurationError):
        llg.ModelSpec(mesh, "homogenized")


def test_multiscale_with_constant_coefficients_equals_homogenized():
    mesh = build_mesh(2, 8, "periodic")
    m = wavy(mesh)
    ms = llg.ModelSpec(mesh, "multiscale", coeffs=constant_coefficients(2, a=1.3), n_periods=3)
    ho = hom_model(mesh, a=1.3)
    assert np.allclose(llg.effective_field(m, ms).values, llg.effective_field(m, ho).values,
                       atol=1e-10)


# -- time stepping ----------------------------------------------------------------

def test_constant_field_is_a_fixed_point():
    mesh = build_mesh(2, 8, "periodic")
    m = NodalVectorField(mesh, np.tile([0.6, 0.0, 0.8], (mesh.n_dof, 1)))
    for scheme in ("original", "improved"):
        new, stats = llg.step(m, 1e-6, hom_model(mesh), scheme=scheme)
        assert np.array_equal(new.values, m.values)
        assert stats.iters == 1 and stats.converged


def test_zero_steps_return_initial_field():
    mesh = build_mesh(2, 4, "periodic")
    m = wavy(mesh)
    res = llg.run(m, hom_model(mesh), steps=0)
    assert np.array_equal(res.final.values, m.values) and res.stats == []


def test_macrospin_zeeman_oracle():
    mesh = build_mesh(2, 2, "periodic")
    h = np.array([0.3, 0.0, 1.0])
    m0 = np.array([1.0, 0.0, 0.0])
    model = hom_model(mesh, terms=("exchange", "zeeman"), h_a=h, alpha=0.5)
    dt, steps = 2e-3, 100
    res = llg.run(np.tile(m0, (mesh.n_dof, 1)), model, dt=dt, steps=steps, threshold=1e-13)
    ref = llg.macrospin_reference(m0, h, 0.5, dt * steps)
    got = res.final.values
    assert np.abs(got - got[0]).max() < 1e-13
    assert np.linalg.norm(got[0] - ref) / np.linalg.norm(ref) < 1e-4


def test_damping_decreases_angle_to_applied_field():
    mesh = build_mesh(2, 2, "periodic")
    h = np.array([0.0, 0.0, 1.0])
    model = hom_model(mesh, terms=("exchange", "zeeman"), h_a=h, alpha=0.3)
    res = llg.run(np.tile([1.0, 0.0, 0.0], (mesh.n_dof, 1)), model, dt=0.05, steps=40,
                  snapshot_stride=1, threshold=1e-12)
    cosines = [s.values[0] @ h for _, s in res.snapshots]
    assert np.all(np.diff(cosines) >= -1e-12)
    assert cosines[-1] > cosines[0]


@pytest.mark.parametrize("scheme", ["original", "improved"])
def test_norm_conservation_and_energy_decay(scheme):
    mesh = build_mesh(2, 16, "periodic")
    thr = 1e-8
    model = hom_model(mesh, terms=("exchange", "anisotropy"), K=0.5, easy_axis=(1, 0, 0))
    m = wavy(mesh, 0.8)
    res = llg.run(m, model, scheme=scheme, dt=1e-5, steps=12, snapshot_stride=1,
                  threshold=thr, track_energy=True)
    norms = np.array([np.linalg.norm(s.values, axis=1) for _, s in res.snapshots])
    assert np.abs(np.diff(norms, axis=0)).max() <= 10 * thr
    assert np.all(np.diff(res.energies) <= 10 * thr)
    assert res.energies[-1] < res.energies[0]


def test_schemes_agree_on_small_mesh():
    mesh = build_mesh(2, 16, "periodic")
    model = hom_model(mesh)
    m = wavy(mesh, 0.8)
    a, sa = llg.step(m, 5e-5, model, scheme="original", threshold=1e-12, max_iter=500)
    b, sb = llg.step(m, 5e-5, model, scheme="improved", threshold=1e-12, max_iter=500)
    assert sa.converged and sb.converged
    ML = fem.lumped_mass(mesh)
    diff = np.sqrt(ML @ np.sum((a.values - b.values) ** 2, axis=1))
    assert diff < 1e-8


def test_original_scheme_warns_past_its_bound():
    mesh = build_mesh(2, 8, "periodic")
    model = hom_model(mesh)
    with pytest.warns(llg.StabilityWarning):
        llg.step(wavy(mesh), 10 * llg.original_bound(model), model, scheme="original")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        llg.step(wavy(mesh), 10 * llg.original_bound(model), model, scheme="improved")


def test_non_convergence_carries_step_and_stats():
    mesh = build_mesh(2, 8, "periodic")
    with pytest.raises(llg.NonConvergenceError) as info:
        llg.run(wavy(mesh), hom_model(mesh), dt=1e-3, steps=3, max_iter=1, threshold=1e-14)
    assert info.value.step_index == 1
    st_ = info.value.stats[-1]
    assert st_.iters == 1 and not st_.converged and st_.residual > 1e-14
    res = llg.run(wavy(mesh), hom_model(mesh), dt=1e-3, steps=3, max_iter=1, threshold=1e-14,
                  raise_on_failure=False)
    assert len(res.stats) == 1 and not res.converged


def test_run_is_deterministic():
    mesh = build_mesh(2, 10, "periodic")
    a = llg.run(wavy(mesh), hom_model(mesh), dt=1e-4, steps=3)
    b = llg.run(wavy(mesh), hom_model(mesh), dt=1e-4, steps=3)
    assert np.array_equal(a.final.values, b.final.values)


def test_stray_term_favours_out_of_plane():
    mesh = build_mesh(2, 4, "periodic")
    model = llg.ModelSpec(mesh, "homogenized", terms=("exchange", "stray2d"),
                          homog=HomogenizedCoefficients.constant(1.0, 2, mu=1.2))
    up = np.tile([0.0, 0.0, 1.0], (mesh.n_dof, 1))
    side = np.tile([1.0, 0.0, 0.0], (mesh.n_dof, 1))
    assert llg.discrete_energy(up, model) == pytest.approx(-0.6)
    assert llg.discrete_energy(side, model) == 0.0


# -- initial data -------------------------------------------------------------------

def test_bubble_profile():
    mesh = build_mesh(2, 40, "neumann")
    m = llg.bubble_initial(mesh).values
    assert np.abs(np.linalg.norm(m, axis=1) - 1).max() < 1e-12
    far = np.linalg.norm(mesh.dof_points - 0.5, axis=1) >= 0.5
    assert np.array_equal(m[far], np.tile([0.0, 0.0, -1.0], (far.sum(), 1)))
    centre = llg.bubble_profile([[0.5, 0.5]])
    assert np.allclose(centre, [[0, 0, 1]])


def test_expansion_identities(cosine2d):
    _, cells, _ = cosine2d
    mesh = build_mesh(2, 48, "periodic")
    const = NodalVectorField(mesh, np.tile([0.0, 0.0, 1.0], (mesh.n_dof, 1)))
    assert np.array_equal(llg.initial_expansion(const, cells, "periodic", 0.25).values, const.values)
    m0 = llg.bubble_initial(mesh)
    G = fem.recover_gradient(mesh, m0.values)
    grad_max = np.sqrt(np.sum(G**2, axis=(1, 2))).max()
    chi_max = np.sqrt(np.sum(cells.chi**2, axis=0)).max()
    for n in (2, 4, 8):
        out = llg.initial_expansion(m0, cells, "periodic", 1 / n).values
        corr = out - m0.values
        norm = np.linalg.norm(out, axis=1)
        assert np.abs(norm - 1 - np.sum(corr**2, axis=1) / (norm + 1)).max() < 1e-12
        # |m| - 1 <= |corr|^2 / 2 <= (eps |chi| |grad m0|)^2 / 2
        assert np.abs(norm - 1).max() <= 0.5 * (chi_max * grad_max / n) ** 2


def test_expansion_requires_correctors():
    mesh = build_mesh(2, 4, "neumann")
    with pytest.raises(ConfigurationError):
        llg.initial_expansion(llg.bubble_initial(mesh), None, "neumann")


def test_projection_fixed_point_for_consistent_coefficients():
    mesh = build_mesh(2, 16, "periodic")
    m0 = wavy(mesh)
    res = llg.initial_projection(m0, constant_coefficients(2, a=1.4),
                                 HomogenizedCoefficients.constant(1.4, 2), 0.25, tol=1e-9)
    assert res.converged and res.iterations <= 3
    assert np.abs(res.field.values - m0.values).max() < 1e-8


def test_projection_contracts_for_smooth_data(cosine2d_coarse):
    coeffs, cells, homog = cosine2d_coarse
    mesh = build_mesh(2, 32, "periodic")
    m0 = wavy(mesh)
    guess = llg.initial_expansion(m0, cells, "periodic", 0.25)
    res = llg.initial_projection(m0, coeffs, homog, 0.25, initial_guess=guess, tol=1e-8)
    assert res.converged and res.iterations < 15
    assert np.all(np.diff(res.increments) < 0)
    assert np.array_equal(np.linalg.norm(res.field.values, axis=1).round(14), np.ones(mesh.n_dof))


def test_projection_improves_boundary_consistency():
    coeffs = layered_coefficients(2, mean=1.5, amp=0.5)
    cells, homog = solve_cell_problems(coeffs, 64, second_order=False)
    mesh = build_mesh(2, 24, "neumann")
    m0 = wavy(mesh)
    eps = 1 / 4
    guess = llg.initial_expansion(m0, neumann_corrector(mesh, coeffs, homog, eps), "neumann")
    res = llg.initial_projection(m0, coeffs, homog, eps, initial_guess=guess, tol=1e-5)
    assert res.converged
    assert np.abs(np.linalg.norm(res.field.values, axis=1) - 1).max() < 1e-14
    aeps = coeffs.scaled(eps)
    assert llg.boundary_flux_residual(res.field, aeps) < llg.boundary_flux_residual(m0, aeps)
