"""How many fixed-point iterations each implicit midpoint variant needs.

The "original" variant evaluates the exchange field at the previous
iterate and contracts only for dt of order h^2; the "improved" variant
keeps the exchange operator implicit. Mesh sizes are small here so the
whole sweep takes seconds; pass a mesh size N to change it.
"""
import sys
import warnings

from twoscale_llg import llg
from twoscale_llg.cell import solve_cell_problems
from twoscale_llg.coefficients import make_preset
from twoscale_llg.mesh import build_mesh


def main(N=60):
    coeffs = make_preset("cosine2d")
    _, homog = solve_cell_problems(coeffs, 64, second_order=False)
    mesh = build_mesh(2, N, "periodic")
    model = llg.ModelSpec(mesh, "homogenized", homog=homog, coeffs=coeffs)
    m = llg.bubble_initial(mesh)
    print(f"h = 1/{N}; stability bound of the original iteration: dt <= {llg.original_bound(model):.2e}")
    print("      dt    original   improved")
    for dt in (1e-3, 1e-4, 1e-5, 1e-6):
        cells = []
        for scheme in ("original", "improved"):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", llg.StabilityWarning)
                res = llg.run(m, model, scheme=scheme, dt=dt, steps=2, raise_on_failure=False)
            cells.append(f"{res.mean_iters:8.1f}" if res.converged else "  failed")
        print(f"{dt:8.0e}  {cells[0]}   {cells[1]}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 60)
