"""Compare the numba and numpy variants of the hot kernels.

    python3 benchmarks/bench_backends.py [--n 64] [--repeat 5]

Both variants are always importable from ``perfomag._kernels`` regardless of
PERFOMAG_BACKEND, so one process times both. The numba variants are called
once before timing to exclude compilation.
"""

import argparse
import time

import numpy as np

from perfomag import _kernels as K
from perfomag.geometry import HoleSpec, build_cell_grid
from perfomag.linsolve import Domain, assemble_elliptic, linear_rhs


def best_of(fn, repeat):
    ts = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        ts.append(time.perf_counter() - t)
    return min(ts), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=48, help="cell voxels per side (3-D)")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    grid = build_cell_grid(args.n, 3, HoleSpec.sphere((0.5, 0.5, 0.5), 0.25))
    op = assemble_elliptic(Domain(grid.mask, grid.spacing), np.eye(3), "periodic")
    b = linear_rhs(op, 0)
    counts = np.bincount(op.labels).astype(float)
    diag = op.diagonal()
    dinv = 1.0 / diag
    x0 = np.zeros(op.n_rows)
    x = np.random.default_rng(0).standard_normal(op.n_rows)

    cases = {
        "csr_matvec": (lambda f: f(op.indptr, op.indices, op.data, x),
                       K.csr_matvec_numba, K.csr_matvec_numpy),
        "pcg (corrector solve)": (
            lambda f: f(op.indptr, op.indices, op.data, dinv, b.copy(), x0, 1e-10, 5000,
                        op.labels, counts, True),
            K.pcg_numba, K.pcg_numpy),
    }
    # small shifted system, the shape of one macro m-solve on a 16^2 grid
    g2 = build_cell_grid(16, 2)
    op2 = assemble_elliptic(Domain(g2.mask, g2.spacing), np.eye(2), "box_neumann").shifted(20.0)
    b2 = np.random.default_rng(2).standard_normal(op2.n_rows)
    lab2 = np.zeros(op2.n_rows, dtype=np.int64)
    dinv2 = 1.0 / op2.diagonal()
    cases["pcg (16^2 macro step)"] = (
        lambda f: f(op2.indptr, op2.indices, op2.data, dinv2, b2, np.zeros(op2.n_rows), 1e-10,
                    1000, lab2, np.ones(1), False),
        K.pcg_numba, K.pcg_numpy)
    # unfolding quadrature: eps = 1/8 micro field against a 32^2 macro field
    cell2 = build_cell_grid(8, 2, HoleSpec.box((0.25, 0.25), (0.75, 0.75)))
    fine = np.random.default_rng(1).standard_normal(64 * 64)
    fine_h = np.array([[64.0, 1 / 64], [64.0, 1 / 64]])
    xs = (np.arange(32) + 0.5) / 32
    X = np.stack(np.meshgrid(xs, xs, indexing="ij"), -1).reshape(-1, 2)
    Y = cell2.centers().reshape(-1, 2)
    chi = cell2.mask.astype(float).ravel()
    mv = np.cos(X[:, 0])
    cases["unfold_sq_error"] = (lambda f: f(fine, fine_h, X, mv, Y, chi, 0.125),
                                K.unfold_sq_error_numba, K.unfold_sq_error_numpy)
    # hole filling on the 3-D sphere cell
    from perfomag.micro import _neighbours
    holes, nbr = _neighbours(grid.mask)
    vals = np.where(grid.mask, 1.0 + grid.centers()[..., 0], 0.0).ravel()
    cases["neighbor_fill"] = (lambda f: f(vals, holes, nbr, 1e-10, 100000),
                              K.neighbor_fill_numba, K.neighbor_fill_numpy)

    print(f"grid {args.n}^3, {op.n_rows} unknowns, {op.data.size} nonzeros")
    print(f"{'kernel':24s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}  agree")
    for name, (call, fn_nb, fn_np) in cases.items():
        call(fn_nb)  # compile
        t_nb, r_nb = best_of(lambda: call(fn_nb), args.repeat)
        t_np, r_np = best_of(lambda: call(fn_np), args.repeat)
        a = r_nb[0] if isinstance(r_nb, tuple) else r_nb
        c = r_np[0] if isinstance(r_np, tuple) else r_np
        err = float(np.abs(a - c).max() / max(np.abs(c).max(), 1e-300))
        print(f"{name:24s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.2f}  {err:.1e}")


if __name__ == "__main__":
    main()
