"""Effective tensors, the Curie temperature tensor and their diagnostics."""

from dataclasses import dataclass, field

import numpy as np

from perfomag.cell import (
    CellError, CorrectorCache, full3, flux_moment, gradient_flux, gradient_mean, solve_family,
)
from perfomag.geometry import build_cell_grid

TENSOR_NAMES = ("A_star", "K_star", "mu_star_in", "mu_star_out", "mu_bar", "H1", "H2", "Theta_c")


def jacobi_eigh(M, tol=1e-12, max_sweeps=100):
    """Cyclic Jacobi eigen-decomposition of a small symmetric matrix.

    Returns eigenvalues ascending and eigenvectors as columns.
    """
    a = np.array(M, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("square matrix required")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(a[p, q]) < 1e-150 * abs(diff):
                    t = a[p, q] / diff  # tau would overflow; t ~ 1/(2 tau)
                else:
                    tau = diff / (2.0 * a[p, q])
                    t = 1.0 if tau == 0 else np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                a = J.T @ a @ J
                v = v @ J
    w = np.diag(a).copy()
    order = np.argsort(w)
    return w[order], v[:, order]


@dataclass
class CurieTensor:
    theta_c_scalar: float
    H2_sym: np.ndarray
    Theta_c: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def lambda_min(self):
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self):
        return float(self.eigenvalues[-1])


def curie_tensor(H2, theta_c):
    if not theta_c > 0:
        raise ValueError("theta_c must be > 0")
    H2 = np.asarray(H2, dtype=float)
    sym = 0.5 * (H2 + H2.T)
    Theta = theta_c * np.eye(H2.shape[0]) + sym
    w, v = jacobi_eigh(Theta)
    return CurieTensor(float(theta_c), sym, Theta, w, v)


@dataclass
class EffectiveTensors:
    A_star: np.ndarray
    K_star: np.ndarray
    mu_star_in: np.ndarray
    mu_star_out: np.ndarray
    mu_bar: np.ndarray
    H1: np.ndarray
    H2: np.ndarray
    chi_bar: float
    curie: CurieTensor
    dim: int = 3
    voigt: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)

    def get(self, name):
        return self.curie.Theta_c if name == "Theta_c" else getattr(self, name)

    def with_curie(self, theta_c):
        out = EffectiveTensors(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.curie = curie_tensor(self.H2, theta_c)
        return out


def _check_family(grid, correctors, what):
    dirs = sorted(c.direction for c in correctors)
    if dirs != list(range(grid.dim)):
        raise CellError(f"{what}: missing corrector direction (have {dirs})")
    for c in correctors:
        if c.grid.shape != grid.shape:
            raise CellError(f"{what}: corrector grid does not match")
    return {c.direction: c for c in correctors}


def _phase_integral(grid, C, mask):
    """Voxel quadrature of the coefficient over ``mask``, as (3, 3)."""
    C3 = full3(C, grid.shape)
    return np.tensordot(mask.astype(float), C3, axes=grid.dim) * grid.voxel_volume


def effective_diffusion(grid, C, correctors):
    """Entry (i, j) is flux_moment(corr_j, C, i); 2-D keeps the extruded C_33 average."""
    cor = _check_family(grid, correctors, "effective_diffusion")
    d = grid.dim
    out = np.zeros((3, 3))
    for i in range(d):
        for j in range(d):
            out[i, j] = flux_moment(cor[j], C, i)
    if d == 2:
        out[2, 2] = _phase_integral(grid, C, cor[0].domain_mask)[2, 2]
    return out


def field_coupling(grid, mu, bar1_interior, bar1_exterior, bar2):
    """(mu_star_in, mu_star_out, mu_bar, H1, H2) from the three mu families."""
    ci = _check_family(grid, bar1_interior, "field_coupling")
    ce = _check_family(grid, bar1_exterior, "field_coupling")
    c2 = _check_family(grid, bar2, "field_coupling")
    d = grid.dim
    chi = float(grid.porosity)
    mu_in = effective_diffusion(grid, mu, bar1_interior)
    mu_out = effective_diffusion(grid, mu, bar1_exterior)
    mu_bar, H1, H2 = np.eye(3), chi * np.eye(3), np.eye(3)
    for i in range(d):
        for j in range(d):
            mu_bar[i, j] += gradient_mean(ci[j], i)
            H1[i, j] += gradient_flux(c2[j], mu, i)
            H2[i, j] += gradient_mean(c2[j], i)
    return mu_in, mu_out, mu_bar, H1, H2


def compute_effective_tensors(grid, A=1.0, K=1.0, mu=1.0, theta_c=1.0, omega2_source="mu_ei",
                              tol=1e-10, cache=None):
    """Solve every corrector family on ``grid`` and assemble the tensors."""
    cache = CorrectorCache() if cache is None else cache
    wA = solve_family(grid, A, "omega_A", tol=tol, cache=cache)
    wK = solve_family(grid, K, "omega_hat_K", tol=tol, cache=cache)
    w1i = solve_family(grid, mu, "omega_bar1_mu", "interior", tol=tol, cache=cache)
    w1e = solve_family(grid, mu, "omega_bar1_mu", "exterior", tol=tol, cache=cache)
    w2 = solve_family(grid, mu, "omega_bar2_mu", source=omega2_source, tol=tol, cache=cache)
    A_star = effective_diffusion(grid, A, wA)
    K_star = effective_diffusion(grid, K, wK)
    mu_in, mu_out, mu_bar, H1, H2 = field_coupling(grid, mu, w1i, w1e, w2)
    mat = np.asarray(grid.mask, dtype=bool)
    voigt = {"A_star": _phase_integral(grid, A, mat), "K_star": _phase_integral(grid, K, mat)}
    if grid.dim == 2:
        mu_in[2, 2] = _phase_integral(grid, mu, mat)[2, 2]
        mu_out[2, 2] = _phase_integral(grid, mu, np.ones_like(mat))[2, 2]
    reports = [(c.kind, c.variant or "", c.direction, c.report)
               for c in wA + wK + w1i + w1e + w2]
    return EffectiveTensors(A_star, K_star, mu_in, mu_out, mu_bar, H1, H2, float(grid.porosity),
                            curie_tensor(H2, theta_c), grid.dim, voigt, reports)


def compute_pointwise_tensors(grid, coeff_at, points, theta_c=1.0, omega2_source="mu_ei",
                              tol=1e-10):
    """Tensors at macro sample points for x-dependent coefficients.

    ``coeff_at(x)`` returns (A, K, mu) cell fields at macro point x.
    """
    out = []
    for x in np.atleast_2d(points):
        A, K, mu = coeff_at(x)
        out.append(compute_effective_tensors(grid, A, K, mu, theta_c, omega2_source, tol))
    return out


def isotropy_defect(T):
    """max |T - tr(T)/3 I| relative to tr(T)/3."""
    T = np.asarray(T, dtype=float)
    s = np.trace(T) / T.shape[0]
    return float(np.abs(T - s * np.eye(T.shape[0])).max() / abs(s))


_TEST_VECS = [np.eye(3)[k] for k in range(3)] + [
    np.array(v, dtype=float) / np.linalg.norm(v)
    for v in ((1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1), (1, 1, 1))
]


def tensor_report(T):
    """Per-tensor symmetry defect, eigenvalues, definiteness and Voigt margin."""
    rows = {}
    for name in TENSOR_NAMES:
        M = np.asarray(T.get(name), dtype=float)
        w, _ = jacobi_eigh(M)
        entry = {
            "matrix": M,
            "symmetry_defect": float(np.abs(M - M.T).max()),
            "eigenvalues": w,
            "positive_definite": bool(w[0] > 0),
        }
        if name in T.voigt:
            V = T.voigt[name]
            entry["voigt_margin"] = float(min(x @ V @ x - x @ M @ x for x in _TEST_VECS))
        rows[name] = entry
    return {"porosity": T.chi_bar, "dim": T.dim, "tensors": rows,
            "curie": {"theta_c": T.curie.theta_c_scalar, "eigenvalues": T.curie.eigenvalues}}


def report_csv_rows(T):
    """Rows for ``tensor,entry_i,entry_j,value`` (1-based indices)."""
    rows = []
    for name in TENSOR_NAMES:
        M = T.get(name)
        for i in range(3):
            for j in range(3):
                rows.append((name, i + 1, j + 1, float(M[i, j])))
    rows.append(("chi_bar", 0, 0, float(T.chi_bar)))
    return rows


def report_text(T):
    rep = tensor_report(T)
    lines = [f"porosity chi_bar = {rep['porosity']!r}", f"dimension = {rep['dim']}"]
    for name, e in rep["tensors"].items():
        lines.append(f"[{name}]")
        for r in e["matrix"]:
            lines.append("  " + "  ".join(f"{v: .12e}" for v in r))
        lines.append(f"  symmetry_defect = {e['symmetry_defect']:.3e}")
        lines.append("  eigenvalues = " + ", ".join(f"{v:.12g}" for v in e["eigenvalues"]))
        lines.append(f"  positive_definite = {str(e['positive_definite']).lower()}")
        if "voigt_margin" in e:
            lines.append(f"  voigt_margin = {e['voigt_margin']:.6e}")
    c = rep["curie"]
    lines.append(f"theta_c = {c['theta_c']!r}")
    lines.append("curie eigenvalues = " + ", ".join(f"{v:.12g}" for v in c["eigenvalues"]))
    return "\n".join(lines) + "\n"


def cell_tensors(n, dim, hole, **kw):
    return compute_effective_tensors(build_cell_grid(n, dim, hole), **kw)
