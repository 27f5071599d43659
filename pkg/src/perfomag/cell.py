"""Periodic corrector problems on the unit cell.

Every family solves  -div_y(C grad_y(w + y_i)) = S  in the cell domain with
no-flux walls on the hole, periodicity and zero mean.  ``kind`` selects the
coefficient and domain:

    omega_A         C = A,  domain Y*
    omega_hat_K     C = K,  domain Y*
    omega_bar1_mu   C = mu, domain Y* ("interior") or all of Y ("exterior")
    omega_bar2_mu   C = mu, domain Y*; source either mu e_i (printed form)
                    or the unit vector e_i
"""

from dataclasses import dataclass, field
import hashlib

import numpy as np

from perfomag.geometry import CellGrid
from perfomag.linsolve import (
    Domain, SolveReport, SolverError, assemble_elliptic, face_gradient_mean, linear_flux,
    linear_rhs, node_gradient, solve_spd,
)

KINDS = ("omega_A", "omega_hat_K", "omega_bar1_mu", "omega_bar2_mu")
VARIANTS = ("interior", "exterior")
OMEGA2_SOURCES = ("mu_ei", "ei")


class CellError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def full3(C, shape):
    """Coefficient broadcast to (*shape, 3, 3); 2x2 input gets C_33 = 1."""
    c = np.asarray(C, dtype=float)
    if c.ndim == 0:
        c = c * np.eye(3)
    elif c.shape == tuple(shape):
        c = c[..., None, None] * np.eye(3)
    if c.shape[-2:] == (2, 2):
        e = np.zeros(c.shape[:-2] + (3, 3))
        e[..., :2, :2] = c
        e[..., 2, 2] = 1.0
        c = e
    if c.shape[-2:] != (3, 3):
        raise CellError(f"coefficient has shape {c.shape}")
    return np.broadcast_to(c, tuple(shape) + (3, 3))


def _digest(*arrays):
    h = hashlib.sha1()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass
class CorrectorField:
    grid: CellGrid
    values: np.ndarray  # full cell array, 0 outside the problem domain
    direction: int  # 0-based axis i
    kind: str
    variant: str
    domain_mask: np.ndarray
    report: SolveReport
    operator: object = field(repr=False)
    coeff_digest: str = ""
    source: str = "mu_ei"

    @property
    def unknown_values(self):
        return self.operator.gather(self.values)

    @property
    def gradient(self):
        return node_gradient(self.values, self.domain_mask, self.grid.spacing, periodic=True)

    @property
    def mean(self):
        return float(np.mean(self.values[self.domain_mask]))


def domain_mask(grid, kind, variant=None):
    if kind not in KINDS:
        raise CellError(f"unknown corrector kind {kind!r}")
    if kind == "omega_bar1_mu":
        if variant not in VARIANTS:
            raise CellError("omega_bar1_mu needs variant 'interior' or 'exterior'")
        if variant == "exterior":
            return np.ones(grid.shape, dtype=bool)
    return np.asarray(grid.mask, dtype=bool)


class CorrectorCache:
    """Reuses operators and solves shared between families (e.g. printed
    omega_bar2 and interior omega_bar1 are the same problem)."""

    def __init__(self):
        self.ops = {}
        self.solves = {}

    def operator(self, mask, C, dim, spacing):
        key = _digest(mask, C)
        if key not in self.ops:
            self.ops[key] = assemble_elliptic(Domain(mask, spacing), C[..., :dim, :dim], "periodic")
        return self.ops[key], key


def solve_corrector(grid, C, i, kind, variant=None, source="mu_ei", tol=1e-10, max_iter=None,
                    cache=None):
    """Solve one corrector for direction ``i`` (0-based)."""
    if not 0 <= i < grid.dim:
        raise CellError(f"direction {i} out of range for dim={grid.dim}")
    if source not in OMEGA2_SOURCES:
        raise CellError(f"omega2 source must be one of {OMEGA2_SOURCES}")
    if kind != "omega_bar2_mu":
        source = "mu_ei"
    if kind != "omega_bar1_mu":
        variant = None
    mask = domain_mask(grid, kind, variant)
    C3 = full3(C, grid.shape)
    cache = CorrectorCache() if cache is None else cache
    op, ckey = cache.operator(mask, C3, grid.dim, grid.spacing)
    if op.n_components > 1:
        raise CellError(f"{kind}: disconnected material phase ({op.n_components} components)")
    if source == "ei":
        ident = np.broadcast_to(np.eye(3), grid.shape + (3, 3))
        src_op, skey = cache.operator(mask, ident, grid.dim, grid.spacing)
    else:
        src_op, skey = op, ckey
    solve_key = (ckey, skey, i)
    if solve_key in cache.solves:
        w, report = cache.solves[solve_key]
    else:
        b = linear_rhs(src_op, i)
        w, report = solve_spd(op, b, tol=tol, deflate_constants=True, max_iter=max_iter)
        if not report.converged:
            raise CellError(f"{kind}[{i}]: corrector solve did not converge "
                            f"(relres={report.relative_residual:.3e})", report)
        cache.solves[solve_key] = (w, report)
    return CorrectorField(grid=grid, values=op.scatter(w), direction=i, kind=kind, variant=variant,
                          domain_mask=mask, report=report, operator=op, coeff_digest=ckey,
                          source=source)


def _operator_for(corr, C):
    if C is None:
        return corr.operator
    C3 = full3(C, corr.grid.shape)
    if np.shape(C3)[:-2] != corr.values.shape:
        raise CellError("coefficient grid does not match the corrector grid")
    key = _digest(corr.domain_mask, C3)
    if key == corr.coeff_digest:
        return corr.operator
    return assemble_elliptic(Domain(corr.domain_mask, corr.grid.spacing),
                             C3[..., :corr.grid.dim, :corr.grid.dim], "periodic")


def flux_moment(corr, C, j):
    """Cell integral over the corrector domain of (C grad(w_i + y_i)) . e_j."""
    if not 0 <= j < corr.grid.dim:
        raise CellError(f"row index {j} out of range")
    op = _operator_for(corr, C)
    return linear_flux(op, corr.unknown_values, corr.direction, j)


def gradient_flux(corr, C, j):
    """Cell integral of (C grad w_i) . e_j, without the affine part."""
    op = _operator_for(corr, C)
    zero = np.zeros(op.n_rows)
    i = corr.direction
    return linear_flux(op, corr.unknown_values, i, j) - linear_flux(op, zero, i, j)


def gradient_mean(corr, j):
    """Cell integral of d w_i / d y_j over the corrector domain."""
    return face_gradient_mean(corr.operator, corr.unknown_values, j)


def solve_family(grid, C, kind, variant=None, source="mu_ei", tol=1e-10, cache=None):
    return [solve_corrector(grid, C, i, kind, variant, source, tol, cache=cache)
            for i in range(grid.dim)]
