"""Eps-resolved reference solver and unfolding-based two-scale errors."""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from perfomag import _kernels
from perfomag.cell import full3
from perfomag.geometry import CellGrid, GeometryError, build_macro_grid, build_perforated_macro
from perfomag.macro import MacroConfig, RunSummary, run_stepper, sample_scalar, sample_vector
from perfomag.macro import run as macro_run
from perfomag.stepper import CoupledStepper, Magnetostatics
from perfomag.tensors import compute_effective_tensors
from perfomag.thermo import F, ThermoDomainError, ThermoParams

EXTEND_MODES = ("zero_fill", "neighbor_fill")
MIN_VOXELS_PER_PERIOD = 8


@dataclass
class MicroConfig:
    box: tuple
    cell: CellGrid
    A: object = 1.0
    K: object = 1.0
    mu: object = 1.0
    gamma: float = 1.0
    theta_c: float = 1.0
    thermo: ThermoParams = field(default_factory=ThermoParams)
    dt: float = 1e-2
    t_end: float = 1.0
    save_every: int = 10
    cg_tol: float = 1e-10
    field_coupling: bool = True
    freeze_temperature: bool = False
    bc: str = "neumann"
    pad: int = None
    n_macro: object = 32  # homogenized grid used by convergence studies
    mean_convention: str = "material"
    omega2_source: str = "mu_ei"


@dataclass
class MicroResult:
    summary: RunSummary
    grid: object
    stepper: CoupledStepper
    eps: float

    @property
    def final(self):
        return self.summary.final


def micro_grid(config, eps):
    """Perforated grid with ``cell.n`` voxels per period of length eps."""
    p = config.cell.n
    if config.cell.hole.kind != "none" and p < MIN_VOXELS_PER_PERIOD:
        raise GeometryError(f"resolution check failed: {p} voxels per period, "
                            f"need >= {MIN_VOXELS_PER_PERIOD}")
    n = []
    for L in config.box:
        k = L / eps * p
        if abs(k - round(k)) > 1e-9 * max(1.0, k):
            raise GeometryError(f"box length {L} is not a whole number of periods eps={eps}")
        n.append(int(round(k)))
    return build_perforated_macro(config.box, tuple(n), eps, config.cell.hole, pad=config.pad)


def oscillating(C, cell, shape, offset=0):
    """Tile a cell coefficient over a grid: voxel k samples cell voxel (k - offset) mod p."""
    p = cell.n
    C3 = full3(C, cell.shape)
    idx = np.ix_(*[(np.arange(s) - offset) % p for s in shape])
    return np.ascontiguousarray(C3[idx])


def build_micro_stepper(config, eps):
    g = micro_grid(config, eps)
    d = g.dim
    A = oscillating(config.A, config.cell, g.shape)[..., :d, :d]
    K = oscillating(config.K, config.cell, g.shape)[..., :d, :d]
    mag = None
    if config.field_coupling:
        mu = oscillating(config.mu, config.cell, g.padded_shape, g.pad)[..., :d, :d]
        carrier = np.zeros(g.padded_shape, dtype=bool)
        carrier[g.inner_slice()] = g.mask
        mag = Magnetostatics.build(g.padded_mask(), g.spacing, mu, g.inner_slice(), carrier,
                                   np.eye(3), np.eye(3), config.cg_tol)
    st = CoupledStepper(g.mask, g.spacing, A, K, config.gamma, config.theta_c, config.thermo,
                        config.dt, H=None, mag=mag, bc=config.bc, tol=config.cg_tol,
                        freeze_temperature=config.freeze_temperature)
    return st, g


def solve_micro(config, eps, m0, theta0, t_end=None, sink=None):
    """Run the eps-resolved system from m0, theta0 (sampled at voxel centres)."""
    st, g = build_micro_stepper(config, eps)
    th0 = sample_scalar(theta0, g)
    if not np.all(th0[g.mask] > 0):
        raise ThermoDomainError("theta0 must be > 0")
    m = sample_vector(m0, g)
    v = np.where(g.mask, F(np.where(g.mask, th0, 1.0), config.thermo), 0.0)
    state = st.make_state(m, v)
    t_end = config.t_end if t_end is None else t_end
    summary = run_stepper(st, state, t_end, config.dt, config.save_every, sink)
    return MicroResult(summary, g, st, float(eps))


@dataclass
class ExtendedField:
    base: np.ndarray
    mode: str
    values: np.ndarray
    sweeps: int = 0


def _neighbours(mask):
    shape = mask.shape
    flat_idx = np.arange(mask.size).reshape(shape)
    holes = np.flatnonzero(~mask.ravel())
    coords = np.unravel_index(holes, shape)
    nbr = []
    for k in range(mask.ndim):
        for s in (1, -1):
            c = list(coords)
            c[k] = c[k] + s
            ok = (c[k] >= 0) & (c[k] < shape[k])
            c[k] = np.clip(c[k], 0, shape[k] - 1)
            nbr.append(np.where(ok, flat_idx[tuple(c)], -1))
    return holes, np.stack(nbr, axis=1).astype(np.int64)


def extend(values, mask, mode="zero_fill", tol=1e-13, max_sweeps=200000):
    """Extend a field given on the material voxels of ``mask`` into the holes."""
    if mode not in EXTEND_MODES:
        raise ValueError(f"mode must be one of {EXTEND_MODES}")
    mask = np.asarray(mask, dtype=bool)
    base = np.asarray(values, dtype=float)
    zero = np.where(mask, base, 0.0)
    if mode == "zero_fill" or mask.all():
        return ExtendedField(base, mode, zero)
    holes, nbr = _neighbours(mask)
    start = zero.ravel().copy()
    start[holes] = base[mask].mean() if mask.any() else 0.0
    out, sweeps = _kernels.neighbor_fill(start, holes, nbr, float(tol), int(max_sweeps))
    return ExtendedField(base, mode, out.reshape(mask.shape), int(sweeps))


def two_scale_error(f_eps, fine_grid, f, coarse_grid, cell, eps):
    """L2(Omega x Y) norm of f_eps(S(x, y)) - chi(y) f(x) by nearest-voxel quadrature.

    ``f_eps`` is the zero extension on ``fine_grid``; ``f`` lives on
    ``coarse_grid`` whose voxel centres are the macro samples x.
    """
    f_eps = np.asarray(f_eps, dtype=float)
    f = np.asarray(f, dtype=float)
    if f_eps.shape != tuple(fine_grid.shape) or f.shape != tuple(coarse_grid.shape):
        raise GeometryError("field shapes do not match their grids")
    if fine_grid.dim != cell.dim or coarse_grid.dim != cell.dim:
        raise GeometryError("grids of different dimension")
    if any(abs(a - b) > 1e-12 for a, b in zip(fine_grid.box, coarse_grid.box)):
        raise GeometryError("fine and coarse grids cover different boxes")
    fine_h = np.array([[n, h] for n, h in zip(fine_grid.shape, fine_grid.spacing)], dtype=float)
    x = coarse_grid.centers().reshape(-1, cell.dim)
    y = cell.centers().reshape(-1, cell.dim)
    chi = np.asarray(cell.mask, dtype=float).ravel()
    sq = _kernels.unfold_sq_error(np.ascontiguousarray(f_eps.ravel()), fine_h, x, f.ravel(), y,
                                  chi, float(eps))
    return math.sqrt(sq * coarse_grid.voxel_volume * cell.voxel_volume)


def macro_config_for(config, tensors=None, t_end=None):
    """Homogenized counterpart of a micro configuration."""
    T = tensors
    if T is None:
        T = compute_effective_tensors(config.cell, config.A, config.K, config.mu, config.theta_c,
                                      config.omega2_source, tol=config.cg_tol)
    grid = build_macro_grid(config.box, config.n_macro, config.pad)
    return MacroConfig(grid=grid, tensors=T, gamma=config.gamma, theta_c=config.theta_c,
                       thermo=config.thermo, dt=config.dt,
                       t_end=config.t_end if t_end is None else t_end,
                       save_every=config.save_every, cg_tol=config.cg_tol,
                       field_coupling=config.field_coupling, h2_term=config.field_coupling,
                       freeze_temperature=config.freeze_temperature, bc=config.bc,
                       mean_convention=config.mean_convention)


CONVERGENCE_HEADER = ["eps", "field", "error", "observed_order"]
FIELDS = ("v", "m1", "m2", "m3")


@dataclass
class ConvergenceTable:
    rows: list  # (eps, field, error, observed_order)
    macro: RunSummary = None
    micro: list = field(default_factory=list)

    def errors(self, name):
        return [r[2] for r in self.rows if r[1] == name]

    def orders(self, name):
        return [r[3] for r in self.rows if r[1] == name]


def convergence_study(config, eps_list, t_check, m0, theta0, tensors=None):
    """Two-scale errors of v and m at t_check for each eps, plus log2 orders."""
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    mc = macro_config_for(config, tensors, t_end=t_check)
    mac = macro_run(mc, m0, theta0)
    coarse = mc.grid
    errs = {name: [] for name in FIELDS}
    micro = []
    for eps in eps_list:
        res = solve_micro(config, eps, m0, theta0, t_end=t_check)
        micro.append(res)
        fin = res.final
        pairs = {"v": (fin.v, mac.final.v)}
        for k in range(3):
            pairs[f"m{k + 1}"] = (fin.m[k], mac.final.m[k])
        for name, (fe, fm) in pairs.items():
            z = extend(fe, res.grid.mask, "zero_fill").values
            errs[name].append(two_scale_error(z, res.grid, fm, coarse, config.cell, eps))
    rows = []
    for name in FIELDS:
        for k, eps in enumerate(eps_list):
            e = errs[name][k]
            order = float("nan")
            if k > 0:
                prev = errs[name][k - 1]
                ratio = math.log(prev / e) / math.log(eps_list[k - 1] / eps) if e > 0 and prev > 0 else float("nan")
                order = ratio
            rows.append((eps, name, e, order))
    return ConvergenceTable(rows, mac, micro)
