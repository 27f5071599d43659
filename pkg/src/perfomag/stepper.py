"""Semi-implicit stepper shared by the homogenized and the eps-resolved solvers.

One step is a Lie splitting:

1. m-update, implicit in diffusion and semi-implicit in the reaction,
   (gamma/dt + theta_c |m_old|^2 + theta_old) m - div(A grad m)
       = (gamma/dt + theta_c) m_old + B grad(phi_old) + H m_old,
   three scalar SPD solves sharing one matrix;
2. v-update with mobility frozen at theta_old,
   v/dt - div(K g(theta_old) grad v) = v_old/dt + m.(m - m_old)/dt;
3. theta = G(v) and a magnetostatic refresh of phi.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from perfomag import thermo
from perfomag.linsolve import (
    Domain, assemble_elliptic, coefficient_field, divergence_rhs, node_gradient, solve_spd,
)

BCS = ("neumann", "periodic")


class StepError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def _solve(op, b, tol, x0, what, deflate=False):
    x, rep = solve_spd(op, b, tol=tol, x0=x0, deflate_constants=deflate)
    if not rep.converged:
        raise StepError(f"{what}: CG did not converge (relres={rep.relative_residual:.3e})", rep)
    return x, rep


def _embed3(M, dim):
    """Lift a (dim, dim) block (or a 3x3 matrix) to 3x3."""
    M = np.asarray(M, dtype=float)
    if M.shape == (3, 3):
        return M
    out = np.eye(3)
    out[:dim, :dim] = M
    return out


@dataclass
class Magnetostatics:
    """div(mu grad phi + S m) = 0 on a padded box with Neumann walls.

    ``carrier`` marks the padded voxels where the magnetization source acts;
    ``source`` is S and ``forcing`` the matrix applied to grad(phi) when it
    feeds back into the m-equation.
    """

    op: object
    inner: tuple
    carrier: np.ndarray
    source: np.ndarray
    forcing: np.ndarray
    tol: float = 1e-10

    @classmethod
    def build(cls, padded_mask, spacing, mu_field, inner, carrier, source, forcing, tol=1e-10):
        op = assemble_elliptic(Domain(padded_mask, spacing), mu_field, "box_neumann")
        return cls(op, inner, np.asarray(carrier, dtype=bool), _embed3(source, len(spacing)),
                   _embed3(forcing, len(spacing)), tol)

    @property
    def dim(self):
        return self.op.dim

    def flux_source(self, m):
        """J = S m on the carrier, shape (dim, *padded)."""
        d = self.dim
        shape = self.op.grid_shape
        J = np.zeros((d,) + shape)
        Sm = np.einsum("ij,j...->i...", self.source, m)
        for k in range(d):
            Jk = np.zeros(shape)
            Jk[self.inner] = Sm[k]
            J[k] = np.where(self.carrier, Jk, 0.0)
        return J

    def solve(self, m, phi0=None):
        b = divergence_rhs(self.op, self.flux_source(m))
        x0 = None if phi0 is None else self.op.gather(phi0)
        x, rep = _solve(self.op, b, self.tol, x0, "magnetostatics", deflate=True)
        return self.op.scatter(x), rep

    def gradient(self, phi):
        """grad(phi) on the Omega voxels, always 3 components."""
        d = self.dim
        g = node_gradient(phi, self.op.index >= 0, self.op.spacing)
        out = np.zeros((3,) + g.shape[1:])
        out[:d] = g
        return out[(slice(None),) + self.inner]

    def energy(self, phi):
        u = self.op.gather(phi)
        return 0.5 * self.op.voxel_volume * float(u @ self.op.matvec(u))


@dataclass
class StepperState:
    t: float
    m: np.ndarray  # (3, *shape), zero off the mask
    v: np.ndarray
    theta: np.ndarray  # G(v) on the mask, 0 off it
    phi: np.ndarray  # padded box, or None without field coupling
    step_index: int = 0
    reports: dict = field(default_factory=dict)
    t0: float = 0.0

    def copy(self):
        return replace(self, m=self.m.copy(), v=self.v.copy(), theta=self.theta.copy(),
                       phi=None if self.phi is None else self.phi.copy(), reports=dict(self.reports))


@dataclass
class EnergyRecord:
    t: float
    grad: float
    quartic: float
    thermal: float
    field: float

    @property
    def total(self):
        return self.grad + self.quartic + self.thermal + self.field

    def row(self):
        return [self.t, self.grad, self.quartic, self.thermal, self.field, self.total]


ENERGY_HEADER = ["t", "grad", "quartic", "thermal", "field", "total"]


class CoupledStepper:
    """Owns the operators of one coupled problem on a masked voxel grid."""

    def __init__(self, mask, spacing, A, K, gamma, theta_c, params, dt, H=None, mag=None,
                 bc="neumann", tol=1e-10, freeze_temperature=False):
        if bc not in BCS:
            raise ValueError(f"bc must be one of {BCS}")
        if not dt > 0:
            raise ValueError("dt must be > 0")
        if not gamma > 0 or not theta_c > 0:
            raise ValueError("gamma and theta_c must be > 0")
        self.mask = np.asarray(mask, dtype=bool)
        self.spacing = tuple(spacing)
        self.dim = self.mask.ndim
        self.bc = "periodic" if bc == "periodic" else "box_neumann"
        self.domain = Domain(self.mask, self.spacing)
        self.L_A = assemble_elliptic(self.domain, A, self.bc)
        self.gamma, self.theta_c, self.params = float(gamma), float(theta_c), params
        self.dt, self.tol = float(dt), float(tol)
        self.H = None if H is None else _embed3(H, self.dim)
        self.mag = mag
        self.freeze_temperature = bool(freeze_temperature)
        self.vol = self.L_A.voxel_volume
        self._K_field = self._coefficient_array(K)

    def _coefficient_array(self, C):
        return coefficient_field(C, self.mask.shape, self.dim)

    # -- state helpers --------------------------------------------------
    def gather(self, full):
        return self.L_A.gather(full)

    def scatter(self, vals):
        return self.L_A.scatter(vals)

    def make_state(self, m_full, v_full, t=0.0):
        m = np.zeros((3,) + self.mask.shape)
        for k in range(3):
            m[k] = np.where(self.mask, m_full[k], 0.0)
        v = np.where(self.mask, v_full, 0.0)
        theta = self.scatter(thermo.G(self.gather(v), self.params))
        phi = None
        reports = {}
        if self.mag is not None:
            phi, reports["phi"] = self.mag.solve(m)
        return StepperState(t=float(t), m=m, v=v, theta=theta, phi=phi, reports=reports, t0=float(t))

    # -- one step -------------------------------------------------------
    def step(self, s):
        dt, g = self.dt, self.gamma
        mo = np.stack([self.gather(s.m[k]) for k in range(3)])
        vo = self.gather(s.v)
        tho = self.gather(s.theta)
        forcing = np.zeros_like(mo)
        if self.H is not None:
            forcing += self.H @ mo
        if self.mag is not None and s.phi is not None:
            gp = self.mag.gradient(s.phi)
            forcing += self.mag.forcing @ np.stack([self.gather(gp[k]) for k in range(3)])
        shift = g / dt + self.theta_c * np.sum(mo * mo, axis=0) + tho
        M = self.L_A.shifted(shift)
        reports = {}
        mn = np.empty_like(mo)
        for k in range(3):
            rhs = (g / dt + self.theta_c) * mo[k] + forcing[k]
            mn[k], reports[f"m{k + 1}"] = _solve(M, rhs, self.tol, mo[k], f"m{k + 1}-solve")
        if self.freeze_temperature:
            vn = vo
        else:
            mob = thermo.g(tho, self.params)
            coeff = self._K_field * self.scatter(mob)[(...,) + (None,) * 2]
            L = assemble_elliptic(self.domain, coeff, self.bc, check=False).shifted(1.0 / dt)
            rhs = vo / dt + np.sum(mn * (mn - mo), axis=0) / dt
            vn, reports["v"] = _solve(L, rhs, self.tol, vo, "v-solve")
        thn, clamped = thermo.G(vn, self.params, return_flags=True)
        if np.any(clamped) or not np.all(thn > 0):
            raise StepError("temperature left the range of G")
        m_full = np.stack([self.scatter(mn[k]) for k in range(3)])
        phi = None
        if self.mag is not None:
            phi, reports["phi"] = self.mag.solve(m_full, s.phi)
        return StepperState(t=s.t0 + (s.step_index + 1) * dt, m=m_full, v=self.scatter(vn), theta=self.scatter(thn),
                            phi=phi, step_index=s.step_index + 1, reports=reports,
                            t0=s.t0)

    # -- diagnostics ----------------------------------------------------
    def energy(self, s):
        vol = self.vol
        grad = 0.0
        mq = 0.0
        for k in range(3):
            u = self.gather(s.m[k])
            grad += 0.5 * vol * float(u @ self.L_A.matvec(u))
        msq = sum(self.gather(s.m[k]) ** 2 for k in range(3))
        mq = 0.25 * self.theta_c * vol * float(np.sum(msq * msq))
        th = self.gather(s.theta)
        p = self.params
        thermal = vol * float(0.5 * p.c2 * np.sum(th * th) + p.c1 * np.sum(th))
        fld = self.mag.energy(s.phi) if (self.mag is not None and s.phi is not None) else 0.0
        return EnergyRecord(s.t, max(grad, 0.0), mq, thermal, max(fld, 0.0))


def n_steps(t_end, dt):
    if t_end < 0:
        raise ValueError("t_end must be >= 0")
    n = int(round(t_end / dt))
    if abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"t_end={t_end} is not a whole number of steps dt={dt}")
    return n


def gronwall_fit(records):
    """Smallest C with E(t) <= E(0) exp(C t) on the records (0 if never exceeded)."""
    E0 = records[0].total
    C = 0.0
    for r in records[1:]:
        if r.t > 0 and E0 > 0:
            C = max(C, np.log(max(r.total / E0, 1.0)) / r.t)
    return float(C)


def energy_bound(records, theta_c, gamma, volume):
    """Bound 3 E(0) + 3 theta_c^4/(8 gamma) t |Omega| checked on every record.

    Returns (ok, worst ratio E / bound)."""
    E0 = records[0].total
    worst = 0.0
    for r in records:
        b = 3.0 * E0 + 3.0 * theta_c ** 4 / (8.0 * gamma) * r.t * volume
        worst = max(worst, r.total / b)
    return worst <= 1.0, worst
