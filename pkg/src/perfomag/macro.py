"""Homogenized coupled system: magnetization, v-form temperature, potential."""

from dataclasses import dataclass, field, replace

import numpy as np

from perfomag.thermo import F, ThermoDomainError, ThermoParams
from perfomag.geometry import MacroGrid
from perfomag.stepper import (
    ENERGY_HEADER, CoupledStepper, EnergyRecord, Magnetostatics, StepError, StepperState,
    energy_bound, gronwall_fit, n_steps,
)
from perfomag.tensors import EffectiveTensors

MEAN_CONVENTIONS = ("cell", "material")

MacroState = StepperState

__all__ = [
    "ENERGY_HEADER", "EnergyRecord", "MacroConfig", "MacroState", "MemorySink", "StepError",
    "build_stepper", "energy", "energy_bound", "gronwall_fit", "init_state",
    "magnetostatic_solve", "run", "sample_scalar", "sample_vector", "step",
]


@dataclass
class MacroConfig:
    grid: MacroGrid
    tensors: EffectiveTensors
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
    mean_convention: str = "cell"
    h2_term: bool = True
    # optional per-voxel replacements for x-dependent effective coefficients
    A_field: np.ndarray = None
    K_field: np.ndarray = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not self.theta_c > 0:
            raise ValueError("theta_c must be > 0")
        if self.grid.pad < 2:
            raise ValueError("pad must be >= 2 layers")
        if self.mean_convention not in MEAN_CONVENTIONS:
            raise ValueError(f"mean_convention must be one of {MEAN_CONVENTIONS}")
        if self.save_every < 1:
            raise ValueError("save_every must be >= 1")

    @property
    def chi_bar(self):
        return float(self.tensors.chi_bar)

    @property
    def weight(self):
        """Factor applied to initial data: chi_bar ("cell") or 1 ("material")."""
        return self.chi_bar if self.mean_convention == "cell" else 1.0


def _block(T, dim):
    return np.asarray(T, dtype=float)[:dim, :dim]


def sample_scalar(f, grid):
    """Constant, array of grid shape, or callable of centres (*shape, dim)."""
    if callable(f):
        return np.asarray(f(grid.centers()), dtype=float) * np.ones(grid.shape)
    return np.broadcast_to(np.asarray(f, dtype=float), grid.shape).copy()


def sample_vector(f, grid):
    """3-vector field (3, *shape) from a constant 3-vector, array or callable."""
    if callable(f):
        val = np.asarray(f(grid.centers()), dtype=float)
    else:
        val = np.asarray(f, dtype=float)
    if val.shape == (3,):
        val = val.reshape((3,) + (1,) * grid.dim)
    return np.broadcast_to(val, (3,) + grid.shape).copy()


def build_magnetostatics(config):
    g = config.grid
    T = config.tensors
    d = g.dim
    chi = g.omega_indicator()[..., None, None]
    mu = chi * _block(T.mu_star_in, d) + (1.0 - chi) * _block(T.mu_star_out, d)
    return Magnetostatics.build(g.padded_mask(), g.spacing, mu, g.inner_slice(),
                                g.omega_indicator() > 0, T.H1, T.mu_bar, config.cg_tol)


def build_stepper(config):
    g = config.grid
    T = config.tensors
    d = g.dim
    A = _block(T.A_star, d) if config.A_field is None else config.A_field
    K = _block(T.K_star, d) if config.K_field is None else config.K_field
    if config.mean_convention == "material":
        A = np.asarray(A) / config.chi_bar
        K = np.asarray(K) / config.chi_bar
    mag = build_magnetostatics(config) if config.field_coupling else None
    return CoupledStepper(g.mask, g.spacing, A, K, config.gamma, config.theta_c, config.thermo,
                          config.dt, H=T.H2 if config.h2_term else None, mag=mag, bc=config.bc, tol=config.cg_tol,
                          freeze_temperature=config.freeze_temperature)


def init_state(config, m0, theta0, stepper=None):
    """m(0) = w m0 and v(0) = w F(theta0), with w from ``mean_convention``."""
    st = build_stepper(config) if stepper is None else stepper
    th0 = sample_scalar(theta0, config.grid)
    if not np.all(th0 > 0):
        raise ThermoDomainError("theta0 must be > 0")
    w = config.weight
    m = w * sample_vector(m0, config.grid)
    v = w * F(th0, config.thermo)
    return st.make_state(m, v)


def magnetostatic_solve(m, config):
    """phi on the padded box for magnetization m of shape (3, *grid)."""
    phi, _ = build_magnetostatics(config).solve(np.asarray(m, dtype=float))
    return phi


def step(state, config, stepper=None):
    st = build_stepper(config) if stepper is None else stepper
    return st.step(state)


def energy(state, config, stepper=None):
    st = build_stepper(config) if stepper is None else stepper
    return st.energy(state)


class MemorySink:
    """Keeps snapshots and energy records in memory."""

    def __init__(self):
        self.snapshots = []
        self.energies = []

    def snapshot(self, state):
        self.snapshots.append(state.copy())

    def energy(self, record):
        self.energies.append(record)

    def flush(self):
        pass


@dataclass
class RunSummary:
    final: StepperState
    energies: list
    n_steps: int
    gronwall_constant: float
    error: Exception = None

    @property
    def m_inf(self):
        return float(np.abs(self.final.m).max())

    @property
    def m_norm_inf(self):
        return float(np.sqrt(np.sum(self.final.m ** 2, axis=0)).max())


def run_stepper(st, state, t_end, dt, save_every, sink=None):
    """Generic driver: snapshots every ``save_every`` steps, energy every step."""
    sink = MemorySink() if sink is None else sink
    steps = n_steps(t_end, dt)
    energies = [st.energy(state)]
    sink.snapshot(state)
    sink.energy(energies[0])
    try:
        for k in range(1, steps + 1):
            state = st.step(state)
            rec = st.energy(state)
            energies.append(rec)
            sink.energy(rec)
            if k % save_every == 0 or k == steps:
                sink.snapshot(state)
    finally:
        sink.flush()
    return RunSummary(state, energies, steps, gronwall_fit(energies))


def run(config, m0, theta0, sink=None):
    st = build_stepper(config)
    state = init_state(config, m0, theta0, st)
    return run_stepper(st, state, config.t_end, config.dt, config.save_every, sink)


def with_tensors(config, **changes):
    """Copy of ``config`` with some effective tensors replaced (e.g. H2=0)."""
    T = config.tensors
    T2 = replace(T, **{k: np.asarray(v, dtype=float) for k, v in changes.items()})
    if "H2" in changes:
        T2 = T2.with_curie(T.curie.theta_c_scalar)
    return replace(config, tensors=T2)
