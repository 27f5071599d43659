"""Small config factories shared by the macro, micro and acceptance tests."""

import numpy as np

from perfomag.geometry import HoleSpec, build_macro_grid
from perfomag.macro import MacroConfig, with_tensors
from perfomag.tensors import cell_tensors
from perfomag.thermo import ThermoParams

SQUARE = HoleSpec.box((0.25, 0.25), (0.75, 0.75))


def identity_tensors(dim=2, theta_c=1.0):
    return cell_tensors(8, dim, HoleSpec.none(), theta_c=theta_c)


def uniform_ode_config(h2=0.0, dt=1e-2, t_end=50.0, n=4, theta_c=1.0, gamma=1.0):
    """Periodic no-hole box with frozen temperature and no field: the uniform
    state follows gamma m' = -theta_c(|m|^2 - 1) m - theta m + h2 m."""
    cfg = MacroConfig(grid=build_macro_grid((1.0, 1.0), n), tensors=identity_tensors(2, theta_c),
                      gamma=gamma, theta_c=theta_c, thermo=ThermoParams(), dt=dt, t_end=t_end,
                      save_every=max(1, int(round(t_end / dt))), field_coupling=False,
                      freeze_temperature=True, bc="periodic")
    return with_tensors(cfg, H2=h2 * np.eye(3))


def macro_config(tensors, n=8, **kw):
    base = dict(gamma=1.0, theta_c=1.0, thermo=ThermoParams(), dt=1e-2, t_end=0.1, save_every=5)
    base.update(kw)
    return MacroConfig(grid=build_macro_grid((1.0,) * tensors.dim, n), tensors=tensors, **base)

