"""perfomag command line: cell | tensors | curie | simulate | verify."""

import argparse
import os
import sys

import numpy as np

from perfomag import cell as cellmod
from perfomag import io
from perfomag.config import ConfigError, m0_field, parse_config, theta0_function
from perfomag.linsolve import SOLVE_REPORT_HEADER
from perfomag.stepper import ENERGY_HEADER, energy_bound
from perfomag.tensors import compute_effective_tensors, report_csv_rows, report_text

COMMANDS = ("cell", "tensors", "curie", "simulate", "verify")


def _out_dir(args, cfg, command):
    d = os.path.join(args.out, command, cfg.name)
    os.makedirs(d, exist_ok=True)
    io.atomic_write_text(os.path.join(d, "config.ini"), cfg.text)
    return d


def _tensors(cfg):
    grid = cfg.cell_grid()
    p = cfg.physics
    T = compute_effective_tensors(grid, cfg.coefficient("A", grid), cfg.coefficient("K", grid),
                                  cfg.coefficient("mu", grid), p["theta_c"], p["omega2_source"],
                                  tol=cfg.discretization["cg_tol"])
    return grid, T


def cmd_cell(cfg, out, seed):
    grid = cfg.cell_grid()
    tol = cfg.discretization["cg_tol"]
    cache = cellmod.CorrectorCache()
    fams = [("omega_A", None, "A"), ("omega_hat_K", None, "K"),
            ("omega_bar1_mu", "interior", "mu"), ("omega_bar1_mu", "exterior", "mu"),
            ("omega_bar2_mu", None, "mu")]
    rows = []
    for kind, variant, coeff in fams:
        C = cfg.coefficient(coeff, grid)
        family = cellmod.solve_family(grid, C, kind, variant, cfg.physics["omega2_source"], tol,
                                      cache)
        tag = kind + (f"_{variant}" if variant else "")
        scalars = {f"{tag}_{c.direction + 1}": c.values for c in family}
        scalars["material"] = np.asarray(grid.mask, dtype=float)
        io.write_vtk(os.path.join(out, f"{tag}.vtk"), grid.spacing, scalars=scalars,
                     title=f"perfomag {tag} correctors")
        for c in family:
            rows.append([kind, variant or "", c.direction + 1] + c.report.row())
    io.write_csv(os.path.join(out, "solve_reports.csv"),
                 ["kind", "variant", "direction"] + SOLVE_REPORT_HEADER, rows)
    return f"{len(rows)} correctors solved"


def cmd_tensors(cfg, out, seed):
    _, T = _tensors(cfg)
    io.write_csv(os.path.join(out, "tensors.csv"), ["tensor", "entry_i", "entry_j", "value"],
                 report_csv_rows(T))
    io.atomic_write_text(os.path.join(out, "tensors.txt"), report_text(T))
    return report_text(T)


def cmd_curie(cfg, out, seed):
    _, T = _tensors(cfg)
    c = T.curie
    rows = [(k + 1, float(c.eigenvalues[k])) + tuple(float(x) for x in c.eigenvectors[:, k])
            for k in range(len(c.eigenvalues))]
    io.write_csv(os.path.join(out, "curie.csv"), ["index", "eigenvalue", "v1", "v2", "v3"], rows)
    lines = [f"theta_c = {io.fmt(c.theta_c_scalar)}", "Theta_c ="]
    lines += ["  " + "  ".join(f"{v: .12e}" for v in r) for r in c.Theta_c]
    lines.append("eigenvalues = " + ", ".join(io.fmt(v) for v in c.eigenvalues))
    lines.append(f"lambda_min = {io.fmt(c.lambda_min)}")
    lines.append(f"lambda_max = {io.fmt(c.lambda_max)}")
    text = "\n".join(lines) + "\n"
    io.atomic_write_text(os.path.join(out, "curie.txt"), text)
    return text


class DirectorySink:
    """Writes VTK snapshots as they arrive and the energy CSV on flush."""

    def __init__(self, out, grid):
        self.out = out
        self.grid = grid
        self.count = 0
        self.rows = []

    def snapshot(self, s):
        g = self.grid
        scalars = {"theta": s.theta, "v": s.v}
        if s.phi is not None:
            scalars["phi"] = s.phi[g.inner_slice()]
        io.write_vtk(os.path.join(self.out, f"snapshot_{self.count:05d}.vtk"), g.spacing,
                     scalars=scalars, vectors={"m": s.m}, title=f"perfomag t={io.fmt(s.t)}")
        self.count += 1

    def energy(self, rec):
        self.rows.append(rec.row())

    def flush(self):
        io.write_csv(os.path.join(self.out, "energy.csv"), ENERGY_HEADER, self.rows)


def _macro_config(cfg, T, grid, convention):
    from perfomag.macro import MacroConfig
    d = cfg.discretization
    return MacroConfig(grid=grid, tensors=T, gamma=cfg.physics["gamma"],
                       theta_c=cfg.physics["theta_c"], thermo=cfg.thermo(), dt=d["dt"],
                       t_end=d["t_end"], save_every=d["save_every"], cg_tol=d["cg_tol"],
                       field_coupling=d["field_coupling"],
                       freeze_temperature=d["freeze_temperature"], bc=d["bc"],
                       mean_convention=d["mean_convention"] or convention)


def cmd_simulate(cfg, out, seed):
    from perfomag.macro import run
    _, T = _tensors(cfg)
    grid = cfg.macro_grid()
    mc = _macro_config(cfg, T, grid, "cell")
    sink = DirectorySink(out, grid)
    summ = run(mc, m0_field(cfg, grid, seed), theta0_function(cfg.initial["theta0"]), sink)
    ok, worst = energy_bound(summ.energies, mc.theta_c, mc.gamma, grid.volume)
    lines = [
        f"steps = {summ.n_steps}",
        f"t_final = {io.fmt(summ.final.t)}",
        f"snapshots = {sink.count}",
        f"max_abs_m = {io.fmt(summ.m_norm_inf)}",
        f"theta_min = {io.fmt(float(summ.final.theta[grid.mask].min()))}",
        f"energy_initial = {io.fmt(summ.energies[0].total)}",
        f"energy_final = {io.fmt(summ.energies[-1].total)}",
        f"gronwall_constant = {io.fmt(summ.gronwall_constant)}",
        f"energy_bound_ratio = {io.fmt(worst)}",
        f"energy_bound_ok = {str(ok).lower()}",
    ]
    text = "\n".join(lines) + "\n"
    io.atomic_write_text(os.path.join(out, "summary.txt"), text)
    return text


def cmd_verify(cfg, out, seed):
    from perfomag.micro import CONVERGENCE_HEADER, MicroConfig, convergence_study
    grid = cfg.cell_grid()
    p, d, g = cfg.physics, cfg.discretization, cfg.geometry
    mc = MicroConfig(box=g["box"], cell=grid, A=cfg.coefficient("A", grid),
                     K=cfg.coefficient("K", grid), mu=cfg.coefficient("mu", grid),
                     gamma=p["gamma"], theta_c=p["theta_c"], thermo=cfg.thermo(), dt=d["dt"],
                     t_end=cfg.run["t_check"], save_every=max(1, d["save_every"]),
                     cg_tol=d["cg_tol"], field_coupling=d["field_coupling"],
                     freeze_temperature=d["freeze_temperature"], bc=d["bc"], pad=g["pad"],
                     n_macro=cfg.run["verify_n_macro"] or g["n_macro"],
                     mean_convention=d["mean_convention"] or "material",
                     omega2_source=p["omega2_source"])
    m0 = cfg.initial["m0"]
    if m0 == "random":
        raise ConfigError("verify needs a deterministic field m0 (random m0 is grid dependent)")
    tab = convergence_study(mc, cfg.run["eps_list"], cfg.run["t_check"], tuple(m0),
                            theta0_function(cfg.initial["theta0"]))
    io.write_csv(os.path.join(out, "convergence.csv"), CONVERGENCE_HEADER, tab.rows)
    lines = []
    for name in ("v", "m1", "m2", "m3"):
        errs = tab.errors(name)
        dec = all(b < a for a, b in zip(errs, errs[1:]))
        lines.append(f"{name}: errors = {', '.join(io.fmt(e) for e in errs)}; "
                     f"strictly_decreasing = {str(dec).lower()}")
    text = "\n".join(lines) + "\n"
    io.atomic_write_text(os.path.join(out, "summary.txt"), text)
    return text


HANDLERS = {"cell": cmd_cell, "tensors": cmd_tensors, "curie": cmd_curie,
            "simulate": cmd_simulate, "verify": cmd_verify}


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    ap = argparse.ArgumentParser(prog="perfomag",
                                 description="Homogenized phase-transition toolkit for perforated media.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="INI configuration file")
    ap.add_argument("--out", default="out", help="output root (default: ./out)")
    ap.add_argument("--seed", type=_u64, default=None, help="seed for random initial data")
    ap.add_argument("--quiet", action="store_true", help="do not echo the summary")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        seed = cfg.run["seed"] if args.seed is None else args.seed
        out = _out_dir(args, cfg, args.command)
        text = HANDLERS[args.command](cfg, out, seed)
    except ConfigError as exc:
        print(f"perfomag: config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # module errors carry their own context
        print(f"perfomag {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        print(f"outputs in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
