import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from perfomag.cli import main
from perfomag.io import read_vtk_scalars

CUBE2D = """[geometry]
dim = 2
cell_n = 16
hole = box
hole_lo = (0.25, 0.25)
hole_hi = (0.75, 0.75)
n_macro = 8
[discretization]
dt = 0.05
t_end = 0.5
save_every = 4
[initial]
m0 = random
m0_amplitude = 0.05
theta0 = 0.6
[run]
name = "case"
"""

VERIFY = """[geometry]
dim = 2
cell_n = 8
hole = box
hole_lo = (0.25, 0.25)
hole_hi = (0.75, 0.75)
n_macro = 16
[discretization]
dt = 0.005
field_coupling = false
[initial]
m0 = (0.0, 0.0, 0.0)
theta0 = {"profile": "cosine", "mean": 1.0, "amplitude": 0.5}
[run]
name = "case"
eps_list = (0.25, 0.125)
t_check = 0.02
"""


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def tree_bytes(root):
    out = {}
    for d, _, files in os.walk(root):
        for f in files:
            p = os.path.join(d, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("cmd", ["cell", "tensors", "curie", "simulate"])
def test_byte_identical_reruns(tmp_path, cmd):
    cfg = write(tmp_path, CUBE2D)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([cmd, "--config", cfg, "--out", str(a), "--seed", "11", "--quiet"]) == 0
    assert main([cmd, "--config", cfg, "--out", str(b), "--seed", "11", "--quiet"]) == 0
    ta, tb = tree_bytes(a), tree_bytes(b)
    assert ta and ta == tb
    assert f"{cmd}/case/config.ini" in ta


def test_seed_changes_random_run(tmp_path):
    cfg = write(tmp_path, CUBE2D)
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1", "--quiet"])
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2", "--quiet"])
    f = "simulate/case/snapshot_00000.vtk"
    assert tree_bytes(tmp_path / "a")[f] != tree_bytes(tmp_path / "b")[f]


def test_tensors_identity_report(tmp_path):
    cfg = write(tmp_path, "[geometry]\ndim = 3\ncell_n = 8\n[run]\nname = \"id\"\n")
    assert main(["tensors", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
    rows = read_rows(tmp_path / "tensors" / "id" / "tensors.csv")
    assert rows[0] == ["tensor", "entry_i", "entry_j", "value"]
    for name, i, j, v in rows[1:]:
        if name in ("Theta_c", "chi_bar"):
            continue
        assert float(v) == (1.0 if i == j else 0.0), (name, i, j, v)


def test_curie_identity_eigenvalues(tmp_path):
    cfg = write(tmp_path, "[geometry]\ndim = 3\ncell_n = 8\n[physics]\ntheta_c = 1.0\n")
    assert main(["curie", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
    rows = read_rows(tmp_path / "curie" / "c" / "curie.csv")
    assert rows[0] == ["index", "eigenvalue", "v1", "v2", "v3"]
    assert [float(r[1]) for r in rows[1:]] == [2.0, 2.0, 2.0]


def test_cell_outputs(tmp_path):
    cfg = write(tmp_path, CUBE2D)
    assert main(["cell", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
    d = tmp_path / "cell" / "case"
    dims, fields = read_vtk_scalars(d / "omega_A.vtk")
    assert dims == [16, 16, 1] and "omega_A_1" in fields and "material" in fields
    rows = read_rows(d / "solve_reports.csv")
    assert len(rows) == 1 + 5 * 2 and all(r[5] == "1" for r in rows[1:])


def test_simulate_outputs(tmp_path):
    cfg = write(tmp_path, CUBE2D)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
    d = tmp_path / "simulate" / "case"
    energy = read_rows(d / "energy.csv")
    assert energy[0] == ["t", "grad", "quartic", "thermal", "field", "total"]
    assert len(energy) == 1 + 11
    snaps = sorted(f for f in os.listdir(d) if f.startswith("snapshot_"))
    assert snaps == [f"snapshot_{k:05d}.vtk" for k in range(4)]
    _, fields = read_vtk_scalars(d / snaps[-1])
    assert set(fields) == {"theta", "v", "phi", "m"} and np.all(fields["theta"] > 0)
    summary = (d / "summary.txt").read_text()
    assert "energy_bound_ok = true" in summary and "steps = 10" in summary


def test_verify_outputs(tmp_path):
    cfg = write(tmp_path, VERIFY)
    assert main(["verify", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
    rows = read_rows(tmp_path / "verify" / "case" / "convergence.csv")
    assert rows[0] == ["eps", "field", "error", "observed_order"]
    v = [float(r[2]) for r in rows[1:] if r[1] == "v"]
    assert len(v) == 2 and v[1] < v[0]


def test_verify_rejects_random_m0(tmp_path):
    cfg = write(tmp_path, VERIFY.replace("m0 = (0.0, 0.0, 0.0)", "m0 = random"))
    assert main(["verify", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 2


def test_exit_codes(tmp_path, capsys):
    bad = write(tmp_path, "[physics]\nc2 = 0\n", "bad.ini")
    assert main(["tensors", "--config", bad, "--out", str(tmp_path)]) == 2
    assert "c2 must be > 0" in capsys.readouterr().err
    touching = write(tmp_path, "[geometry]\ndim = 2\ncell_n = 8\nhole = sphere\n"
                     "hole_center = (0.5, 0.5)\nhole_radius = 0.6\n", "touch.ini")
    assert main(["tensors", "--config", touching, "--out", str(tmp_path)]) == 1
    assert "GeometryError" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["tensors", "--config", bad, "--seed", "-1"])
    with pytest.raises(SystemExit):
        main(["frobnicate", "--config", bad])


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, "[geometry]\ndim = 2\ncell_n = 8\n")
    out = subprocess.run([sys.executable, "-m", "perfomag.cli", "curie", "--config", cfg,
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert "lambda_max = 2.0" in out.stdout
