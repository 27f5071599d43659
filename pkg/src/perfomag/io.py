"""File output: atomic writes, legacy ASCII VTK and CSV."""

import os
import tempfile

import numpy as np


def atomic_write_bytes(path, data):
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    dirname = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirname, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def fmt(x):
    """Shortest round-trip decimal for a float, '.' separator."""
    x = float(x)
    if np.isnan(x):
        return "nan"
    return repr(x)


def csv_text(header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows):
    atomic_write_text(path, csv_text(header, rows))


def _flat_x_fastest(a):
    # VTK structured points run x fastest; arrays here are indexed [x, y, z]
    return np.asarray(a, dtype=float).T.ravel()


def vtk_text(spacing, scalars=None, vectors=None, origin=None, title="perfomag"):
    """Legacy ASCII STRUCTURED_POINTS with values at voxel centres.

    ``scalars``: dict name -> array of grid shape. ``vectors``: dict name ->
    array of shape (3, *grid shape).
    """
    scalars = scalars or {}
    vectors = vectors or {}
    shape = None
    for a in scalars.values():
        shape = np.shape(a)
        break
    if shape is None:
        for a in vectors.values():
            shape = np.shape(a)[1:]
            break
    if shape is None:
        raise ValueError("nothing to write")
    dim = len(shape)
    dims = list(shape) + [1] * (3 - dim)
    h = list(spacing) + [1.0] * (3 - dim)
    if origin is None:
        origin = [0.5 * s for s in h[:dim]]
    org = list(origin) + [0.0] * (3 - len(origin))
    npts = int(np.prod(dims))
    out = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS " + " ".join(str(d) for d in dims),
        "ORIGIN " + " ".join(fmt(o) for o in org),
        "SPACING " + " ".join(fmt(s) for s in h),
        f"POINT_DATA {npts}",
    ]
    for name, a in scalars.items():
        out.append(f"SCALARS {name} double 1")
        out.append("LOOKUP_TABLE default")
        out.extend(fmt(v) for v in _flat_x_fastest(a))
    for name, a in vectors.items():
        a = np.asarray(a, dtype=float)
        comps = [_flat_x_fastest(a[c]) for c in range(a.shape[0])]
        while len(comps) < 3:
            comps.append(np.zeros(npts))
        out.append(f"VECTORS {name} double")
        out.extend(f"{fmt(x)} {fmt(y)} {fmt(z)}" for x, y, z in zip(*comps))
    return "\n".join(out) + "\n"


def write_vtk(path, spacing, scalars=None, vectors=None, origin=None, title="perfomag"):
    atomic_write_text(path, vtk_text(spacing, scalars, vectors, origin, title))


def read_vtk_scalars(path):
    """Minimal reader for files produced by :func:`write_vtk` (used by tests)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    dims = None
    fields = {}
    i = 0
    while i < len(lines):
        ln = lines[i]
        if ln.startswith("DIMENSIONS"):
            dims = [int(v) for v in ln.split()[1:]]
        elif ln.startswith("SCALARS"):
            name = ln.split()[1]
            npts = int(np.prod(dims))
            vals = np.array([float(v) for v in lines[i + 2:i + 2 + npts]])
            fields[name] = vals.reshape(dims[::-1]).T
            i += 1 + npts
        elif ln.startswith("VECTORS"):
            name = ln.split()[1]
            npts = int(np.prod(dims))
            vals = np.array([[float(v) for v in l.split()] for l in lines[i + 1:i + 1 + npts]])
            fields[name] = np.stack([vals[:, c].reshape(dims[::-1]).T for c in range(3)])
            i += npts
        i += 1
    return dims, fields
