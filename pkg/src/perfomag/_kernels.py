"""Hot numeric kernels with a numba path and a vectorized numpy path.

The active backend is chosen once, at import, from the ``PERFOMAG_BACKEND``
environment variable (``numba`` or ``numpy``). ``numba`` is the default when
the package is importable. Both variants of every kernel stay importable
under explicit names so tests and the benchmark can compare them.
"""

import os

import numpy as np
import scipy.sparse as sp

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_requested = os.environ.get("PERFOMAG_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"PERFOMAG_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
BACKEND = "numba" if (_requested == "numba" and HAVE_NUMBA) else "numpy"


def _jit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# CSR matrix-vector product
# ---------------------------------------------------------------------------


@_jit
def csr_matvec_numba(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    y = np.empty(n)
    for i in range(n):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        y[i] = acc
    return y


def csr_matvec_numpy(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    mat = sp.csr_matrix((data, indices, indptr), shape=(n, x.shape[0]))
    return mat @ x


# ---------------------------------------------------------------------------
# Jacobi-preconditioned CG with per-component constant deflation
# ---------------------------------------------------------------------------


@_jit
def _project_numba(v, labels, counts):
    ncomp = counts.shape[0]
    sums = np.zeros(ncomp)
    for i in range(v.shape[0]):
        sums[labels[i]] += v[i]
    for c in range(ncomp):
        sums[c] /= counts[c]
    for i in range(v.shape[0]):
        v[i] -= sums[labels[i]]


@_jit
def _matvec_into(indptr, indices, data, x, y):
    for i in range(indptr.shape[0] - 1):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        y[i] = acc


@_jit
def pcg_numba(indptr, indices, data, dinv, b, x0, tol, max_iter, labels, counts, deflate):
    """Returns (x, iterations, true relative residual, residual history).

    Loops are fused so an iteration makes one matvec and two vector sweeps
    without temporaries.
    """
    n = b.shape[0]
    x = x0.copy()
    hist = np.empty(max_iter + 5)
    nh = 0
    bnorm = np.sqrt(np.dot(b, b))
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0, hist[:0]
    r = np.empty(n)
    z = np.empty(n)
    p = np.empty(n)
    ap = np.empty(n)
    iters = 0
    relres = 0.0
    for _restart in range(4):
        _matvec_into(indptr, indices, data, x, ap)
        for i in range(n):
            r[i] = b[i] - ap[i]
        if deflate:
            _project_numba(r, labels, counts)
        rnorm = np.sqrt(np.dot(r, r))
        hist[nh] = rnorm
        nh += 1
        for i in range(n):
            z[i] = dinv[i] * r[i]
        if deflate:
            _project_numba(z, labels, counts)
        rz = 0.0
        for i in range(n):
            p[i] = z[i]
            rz += r[i] * z[i]
        while rnorm > tol * bnorm and iters < max_iter:
            _matvec_into(indptr, indices, data, p, ap)
            pap = 0.0
            for i in range(n):
                pap += p[i] * ap[i]
            if pap <= 0.0:
                break
            alpha = rz / pap
            rr = 0.0
            for i in range(n):
                x[i] += alpha * p[i]
                r[i] -= alpha * ap[i]
                rr += r[i] * r[i]
                z[i] = dinv[i] * r[i]
            rnorm = np.sqrt(rr)
            iters += 1
            if nh < hist.shape[0]:
                hist[nh] = rnorm
                nh += 1
            if deflate:
                _project_numba(z, labels, counts)
            rz_new = 0.0
            for i in range(n):
                rz_new += r[i] * z[i]
            beta = rz_new / rz
            rz = rz_new
            for i in range(n):
                p[i] = z[i] + beta * p[i]
        if deflate:
            _project_numba(x, labels, counts)
        _matvec_into(indptr, indices, data, x, ap)
        for i in range(n):
            r[i] = b[i] - ap[i]
        if deflate:
            _project_numba(r, labels, counts)
        relres = np.sqrt(np.dot(r, r)) / bnorm
        if relres <= tol or iters >= max_iter:
            break
    return x, iters, relres, hist[:nh]


def _project_numpy(v, labels, counts):
    means = np.bincount(labels, weights=v, minlength=counts.shape[0]) / counts
    v -= means[labels]


def pcg_numpy(indptr, indices, data, dinv, b, x0, tol, max_iter, labels, counts, deflate):
    n = b.shape[0]
    mat = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    x = x0.copy()
    hist = []
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0, np.empty(0)
    iters = 0
    relres = 0.0
    for _restart in range(4):
        r = b - mat @ x
        if deflate:
            _project_numpy(r, labels, counts)
        rnorm = np.linalg.norm(r)
        hist.append(rnorm)
        z = dinv * r
        if deflate:
            _project_numpy(z, labels, counts)
        p = z.copy()
        rz = r @ z
        while rnorm > tol * bnorm and iters < max_iter:
            ap = mat @ p
            pap = p @ ap
            if pap <= 0.0:
                break
            alpha = rz / pap
            x += alpha * p
            r -= alpha * ap
            rnorm = np.linalg.norm(r)
            iters += 1
            hist.append(rnorm)
            z = dinv * r
            if deflate:
                _project_numpy(z, labels, counts)
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        if deflate:
            _project_numpy(x, labels, counts)
        rt = b - mat @ x
        if deflate:
            _project_numpy(rt, labels, counts)
        relres = np.linalg.norm(rt) / bnorm
        if relres <= tol or iters >= max_iter:
            break
    return x, iters, relres, np.asarray(hist)


# ---------------------------------------------------------------------------
# Unfolding quadrature: sum over (macro sample, cell voxel) pairs
# ---------------------------------------------------------------------------


@_jit
def unfold_sq_error_numba(fine, fine_h, x_pts, macro_vals, y_pts, chi_y, eps):
    """Sum of (fine[S(x, y)] - chi(y) * f(x))^2 over all sample pairs.

    ``fine`` is flattened C-order with shape ``fine_shape`` encoded by
    ``fine_h`` rows: (n_axis, h_axis).
    """
    dim = x_pts.shape[1]
    total = 0.0
    strides = np.ones(dim, dtype=np.int64)
    for k in range(dim - 2, -1, -1):
        strides[k] = strides[k + 1] * np.int64(fine_h[k + 1, 0])
    for a in range(x_pts.shape[0]):
        for b in range(y_pts.shape[0]):
            flat = 0
            for k in range(dim):
                nk = np.floor(x_pts[a, k] / eps)
                z = eps * nk + eps * y_pts[b, k]
                idx = np.int64(np.floor(z / fine_h[k, 1]))
                nmax = np.int64(fine_h[k, 0]) - 1
                if idx < 0:
                    idx = 0
                elif idx > nmax:
                    idx = nmax
                flat += idx * strides[k]
            d = fine[flat] - chi_y[b] * macro_vals[a]
            total += d * d
    return total


def unfold_sq_error_numpy(fine, fine_h, x_pts, macro_vals, y_pts, chi_y, eps):
    dim = x_pts.shape[1]
    shape = tuple(int(s) for s in fine_h[:, 0])
    flat = np.zeros((x_pts.shape[0], y_pts.shape[0]), dtype=np.int64)
    strides = np.cumprod((1,) + shape[::-1])[:-1][::-1]
    for k in range(dim):
        z = eps * np.floor(x_pts[:, k] / eps)[:, None] + eps * y_pts[None, :, k]
        idx = np.clip(np.floor(z / fine_h[k, 1]).astype(np.int64), 0, shape[k] - 1)
        flat += idx * strides[k]
    d = fine[flat] - chi_y[None, :] * macro_vals[:, None]
    return float(np.sum(d * d))


# ---------------------------------------------------------------------------
# Neighbour-fill extension: Jacobi averaging of hole voxels
# ---------------------------------------------------------------------------


@_jit
def neighbor_fill_numba(values, hole_idx, nbr, tol, max_sweeps):
    """``nbr[i, :]`` lists flat neighbour indices of hole voxel ``hole_idx[i]`` (-1 = none)."""
    out = values.copy()
    nh = hole_idx.shape[0]
    new = np.empty(nh)
    for sweep in range(max_sweeps):
        change = 0.0
        for i in range(nh):
            acc = 0.0
            cnt = 0
            for k in range(nbr.shape[1]):
                j = nbr[i, k]
                if j >= 0:
                    acc += out[j]
                    cnt += 1
            new[i] = acc / cnt if cnt > 0 else out[hole_idx[i]]
        for i in range(nh):
            d = abs(new[i] - out[hole_idx[i]])
            if d > change:
                change = d
            out[hole_idx[i]] = new[i]
        if change <= tol:
            return out, sweep + 1
    return out, max_sweeps


def neighbor_fill_numpy(values, hole_idx, nbr, tol, max_sweeps):
    out = values.copy()
    valid = nbr >= 0
    cnt = valid.sum(axis=1)
    safe = np.where(valid, nbr, 0)
    for sweep in range(max_sweeps):
        acc = np.where(valid, out[safe], 0.0).sum(axis=1)
        new = np.where(cnt > 0, acc / np.maximum(cnt, 1), out[hole_idx])
        change = np.max(np.abs(new - out[hole_idx])) if hole_idx.size else 0.0
        out[hole_idx] = new
        if change <= tol:
            return out, sweep + 1
    return out, max_sweeps


if BACKEND == "numba":
    csr_matvec = csr_matvec_numba
    pcg = pcg_numba
    unfold_sq_error = unfold_sq_error_numba
    neighbor_fill = neighbor_fill_numba
else:
    csr_matvec = csr_matvec_numpy
    pcg = pcg_numpy
    unfold_sq_error = unfold_sq_error_numpy
    neighbor_fill = neighbor_fill_numpy
