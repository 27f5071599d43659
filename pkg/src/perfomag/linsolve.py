"""Finite-volume assembly of -div(C grad .) on masked voxel grids and a
deflated Jacobi-PCG solver.

Unknowns are the material voxels of the grid (C order of the full array).
Excluded voxels act as impermeable obstacles, which realises the natural
no-flux condition on hole boundaries.

The discrete operator is stored both as CSR and as a list of *terms*
``w * (u[a] - u[b]) * (u[c] - u[d])`` whose sum is the discrete energy
density ``(1/2) u.L.u``. The term form gives exact affine right-hand sides
and flux moments for the linear fields ``y_i`` that are not periodic.
"""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from perfomag import _kernels

BCS = ("periodic", "box_neumann", "box_dirichlet_far")
OFFDIAG_EXPERIMENTAL_RATIO = 0.25


class OperatorError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class Domain:
    """Bare masked grid: anything exposing ``mask`` and ``spacing`` works."""

    mask: np.ndarray
    spacing: tuple


@dataclass
class TermSet:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    w: np.ndarray
    d1: np.ndarray  # (n_terms, dim): difference of y_j across (a, b)
    d2: np.ndarray
    axis: np.ndarray  # face axis for two-point terms, -1 for cross terms
    n_faces: int


@dataclass
class SparseOperator:
    n_rows: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    symmetric: bool
    index: np.ndarray  # grid-shaped, unknown number or -1
    unknowns: np.ndarray  # flat grid index of each unknown
    labels: np.ndarray
    n_components: int
    terms: TermSet
    diag_pos: np.ndarray
    spacing: tuple
    voxel_volume: float
    warnings: list = field(default_factory=list)
    experimental: bool = False

    @property
    def grid_shape(self):
        return self.index.shape

    @property
    def dim(self):
        return self.index.ndim

    def diagonal(self):
        return self.data[self.diag_pos].copy()

    def matvec(self, x):
        return _kernels.csr_matvec(self.indptr, self.indices, self.data, np.ascontiguousarray(x, dtype=float))

    def to_scipy(self):
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n_rows, self.n_rows))

    def to_dense(self):
        return self.to_scipy().toarray()

    def shifted(self, s):
        """Operator + diag(s); the shift leaves the term list untouched."""
        data = self.data.copy()
        data[self.diag_pos] += np.broadcast_to(np.asarray(s, dtype=float), (self.n_rows,))
        return SparseOperator(
            self.n_rows, self.indptr, self.indices, data, self.symmetric, self.index, self.unknowns,
            self.labels, self.n_components, self.terms, self.diag_pos, self.spacing,
            self.voxel_volume, list(self.warnings), self.experimental)

    def gather(self, full):
        return np.asarray(full, dtype=float).ravel()[self.unknowns]

    def scatter(self, values, fill=0.0):
        out = np.full(self.index.size, fill, dtype=float)
        out[self.unknowns] = values
        return out.reshape(self.index.shape)


@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    converged: bool
    projected: bool
    tol: float = 0.0
    history: np.ndarray = field(default=None, repr=False)

    def row(self):
        return [self.iterations, float(self.relative_residual), int(self.converged), int(self.projected)]


SOLVE_REPORT_HEADER = ["iterations", "relative_residual", "converged", "projected"]


def coefficient_field(coeff, shape, dim):
    """Broadcast a scalar, a matrix or a per-voxel field to (*shape, dim, dim)."""
    c = np.asarray(coeff, dtype=float)
    if c.ndim == 0:
        c = c * np.eye(dim)
    elif c.shape == tuple(shape):
        c = c[..., None, None] * np.eye(dim)
    if c.shape[-2:] == (3, 3) and dim == 2:
        c = c[..., :2, :2]
    if c.shape[-2:] != (dim, dim):
        raise OperatorError(f"coefficient has shape {c.shape}, expected (..., {dim}, {dim})")
    return np.broadcast_to(c, tuple(shape) + (dim, dim))


def check_spd(C, mask):
    """Raise naming the first material voxel where C is not symmetric positive definite."""
    Cm = C[mask]
    if Cm.size == 0:
        return
    scale = max(1.0, float(np.max(np.abs(Cm))))
    asym = np.max(np.abs(Cm - np.swapaxes(Cm, -1, -2)), axis=(-1, -2))
    # distinct matrices only: coefficient fields are usually piecewise constant
    uniq, inverse = np.unique(Cm.reshape(Cm.shape[0], -1), axis=0, return_inverse=True)
    lam_min = np.linalg.eigvalsh(uniq.reshape(-1, *Cm.shape[1:]))[:, 0][np.ravel(inverse)]
    bad = (asym > 1e-12 * scale) | ~(lam_min > 0)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        voxel = tuple(int(v) for v in np.argwhere(mask)[k])
        raise OperatorError(f"coefficient not symmetric positive definite at voxel {voxel}")


def _shifted(a, s, axis, periodic, fill):
    """Array whose value at x is a[x + s e_axis]; ``fill`` outside the box."""
    if periodic:
        return np.roll(a, -s, axis=axis)
    out = np.full_like(a, fill)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if s > 0:
        src[axis] = slice(s, None)
        dst[axis] = slice(None, -s)
    else:
        src[axis] = slice(None, s)
        dst[axis] = slice(-s, None)
    out[tuple(dst)] = a[tuple(src)]
    return out


def _shift(idx, s, axis, periodic):
    return _shifted(idx, s, axis, periodic, -1)


def assemble_elliptic(grid, coeff, bc="periodic", check=True):
    """Assemble L ~ -div(C grad .) in finite-difference scaling.

    Two-point fluxes use the harmonic mean of the diagonal coefficient on the
    two sides of a face. Off-diagonal entries contribute cross terms built
    from one-sided differences at each voxel (9-point in 2-D, 19-point in
    3-D), weighted by the voxel value of C_kl.
    """
    if bc not in BCS:
        raise OperatorError(f"unknown boundary condition {bc!r}")
    mask = np.asarray(grid.mask, dtype=bool)
    spacing = tuple(float(h) for h in grid.spacing)
    dim = mask.ndim
    C = coefficient_field(coeff, mask.shape, dim)
    if check:
        check_spd(C, mask)
    periodic = bc == "periodic"
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise OperatorError("no unknowns: empty material phase")
    index = np.full(mask.shape, -1, dtype=np.int64)
    index[mask] = np.arange(n)
    unknowns = np.flatnonzero(mask.ravel())

    A, B, W, D, AX = [], [], [], [], []
    extra_diag = np.zeros(n)
    for k in range(dim):
        q = _shift(index, 1, k, periodic)
        ok = (index >= 0) & (q >= 0)
        ck = C[..., k, k]
        cq = _shifted(ck, 1, k, periodic, 1.0)
        cp = ck[ok]
        cqv = cq[ok]
        cf = 2.0 * cp * cqv / (cp + cqv)
        A.append(q[ok])
        B.append(index[ok])
        W.append(0.5 * cf / spacing[k] ** 2)
        dv = np.zeros((cf.size, dim))
        dv[:, k] = spacing[k]
        D.append(dv)
        AX.append(np.full(cf.size, k))
        if bc == "box_dirichlet_far":
            for s in (1, -1):
                nb = _shift(index, s, k, False)
                edge = (index >= 0) & _edge(mask.shape, k, s)
                assert not (nb[edge] >= 0).any()
                extra_diag[index[edge]] += 2.0 * ck[edge] / spacing[k] ** 2

    faces_a = np.concatenate(A)
    faces_b = np.concatenate(B)
    faces_w = np.concatenate(W)
    faces_d = np.concatenate(D) if D else np.zeros((0, dim))
    faces_ax = np.concatenate(AX)
    nf = faces_a.size

    ca, cb, cc, cd, cw, c1, c2 = [], [], [], [], [], [], []
    max_ratio = 0.0
    for k in range(dim):
        for l in range(k + 1, dim):
            ckl = C[..., k, l]
            if not np.any(ckl[mask] != 0.0):
                continue
            diag_min = np.minimum(C[..., k, k], C[..., l, l])
            max_ratio = max(max_ratio, float(np.max(np.abs(ckl[mask]) / diag_min[mask])))
            for sk in (1, -1):
                for sl in (1, -1):
                    na = _shift(index, sk, k, periodic)
                    nc = _shift(index, sl, l, periodic)
                    ok = (index >= 0) & (na >= 0) & (nc >= 0) & (ckl != 0.0)
                    w = ckl[ok] * (sk * sl) / (4.0 * spacing[k] * spacing[l])
                    ca.append(na[ok])
                    cb.append(index[ok])
                    cc.append(nc[ok])
                    cd.append(index[ok])
                    cw.append(w)
                    v1 = np.zeros((w.size, dim))
                    v1[:, k] = sk * spacing[k]
                    v2 = np.zeros((w.size, dim))
                    v2[:, l] = sl * spacing[l]
                    c1.append(v1)
                    c2.append(v2)

    if ca:
        cross = [np.concatenate(x) for x in (ca, cb, cc, cd, cw)]
        cd1 = np.concatenate(c1)
        cd2 = np.concatenate(c2)
    else:
        cross = [np.zeros(0, dtype=np.int64)] * 4 + [np.zeros(0)]
        cd1 = cd2 = np.zeros((0, dim))
    terms = TermSet(
        a=np.concatenate([faces_a, cross[0]]), b=np.concatenate([faces_b, cross[1]]),
        c=np.concatenate([faces_a, cross[2]]), d=np.concatenate([faces_b, cross[3]]),
        w=np.concatenate([faces_w, cross[4]]), d1=np.concatenate([faces_d, cd1]),
        d2=np.concatenate([faces_d, cd2]),
        axis=np.concatenate([faces_ax, np.full(cross[0].size, -1)]), n_faces=nf)

    # faces: w (e_a - e_b)(e_a - e_b)^T twice; cross: w (g1 g2^T + g2 g1^T)
    ta, tb, tc, td, tw = cross
    rows = np.concatenate([faces_a, faces_b, faces_a, faces_b,
                           ta, ta, tb, tb, tc, tc, td, td, np.arange(n)])
    cols = np.concatenate([faces_a, faces_b, faces_b, faces_a,
                           tc, td, tc, td, ta, tb, ta, tb, np.arange(n)])
    fw = 2.0 * faces_w
    vals = np.concatenate([fw, fw, -fw, -fw, tw, -tw, -tw, tw, tw, -tw, -tw, tw, extra_diag])
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    # the two triangles are summed in different orders; make them bitwise equal
    tr = mat.T.tocsr()
    tr.sort_indices()
    assert np.array_equal(tr.indices, mat.indices)
    mat.data = 0.5 * (mat.data + tr.data)
    row_of = np.repeat(np.arange(n), np.diff(mat.indptr))
    keep = (mat.data != 0.0) | (mat.indices == row_of)
    if not keep.all():
        mat = sp.csr_matrix((mat.data[keep], mat.indices[keep],
                             np.concatenate([[0], np.cumsum(np.bincount(row_of[keep], minlength=n))])),
                            shape=(n, n))
        row_of = np.repeat(np.arange(n), np.diff(mat.indptr))
    diag_pos = np.flatnonzero(mat.indices == row_of)
    assert diag_pos.size == n

    ncomp, labels = connected_components(mat, directed=False)
    notes = []
    if ncomp > 1:
        notes.append(f"material phase has {ncomp} connected components; constants deflated per component")
    experimental = max_ratio > OFFDIAG_EXPERIMENTAL_RATIO
    if experimental:
        notes.append(f"off-diagonal coefficient ratio {max_ratio:.3f} exceeds "
                     f"{OFFDIAG_EXPERIMENTAL_RATIO}; monotonicity not guaranteed")
    return SparseOperator(
        n_rows=n, indptr=mat.indptr.astype(np.int64), indices=mat.indices.astype(np.int64),
        data=mat.data.astype(float), symmetric=True, index=index, unknowns=unknowns,
        labels=labels.astype(np.int64), n_components=int(ncomp), terms=terms, diag_pos=diag_pos,
        spacing=spacing, voxel_volume=float(np.prod(spacing)), warnings=notes,
        experimental=experimental)


def _edge(shape, axis, s):
    e = np.zeros(shape, dtype=bool)
    sl = [slice(None)] * len(shape)
    sl[axis] = -1 if s > 0 else 0
    e[tuple(sl)] = True
    return e


def default_max_iter(op):
    return int(50 * math.ceil(op.n_rows ** (1.0 / op.dim)))


def solve_spd(A, b, tol=1e-10, deflate_constants=False, max_iter=None, x0=None):
    """Jacobi-preconditioned CG. With deflation the right-hand side and the
    iterates are projected to zero mean on every connected component."""
    b = np.array(b, dtype=float)
    if b.shape != (A.n_rows,):
        raise OperatorError(f"rhs has shape {b.shape}, expected ({A.n_rows},)")
    counts = np.bincount(A.labels, minlength=A.n_components).astype(float)
    if deflate_constants:
        _kernels._project_numpy(b, A.labels, counts)
    max_iter = default_max_iter(A) if max_iter is None else int(max_iter)
    x0 = np.zeros(A.n_rows) if x0 is None else np.array(x0, dtype=float)
    diag = A.diagonal()
    dinv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 0.0)
    x, iters, relres, hist = _kernels.pcg(
        A.indptr, A.indices, A.data, dinv, b, x0, float(tol), max_iter, A.labels, counts,
        bool(deflate_constants))
    report = SolveReport(iterations=int(iters), relative_residual=float(relres),
                         converged=bool(relres <= tol), projected=bool(deflate_constants),
                         tol=float(tol), history=np.asarray(hist))
    return x, report


# ---------------------------------------------------------------------------
# Affine fields y_i and face-based moments
# ---------------------------------------------------------------------------


def linear_rhs(op, i):
    """b = -a(y_i, .): right-hand side for a(w, .) = -a(y_i, .)."""
    t = op.terms
    n = op.n_rows
    g1 = t.w * t.d2[:, i]
    g2 = t.w * t.d1[:, i]
    return (-np.bincount(t.a, g1, n) + np.bincount(t.b, g1, n)
            - np.bincount(t.c, g2, n) + np.bincount(t.d, g2, n))


def linear_flux(op, u, i, j):
    """Cell integral of (C grad(u + y_i)) . e_j, with u on the unknowns."""
    t = op.terms
    D1 = u[t.a] - u[t.b] + t.d1[:, i]
    D2 = u[t.c] - u[t.d] + t.d2[:, i]
    return op.voxel_volume * float(np.sum(t.w * (D1 * t.d2[:, j] + D2 * t.d1[:, j])))


def energy_form(op, u, v):
    """Discrete a(u, v) = vol * u . L v for fields on the unknowns."""
    return op.voxel_volume * float(u @ op.matvec(v))


def face_gradient_mean(op, u, i):
    """Integral of d u / d y_i over the domain from two-point face differences."""
    t = op.terms
    sel = t.axis[:t.n_faces] == i
    a = t.a[:t.n_faces][sel]
    b = t.b[:t.n_faces][sel]
    return op.voxel_volume * float(np.sum(u[a] - u[b])) / op.spacing[i]


def face_flux_values(op, u, i):
    """Per-face flux c_f * (1 + (u_q - u_p)/h_i) for faces normal to axis i."""
    t = op.terms
    sel = t.axis[:t.n_faces] == i
    w = t.w[:t.n_faces][sel]
    h = op.spacing[i]
    cf = 2.0 * w * h * h
    return cf * (1.0 + (u[t.a[:t.n_faces][sel]] - u[t.b[:t.n_faces][sel]]) / h)


def divergence_rhs(op, J):
    """b such that L phi = b discretises -div(C grad phi) = div J with no-flux
    walls. ``J`` has shape (dim, *grid) and is averaged onto faces."""
    t = op.terms
    nf = t.n_faces
    n = op.n_rows
    b = np.zeros(n)
    for k in range(op.dim):
        sel = t.axis[:nf] == k
        q = t.a[:nf][sel]
        p = t.b[:nf][sel]
        Jk = np.asarray(J[k], dtype=float).ravel()
        jf = 0.5 * (Jk[op.unknowns[p]] + Jk[op.unknowns[q]]) / op.spacing[k]
        b += np.bincount(p, jf, n) - np.bincount(q, jf, n)
    return b


def node_gradient(full, mask, spacing, periodic=False):
    """Voxel-centred gradient from the available one-sided differences."""
    full = np.asarray(full, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    dim = mask.ndim
    out = np.zeros((dim,) + mask.shape)
    for k in range(dim):
        acc = np.zeros(mask.shape)
        cnt = np.zeros(mask.shape)
        for s in (1, -1):
            nb = _shifted(full, s, k, periodic, 0.0)
            ok = _shifted(mask, s, k, periodic, False) & mask
            acc += np.where(ok, s * (nb - full) / spacing[k], 0.0)
            cnt += ok
        out[k] = np.where(cnt > 0, acc / np.maximum(cnt, 1), 0.0)
    return out


def solve_or_raise(A, b, what, **kw):
    x, rep = solve_spd(A, b, **kw)
    if not rep.converged:
        raise SolverError(f"{what}: CG did not converge (relres={rep.relative_residual:.3e} "
                          f"after {rep.iterations} iterations)", rep)
    return x, rep


def warn_components(op):
    for note in op.warnings:
        warnings.warn(note, RuntimeWarning, stacklevel=3)
