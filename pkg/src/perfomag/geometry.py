"""Periodic unit cell, perforated macroscopic grids and the lattice/unfolding maps."""

from dataclasses import dataclass, field
import math
import struct

import numpy as np

HOLE_KINDS = ("none", "sphere", "box", "voxel_mask")
MASK_MAGIC = b"PMSK"


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class HoleSpec:
    """Shape of the reference hole H inside Y = (0, 1)^dim.

    ``allow_boundary`` lifts the strict-containment check so that holes
    touching the cell boundary (non-isolated periodic holes) are accepted.
    """

    kind: str = "none"
    center: tuple = ()
    radius: float = 0.0
    lo: tuple = ()
    hi: tuple = ()
    mask: np.ndarray = None
    allow_boundary: bool = False

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def sphere(cls, center, radius, allow_boundary=False):
        return cls("sphere", center=tuple(float(c) for c in center), radius=float(radius),
                   allow_boundary=allow_boundary)

    @classmethod
    def box(cls, lo, hi, allow_boundary=False):
        return cls("box", lo=tuple(float(v) for v in lo), hi=tuple(float(v) for v in hi),
                   allow_boundary=allow_boundary)

    @classmethod
    def from_mask(cls, mask, allow_boundary=True):
        """``mask`` is a per-voxel material indicator (True = material)."""
        return cls("voxel_mask", mask=np.asarray(mask, dtype=bool), allow_boundary=allow_boundary)

    def validate(self, dim):
        if self.kind not in HOLE_KINDS:
            raise GeometryError(f"unknown hole kind {self.kind!r}")
        if self.kind == "sphere":
            if len(self.center) < dim:
                raise GeometryError(f"sphere center needs {dim} coordinates")
            if self.radius <= 0:
                raise GeometryError("sphere radius must be > 0")
            if not self.allow_boundary:
                for c in self.center[:dim]:
                    if not (c - self.radius > 0.0 and c + self.radius < 1.0):
                        raise GeometryError("sphere hole touches or crosses the cell boundary")
        elif self.kind == "box":
            if len(self.lo) < dim or len(self.hi) < dim:
                raise GeometryError(f"box corners need {dim} coordinates")
            for a, b in zip(self.lo[:dim], self.hi[:dim]):
                if not a < b:
                    raise GeometryError("box hole needs lo < hi on every axis")
                if not self.allow_boundary and not (a > 0.0 and b < 1.0):
                    raise GeometryError("box hole touches or crosses the cell boundary")
        elif self.kind == "voxel_mask":
            if self.mask is None or self.mask.ndim != dim:
                raise GeometryError(f"voxel mask must be a {dim}-D boolean array")

    def diameter(self, dim):
        """Smallest extent of the hole along an axis, in cell units (None for masks)."""
        if self.kind == "sphere":
            return 2.0 * self.radius
        if self.kind == "box":
            return min(b - a for a, b in zip(self.lo[:dim], self.hi[:dim]))
        return None

    def contains(self, pts):
        """Boolean array: which points (shape (..., dim)) lie in the open hole."""
        dim = pts.shape[-1]
        if self.kind == "sphere":
            c = np.asarray(self.center[:dim])
            return np.sum((pts - c) ** 2, axis=-1) < self.radius ** 2
        if self.kind == "box":
            lo = np.asarray(self.lo[:dim])
            hi = np.asarray(self.hi[:dim])
            return np.all((pts > lo) & (pts < hi), axis=-1)
        return np.zeros(pts.shape[:-1], dtype=bool)


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CellGrid:
    """Voxelised unit cell. ``mask[idx]`` is True on material voxels (Y*)."""

    n: int
    dim: int
    mask: np.ndarray
    hole: HoleSpec = field(default_factory=HoleSpec.none)

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def spacing(self):
        return (self.h,) * self.dim

    @property
    def voxel_volume(self):
        return self.h ** self.dim

    @property
    def periodic(self):
        return True

    def centers(self):
        """Voxel centres, shape (*shape, dim)."""
        ax = (np.arange(self.n) + 0.5) / self.n
        grids = np.meshgrid(*([ax] * self.dim), indexing="ij")
        return np.stack(grids, axis=-1)

    @property
    def porosity(self):
        return porosity(self)


def build_cell_grid(n, dim=3, hole=None):
    hole = HoleSpec.none() if hole is None else hole
    if dim not in (2, 3):
        raise GeometryError("dim must be 2 or 3")
    if n < 4:
        raise GeometryError("cell resolution n must be >= 4")
    hole.validate(dim)
    if hole.kind == "voxel_mask":
        if hole.mask.shape != (n,) * dim:
            raise GeometryError(f"voxel mask shape {hole.mask.shape} does not match n={n}, dim={dim}")
        mask = hole.mask.copy()
    else:
        ax = (np.arange(n) + 0.5) / n
        pts = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1)
        mask = ~hole.contains(pts)
    if not mask.any():
        raise GeometryError("empty material phase")
    return CellGrid(n=n, dim=dim, mask=_frozen(mask), hole=hole)


def porosity(grid):
    return float(np.count_nonzero(grid.mask)) / grid.mask.size


@dataclass(frozen=True)
class MacroGrid:
    """Voxel grid on the box (0, L_1) x ... x (0, L_dim).

    When ``eps`` is set the mask carries the eps-periodic perforation;
    ``pad`` is the number of far-field voxel layers added on every side for
    the magnetostatic problem.
    """

    box: tuple
    n: tuple
    mask: np.ndarray
    pad: int
    eps: float = None
    cells_per_period: int = None

    @property
    def dim(self):
        return len(self.box)

    @property
    def shape(self):
        return tuple(self.n)

    @property
    def spacing(self):
        return tuple(L / k for L, k in zip(self.box, self.n))

    @property
    def voxel_volume(self):
        return float(np.prod(self.spacing))

    @property
    def volume(self):
        return float(np.prod(self.box))

    @property
    def periodic(self):
        return False

    @property
    def padded_shape(self):
        return tuple(k + 2 * self.pad for k in self.n)

    def centers(self):
        axes = [(np.arange(k) + 0.5) * h for k, h in zip(self.n, self.spacing)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def inner_slice(self):
        """Slice of the padded box corresponding to Omega."""
        return tuple(slice(self.pad, self.pad + k) for k in self.n)

    def padded_mask(self):
        """Magnetostatic domain: the padded box, holes inside Omega excluded."""
        full = np.ones(self.padded_shape, dtype=bool)
        full[self.inner_slice()] = self.mask
        return full

    def omega_indicator(self):
        """chi_Omega on the padded box, as float."""
        chi = np.zeros(self.padded_shape)
        chi[self.inner_slice()] = 1.0
        return chi


def default_pad(box, n):
    h = min(L / k for L, k in zip(box, n))
    diam = math.sqrt(sum(L * L for L in box))
    return max(2, int(math.ceil(0.5 * diam / h)))


def _normalize_box(box, n_macro):
    box = tuple(float(L) for L in box)
    if isinstance(n_macro, (int, np.integer)):
        n = (int(n_macro),) * len(box)
    else:
        n = tuple(int(k) for k in n_macro)
    if len(n) != len(box) or len(box) not in (2, 3):
        raise GeometryError("box and n_macro must describe a 2-D or 3-D grid")
    if any(L <= 0 for L in box) or any(k < 1 for k in n):
        raise GeometryError("box lengths and voxel counts must be positive")
    return box, n


def build_macro_grid(box, n_macro, pad=None):
    box, n = _normalize_box(box, n_macro)
    pad = default_pad(box, n) if pad is None else int(pad)
    if pad < 2:
        raise GeometryError("pad must be >= 2 layers")
    return MacroGrid(box=box, n=n, mask=_frozen(np.ones(n, dtype=bool)), pad=pad)


def _steps_per_period(eps, h):
    p = eps / h
    k = int(round(p))
    if k < 1 or abs(p - k) > 1e-9 * max(1.0, p):
        raise GeometryError(f"period eps={eps} is not an integer number of voxels (h={h})")
    return k


def build_perforated_macro(box, n_macro, eps, hole, pad=None, min_hole_voxels=4):
    """Tile the cell mask over every eps-cell lying fully inside the box.

    Cells cut by the outer boundary stay unperforated.
    """
    box, n = _normalize_box(box, n_macro)
    dim = len(box)
    if eps <= 0:
        raise GeometryError("eps must be > 0")
    hvec = [L / k for L, k in zip(box, n)]
    per = [_steps_per_period(eps, h) for h in hvec]
    if len(set(per)) != 1:
        raise GeometryError("voxels must be cubic so that each period holds the same cell grid")
    p = per[0]
    hole.validate(dim)
    diam = hole.diameter(dim)
    if diam is not None and diam * p < min_hole_voxels - 1e-9:
        raise GeometryError(
            f"resolution too coarse: hole spans {diam * p:.2f} voxels, need >= {min_hole_voxels}")
    mask = np.ones(n, dtype=bool)
    if hole.kind != "none":
        if p < 4:
            raise GeometryError("need at least 4 voxels per period")
        if hole.kind == "voxel_mask" and hole.mask.shape != (p,) * dim:
            raise GeometryError("voxel mask resolution must equal voxels per period")
        cell_mask = build_cell_grid(p, dim, hole).mask
        full_cells = [k // p for k in n]
        inner = tuple(slice(0, c * p) for c in full_cells)
        mask[inner] = np.tile(cell_mask, full_cells)
    if not mask.any():
        raise GeometryError("empty material phase")
    pad = default_pad(box, n) if pad is None else int(pad)
    if pad < 2:
        raise GeometryError("pad must be >= 2 layers")
    return MacroGrid(box=box, n=n, mask=_frozen(mask), pad=pad, eps=float(eps), cells_per_period=p)


@dataclass(frozen=True)
class LatticePoint:
    N: np.ndarray
    R: np.ndarray


def lattice_decompose(x, eps):
    """x / eps = N + R with N integer (floor) and R in [0, 1)."""
    if eps <= 0:
        raise GeometryError("eps must be > 0")
    s = np.asarray(x, dtype=float) / eps
    N = np.floor(s)
    R = s - N
    # s a hair below an integer rounds R up to exactly 1
    wrap = R >= 1.0
    N = np.where(wrap, N + 1, N)
    R = np.where(wrap, 0.0, R)
    return LatticePoint(N=N.astype(np.int64), R=R)


def unfold(x, y, eps):
    """eps * floor(x / eps) + eps * y."""
    N = lattice_decompose(x, eps).N
    return eps * N + eps * np.asarray(y, dtype=float)


# ---------------------------------------------------------------------------
# Raw mask files: "PMSK", u32 dim, u32 n_x, n_y, n_z, then one byte per voxel
# (1 = material), x index fastest.
# ---------------------------------------------------------------------------


def write_mask(path, mask):
    from perfomag.io import atomic_write_bytes

    mask = np.asarray(mask, dtype=bool)
    dim = mask.ndim
    dims = list(mask.shape) + [1] * (3 - dim)
    header = MASK_MAGIC + struct.pack("<4I", dim, *dims)
    body = np.ascontiguousarray(mask.T).astype(np.uint8).tobytes()
    atomic_write_bytes(path, header + body)


def read_mask(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20 or raw[:4] != MASK_MAGIC:
        raise GeometryError(f"{path}: not a PMSK mask file")
    dim, nx, ny, nz = struct.unpack("<4I", raw[4:20])
    if dim not in (2, 3):
        raise GeometryError(f"{path}: unsupported dim {dim}")
    shape = (nx, ny, nz)[:dim]
    count = int(np.prod(shape))
    body = np.frombuffer(raw[20:], dtype=np.uint8)
    if body.size != count:
        raise GeometryError(f"{path}: expected {count} voxel bytes, found {body.size}")
    # file order has x fastest, i.e. C order of the reversed axes
    return body.reshape(shape[::-1]).T.astype(bool)
