"""Independent reference implementations used only by the tests."""

import itertools
import math

import numpy as np


def dense_assembly(mask, C, spacing, periodic):
    """Brute-force dense operator for -div(C grad .) with the same stencil
    conventions, built voxel by voxel with explicit index arithmetic.

    ``C`` is a (*shape, dim, dim) array. Returns (L, index) with L dense.
    """
    mask = np.asarray(mask, dtype=bool)
    shape = mask.shape
    dim = len(shape)
    index = -np.ones(shape, dtype=int)
    n = 0
    for p in itertools.product(*[range(s) for s in shape]):
        if mask[p]:
            index[p] = n
            n += 1
    L = np.zeros((n, n))

    def nb(p, k, s):
        q = list(p)
        q[k] += s
        if periodic:
            q[k] %= shape[k]
        elif not 0 <= q[k] < shape[k]:
            return None
        q = tuple(q)
        return q if mask[q] else None

    for p in itertools.product(*[range(s) for s in shape]):
        if not mask[p]:
            continue
        i = index[p]
        for k in range(dim):
            # face between p and p + e_k
            q = nb(p, k, 1)
            if q is not None:
                a, b = C[p][k, k], C[q][k, k]
                cf = 2.0 * a * b / (a + b)
                j = index[q]
                w = cf / spacing[k] ** 2
                L[i, i] += w
                L[j, j] += w
                L[i, j] -= w
                L[j, i] -= w
        # cross terms: energy C_kl/4 * sum over quadrants of one-sided products
        for k in range(dim):
            for l in range(k + 1, dim):
                ckl = C[p][k, l]
                if ckl == 0.0:
                    continue
                for sk in (1, -1):
                    for sl in (1, -1):
                        qa = nb(p, k, sk)
                        qc = nb(p, l, sl)
                        if qa is None or qc is None:
                            continue
                        w = ckl * sk * sl / (4.0 * spacing[k] * spacing[l])
                        g1 = {index[qa]: 1.0}
                        g1[i] = g1.get(i, 0.0) - 1.0
                        g2 = {index[qc]: 1.0}
                        g2[i] = g2.get(i, 0.0) - 1.0
                        for r, x in g1.items():
                            for c, y in g2.items():
                                L[r, c] += w * x * y
                                L[c, r] += w * x * y
    return L, index


def rk4_uniform_m(m0, theta, theta_c, h2, gamma, t_end, dt):
    """RK4 for gamma m' = -theta_c(|m|^2 - 1) m - theta m + h2 m.

    Plain floats: the oracle runs ~1e6 stages and numpy overhead dominates.
    """
    a = (theta_c - theta + h2) / gamma
    b = theta_c / gamma
    x, y, z = (float(c) for c in m0)

    def f(x, y, z):
        r = a - b * (x * x + y * y + z * z)
        return r * x, r * y, r * z

    for _ in range(int(round(t_end / dt))):
        k1 = f(x, y, z)
        k2 = f(x + 0.5 * dt * k1[0], y + 0.5 * dt * k1[1], z + 0.5 * dt * k1[2])
        k3 = f(x + 0.5 * dt * k2[0], y + 0.5 * dt * k2[1], z + 0.5 * dt * k2[2])
        k4 = f(x + dt * k3[0], y + dt * k3[1], z + dt * k3[2])
        x += dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        y += dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        z += dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return np.array([x, y, z])


def laminate_means(low, high, frac_low=0.5):
    """(harmonic, arithmetic) means of a two-phase laminate."""
    harm = 1.0 / (frac_low / low + (1 - frac_low) / high)
    arith = frac_low * low + (1 - frac_low) * high
    return harm, arith


def sphere_fraction(r, dim=3):
    if dim == 3:
        return 1.0 - 4.0 / 3.0 * math.pi * r ** 3
    return 1.0 - math.pi * r ** 2
