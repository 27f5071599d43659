"""Constitutive maps of the temperature reformulation v = F(theta)."""

from dataclasses import dataclass
import sys

import numpy as np

TINY = sys.float_info.min


class ThermoDomainError(ValueError):
    pass


@dataclass(frozen=True)
class ThermoParams:
    c1: float = 1.0
    c2: float = 1.0
    k0: float = 1.0
    k1: float = 1.0

    def __post_init__(self):
        for name in ("c1", "c2", "k0", "k1"):
            if not getattr(self, name) > 0:
                raise ThermoDomainError(f"{name} must be > 0")

    @property
    def pi0(self):
        return min(self.k0 / self.c1, self.k1 / self.c2)

    @property
    def pi1(self):
        return max(self.k0 / self.c1, self.k1 / self.c2)


def _positive(theta, what="theta"):
    t = np.asarray(theta, dtype=float)
    if np.any(~(t > 0)):
        raise ThermoDomainError(f"{what} must be > 0")
    return t


def _out(x, like):
    return float(x) if np.ndim(like) == 0 else x


def F(theta, p):
    """c1 ln(theta) + c2 theta."""
    t = _positive(theta)
    return _out(p.c1 * np.log(t) + p.c2 * t, theta)


def dF(theta, p):
    t = _positive(theta)
    return _out(p.c1 / t + p.c2, theta)


def G(v, p, tol=1e-13, return_flags=False):
    """Inverse of F, by bracketed Newton on s = ln(theta).

    In s the residual c1 s + c2 e^s - v is convex and increasing, so Newton
    steps from the bracket stay monotone; bisection guards the bracket.
    Results that underflow are clamped to the smallest positive normal and
    reported through ``return_flags``.
    """
    v_arr = np.asarray(v, dtype=float)
    vv = np.atleast_1d(v_arr).astype(float)
    # bracket in theta: [min(1, exp((v - c2)/c1)), max(1, v/c2) + 1]
    lo = np.minimum(0.0, (vv - p.c2) / p.c1)
    hi = np.log(np.maximum(1.0, vv / p.c2) + 1.0)
    s = hi.copy()
    for _ in range(200):
        es = np.exp(s)
        f = p.c1 * s + p.c2 * es - vv
        fp = p.c1 + p.c2 * es
        lo = np.where(f < 0, s, lo)
        hi = np.where(f > 0, s, hi)
        step = f / fp
        cand = s - step
        bad = ~((cand > lo) & (cand < hi))
        cand = np.where(bad, 0.5 * (lo + hi), cand)
        done = np.abs(cand - s) <= 4e-16 * np.maximum(1.0, np.abs(s))
        s = cand
        if np.all(done) and np.all(np.abs(f) <= tol * np.maximum(1.0, np.abs(vv))):
            break
    theta = np.exp(s)
    clamped = theta < TINY
    theta = np.where(clamped, TINY, theta)
    out = float(theta[0]) if v_arr.ndim == 0 else theta.reshape(v_arr.shape)
    if return_flags:
        return out, (bool(clamped[0]) if v_arr.ndim == 0 else clamped.reshape(v_arr.shape))
    return out


def g(theta, p):
    """Mobility (k0 + k1 theta) / (c1 + c2 theta), bounded by [pi0, pi1]."""
    t = _positive(theta)
    return _out((p.k0 + p.k1 * t) / (p.c1 + p.c2 * t), theta)


def heat_coeffs(theta, p):
    """Specific heat c(theta) and conductivity k(theta) of the polynomial laws."""
    t = _positive(theta)
    c = p.c1 * t + p.c2 * t * t / 2.0
    k = p.k0 + p.k1 * t
    return _out(c, theta), _out(k, theta)
