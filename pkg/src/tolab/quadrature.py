"""Sphere and ball quadrature for integrands carrying the weight |x_n|^p.

Angular integrals are split at the thin-space crossings. On each arc the
factor |sin(theta)|^p is written as theta^p (sin(theta)/theta)^p; the theta^p
part is the Gauss-Jacobi weight and the rest is smooth. Radial integrals use a
product trapezoid rule, exact for t^p against piecewise-linear factors. Both
stay accurate for every p > -1, where plain sampling would diverge as p -> -1.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


def product_trapezoid(T: float, count: int, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for int_0^T t^p G(t) dt with G piecewise linear.

    ``count`` panels of equal width; weights are exact for piecewise-linear G.
    """
    if p <= -1.0:
        raise ValueError("singular weight exponent must exceed -1")
    t = np.linspace(0.0, T, count + 1)
    dt = T / count
    lo, hi = t[:-1], t[1:]
    i0 = (hi ** (p + 1) - lo ** (p + 1)) / (p + 1)
    i1 = (hi ** (p + 2) - lo ** (p + 2)) / (p + 2)
    left = (hi * i0 - i1) / dt
    right = (i1 - lo * i0) / dt
    w = np.zeros(count + 1)
    w[:-1] += left
    w[1:] += right
    return t, w


def _sinc_pow(t: np.ndarray, p: float) -> np.ndarray:
    out = np.ones_like(t)
    nz = t > 0
    out[nz] = (np.sin(t[nz]) / t[nz]) ** p
    return out


def gauss_jacobi_arc(T: float, count: int, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for int_0^T t^p G(t) dt, exact for polynomial G of degree < 2*count."""
    if p <= -1.0:
        raise ValueError("singular weight exponent must exceed -1")
    x, w = roots_jacobi(count, 0.0, p)
    half = 0.5 * T
    return half * (1.0 + x), w * half ** (p + 1.0)


@lru_cache(maxsize=1024)
def sphere_rule(n: int, p: float, count: int, even: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Unit directions and weights with sum w F(omega) ~ int_{S^{n-1}} F |omega_n|^p.

    For n = 2, ``count`` is the number of Gauss nodes per quarter arc. For
    n = 3, it is the number of latitude nodes per hemisphere and 4*count
    longitudes are used. With ``even`` only directions with omega_n > 0 are
    returned and their weights doubled, valid for integrands even in x_n.
    """
    th, w = gauss_jacobi_arc(math.pi / 2, count, p)
    w = w * _sinc_pow(th, p)
    if n == 2:
        # upper half circle: arcs measured from the right and the left crossing
        ang = np.concatenate([th, math.pi - th])
        wts = np.concatenate([w, w])
        if even:
            wts = 2.0 * wts
        else:
            ang = np.concatenate([ang, -ang])
            wts = np.concatenate([wts, wts])
        return _ro(np.stack([np.cos(ang), np.sin(ang)], axis=1)), _ro(wts)
    if n == 3:
        wb = w * np.cos(th)
        m = 4 * count
        phi = 2.0 * math.pi * np.arange(m) / m
        B, P = np.meshgrid(th, phi, indexing="ij")
        W = np.broadcast_to(wb[:, None] * (2.0 * math.pi / m), B.shape).ravel()
        dirs = np.stack([np.cos(B) * np.cos(P), np.cos(B) * np.sin(P), np.sin(B)], axis=-1).reshape(-1, 3)
        if even:
            return _ro(dirs), _ro(2.0 * W)
        low = dirs.copy()
        low[:, 2] *= -1.0
        return _ro(np.concatenate([dirs, low])), _ro(np.concatenate([W, W]))
    raise ValueError("only n = 2 and n = 3 are supported")


def _ro(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _quantise(count: int) -> int:
    """Round up to one of four values per octave so that cached rules are reused."""
    return int(math.ceil(2.0 ** (math.ceil(4.0 * math.log2(count) - 1e-9) / 4.0)))


def angular_count(n: int, r: float, h: float, density: float | None = None) -> int:
    """Nodes per quarter arc (n=2) or per hemisphere latitude (n=3)."""
    if n == 2:
        total = math.ceil((64.0 if density is None else density) * r / h)
        return _quantise(max(math.ceil(total / 4), 16))
    return _quantise(max(math.ceil((6.0 if density is None else density) * r / h), 8))


def unit_sphere_weight_integral(n: int, p: float) -> float:
    """int_{S^{n-1}} |omega_n|^p d omega in closed form."""
    if n == 2:
        return 2.0 * math.exp(math.lgamma(0.5) + math.lgamma((p + 1) / 2) - math.lgamma(p / 2 + 1))
    if n == 3:
        return 4.0 * math.pi / (p + 1)
    raise ValueError("only n = 2 and n = 3 are supported")
