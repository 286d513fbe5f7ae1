"""Independent reference computations used by the tests."""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import integrate
from scipy.special import beta


def enumerate_partitions(E, zero_tol: float = 1e-12, flux_tol: float = 1e-9):
    """Exhaustive search over the 3^k sign partitions of the free thin nodes.

    Each partition fixes u = 0 on Z and the flux on P/N; the resulting dense
    linear system is solved and the partition kept when it is KKT-feasible.
    Returns a list of (code, u_full, energy) for every feasible partition.
    """
    p = E.problem
    g = E.grid
    A = E.A.toarray()
    free = g.free
    thin = g.thin
    k = len(thin)
    if k > 12:
        raise ValueError(f"{k} thin nodes is too many for enumeration")
    pos = {node: i for i, node in enumerate(free)}
    tpos = np.array([pos[t] for t in thin])
    m = g.thin_mass[np.searchsorted(g.bottom_layer, thin)]
    Aff = A[np.ix_(free, free)]
    lift = A[free] @ E.dirichlet
    lam_p, lam_m = p.lam_plus, p.lam_minus
    scale = max(float(np.max(np.abs(E.dirichlet))), 1.0)
    found = []
    for code in itertools.product((-1, 0, 1), repeat=k):
        code = np.array(code)
        rhs = -lift.copy()
        rhs[tpos[code > 0]] -= m[code > 0] * lam_p
        rhs[tpos[code < 0]] += m[code < 0] * lam_m
        keep = np.ones(len(free), dtype=bool)
        keep[tpos[code == 0]] = False
        uf = np.zeros(len(free))
        uf[keep] = np.linalg.solve(Aff[np.ix_(keep, keep)], rhs[keep])
        u = E.dirichlet.copy()
        u[free] = uf
        ut = u[thin]
        flux = -(A @ u)[thin] / m
        ok = (
            np.all(ut[code > 0] > zero_tol * scale)
            and np.all(ut[code < 0] < -zero_tol * scale)
            and np.all(flux[code == 0] <= lam_p + flux_tol)
            and np.all(flux[code == 0] >= -lam_m - flux_tol)
        )
        if ok:
            found.append((code, u, energy(A, u, g, lam_p, lam_m)))
    return found


def energy(A, u, g, lam_p, lam_m) -> float:
    ub = u[g.bottom_layer]
    return float(u @ A @ u + 2.0 * np.dot(g.thin_mass, lam_p * np.maximum(ub, 0) + lam_m * np.maximum(-ub, 0)))


def sphere_x1sq_weight(n: int, a: float) -> float:
    """int_{S^{n-1}} x1^2 |x_n|^a dS via Beta functions (n=2) or adaptive quadrature (n=3)."""
    if n == 2:
        # 4 quarter arcs of cos^2 t sin^a t
        return 2.0 * beta(1.5, (a + 1.0) / 2.0)
    f = lambda phi, th: (math.sin(th) * math.cos(phi)) ** 2 * abs(math.cos(th)) ** a * math.sin(th)
    val, _ = integrate.dblquad(f, 0.0, math.pi / 2, 0.0, 2 * math.pi)
    return 2.0 * val


def thin_ball_abs_x1(n: int) -> float:
    """int_{B_1'} |x1| dx' over the unit ball of the thin space R^(n-1)."""
    if n == 2:
        return 1.0
    val, _ = integrate.dblquad(lambda r, t: abs(r * math.cos(t)) * r, 0.0, 2 * math.pi, 0.0, 1.0)
    return val


def linear_weiss_formula(n: int, a: float, M: float, lam: float, thin_coefficient: float = 4.0) -> float:
    """W(1, M x1) = coefficient lam c1 M + a c2 M^2, from the oracle constants."""
    return thin_coefficient * lam * thin_ball_abs_x1(n) * M + a * sphere_x1sq_weight(n, a) * M * M


def power_series(radii, exponent: float, c: float = 1.0, noise: float = 0.0, seed: int = 0):
    """Synthetic S_r = c r^exponent, optionally with multiplicative log-normal noise."""
    r = np.asarray(radii, dtype=float)
    rng = np.random.default_rng(seed)
    return c * r**exponent * np.exp(noise * rng.standard_normal(r.shape))
