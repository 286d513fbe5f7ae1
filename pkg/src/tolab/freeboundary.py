"""Phase classification of thin traces and the derived free-boundary quantities.

Phases are classified on the whole bottom layer of the grid (outer-boundary
thin nodes included), and free boundaries are thin-grid edges whose endpoints
differ in membership.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Field, Grid


def default_tol_fb(grid: Grid, kkt_tol: float = 1e-8, lam_max: float = 1.0) -> float:
    return max(10.0 * kkt_tol * lam_max, 0.05 * grid.h ** (1.0 - grid.a))


def _thin_edges(grid: Grid) -> np.ndarray:
    """(k, 2) array of bottom-layer position pairs joined by a thin-grid edge."""
    shape = grid.shape[:-1]
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    out = []
    for d in range(len(shape)):
        lo = [slice(None)] * len(shape)
        hi = [slice(None)] * len(shape)
        lo[d] = slice(0, -1)
        hi[d] = slice(1, None)
        out.append(np.stack([idx[tuple(lo)].ravel(), idx[tuple(hi)].ravel()], axis=1))
    return np.concatenate(out)


@dataclass
class PhaseSets:
    """Index sets refer to positions in ``grid.bottom_layer``."""

    grid: Grid
    tol_fb: float
    omega_plus: np.ndarray
    omega_minus: np.ndarray
    zero: np.ndarray
    gamma_plus: np.ndarray
    gamma_minus: np.ndarray

    def _mid(self, edges: np.ndarray) -> np.ndarray:
        x = self.grid.coords[self.grid.bottom_layer][:, :-1]
        if len(edges) == 0:
            return np.zeros((0, x.shape[1]))
        return 0.5 * (x[edges[:, 0]] + x[edges[:, 1]])

    @property
    def gamma_plus_midpoints(self) -> np.ndarray:
        return self._mid(self.gamma_plus)

    @property
    def gamma_minus_midpoints(self) -> np.ndarray:
        return self._mid(self.gamma_minus)

    def to_dict(self) -> dict:
        sep = separation_distance(self)
        return {
            "tol_fb": self.tol_fb,
            "omega_plus": self.omega_plus.tolist(),
            "omega_minus": self.omega_minus.tolist(),
            "zero": self.zero.tolist(),
            "gamma_plus": self.gamma_plus.tolist(),
            "gamma_minus": self.gamma_minus.tolist(),
            "separation": sep if math.isfinite(sep) else "inf",
        }


def extract_phases(u: Field, tol_fb: float) -> PhaseSets:
    if tol_fb <= 0:
        raise ValueError("tol_fb must be positive")
    t = u.thin_trace
    plus = t > tol_fb
    minus = t < -tol_fb
    edges = _thin_edges(u.grid)
    gp = edges[plus[edges[:, 0]] != plus[edges[:, 1]]]
    gm = edges[minus[edges[:, 0]] != minus[edges[:, 1]]]
    return PhaseSets(
        u.grid,
        tol_fb,
        np.flatnonzero(plus),
        np.flatnonzero(minus),
        np.flatnonzero(~plus & ~minus),
        gp,
        gm,
    )


def separation_distance(ps: PhaseSets) -> float:
    """Smallest distance between Gamma+ and Gamma- edge midpoints (inf if one is empty)."""
    a, b = ps.gamma_plus_midpoints, ps.gamma_minus_midpoints
    if len(a) == 0 or len(b) == 0:
        return math.inf
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    return float(np.min(d))


def coincidence_radius(u: Field, tol_fb: float, center=None) -> float:
    """Largest rho with |u| <= tol_fb at every thin node with |x' - center| <= rho.

    Capped at the thin half-extent L; 0 if the node nearest the centre already
    leaves the coincidence set.
    """
    g = u.grid
    x = g.coords[g.bottom_layer][:, :-1]
    c = np.zeros(g.n - 1) if center is None else np.asarray(center, dtype=float)
    r = np.linalg.norm(x - c, axis=1)
    bad = np.abs(u.thin_trace) > tol_fb
    L = g.extent
    if not np.any(bad):
        return L
    r_bad = float(np.min(r[bad]))
    good = r[(~bad) & (r < r_bad)]
    if good.size == 0:
        return 0.0
    return float(min(np.max(good), L))


def free_boundary_points(ps: PhaseSets, which: str = "both") -> np.ndarray:
    """Gamma edge midpoints snapped to the nearest thin node (x' coordinates, unique)."""
    mids = []
    if which in ("plus", "both"):
        mids.append(ps.gamma_plus_midpoints)
    if which in ("minus", "both"):
        mids.append(ps.gamma_minus_midpoints)
    m = np.concatenate(mids) if mids else np.zeros((0, ps.grid.n - 1))
    if len(m) == 0:
        return m
    x = ps.grid.coords[ps.grid.bottom_layer][:, :-1]
    near = np.argmin(np.linalg.norm(m[:, None, :] - x[None, :, :], axis=-1), axis=1)
    return x[np.unique(near)]


def radial_monotonicity_defect(u: Field, tol_fb: float, center=None) -> float:
    """For constant data: how far Z-membership along rays from the centre fails to be monotone.

    Returns the largest distance by which a Z node lies beyond a non-Z node
    closer to the centre on the same thin axis ray (0 when monotone).
    """
    g = u.grid
    x = g.coords[g.bottom_layer][:, :-1]
    c = np.zeros(g.n - 1) if center is None else np.asarray(center, dtype=float)
    z = np.abs(u.thin_trace) <= tol_fb
    worst = 0.0
    for d in range(g.n - 1):
        on_axis = np.all(np.delete(np.abs(x - c), d, axis=1) < 1e-12, axis=1)
        for sgn in (1.0, -1.0):
            ray = on_axis & (sgn * (x[:, d] - c[d]) >= -1e-12)
            order = np.argsort(np.abs(x[ray, d] - c[d]))
            dist = np.abs(x[ray, d] - c[d])[order]
            zr = z[ray][order]
            nonz = np.flatnonzero(~zr)
            if nonz.size == 0:
                continue
            first = dist[nonz[0]]
            beyond = dist[zr & (dist > first)]
            if beyond.size:
                worst = max(worst, float(np.max(beyond) - first))
    return worst


def radial_trace_defect(u: Field, center=None) -> float:
    """Largest amount by which the thin trace drops below its values one cell closer to the centre.

    Only nodes inside the inscribed thin disc around the centre are used. A
    trace nondecreasing in |x' - center| up to one cell gives 0.
    """
    g = u.grid
    x = g.coords[g.bottom_layer][:, :-1]
    c = np.zeros(g.n - 1) if center is None else np.asarray(center, dtype=float)
    r = np.linalg.norm(x - c, axis=1)
    keep = r <= g.extent - float(np.max(np.abs(c))) + 1e-12
    r, t = r[keep], u.thin_trace[keep]
    order = np.argsort(r, kind="stable")
    r, t = r[order], t[order]
    run = np.maximum.accumulate(t)
    cell = float(np.max(np.diff(g.axes[0])))
    k = np.searchsorted(r, r - cell * (1 + 1e-9), side="right")
    inner = np.where(k > 0, run[np.maximum(k - 1, 0)], -np.inf)
    return float(max(np.max(inner - t), 0.0))
