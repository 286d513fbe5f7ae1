"""Discrete two-phase energy on the half-box.

    J_h(u) = u^T A u + 2 sum_i m_i (lam_plus u_i^+ + lam_minus u_i^-)

``A`` is a weighted graph Laplacian: horizontal links carry the exact moment of
x_n^a over the dual column of the node row, vertical links carry the exact
1-D conductance 1 / int z^-a dz of the cell. Stationarity reads

    -(A u)_i / m_i = f_i  in  F(u_i)

on thin nodes, with F(u) = {lam_plus} for u > 0, [-lam_minus, lam_plus] for
u = 0 and {-lam_minus} for u < 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np
import scipy.sparse as sp

from .grid import Field, Grid, GridSpec, build_grid

DATUM_FAMILIES = ("zero", "constant", "linear_xi", "one_phase_exact", "odd_x1", "file")


class ConfigError(ValueError):
    """Invalid problem or datum description; ``key`` names the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class Datum:
    family: str = "zero"
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in DATUM_FAMILIES:
            raise ConfigError(f"unknown datum family {self.family!r}", "datum.family")

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params)}


@dataclass(frozen=True)
class Problem:
    """One minimisation instance: weight exponent, flux levels, datum and mesh."""

    grid: GridSpec
    lam_plus: float = 1.0
    lam_minus: float = 1.0
    datum: Datum = field(default_factory=Datum)

    def __post_init__(self):
        if not (self.lam_plus > 0 and self.lam_minus > 0):
            key = "lam_plus" if not self.lam_plus > 0 else "lam_minus"
            raise ConfigError("lam_plus and lam_minus must be positive", key)

    @property
    def a(self) -> float:
        return self.grid.a

    @property
    def n(self) -> int:
        return self.grid.dimension

    @property
    def s(self) -> float:
        return 0.5 * (1.0 - self.a)

    @property
    def growth_exponent(self) -> float:
        return 1.0 - self.a

    @property
    def lam_max(self) -> float:
        return max(self.lam_plus, self.lam_minus)

    @property
    def scale(self) -> float:
        """Height of the one-phase profile lam_max/(1-a) x_n^(1-a) at x_n = L."""
        return self.lam_max * self.grid.extent ** (1.0 - self.a) / (1.0 - self.a)

    def with_datum(self, family: str, **params) -> "Problem":
        return Problem(self.grid, self.lam_plus, self.lam_minus, Datum(family, params))

    def with_grid(self, grid: GridSpec) -> "Problem":
        return Problem(grid, self.lam_plus, self.lam_minus, self.datum)

    @classmethod
    def from_dict(cls, d: dict) -> "Problem":
        """Inverse of ``to_dict``; missing entries take their defaults."""
        n = _get(d, "n", int, 2)
        if n not in (2, 3):
            raise ConfigError(f"dimension must be 2 or 3, got {n}", "n")
        a = _get(d, "a", float, 0.0)
        if not (np.isfinite(a) and abs(a) <= 0.9):
            raise ConfigError(f"a must lie in [-0.9, 0.9], got {a}", "a")
        g = d.get("grid", {})
        if not isinstance(g, dict):
            raise ConfigError("grid must be a mapping", "grid")
        cells = g.get("cells", 64)
        try:
            cells = (int(cells),) * n if np.isscalar(cells) else tuple(int(c) for c in cells)
        except (TypeError, ValueError):
            raise ConfigError(f"bad cell count {cells!r}", "grid.cells") from None
        if len(cells) != n or min(cells) < 4:
            raise ConfigError(f"need {n} cell counts >= 4, got {list(cells)}", "grid.cells")
        extent = _get(g, "extent", float, 1.0, "grid.")
        if not (np.isfinite(extent) and extent > 0):
            raise ConfigError("extent must be positive", "grid.extent")
        ratio = _get(g, "grading_ratio", float, 1.0, "grid.")
        if not 1.0 <= ratio <= 4.0:
            raise ConfigError("grading_ratio must lie in [1, 4]", "grid.grading_ratio")
        dd = d.get("datum", {})
        if not isinstance(dd, dict):
            raise ConfigError("datum must be a mapping", "datum")
        params = dd.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError("datum params must be a mapping", "datum.params")
        datum = Datum(str(dd.get("family", "zero")), dict(params))
        spec = GridSpec(n, cells, a, extent, ratio)
        return cls(spec, _get(d, "lam_plus", float, 1.0), _get(d, "lam_minus", float, 1.0), datum)

    def to_dict(self) -> dict:
        g = self.grid
        return {
            "a": g.a,
            "n": g.dimension,
            "lam_plus": self.lam_plus,
            "lam_minus": self.lam_minus,
            "grid": {
                "cells": list(g.cells_per_axis),
                "extent": g.extent,
                "grading_ratio": g.grading_ratio,
            },
            "datum": self.datum.to_dict(),
        }


def _get(d: dict, key: str, kind, default, prefix: str = ""):
    v = d.get(key, default)
    try:
        return kind(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{prefix}{key} has invalid value {v!r}", prefix + key) from None


def one_phase_profile(x: np.ndarray, a: float, lam_plus: float) -> np.ndarray:
    """lam_plus/(1-a) |x_n|^(1-a) evaluated at the rows of ``x``."""
    return lam_plus / (1.0 - a) * np.abs(x[:, -1]) ** (1.0 - a)


def sample_datum(p: Problem, x: np.ndarray) -> np.ndarray:
    """Evaluate the boundary datum of ``p`` at the rows of ``x``."""
    d = p.datum
    prm = d.params
    try:
        if d.family == "zero":
            return np.zeros(len(x))
        if d.family == "constant":
            return np.full(len(x), float(prm.get("c", prm.get("value", 0.0))))
        if d.family == "linear_xi":
            i = int(prm.get("i", 1))
            if not 1 <= i <= p.n - 1:
                raise ConfigError(f"linear_xi needs 1 <= i <= {p.n - 1}, got {i}", "datum.params.i")
            return float(prm["M"]) * x[:, i - 1]
        if d.family == "odd_x1":
            return float(prm["M"]) * x[:, 0]
        if d.family == "one_phase_exact":
            return one_phase_profile(x, p.a, p.lam_plus)
    except KeyError as exc:
        raise ConfigError(f"datum {d.family!r} is missing parameter {exc.args[0]!r}",
                          f"datum.params.{exc.args[0]}") from None
    raise ConfigError(f"datum family {d.family!r} cannot be sampled pointwise")


def _links(g: Grid):
    """Return (i, j, kappa) arrays for every mesh link."""
    idx = np.arange(g.num_nodes).reshape(g.shape)
    n = g.n
    I, J, K = [], [], []
    widths = g.dual_widths
    for d in range(n):
        lo = [slice(None)] * n
        hi = [slice(None)] * n
        lo[d] = slice(0, -1)
        hi[d] = slice(1, None)
        factors = []
        for e in range(n - 1):
            if e == d:
                factors.append(1.0 / np.diff(g.axes[e]))
            else:
                factors.append(widths[e])
        if d == n - 1:
            factors.append(g.vertical_conductance)
        else:
            factors.append(g.column_moments)
        kappa = factors[0]
        for f in factors[1:]:
            kappa = np.multiply.outer(kappa, f)
        I.append(idx[tuple(lo)].ravel())
        J.append(idx[tuple(hi)].ravel())
        K.append(np.broadcast_to(kappa, idx[tuple(lo)].shape).ravel())
    return np.concatenate(I), np.concatenate(J), np.concatenate(K)


def stiffness_matrix(g: Grid) -> sp.csr_matrix:
    """Symmetric weighted Laplacian with u^T A u = sum over links kappa (du)^2."""
    i, j, k = _links(g)
    N = g.num_nodes
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    vals = np.concatenate([k, k, -k, -k])
    return sp.csr_matrix((vals, (rows, cols)), shape=(N, N))


@dataclass(frozen=True, eq=False)
class DiscreteEnergy:
    problem: Problem
    grid: Grid
    A: sp.csr_matrix = field(repr=False)
    dirichlet: np.ndarray = field(repr=False)

    @property
    def free(self) -> np.ndarray:
        return self.grid.free

    @property
    def thin(self) -> np.ndarray:
        return self.grid.thin

    @cached_property
    def thin_mass(self) -> np.ndarray:
        """m_i for the free thin nodes, aligned with ``grid.thin``."""
        pos = np.searchsorted(self.grid.bottom_layer, self.grid.thin)
        return self.grid.thin_mass[pos]

    @cached_property
    def thin_in_free(self) -> np.ndarray:
        """Positions of the thin nodes inside the free-node vector."""
        return np.searchsorted(self.grid.free, self.grid.thin)

    @cached_property
    def A_ff(self) -> sp.csr_matrix:
        f = self.free
        return self.A[f][:, f].tocsr()

    @cached_property
    def lift(self) -> np.ndarray:
        """(A g)_free for the Dirichlet lifting g (zero on free nodes)."""
        return (self.A @ self.dirichlet)[self.free]

    def full(self, u_free: np.ndarray) -> np.ndarray:
        u = self.dirichlet.copy()
        u[self.free] = u_free
        return u

    def field(self, u_free: np.ndarray) -> Field:
        return Field(self.grid, self.full(u_free))


def assemble(p: Problem, g: Grid | None = None) -> DiscreteEnergy:
    if g is None:
        g = build_grid(p.grid)
    elif g.spec != p.grid:
        raise ConfigError("grid was not built from the problem's GridSpec")
    bnd = g.boundary
    vals = np.zeros(g.num_nodes)
    if p.datum.family == "file":
        from .io import read_field

        path = p.datum.params.get("path")
        if path is None:
            raise ConfigError("datum 'file' is missing parameter 'path'", "datum.params.path")
        src = read_field(path)
        if src.grid.spec != g.spec:
            raise ConfigError("datum file grid does not match the problem grid", "datum.params.path")
        vals[bnd] = src.values[bnd]
    else:
        vals[bnd] = sample_datum(p, g.coords[bnd])
    vals.setflags(write=False)
    return DiscreteEnergy(p, g, stiffness_matrix(g), vals)


def _values(E: DiscreteEnergy, u) -> np.ndarray:
    return u.values if isinstance(u, Field) else np.asarray(u, dtype=float)


def thin_penalty(E: DiscreteEnergy, u_bottom: np.ndarray) -> float:
    p = E.problem
    psi = p.lam_plus * np.maximum(u_bottom, 0.0) + p.lam_minus * np.maximum(-u_bottom, 0.0)
    return float(2.0 * np.dot(E.grid.thin_mass, psi))


def energy_value(E: DiscreteEnergy, u) -> float:
    """u^T A u + 2 sum m_i (lam_plus u_i^+ + lam_minus u_i^-) over the whole thin layer."""
    v = _values(E, u)
    return float(v @ (E.A @ v)) + thin_penalty(E, v[E.grid.bottom_layer])


def quadratic_value(E: DiscreteEnergy, u) -> float:
    v = _values(E, u)
    return float(v @ (E.A @ v))


def gradient_smooth(E: DiscreteEnergy, u) -> np.ndarray:
    """Gradient of u^T A u with respect to the free nodes, i.e. 2 (A u)_free."""
    v = _values(E, u)
    return 2.0 * (E.A @ v)[E.free]


def prox_thin(v, step, lam_plus, lam_minus, m):
    """argmin_z 1/2 (z - v)^2 + step m (lam_plus z^+ + lam_minus z^-), vectorised."""
    v = np.asarray(v, dtype=float)
    tp = np.asarray(step * m * lam_plus, dtype=float)
    tm = np.asarray(step * m * lam_minus, dtype=float)
    out = np.where(v > tp, v - tp, np.where(v < -tm, v + tm, 0.0))
    return float(out) if out.ndim == 0 else out


def inclusion_distance(f, u, lam_plus, lam_minus, zero_tol: float = 0.0):
    """Distance of the flux f to the graph value F(u), nodewise."""
    f = np.asarray(f, dtype=float)
    u = np.asarray(u, dtype=float)
    pos = np.abs(f - lam_plus)
    neg = np.abs(f + lam_minus)
    mid = np.maximum(np.maximum(f - lam_plus, -lam_minus - f), 0.0)
    return np.where(u > zero_tol, pos, np.where(u < -zero_tol, neg, mid))


@dataclass(frozen=True)
class FluxVector:
    """Per-thin-node flux f_i and its distance to F(u_i)."""

    nodes: np.ndarray
    u: np.ndarray
    flux: np.ndarray
    residual: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual)) if self.residual.size else 0.0


def thin_flux(E: DiscreteEnergy, u) -> np.ndarray:
    """f_i = -(A u)_i / m_i on the free thin nodes (limit of x_n^a du/dx_n)."""
    v = _values(E, u)
    return -(E.A @ v)[E.thin] / E.thin_mass


def flux_residual(E: DiscreteEnergy, u, zero_tol: float = 0.0) -> FluxVector:
    v = _values(E, u)
    f = thin_flux(E, v)
    ut = v[E.thin]
    p = E.problem
    r = inclusion_distance(f, ut, p.lam_plus, p.lam_minus, zero_tol)
    return FluxVector(E.thin.copy(), ut, f, r)


def interior_residual(E: DiscreteEnergy, u) -> float:
    """max |(A u)_i| / (A_ii max(|u|_inf, |g|_inf)) over interior nodes."""
    v = _values(E, u)
    r = (E.A @ v)[E.grid.interior]
    d = E.A.diagonal()[E.grid.interior]
    scale = max(np.max(np.abs(v)), 1e-300)
    return float(np.max(np.abs(r) / d) / scale) if r.size else 0.0
