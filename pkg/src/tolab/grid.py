"""Tensor-product meshes of the half-box [-L, L]^(n-1) x [0, L].

Nodes are stored row-major with the vertical coordinate x_n varying fastest.
All integrals of the degenerate weight x_n^a are taken in closed form, so cells
touching the thin space {x_n = 0} never sample 0^a.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

A_CAP = 0.9


class OutOfDomainError(ValueError):
    """Raised when a query point lies outside the closed half-box."""


def weight_moment(x_lo, x_hi, a: float):
    """Return the exact integral of t^a over [x_lo, x_hi].

    Vectorised over the endpoints. Requires 0 <= x_lo < x_hi and -1 < a < 1.
    """
    lo = np.asarray(x_lo, dtype=float)
    hi = np.asarray(x_hi, dtype=float)
    if not -1.0 < a < 1.0:
        raise ValueError(f"weight exponent must lie in (-1, 1), got {a}")
    if np.any(lo < 0.0) or np.any(hi <= lo):
        raise ValueError("weight_moment needs 0 <= x_lo < x_hi")
    out = (hi ** (1.0 + a) - lo ** (1.0 + a)) / (1.0 + a)
    return float(out) if out.ndim == 0 else out


def harmonic_conductance(z_lo, z_hi, a: float):
    """Reciprocal of the integral of t^-a over [z_lo, z_hi].

    This is the exact 1-D conductance of the weight t^a: a two-node link with
    this coefficient reproduces c0 + c1 t^(1-a) without error.
    """
    lo = np.asarray(z_lo, dtype=float)
    hi = np.asarray(z_hi, dtype=float)
    b = 1.0 - a
    return b / (hi**b - lo**b)


@dataclass(frozen=True)
class GridSpec:
    """Parameters of a half-box mesh.

    ``cells_per_axis`` lists the horizontal axes first and x_n last. The
    grading ratio is the size ratio of the top vertical cell to the bottom one.
    """

    dimension: int = 2
    cells_per_axis: tuple[int, ...] = (64, 64)
    a: float = 0.0
    extent: float = 1.0
    grading_ratio: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "cells_per_axis", tuple(int(k) for k in self.cells_per_axis))
        if self.dimension not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dimension}")
        if len(self.cells_per_axis) != self.dimension:
            raise ValueError("cells_per_axis needs one entry per axis")
        if min(self.cells_per_axis) < 4:
            raise ValueError("at least 4 cells per axis are required")
        if not math.isfinite(self.extent) or self.extent <= 0.0:
            raise ValueError(f"extent must be finite and positive, got {self.extent}")
        if not math.isfinite(self.a) or abs(self.a) > A_CAP:
            raise ValueError(f"|a| must not exceed {A_CAP}, got {self.a}")
        if not 1.0 <= self.grading_ratio <= 4.0:
            raise ValueError("grading_ratio must lie in [1, 4]")

    @classmethod
    def square(cls, n: int, cells: int, a: float, extent: float = 1.0, grading_ratio: float = 1.0):
        return cls(n, (cells,) * n, a, extent, grading_ratio)

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(
            self.dimension,
            tuple(k * factor for k in self.cells_per_axis),
            self.a,
            self.extent,
            self.grading_ratio,
        )


def _vertical_nodes(k: int, L: float, ratio: float) -> np.ndarray:
    if ratio == 1.0:
        return np.linspace(0.0, L, k + 1)
    sizes = ratio ** (np.arange(k) / (k - 1))
    z = np.concatenate([[0.0], np.cumsum(sizes)])
    return L * z / z[-1]


def _dual_bounds(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mid = 0.5 * (x[1:] + x[:-1])
    return np.concatenate([[x[0]], mid]), np.concatenate([mid, [x[-1]]])


def _outer(factors: Sequence[np.ndarray]) -> np.ndarray:
    out = np.asarray(factors[0], dtype=float)
    for f in factors[1:]:
        out = np.multiply.outer(out, f)
    return out


@dataclass(frozen=True, eq=False)
class Grid:
    """Half-box mesh with exact weight moments and node index sets.

    ``interior`` are nodes off both the outer boundary and the thin space,
    ``boundary`` are outer-boundary nodes (Dirichlet), and ``thin`` are nodes
    on {x_n = 0} that are not on the outer boundary. The three sets partition
    all nodes.
    """

    spec: GridSpec
    axes: tuple[np.ndarray, ...]

    @classmethod
    def build(cls, spec: GridSpec) -> "Grid":
        L = spec.extent
        axes = [np.linspace(-L, L, k + 1) for k in spec.cells_per_axis[:-1]]
        axes.append(_vertical_nodes(spec.cells_per_axis[-1], L, spec.grading_ratio))
        for ax in axes:
            ax.setflags(write=False)
        return cls(spec, tuple(axes))

    @property
    def n(self) -> int:
        return self.spec.dimension

    @property
    def a(self) -> float:
        return self.spec.a

    @property
    def extent(self) -> float:
        return self.spec.extent

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(ax) for ax in self.axes)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def h(self) -> float:
        """Largest cell edge of the mesh."""
        return float(max(np.max(np.diff(ax)) for ax in self.axes))

    @cached_property
    def h_min(self) -> float:
        return float(min(np.min(np.diff(ax)) for ax in self.axes))

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape (num_nodes, n)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    # -- weight moments -------------------------------------------------

    @cached_property
    def cell_moments(self) -> np.ndarray:
        """w_cell = integral of x_n^a over each cell, shape = cells_per_axis."""
        factors = [np.diff(ax) for ax in self.axes[:-1]]
        z = self.axes[-1]
        factors.append(weight_moment(z[:-1], z[1:], self.a))
        return _outer(factors)

    @cached_property
    def dual_widths(self) -> tuple[np.ndarray, ...]:
        out = []
        for ax in self.axes[:-1]:
            lo, hi = _dual_bounds(ax)
            out.append(hi - lo)
        return tuple(out)

    @cached_property
    def column_moments(self) -> np.ndarray:
        """Weight moment of the dual vertical interval around each node row."""
        lo, hi = _dual_bounds(self.axes[-1])
        return weight_moment(lo, hi, self.a)

    @cached_property
    def vertical_conductance(self) -> np.ndarray:
        z = self.axes[-1]
        return harmonic_conductance(z[:-1], z[1:], self.a)

    @cached_property
    def face_moments(self) -> np.ndarray:
        """Weight moment of the column under each vertical link, per unit cross-section."""
        z = self.axes[-1]
        return weight_moment(z[:-1], z[1:], self.a)

    @cached_property
    def thin_area(self) -> np.ndarray:
        """Dual area of every node of the bottom layer, shape = horizontal node shape."""
        return _outer(self.dual_widths) if self.n > 1 else np.ones(1)

    # -- index sets -----------------------------------------------------

    @cached_property
    def _node_kind(self) -> np.ndarray:
        kind = np.zeros(self.shape, dtype=np.int8)
        bottom = [slice(None)] * (self.n - 1) + [0]
        kind[tuple(bottom)] = 2
        for d in range(self.n - 1):
            for end in (0, -1):
                idx = [slice(None)] * self.n
                idx[d] = end
                kind[tuple(idx)] = 1
        top = [slice(None)] * (self.n - 1) + [-1]
        kind[tuple(top)] = 1
        return kind.ravel()

    @cached_property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(self._node_kind == 0)

    @cached_property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self._node_kind == 1)

    @cached_property
    def thin(self) -> np.ndarray:
        return np.flatnonzero(self._node_kind == 2)

    @cached_property
    def free(self) -> np.ndarray:
        return np.flatnonzero(self._node_kind != 1)

    @cached_property
    def bottom_layer(self) -> np.ndarray:
        """All nodes on {x_n = 0}, outer-boundary ones included, in row-major order."""
        idx = np.arange(self.num_nodes).reshape(self.shape)
        return idx[..., 0].ravel()

    @cached_property
    def thin_mass(self) -> np.ndarray:
        """Surface measure m_i of the nodes in ``bottom_layer``."""
        return self.thin_area.ravel().copy()

    def distance_to_outer_boundary(self, x) -> float:
        x = np.asarray(x, dtype=float)
        L = self.extent
        d = [L - abs(x[k]) for k in range(self.n - 1)]
        d.append(L - abs(x[-1]))
        return float(min(d))

    def contains(self, pts, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(pts)
        L = self.extent
        ok = np.all(np.abs(pts[:, :-1]) <= L * (1 + tol), axis=1)
        return ok & (pts[:, -1] >= -L * tol) & (pts[:, -1] <= L * (1 + tol))


def build_grid(spec: GridSpec) -> Grid:
    return Grid.build(spec)


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal values on a Grid."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel().copy()
        if v.size != self.grid.num_nodes:
            raise ValueError(f"expected {self.grid.num_nodes} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid, fun: Callable[[np.ndarray], np.ndarray]) -> "Field":
        return cls(grid, fun(grid.coords))

    @property
    def array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    @property
    def thin_trace(self) -> np.ndarray:
        return self.values[self.grid.bottom_layer]

    def __call__(self, pts, mode: str = "multilinear"):
        return interpolate(self, pts, mode=mode)


# -- interpolation ---------------------------------------------------------


def _axis_weights(coord: np.ndarray, x: np.ndarray):
    k = len(coord) - 1
    i = np.clip(np.searchsorted(coord, x, side="right") - 1, 0, k - 1)
    dx = coord[i + 1] - coord[i]
    t = (x - coord[i]) / dx
    return i, t, dx


class Evaluator:
    """Vectorised point evaluation of a Field on its half-box.

    ``mode="multilinear"`` is plain tensor-product linear interpolation.
    ``mode="weighted"`` interpolates linearly in zeta = x_n^(1-a) along the
    vertical axis, which reproduces c0 + c1 x_n^(1-a) exactly and resolves the
    x_n^-a blow-up of the vertical derivative for a > 0.
    """

    def __init__(self, f: Field, mode: str = "multilinear"):
        if mode not in ("multilinear", "weighted"):
            raise ValueError(f"unknown interpolation mode {mode!r}")
        self.field = f
        self.grid = f.grid
        self.mode = mode
        self.beta = 1.0 - self.grid.a if mode == "weighted" else 1.0
        ax = list(self.grid.axes)
        ax[-1] = ax[-1] ** self.beta
        self._axes = ax
        self._vals = f.array

    def _check(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if pts.shape[1] != self.grid.n:
            raise ValueError("point dimension does not match the grid")
        if not np.all(self.grid.contains(pts)):
            raise OutOfDomainError("query point outside the half-box")
        return pts

    def _locate(self, pts):
        n = self.grid.n
        L = self.grid.extent
        q = np.clip(pts, [-L] * (n - 1) + [0.0], [L] * n)
        q[:, -1] = q[:, -1] ** self.beta
        return [_axis_weights(self._axes[d], q[:, d]) for d in range(n)]

    def _interp(self, arr: np.ndarray, loc) -> np.ndarray:
        out = np.zeros(len(loc[0][0]))
        for corner in np.ndindex(*(2,) * self.grid.n):
            idx = tuple(loc[d][0] + corner[d] for d in range(self.grid.n))
            w = np.ones(len(out))
            for d, c in enumerate(corner):
                t = loc[d][1]
                w *= t if c else 1.0 - t
            out += w * arr[idx]
        return out

    def values(self, pts) -> np.ndarray:
        pts = self._check(pts)
        return self._interp(self._vals, self._locate(pts))

    def gradients(self, pts) -> np.ndarray:
        """Partial derivatives in x' and, in the last column, d/dzeta.

        For ``mode="multilinear"`` zeta = x_n so the last column is the plain
        vertical derivative.
        """
        pts = self._check(pts)
        n = self.grid.n
        loc = self._locate(pts)
        out = np.zeros((len(pts), n))
        for corner in np.ndindex(*(2,) * n):
            idx = tuple(loc[d][0] + corner[d] for d in range(n))
            v = self._vals[idx]
            for g in range(n):
                w = np.ones(len(pts))
                for d, c in enumerate(corner):
                    t, dx = loc[d][1], loc[d][2]
                    if d == g:
                        w *= (1.0 / dx) if c else (-1.0 / dx)
                    else:
                        w *= t if c else 1.0 - t
                out[:, g] += w * v
        return out

    def recovered_gradients(self, pts) -> np.ndarray:
        """Like ``gradients`` but from nodal second-order differences, interpolated.

        The nodal derivatives are exact for quadratics in (x', zeta), so the
        reconstructed gradient is second-order accurate where the field is
        smooth, against first order for the derivative of the interpolant.
        """
        if not hasattr(self, "_nodal_grad"):
            self._nodal_grad = np.gradient(self._vals, *self._axes, edge_order=2)
        pts = self._check(pts)
        loc = self._locate(pts)
        return np.stack([self._interp(gd, loc) for gd in self._nodal_grad], axis=1)


def interpolate(f: Field, p, mode: str = "multilinear"):
    """Interpolate ``f`` at one point (returns float) or an (m, n) array of points."""
    arr = np.asarray(p, dtype=float)
    vals = Evaluator(f, mode).values(arr)
    return float(vals[0]) if arr.ndim == 1 else vals


def reflect_even(f: Field, mode: str = "multilinear") -> Callable:
    """Even extension across {x_n = 0}: e(x', x_n) = f(x', |x_n|)."""
    ev = Evaluator(f, mode)

    def e(p):
        arr = np.asarray(p, dtype=float)
        q = np.atleast_2d(arr).copy()
        q[:, -1] = np.abs(q[:, -1])
        vals = ev.values(q)
        return float(vals[0]) if arr.ndim == 1 else vals

    return e
