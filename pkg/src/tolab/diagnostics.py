"""Monotonicity functionals, growth series and blow-up fits on solved fields.

All ball integrals are over full balls B_r(x0) centred at a thin point, using
the even reflection of the field across {x_n = 0}. Volume integrals are
assembled from spherical shells with radial step h/2; both the angular and the
radial rules integrate the singular weight powers exactly (see quadrature).
Gradients are recovered from nodal second-order differences and interpolated
in the same way as the values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .grid import Evaluator, Field, Grid, GridSpec, build_grid
from .quadrature import angular_count, product_trapezoid, sphere_rule


class DiagnosticError(ValueError):
    pass


class RadiusError(DiagnosticError):
    pass


class UndefinedFrequencyError(DiagnosticError):
    pass


class InapplicableError(DiagnosticError):
    """The functional is not defined for this input (e.g. ACF with a != 0)."""


@dataclass
class RadialSeries:
    name: str
    center: np.ndarray
    radii: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.radii = np.asarray(self.radii, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.radii.shape != self.values.shape:
            raise ValueError("radii and values differ in length")
        if np.any(np.diff(self.radii) <= 0):
            raise ValueError("radii must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.name}: non-finite values")

    def to_csv(self, path) -> Path:
        pts = self.metadata.get("quadrature_points", [0] * len(self.radii))
        head = [
            f"# functional={self.name}",
            "# center=" + " ".join(repr(float(c)) for c in self.center),
        ]
        for k, v in sorted(self.metadata.items()):
            if k != "quadrature_points":
                head.append(f"# {k}={v}")
        rows = ["r,value,quadrature_points"]
        rows += [f"{r!r},{v!r},{int(q)}" for r, v, q in zip(self.radii.tolist(), self.values.tolist(), pts)]
        path = Path(path)
        path.write_text("\n".join(head + rows) + "\n")
        return path

    def violation(self) -> float:
        return monotonicity_violation(self.values)


def monotonicity_violation(values) -> float:
    """Largest drop v_i - v_j over i < j (0 for a nondecreasing sequence)."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    run = np.maximum.accumulate(v)
    return float(max(np.max(run - v), 0.0))


def delta_mono(series: RadialSeries) -> float:
    return 1e-2 * (1.0 + abs(float(series.values[-1])))


# -- quadrature over balls centred on the thin space -------------------------


def _as_point(grid_or_n, x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float).ravel()
    n = grid_or_n if isinstance(grid_or_n, int) else grid_or_n.n
    if x0.size == n - 1:
        x0 = np.append(x0, 0.0)
    if x0.size != n or abs(x0[-1]) > 0:
        raise DiagnosticError("centre must be a thin point (x_n = 0)")
    return x0


def _check_ball(grid: Grid, x0: np.ndarray, r: float):
    if r > grid.distance_to_outer_boundary(x0) * (1 + 1e-12):
        raise RadiusError(f"ball of radius {r} around {x0.tolist()} exits the box")


def sphere_quadrature(
    f: Callable,
    center,
    r: float,
    weight_power: float = 0.0,
    h: float = 1.0 / 64,
    grid: Grid | None = None,
    even: bool = False,
    density: float | None = None,
) -> float:
    """int_{dB_r(center)} f |x_n|^weight_power dS for f evaluated on the full box.

    With ``even`` the integrand is assumed even in x_n and only the upper
    half-sphere is sampled.
    """
    c = np.asarray(center, dtype=float)
    n = c.size
    if grid is not None:
        _check_ball(grid, c, r)
        h = grid.h
    cnt = angular_count(n, r, h, density)
    dirs, w = sphere_rule(n, float(weight_power), cnt, even)
    vals = np.asarray(f(c + r * dirs), dtype=float)
    return float(r ** (n - 1 + weight_power) * np.dot(w, vals))


class BallQuadrature:
    """Shell-based integrals over B_r(x0) of even integrands on a Grid."""

    def __init__(self, grid: Grid, x0, density: float | None = None):
        self.grid = grid
        self.n = grid.n
        self.x0 = _as_point(grid, x0)
        self.h = grid.h
        self.density = density

    def check(self, r: float):
        if r < 4.0 * self.h * (1 - 1e-12):
            raise RadiusError(f"radius {r} is below 4h = {4 * self.h}")
        _check_ball(self.grid, self.x0, r)

    def shell_points(self, rho: float, p: float):
        cnt = angular_count(self.n, max(rho, self.h), self.h, self.density)
        dirs, w = sphere_rule(self.n, float(p), cnt, True)
        pts = self.x0 + rho * dirs
        pts[:, -1] = np.abs(pts[:, -1])
        return pts, w

    def sphere(self, F: Callable, r: float, p: float) -> tuple[float, int]:
        pts, w = self.shell_points(r, p)
        return float(r ** (self.n - 1 + p) * np.dot(w, F(pts))), len(w)

    def volume(self, F: Callable, r: float, p: float, kernel: float = 0.0) -> tuple[float, int]:
        """int_{B_r} F |x_n|^p |x - x0|^-kernel dx via shells of step <= h/2."""
        K = max(math.ceil(r / (0.5 * self.h)), 4)
        rho, wr = product_trapezoid(r, K, self.n - 1 + p - kernel)
        pts, idx, wts = [], [], []
        for k, rk in enumerate(rho):
            pk, wk = self.shell_points(rk, p)
            pts.append(pk)
            wts.append(wk * wr[k])
        P = np.concatenate(pts)
        W = np.concatenate(wts)
        return float(np.dot(W, F(P))), len(W)

    def thin(self, F: Callable, r: float) -> float:
        """int_{B_r'} F dx' over the thin ball, F evaluated at points with x_n = 0."""
        if self.n == 2:
            m = max(math.ceil(16 * r / self.h), 32)
            t = np.linspace(-r, r, 2 * m + 1)
            pts = np.stack([self.x0[0] + t, np.zeros_like(t)], axis=1)
            return float(np.trapezoid(F(pts), t))
        K = max(math.ceil(r / (0.25 * self.h)), 8)
        rho, wr = product_trapezoid(r, K, 1.0)
        total = 0.0
        for k, rk in enumerate(rho):
            m = max(math.ceil(32 * rk / self.h), 32)
            phi = 2 * math.pi * np.arange(m) / m
            pts = np.stack([self.x0[0] + rk * np.cos(phi), self.x0[1] + rk * np.sin(phi), np.zeros(m)], axis=1)
            total += wr[k] * (2 * math.pi / m) * float(np.sum(F(pts)))
        return total


class _FieldTerms:
    """Pointwise pieces of |grad u|^2 |x_n|^a.

    Gradients come from nodal second-order differences (``recovered``) or
    from the derivative of the interpolant itself.
    """

    def __init__(self, u: Field, mode: str = "weighted", recovered: bool = True):
        self.ev = Evaluator(u, mode)
        self.a = u.grid.a
        self.beta = self.ev.beta
        self._grad = self.ev.recovered_gradients if recovered else self.ev.gradients

    def value(self, pts):
        return self.ev.values(pts)

    def tangential_sq(self, pts):
        g = self._grad(pts)
        return np.sum(g[:, :-1] ** 2, axis=1)

    def normal_sq(self, pts):
        g = self._grad(pts)
        return (self.beta * g[:, -1]) ** 2

    @property
    def normal_power(self) -> float:
        # (d u/d x_n)^2 |x_n|^a = (beta du/dzeta)^2 |x_n|^(2 beta - 2 + a)
        return 2.0 * self.beta - 2.0 + self.a


def dirichlet_energy(u: Field, x0, r: float, mode: str = "weighted", mask: Callable | None = None,
                     kernel: float = 0.0, quad: BallQuadrature | None = None) -> tuple[float, int]:
    """int_{B_r(x0)} |grad u|^2 |x_n|^a |x - x0|^-kernel over the full ball."""
    q = quad or BallQuadrature(u.grid, x0)
    T = _FieldTerms(u, mode)
    a = u.grid.a

    def tang(P):
        v = T.tangential_sq(P)
        return v if mask is None else v * mask(T.value(P))

    def norm(P):
        v = T.normal_sq(P)
        return v if mask is None else v * mask(T.value(P))

    v1, n1 = q.volume(tang, r, a, kernel)
    v2, n2 = q.volume(norm, r, T.normal_power, kernel)
    return v1 + v2, n1 + n2


def boundary_mass(u: Field, x0, r: float, mode: str = "weighted", quad: BallQuadrature | None = None):
    """int_{dB_r(x0)} u^2 |x_n|^a over the full sphere."""
    q = quad or BallQuadrature(u.grid, x0)
    ev = Evaluator(u, mode)
    return q.sphere(lambda P: ev.values(P) ** 2, r, u.grid.a)


def thin_term(u: Field, x0, r: float, lam_plus: float, lam_minus: float, quad: BallQuadrature | None = None):
    q = quad or BallQuadrature(u.grid, x0)
    ev = Evaluator(u, "multilinear")

    def psi(P):
        v = ev.values(P)
        return lam_plus * np.maximum(v, 0.0) + lam_minus * np.maximum(-v, 0.0)

    return q.thin(psi, r)


def weiss_value(u: Field, x0, r: float, lam_plus: float, lam_minus: float, mode: str = "weighted",
                thin_coefficient: float = 4.0, quad: BallQuadrature | None = None) -> tuple[float, int]:
    q = quad or BallQuadrature(u.grid, x0)
    q.check(r)
    n, a = u.grid.n, u.grid.a
    V, nv = dirichlet_energy(u, x0, r, mode, quad=q)
    B, nb = boundary_mass(u, x0, r, mode, quad=q)
    T = thin_term(u, x0, r, lam_plus, lam_minus, quad=q)
    W = r ** (a - n) * (V + thin_coefficient * T) - (1.0 - a) * r ** (a - n - 1) * B
    return W, nv + nb


def _lams(problem, lam_plus, lam_minus):
    if problem is not None:
        return problem.lam_plus, problem.lam_minus
    return lam_plus, lam_minus


def weiss(u: Field, problem=None, x0=None, radii: Sequence[float] = (), *, lam_plus: float = 1.0,
          lam_minus: float = 1.0, mode: str = "weighted", thin_coefficient: float = 4.0) -> RadialSeries:
    """Weiss energy W(r) at the thin point ``x0`` for every radius.

    W(r) = r^(a-n) [int_{B_r} |grad u|^2 |x_n|^a + 4 int_{B_r'} (lam_+ u^+ + lam_- u^-)]
           - (1-a) r^(a-n-1) int_{dB_r} u^2 |x_n|^a
    """
    lp, lm = _lams(problem, lam_plus, lam_minus)
    x0 = _as_point(u.grid, np.zeros(u.grid.n) if x0 is None else x0)
    q = BallQuadrature(u.grid, x0)
    vals, npts = [], []
    for r in radii:
        w, k = weiss_value(u, x0, float(r), lp, lm, mode, thin_coefficient, quad=q)
        vals.append(w)
        npts.append(k)
    return RadialSeries("weiss", x0, radii, vals, {"quadrature_points": npts, "a": u.grid.a,
                                                    "radial_step": 0.5 * u.grid.h})


def almgren(v: Field, a: float | None = None, x0=None, radii: Sequence[float] = (), mode: str = "weighted") -> RadialSeries:
    """Frequency N(r) = r int_{B_r} |grad v|^2 |x_n|^a / int_{dB_r} v^2 |x_n|^a."""
    if a is not None and abs(a - v.grid.a) > 0:
        raise DiagnosticError("weight exponent does not match the field's grid")
    x0 = _as_point(v.grid, np.zeros(v.grid.n) if x0 is None else x0)
    q = BallQuadrature(v.grid, x0)
    vals, npts = [], []
    for r in radii:
        r = float(r)
        q.check(r)
        D, n1 = dirichlet_energy(v, x0, r, mode, quad=q)
        H, n2 = boundary_mass(v, x0, r, mode, quad=q)
        if H <= 1e-14:
            raise UndefinedFrequencyError(f"boundary mass vanishes at r={r}")
        vals.append(r * D / H)
        npts.append(n1 + n2)
    return RadialSeries("almgren", x0, radii, vals, {"quadrature_points": npts, "a": v.grid.a})


def acf(u: Field, x0=None, radii: Sequence[float] = (), tol_fb: float = 1e-8, mode: str = "multilinear") -> RadialSeries:
    """Alt-Caffarelli-Friedman functional of the pair (u^+, u^-); only for a = 0.

    Phi(r) = r^-4 int_{B_r} |grad u^+|^2 |x-x0|^(2-n) * int_{B_r} |grad u^-|^2 |x-x0|^(2-n)
    """
    g = u.grid
    if g.a != 0.0:
        raise InapplicableError("acf requires a=0")
    x0 = _as_point(g, np.zeros(g.n) if x0 is None else x0)
    ev = Evaluator(u, mode)
    if abs(ev.values(x0[None, :])[0]) > tol_fb:
        raise InapplicableError("acf centre must be a zero of u")
    q = BallQuadrature(g, x0)
    kern = float(g.n - 2)
    vals, npts = [], []
    for r in radii:
        r = float(r)
        q.check(r)
        ip, n1 = dirichlet_energy(u, x0, r, mode, mask=lambda v: (v > 0).astype(float), kernel=kern, quad=q)
        im, n2 = dirichlet_energy(u, x0, r, mode, mask=lambda v: (v < 0).astype(float), kernel=kern, quad=q)
        vals.append(ip * im / r**4)
        npts.append(n1 + n2)
    return RadialSeries("acf", x0, radii, vals, {"quadrature_points": npts})


def thin_gradient(u: Field, x0) -> np.ndarray:
    """Centred differences of the thin trace at x0, step = local horizontal spacing."""
    g = u.grid
    x0 = _as_point(g, x0)
    ev = Evaluator(u, "multilinear")
    out = np.zeros(g.n - 1)
    for d in range(g.n - 1):
        ax = g.axes[d]
        i = int(np.clip(np.searchsorted(ax, x0[d]), 1, len(ax) - 2))
        hd = ax[i + 1] - ax[i]
        e = np.zeros(g.n)
        e[d] = hd
        lo, hi = x0 - e, x0 + e
        lim = g.extent
        if abs(hi[d]) > lim or abs(lo[d]) > lim:
            raise DiagnosticError("centred difference leaves the thin grid")
        out[d] = (ev.values(hi[None, :])[0] - ev.values(lo[None, :])[0]) / (2 * hd)
    return out


def growth_series(u: Field, x0, radii: Sequence[float], mode: str = "raw",
                  interp: str = "weighted", sign: int = 0) -> RadialSeries:
    """S_r = max over B_r(x0) of |u(y) - u(x0)| (or its linear-corrected version).

    ``sign=+1`` reports sup (u - u(x0)) instead of the absolute deviation,
    ``sign=-1`` reports sup (u(x0) - u); both are used for nondegeneracy.
    Samples: shells of step h/2 plus every grid node inside the ball.
    """
    if mode not in ("raw", "linear_corrected"):
        raise DiagnosticError(f"unknown growth mode {mode!r}")
    g = u.grid
    x0 = _as_point(g, x0)
    ev = Evaluator(u, interp)
    u0 = ev.values(x0[None, :])[0]
    grad = thin_gradient(u, x0) if mode == "linear_corrected" else np.zeros(g.n - 1)
    q = BallQuadrature(g, x0)

    def dev(P):
        d = ev.values(P) - u0 - (P[:, :-1] - x0[:-1]) @ grad
        return np.abs(d) if sign == 0 else sign * d

    nodes = g.coords
    dist = np.linalg.norm(nodes - x0, axis=1)
    vals, npts = [], []
    for r in radii:
        r = float(r)
        _check_ball(g, x0, r)
        K = max(math.ceil(r / (0.5 * g.h)), 4)
        best = -np.inf
        count = 0
        for rk in np.linspace(0.0, r, K + 1):
            pts, _ = q.shell_points(rk, 0.0)
            best = max(best, float(np.max(dev(pts))))
            count += len(pts)
        inside = nodes[dist <= r]
        if len(inside):
            best = max(best, float(np.max(dev(inside))))
        vals.append(best)
        npts.append(count + len(inside))
    return RadialSeries("growth", x0, radii, vals, {"quadrature_points": npts, "mode": mode})


@dataclass
class ExponentFit:
    slope: float
    intercept: float
    r2: float
    count: int


def fit_exponent(series: RadialSeries, fit_range: tuple[float, float] | None = None) -> ExponentFit:
    """Least-squares line through (log r, log S_r) on the radii inside ``fit_range``."""
    r, v = series.radii, series.values
    if fit_range is not None:
        sel = (r >= fit_range[0] * (1 - 1e-12)) & (r <= fit_range[1] * (1 + 1e-12))
        r, v = r[sel], v[sel]
    if len(r) < 4:
        raise DiagnosticError("need at least 4 radii in the fit range")
    if np.any(v <= 0):
        raise DiagnosticError("nonpositive values in the fit range")
    x, y = np.log(r), np.log(v)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return ExponentFit(float(slope), float(intercept), r2, len(r))


def rescale(u: Field, x0, r: float, target: Grid, exponent: float | None = None, interp: str = "weighted") -> Field:
    """u_{r,x0}(y) = u(x0 + r y) / r^exponent sampled at the nodes of ``target``."""
    g = u.grid
    x0 = _as_point(g, x0)
    k = 1.0 - g.a if exponent is None else exponent
    pts = x0 + r * target.coords
    if not np.all(g.contains(pts)):
        raise DiagnosticError("rescaled target does not fit inside the source box")
    ev = Evaluator(u, interp)
    return Field(target, ev.values(pts) / r**k)


@dataclass
class BlowupFit:
    c: float
    residual: float
    r: float


def default_target(u: Field, cells: int = 16) -> Grid:
    g = u.grid
    return build_grid(GridSpec(g.n, (cells,) * g.n, g.a, 1.0))


def blowup_profile_fit(u: Field, x0, radii: Sequence[float], target: Grid | None = None) -> BlowupFit:
    """Fit rescale(u, x0, r_min) to c |x_n|^(1-a) in the weighted L^2 sense of the target cells."""
    target = target or default_target(u)
    r = float(min(radii))
    R = rescale(u, x0, r, target)
    q = np.abs(target.coords[:, -1]) ** (1.0 - u.grid.a)
    w = _nodal_weights(target)
    denom = float(np.dot(w, q * q))
    c = float(np.dot(w, R.values * q) / denom)
    mis = R.values - c * q
    norm = math.sqrt(float(np.dot(w, R.values**2)))
    res = math.sqrt(float(np.dot(w, mis**2))) / norm if norm > 0 else 0.0
    return BlowupFit(c, res, r)


def _nodal_weights(g: Grid) -> np.ndarray:
    """Lumped weighted-mass of each node (dual cell measure of x_n^a dx)."""
    w = g.column_moments
    for wd in reversed(g.dual_widths):
        w = np.multiply.outer(wd, w)
    return np.asarray(w).ravel()


def default_radii(grid: Grid, x0, count: int = 16, r_min_factor: float = 8.0, r_max_frac: float = 0.9) -> np.ndarray:
    x0 = _as_point(grid, x0)
    lo = r_min_factor * grid.h
    hi = r_max_frac * grid.distance_to_outer_boundary(x0)
    if hi <= lo:
        raise RadiusError("no admissible radii: ball too close to the outer boundary")
    return np.geomspace(lo, hi, count)
