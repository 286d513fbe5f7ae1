import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tolab.energy import (
    ConfigError,
    Datum,
    Problem,
    assemble,
    energy_value,
    flux_residual,
    gradient_smooth,
    inclusion_distance,
    interior_residual,
    prox_thin,
    quadratic_value,
    sample_datum,
    stiffness_matrix,
    thin_flux,
)
from tolab.grid import GridSpec, build_grid
from tolab.solver import solve_pdas

finite = st.floats(-10, 10)
positive = st.floats(0.01, 5)


@pytest.mark.parametrize("n,a", [(2, -0.5), (2, 0.5), (3, 0.2)])
def test_stiffness_symmetric_psd_with_constant_kernel(n, a):
    g = build_grid(GridSpec(n, (6,) * n, a, 1.0, 1.5))
    A = stiffness_matrix(g)
    assert abs(A - A.T).max() == 0.0
    assert np.allclose(A @ np.ones(g.num_nodes), 0.0, atol=1e-12)
    ev = np.linalg.eigvalsh(A.toarray())
    assert ev.min() > -1e-10


@pytest.mark.parametrize("a", [-0.7, 0.0, 0.6])
def test_quadratic_form_exact_on_model_functions(a):
    L = 1.3
    g = build_grid(GridSpec(2, (8, 8), a, L, 2.0))
    A = stiffness_matrix(g)
    x1 = g.coords[:, 0]
    prof = g.coords[:, 1] ** (1 - a)
    # int |grad x1|^2 x_n^a and int |grad x_n^(1-a)|^2 x_n^a over the half-box
    assert x1 @ A @ x1 == pytest.approx(2 * L * L ** (1 + a) / (1 + a), rel=1e-12)
    assert prof @ A @ prof == pytest.approx(2 * L * (1 - a) * L ** (1 - a), rel=1e-12)


@given(finite, positive, positive, positive, positive)
def test_prox_solves_its_problem(v, step, lp, lm, m):
    z = prox_thin(v, step, lp, lm, m)
    obj = lambda t: 0.5 * (t - v) ** 2 + step * m * (lp * max(t, 0) + lm * max(-t, 0))
    for t in np.linspace(z - 1, z + 1, 41):
        assert obj(z) <= obj(t) + 1e-12


@given(finite, finite, positive, positive, positive)
def test_prox_monotone_and_nonexpansive(v, w, lp, lm, step):
    a, b = prox_thin(v, step, lp, lm, 1.0), prox_thin(w, step, lp, lm, 1.0)
    assert (a - b) * (v - w) >= 0
    assert abs(a - b) <= abs(v - w) + 1e-12


def test_prox_vectorised():
    out = prox_thin(np.array([2.0, 0.1, -3.0]), 1.0, 0.5, 1.0, np.array([1.0, 1.0, 2.0]))
    assert np.allclose(out, [1.5, 0.0, -1.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(-0.8, 0.8), positive, positive)
def test_energy_convex(seed, a, lp, lm):
    p = Problem(GridSpec.square(2, 6, a), lp, lm)
    E = assemble(p)
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, E.grid.num_nodes))
    lhs = energy_value(E, 0.5 * (u + v))
    assert lhs <= 0.5 * (energy_value(E, u) + energy_value(E, v)) + 1e-9 * (1 + abs(lhs))


def test_gradient_smooth_matches_finite_difference():
    E = assemble(Problem(GridSpec.square(2, 6, 0.3)).with_datum("odd_x1", M=1.0))
    rng = np.random.default_rng(0)
    u = E.full(rng.standard_normal(len(E.free)))
    gr = gradient_smooth(E, u)
    k = 7
    e = np.zeros(E.grid.num_nodes)
    e[E.free[k]] = 1e-6
    fd = (quadratic_value(E, u + e) - quadratic_value(E, u - e)) / 2e-6
    assert fd == pytest.approx(gr[k], rel=1e-6)


def test_inclusion_distance_cases():
    f = np.array([1.0, 0.5, -2.0, 3.0, -1.0])
    u = np.array([1.0, 0.0, 0.0, -1.0, -1.0])
    assert np.allclose(inclusion_distance(f, u, 1.0, 1.0), [0.0, 0.0, 1.0, 4.0, 0.0])


@pytest.mark.parametrize("a", [-0.5, 0.0, 0.5])
def test_one_phase_profile_is_discrete_solution(a):
    E = assemble(Problem(GridSpec(2, (8, 8), a, 1.0, 2.0), 1.3, 0.7).with_datum("one_phase_exact"))
    u = E.dirichlet.copy()
    u[:] = 1.3 / (1 - a) * E.grid.coords[:, 1] ** (1 - a)
    assert np.allclose(thin_flux(E, u), 1.3, atol=1e-12)
    assert flux_residual(E, u).max_residual < 1e-12
    assert interior_residual(E, u) < 1e-13


@given(st.floats(0.2, 3.0), st.floats(-0.6, 0.6), positive)
@settings(max_examples=10, deadline=None)
def test_scaling_identity(t, a, lam):
    """u minimises (lam, g) iff t u minimises (t lam, t g); box of side L rescales by L^(1-a)."""
    base = Problem(GridSpec.square(2, 8, a), lam, lam).with_datum("odd_x1", M=0.7)
    u = solve_pdas(assemble(base)).u
    amp = solve_pdas(assemble(Problem(base.grid, t * lam, t * lam).with_datum("odd_x1", M=0.7 * t))).u
    assert np.allclose(amp, t * u, atol=1e-10 * max(1, t))
    L = 1.0 + t
    big = Problem(GridSpec.square(2, 8, a, extent=L), lam, lam).with_datum("odd_x1", M=0.7 * L ** (-a))
    ub = solve_pdas(assemble(big)).u
    assert np.allclose(ub, L ** (1 - a) * u, atol=1e-9 * L)


def test_problem_dict_round_trip():
    p = Problem(GridSpec(3, (4, 6, 8), -0.3, 2.0, 1.5), 0.5, 2.0).with_datum("linear_xi", M=2.0, i=2)
    assert Problem.from_dict(p.to_dict()) == p


@pytest.mark.parametrize(
    "d,key",
    [
        ({"n": 4}, "n"),
        ({"a": 1.0}, "a"),
        ({"a": "x"}, "a"),
        ({"grid": {"cells": 2}}, "grid.cells"),
        ({"grid": {"cells": [8, 8, 8]}}, "grid.cells"),
        ({"grid": {"extent": -1}}, "grid.extent"),
        ({"grid": {"grading_ratio": 9}}, "grid.grading_ratio"),
        ({"datum": {"family": "nope"}}, "datum.family"),
        ({"datum": {"params": 3}}, "datum.params"),
        ({"lam_plus": 0}, "lam_plus"),
        ({"lam_minus": -1}, "lam_minus"),
    ],
)
def test_problem_from_dict_names_offending_key(d, key):
    with pytest.raises(ConfigError) as exc:
        Problem.from_dict(d)
    assert exc.value.key == key


def test_datum_sampling_errors():
    p = Problem(GridSpec.square(2, 4, 0.0))
    x = np.zeros((3, 2))
    with pytest.raises(ConfigError) as exc:
        sample_datum(p.with_datum("odd_x1"), x)
    assert exc.value.key == "datum.params.M"
    with pytest.raises(ConfigError) as exc:
        sample_datum(p.with_datum("linear_xi", M=1.0, i=2), x)
    assert exc.value.key == "datum.params.i"
    with pytest.raises(ConfigError) as exc:
        assemble(p.with_datum("file"))
    assert exc.value.key == "datum.params.path"
    with pytest.raises(ConfigError):
        Datum("bogus")


def test_file_datum(tmp_path):
    from tolab.io import write_field

    p = Problem(GridSpec.square(2, 6, 0.0)).with_datum("odd_x1", M=2.0)
    ref = solve_pdas(assemble(p))
    path = write_field(ref.field, tmp_path / "d.field")
    E = assemble(Problem(p.grid).with_datum("file", path=str(path)))
    assert np.array_equal(E.dirichlet[E.grid.boundary], ref.u[E.grid.boundary])
    other = Problem(GridSpec.square(2, 8, 0.0)).with_datum("file", path=str(path))
    with pytest.raises(ConfigError):
        assemble(other)
