import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tolab.energy import Problem, assemble, energy_value, flux_residual
from tolab.grid import Field, GridSpec, build_grid
from tolab.solver import (
    SolveOptions,
    SolverError,
    check_comparison,
    harmonic_replacement,
    solve_fista,
    solve_partition,
    solve_pdas,
)

CASES = [
    (2, -0.5, "odd_x1", {"M": 3.0}, 1.0, 1.0),
    (2, 0.0, "constant", {"c": 0.3}, 1.0, 1.0),
    (2, 0.5, "linear_xi", {"M": 1.0}, 2.0, 0.5),
    (2, 0.3, "one_phase_exact", {}, 1.0, 1.5),
    (3, 0.0, "odd_x1", {"M": 2.0}, 1.0, 1.0),
    (3, -0.3, "constant", {"c": -0.2}, 0.7, 1.2),
]


def _problem(n, a, fam, prm, lp, lm, cells=None):
    cells = cells or (16 if n == 2 else 8)
    return Problem(GridSpec.square(n, cells, a), lp, lm).with_datum(fam, **prm)


@pytest.mark.parametrize("case", CASES)
def test_pdas_satisfies_kkt(case):
    p = _problem(*case)
    rep = solve_pdas(assemble(p))
    assert rep.converged and rep.solver == "pdas"
    assert rep.max_inclusion_residual <= 1e-8
    assert rep.interior_residual <= 1e-8
    assert rep.partition_history


@pytest.mark.parametrize("case", CASES)
def test_pdas_and_fista_agree(case):
    E = assemble(_problem(*case))
    a, b = solve_pdas(E), solve_fista(E)
    assert b.converged
    assert abs(a.energy - b.energy) <= 1e-6 * max(abs(a.energy), 1e-12)
    assert np.max(np.abs(a.u - b.u)) <= 1e-5


def test_pdas_is_a_minimiser():
    E = assemble(_problem(2, 0.2, "odd_x1", {"M": 1.5}, 1.0, 1.0, cells=8))
    rep = solve_pdas(E)
    rng = np.random.default_rng(3)
    for _ in range(20):
        d = np.zeros(E.grid.num_nodes)
        d[E.free] = 1e-3 * rng.standard_normal(len(E.free))
        assert energy_value(E, rep.u + d) >= rep.energy - 1e-14


def test_cg_matches_direct():
    E = assemble(_problem(2, 0.4, "odd_x1", {"M": 2.0}, 1.0, 1.0))
    a = solve_pdas(E)
    b = solve_pdas(E, SolveOptions(linear_solver="cg", cg_rtol=1e-13))
    assert np.max(np.abs(a.u - b.u)) <= 1e-9


def test_warm_start_from_solution_needs_one_sweep():
    E = assemble(_problem(2, 0.0, "odd_x1", {"M": 3.0}, 1.0, 1.0))
    rep = solve_pdas(E)
    again = solve_pdas(E, initial=rep.field)
    assert again.iterations <= 1
    assert np.array_equal(again.u, rep.u)


def test_partition_solve_fixes_zero_set():
    E = assemble(_problem(2, 0.0, "constant", {"c": 0.1}, 1.0, 1.0))
    code = np.zeros(len(E.thin), dtype=np.int8)
    u = solve_partition(E, code)
    assert np.all(u[E.thin] == 0.0)
    code[:] = 1
    u = solve_partition(E, code)
    f = flux_residual(E, u)
    assert np.allclose(f.flux, 1.0)


def test_fallback_and_failure_paths():
    E = assemble(_problem(2, 0.0, "odd_x1", {"M": 3.0}, 1.0, 1.0))
    rep = solve_pdas(E, SolveOptions(max_outer_iters=1))
    assert "pdas-fallback" in rep.flags
    assert rep.max_inclusion_residual <= 1e-8
    with pytest.raises(SolverError):
        solve_pdas(E, SolveOptions(max_outer_iters=1, fallback=False))
    with pytest.raises(SolverError):
        solve_fista(E, SolveOptions(fista_max_iters=3))


def test_solve_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(kkt_tol=0)
    with pytest.raises(ValueError):
        SolveOptions(linear_solver="lu")


def test_zero_datum_gives_zero():
    rep = solve_pdas(assemble(_problem(2, 0.0, "zero", {}, 1.0, 1.0)))
    assert np.all(rep.u == 0.0)
    assert "coincidence-everywhere" in rep.flags


@pytest.mark.parametrize("a", [-0.5, 0.0, 0.5])
def test_harmonic_replacement(a):
    g = build_grid(GridSpec(2, (12, 12), a, 1.0, 1.5))
    x1 = Field(g, g.coords[:, 0])
    v = harmonic_replacement(g, a, x1)
    assert np.allclose(v.values, x1.values, atol=1e-12)
    rng = np.random.default_rng(0)
    w = harmonic_replacement(g, a, Field(g, rng.standard_normal(g.num_nodes)))
    from tolab.energy import stiffness_matrix

    r = stiffness_matrix(g) @ w.values
    assert np.max(np.abs(r[g.free])) <= 1e-10
    with pytest.raises(ValueError):
        harmonic_replacement(g, a + 0.1, x1)
    with pytest.raises(ValueError):
        harmonic_replacement(g, a, x1, region=g.boundary)


def test_check_comparison():
    g = build_grid(GridSpec.square(2, 4, 0.0))
    u, v = Field(g, np.zeros(g.num_nodes)), Field(g, np.ones(g.num_nodes))
    assert check_comparison(u, v) == (True, 0.0)
    ok, viol = check_comparison(v, u)
    assert not ok and viol == 1.0
    with pytest.raises(ValueError):
        check_comparison(u, Field(build_grid(GridSpec.square(2, 6, 0.0)), np.zeros(49)))


@given(st.floats(-1, 1), st.floats(0, 1), st.floats(-0.6, 0.6))
@settings(max_examples=15, deadline=None)
def test_comparison_principle(c, d, a):
    g = GridSpec.square(2, 8, a)
    lo = solve_pdas(assemble(Problem(g).with_datum("constant", c=c)))
    hi = solve_pdas(assemble(Problem(g).with_datum("constant", c=c + d)))
    assert check_comparison(lo, hi)[0]


@given(st.floats(0.1, 5), st.floats(-0.6, 0.6))
@settings(max_examples=10, deadline=None)
def test_odd_datum_gives_odd_solution(M, a):
    rep = solve_pdas(assemble(Problem(GridSpec.square(2, 10, a)).with_datum("odd_x1", M=M)))
    arr = rep.field.array
    assert np.max(np.abs(arr + arr[::-1])) <= 1e-10 * M
