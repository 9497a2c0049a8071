import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elsem import el_core
from elsem.el_core import ConstraintMatrix, SolverOptions, solve_dual
from elsem.errors import DegenerateConstraints, NotInHull

from oracles import primal_log_el, random_feasible_rows


def test_diagnostics_symmetric_two_point():
    d = el_core.diagnostics([[-1.0], [1.0]])
    assert d.x_bar_norm == 0.0
    assert d.x_star == 1.0
    assert d.lambda_n == pytest.approx(1.0) and d.Lambda_n == pytest.approx(1.0)
    assert d.owen_condition


def test_diagnostics_all_zero_rows():
    d = el_core.diagnostics(np.zeros((5, 1)))
    assert d.lambda_n == 0.0
    assert not d.owen_condition


def test_diagnostics_standard_normal_rows(rng):
    for _ in range(50):
        d = el_core.diagnostics(rng.standard_normal((200, 1)))
        assert abs(d.lambda_n - 1.0) < 0.3


def test_owen_condition_frequency_grows_with_n(rng):
    # lambda > 5 |xbar| x* fails when |xbar| is a bit above 1/(5 x*), so at
    # n = 200 (x* near 2.8) it holds with probability about 0.7; the
    # probability tends to one as n grows
    freq = {}
    for n in (200, 20000):
        freq[n] = np.mean([el_core.diagnostics(rng.standard_normal((n, 1))).owen_condition
                           for _ in range(100)])
    assert 0.5 <= freq[200] <= 0.9
    assert freq[20000] >= 0.95


def test_solve_symmetric_two_point():
    sol = solve_dual([[-1.0], [1.0]])
    np.testing.assert_allclose(sol.zeta, [0.0], atol=1e-14)
    np.testing.assert_allclose(sol.weights, [0.5, 0.5])


def test_solve_asymmetric_two_point():
    # -0.5/(1 - 0.5 z) + 1/(1 + z) = 0 gives z = 0.5
    sol = solve_dual([[-0.5], [1.0]])
    assert sol.zeta[0] == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(sol.weights, [2 / 3, 1 / 3], atol=1e-12)


def test_two_point_bounds():
    U = [[-0.5], [1.0]]
    rep = el_core.verify_lemma_bounds(solve_dual(U), U)
    # the a-priori conditions fail here (lambda = 0.625 < 5 * 0.25 * 1), so only
    # the bounds that do not need them are expected
    assert not rep.applicable
    assert rep.o3 and rep.o6 and rep.o9
    assert not rep.o4
    assert rep.values["zeta_norm"] == pytest.approx(0.5)
    assert rep.values["bound_o3"] == pytest.approx(0.25 / (0.625 - 0.25))


def test_bounds_at_zero_multiplier():
    U = [[-1.0], [1.0], [-2.0], [2.0]]
    rep = el_core.verify_lemma_bounds(solve_dual(U), U)
    assert rep.all_hold


def test_not_in_hull():
    with pytest.raises(NotInHull):
        solve_dual([[1.0], [2.0], [0.5]])


def test_degenerate_constraints():
    with pytest.raises(DegenerateConstraints):
        solve_dual(np.zeros((6, 2)))
    with pytest.raises(DegenerateConstraints):
        solve_dual(np.column_stack([np.linspace(-1, 1, 7), np.linspace(-1, 1, 7)]))


def test_constraint_matrix_validation():
    with pytest.raises(ValueError):
        ConstraintMatrix(np.ones((2, 2)))
    with pytest.raises(ValueError):
        ConstraintMatrix([[np.nan], [1.0]])


def test_primal_oracle_random(rng):
    U = random_feasible_rows(rng, 50, 2)
    sol = solve_dual(U)
    assert sol.log_el == pytest.approx(primal_log_el(U), abs=1e-6)


def test_weighted_mean():
    U = np.array([[-1.0], [1.0], [-3.0], [3.0]])
    sol = solve_dual(U)
    vals = np.arange(8.0).reshape(4, 2)
    np.testing.assert_allclose(el_core.weighted_mean(sol, vals), vals.mean(axis=0))
    U2 = np.array([[-1.0], [0.5], [2.0], [-0.2]])
    sol2 = solve_dual(U2)
    assert abs(el_core.weighted_mean(sol2, U2)[0]) < 1e-12
    with pytest.raises(ValueError):
        el_core.weighted_mean(sol2, np.ones((3, 1)))


def test_weighted_mean_uncorrelated_side_information(rng):
    # psi independent of u: the weighted and plain means differ by O(1/n)
    n, gaps = 400, []
    for _ in range(200):
        u = rng.standard_normal(n)
        psi = rng.standard_normal(n)
        sol = solve_dual(u[:, None])
        gaps.append(el_core.weighted_mean(sol, psi)[0] - psi.mean())
    assert np.sqrt(n) * np.std(gaps) < 0.25


def test_uniform_solution():
    sol = el_core.ELSolution.uniform(4, 2)
    assert sol.log_el_ratio == pytest.approx(0.0)
    np.testing.assert_allclose(sol.weights, 0.25)


def test_quartic_bound_exact_in_one_dimension(rng):
    X = rng.standard_normal((30, 1))
    assert el_core.quartic_moment_bound(X) == pytest.approx(np.mean(X[:, 0] ** 4))


def test_quartic_bound_dominates_random_directions(rng):
    X = rng.standard_normal((100, 3)) * [1.0, 2.0, 0.5]
    est = el_core.quartic_moment_bound(X)
    V = rng.standard_normal((500, 3))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    assert est >= np.max(np.mean((X @ V.T) ** 4, axis=0)) - 1e-9


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(20, 200), m=st.integers(1, 5))
def test_solution_invariants(seed, n, m):
    U = random_feasible_rows(np.random.default_rng(seed), n, m)
    sol = solve_dual(U)
    assert sol.converged
    assert np.all(sol.weights > 0)
    assert abs(sol.weights.sum() - 1.0) <= 1e-12
    assert np.linalg.norm(sol.weights @ U) * n <= 1e-10 * n + 1e-12
    # primal value is at most the uniform one, with equality only at zeta = 0
    assert sol.log_el_ratio <= 1e-12
    rep = el_core.verify_lemma_bounds(sol, U)
    if rep.applicable:
        assert rep.all_hold, rep.values


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(10, 60), m=st.integers(1, 3))
def test_zero_multiplier_iff_centred(seed, n, m):
    r = np.random.default_rng(seed)
    U = random_feasible_rows(r, n, m)
    Uc = U - U.mean(axis=0)
    assert np.linalg.norm(solve_dual(Uc).zeta) < 1e-10
    if np.linalg.norm(U.mean(axis=0)) > 1e-6:
        assert np.linalg.norm(solve_dual(U).zeta) > 1e-10


def test_max_iterations_option(rng):
    U = random_feasible_rows(rng, 40, 2) + 0.3
    with pytest.raises(Exception) as info:
        solve_dual(U, SolverOptions(max_iter=1))
    assert type(info.value).__name__ in ("MaxIterations", "NotInHull")
