import numpy as np
import pytest

from plaplearn import (
    GameConfig,
    LabelSet,
    SolverError,
    alpha_bound,
    bracket_update,
    game_operator,
    game_scaled_residual,
    gradient_descent_solve,
    newton_like_solve,
    semi_implicit_solve,
)
from plaplearn.game import _theta_vector

from conftest import path_graph, random_connected_graph, random_labels


PATH = path_graph([1.0, 1.0])
PATH_LABELS = LabelSet([0, 2], [0.0, 1.0])


def test_alpha_bound_values():
    assert alpha_bound(3.0) == pytest.approx(1.0)
    assert alpha_bound(np.inf) == pytest.approx(0.5)
    assert alpha_bound(3.0, eps_reg=0.1) == pytest.approx(3.0 / (2.1 * 3.0 - 3.0))


def test_alpha_validation():
    with pytest.raises(ValueError):
        GameConfig(p=3.0, alpha=1.5)
    cfg = GameConfig(p=3.0)
    assert cfg.alpha == pytest.approx(1.0)


def test_bracket_one_step_exact_on_path():
    cfg = GameConfig(p=3.0, tol=1e-10)
    u, rep = gradient_descent_solve(PATH, PATH_LABELS, cfg)
    assert u[1] == pytest.approx(0.5)
    assert rep.stages[0].iterations == 1
    assert rep.extra["bracket_mode"] is True


def test_bracket_error_guarantee(rng):
    # Midpoint of the brackets is within tol of a much more accurate solve.
    for trial in range(3):
        g = random_connected_graph(rng, 60)
        labels = random_labels(rng, 60, 6)
        tol = 1e-4
        u, _ = gradient_descent_solve(g, labels, GameConfig(p=3.0, tol=tol))
        ref, _ = semi_implicit_solve(g, labels, GameConfig(p=3.0, tol=1e-12))
        assert np.max(np.abs(u - ref)) <= tol + 1e-7


def test_bracket_sandwich_and_monotone(rng):
    g = random_connected_graph(rng, 40)
    labels = random_labels(rng, 40, 5)
    cfg = GameConfig(p=3.0, tol=1e-9)
    ref, _ = semi_implicit_solve(g, labels, GameConfig(p=3.0, tol=1e-12))
    upper = labels.full_field(40, fill=labels.values.max())
    lower = labels.full_field(40, fill=labels.values.min())
    prev_width = np.inf
    for _ in range(300):
        upper_next = bracket_update(g, upper, labels, cfg.alpha, 3.0)
        lower_next = bracket_update(g, lower, labels, cfg.alpha, 3.0)
        assert np.all(upper_next <= upper + 1e-12)
        assert np.all(lower_next >= lower - 1e-12)
        upper, lower = upper_next, lower_next
        assert np.all(lower <= ref + 1e-9)
        assert np.all(ref <= upper + 1e-9)
        width = float(np.max(upper - lower))
        assert width <= prev_width + 1e-12
        prev_width = width


def test_comparison_preserved_by_update(rng):
    # One sweep preserves pointwise ordering of fields equal on the labels.
    violations = 0
    for trial in range(10):
        n = 30
        g = random_connected_graph(rng, n)
        labels = random_labels(rng, n, 4)
        p = rng.choice([3.0, 9.0, np.inf])
        alpha = alpha_bound(p)
        for _ in range(100):
            u = labels.full_field(n)
            v = labels.full_field(n)
            unl = labels.unlabeled(n)
            u[unl] = rng.standard_normal(unl.size)
            v[unl] = u[unl] + rng.random(unl.size)
            u2 = bracket_update(g, u, labels, alpha, p)
            v2 = bracket_update(g, v, labels, alpha, p)
            violations += int(np.any(u2 > v2 + 1e-12))
    assert violations == 0


def test_regularized_contraction(rng):
    # Sup-norm distance to the regularized fixed point shrinks by at least
    # (1 - eps) each sweep.
    eps = 0.1
    for trial in range(3):
        g = random_connected_graph(rng, 30)
        labels = random_labels(rng, 30, 4)
        p = 3.0
        alpha = alpha_bound(p, eps_reg=eps)
        unl = labels.unlabeled(30)

        def sweep(u):
            out = u.copy()
            op = game_operator(g, u, p)
            out[unl] = u[unl] + alpha * (op[unl] - eps * u[unl])
            return out

        ref = labels.full_field(30, fill=labels.values.mean())
        for _ in range(600):
            ref = sweep(ref)
        u = labels.full_field(30)
        u[unl] = rng.standard_normal(unl.size)
        err = np.max(np.abs(u - ref))
        for _ in range(40):
            u = sweep(u)
            new_err = np.max(np.abs(u - ref))
            assert new_err <= (1 - eps) * err + 1e-10
            err = new_err


def test_regularized_solve_stops_on_geometric_bound(rng):
    g = random_connected_graph(rng, 30)
    labels = random_labels(rng, 30, 4)
    tol = 1e-6
    u, rep = gradient_descent_solve(g, labels, GameConfig(p=3.0, eps_reg=0.1, tol=tol))
    assert rep.extra["eps_reg"] == 0.1
    # Compare with a long regularized run (the same fixed point).
    cfg = GameConfig(p=3.0, eps_reg=0.1, tol=1e-12, max_iter=10**6)
    u_ref, _ = gradient_descent_solve(g, labels, cfg)
    assert np.max(np.abs(u - u_ref)) <= tol + 1e-9


def test_plain_descent_fallback_with_source(rng):
    g = random_connected_graph(rng, 25)
    labels = random_labels(rng, 25, 4)
    f = np.zeros(25)
    f[labels.unlabeled(25)[0]] = 0.05
    labels.source = f
    u, rep = gradient_descent_solve(g, labels, GameConfig(p=3.0, tol=1e-7))
    assert rep.extra["bracket_mode"] is False
    assert game_scaled_residual(g, u, labels, 3.0) <= 1e-7


def test_newton_like_hand_case():
    u, rep = newton_like_solve(PATH, PATH_LABELS, GameConfig(p=3.0, tol=1e-12))
    assert u[1] == pytest.approx(0.5, abs=1e-12)


def test_newton_like_p2_single_solve(rng):
    g = random_connected_graph(rng, 30)
    labels = random_labels(rng, 30, 4)
    u, rep = newton_like_solve(g, labels, GameConfig(p=2.0, tol=1e-10))
    # warm start already is the solution; the p=2 stage repeats it
    assert game_scaled_residual(g, u, labels, 2.0) <= 1e-10
    assert all(s.iterations == 1 for s in rep.stages)


def test_newton_like_rejects_infinite_p(rng):
    g = random_connected_graph(rng, 10)
    labels = random_labels(rng, 10, 2)
    with pytest.raises(ValueError):
        newton_like_solve(g, labels, GameConfig(p=np.inf, tol=1e-8))


def test_newton_like_exact_once_locations_freeze(rng):
    g = random_connected_graph(rng, 40)
    labels = random_labels(rng, 40, 5)
    tol = 1e-11
    u, rep = newton_like_solve(g, labels, GameConfig(p=5.0, tol=tol), schedule="auto")
    assert game_scaled_residual(g, u, labels, 5.0) <= tol
    # Final stage ends with a machine-precision drop once y+/y- are frozen.
    final = rep.stages[-1].residuals
    assert final[-1] <= tol


def test_semi_implicit_theta_defaults_and_bounds(rng):
    g = path_graph([1.0, 1.0])
    eta2 = _theta_vector(GameConfig(p=2.0), g)
    assert np.allclose(eta2, 1.0)
    etaI = _theta_vector(GameConfig(p=np.inf), g)
    assert np.allclose(etaI, g.degrees)
    with pytest.raises(ValueError):
        labels = PATH_LABELS
        semi_implicit_solve(g, labels, GameConfig(p=3.0, theta=0.5, tol=1e-6))


def test_semi_implicit_coefficient_hand_case():
    # Vertex of degree 2 at p=3 with the minimal theta = 4/3.
    p, d_x = 3.0, 2.0
    theta = 2.0 / p + d_x * (1.0 - 2.0 / p)
    assert theta == pytest.approx(4.0 / 3.0)
    beta = (theta * p - 2.0) / (theta * p)
    gamma = d_x * (p - 2.0) / (theta * p - 2.0)
    assert beta == pytest.approx(0.5)
    assert gamma == pytest.approx(1.0)


def test_semi_implicit_stationary_at_solution():
    u, rep = semi_implicit_solve(PATH, PATH_LABELS, GameConfig(p=3.0, tol=1e-12))
    assert u[1] == pytest.approx(0.5, abs=1e-10)
    assert rep.stages[0].iterations <= 3


def test_cross_solver_agreement(rng):
    for trial in range(4):
        g = random_connected_graph(rng, 80)
        labels = random_labels(rng, 80, 8)
        for p in (3.0, 9.0):
            tol = 1e-6
            ugd, _ = gradient_descent_solve(g, labels, GameConfig(p=p, tol=tol))
            unl, _ = newton_like_solve(g, labels, GameConfig(p=p, tol=1e-11),
                                       schedule="auto")
            usi, _ = semi_implicit_solve(g, labels, GameConfig(p=p, tol=1e-11))
            assert np.max(np.abs(ugd - unl)) <= 10 * tol
            assert np.max(np.abs(ugd - usi)) <= 10 * tol
        tol = 1e-5
        ugd, _ = gradient_descent_solve(g, labels, GameConfig(p=np.inf, tol=tol))
        usi, _ = semi_implicit_solve(g, labels, GameConfig(p=np.inf, tol=1e-10))
        assert np.max(np.abs(ugd - usi)) <= 10 * tol


def test_maximum_principle_all_solvers(rng):
    g = random_connected_graph(rng, 50)
    labels = random_labels(rng, 50, 6)
    lo, hi = labels.values.min(), labels.values.max()
    for u in (
        gradient_descent_solve(g, labels, GameConfig(p=4.0, tol=1e-6))[0],
        newton_like_solve(g, labels, GameConfig(p=4.0, tol=1e-10), schedule="auto")[0],
        semi_implicit_solve(g, labels, GameConfig(p=4.0, tol=1e-10))[0],
    ):
        assert u.min() >= lo - 1e-6
        assert u.max() <= hi + 1e-6


def test_weight_normalization_recorded(rng):
    g = random_connected_graph(rng, 20).scaled(3.0)
    labels = random_labels(rng, 20, 3)
    u, rep = gradient_descent_solve(g, labels, GameConfig(p=3.0, tol=1e-5))
    assert rep.extra["weight_scale"] == pytest.approx(1.0 / g.max_weight())


def test_disconnected_rejected():
    from scipy import sparse

    from plaplearn import WeightedGraph

    W = sparse.block_diag([np.array([[0.0, 1.0], [1.0, 0.0]])] * 2, format="csr")
    g = WeightedGraph(W, sigma=0.5)
    with pytest.raises(ValueError):
        gradient_descent_solve(g, LabelSet([0], [1.0]), GameConfig(p=3.0))


def test_gd_nonconvergence_raises_with_report(rng):
    g = random_connected_graph(rng, 40)
    labels = random_labels(rng, 40, 4)
    with pytest.raises(SolverError) as err:
        gradient_descent_solve(g, labels, GameConfig(p=3.0, tol=1e-9, max_iter=3))
    assert err.value.report is not None
