import numpy as np
import pytest

from plaplearn import (
    HomotopySchedule,
    LabelSet,
    NewtonConfig,
    SolverError,
    assemble_newton_system,
    default_ladder,
    energy,
    newton_step,
    solve_p2,
    solve_variational,
    variational_scaled_residual,
)

from conftest import path_graph, random_connected_graph, random_labels


def test_assembly_hand_case():
    g = path_graph([1.0, 1.0])
    labels = LabelSet([0, 2], [0.0, 1.0])
    sys_ = assemble_newton_system(g, np.array([0.3]), labels, 3.0)
    assert np.allclose(sys_.L.toarray(), [[1.0]])
    assert sys_.grad == pytest.approx([-0.4])


def test_assembly_p2_coefficients_independent_of_u(rng):
    g = random_connected_graph(rng, 15)
    labels = random_labels(rng, 15, 3)
    unl = labels.unlabeled(15)
    s1 = assemble_newton_system(g, rng.random(unl.size), labels, 2.0)
    s2 = assemble_newton_system(g, rng.random(unl.size), labels, 2.0)
    assert (s1.L != s2.L).nnz == 0


def test_gradient_matches_finite_differences(rng):
    g = random_connected_graph(rng, 30)
    labels = random_labels(rng, 30, 5)
    unl = labels.unlabeled(30)
    f = rng.standard_normal(30)
    labels.source = f
    p = 3.0
    u = rng.random(unl.size)
    sys_ = assemble_newton_system(g, u, labels, p)
    full = labels.full_field(30)
    full[unl] = u
    h = 1e-6
    for pos in range(0, unl.size, 3):
        up, um = full.copy(), full.copy()
        up[unl[pos]] += h
        um[unl[pos]] -= h
        fd = (energy(g, up, p, source=f) - energy(g, um, p, source=f)) / (2 * h)
        assert fd == pytest.approx(sys_.grad[pos], rel=1e-5, abs=1e-6)


def test_newton_step_hand_case():
    g = path_graph([1.0, 1.0])
    labels = LabelSet([0, 2], [0.0, 1.0])
    u = np.array([0.3])
    sys_ = assemble_newton_system(g, u, labels, 3.0)
    u1, rep = newton_step(sys_, u, 3.0)
    assert u1 == pytest.approx([0.5])
    assert rep.converged


def test_newton_step_p2_is_exact_solve(rng):
    g = random_connected_graph(rng, 20)
    labels = random_labels(rng, 20, 4)
    u = solve_p2(g, labels)
    res = variational_scaled_residual(g, u, labels, 2.0, dim=2)
    assert res < 1e-10
    assert np.array_equal(u[labels.indices], labels.values)


def test_solution_is_fixed_point(rng):
    g = random_connected_graph(rng, 25)
    labels = random_labels(rng, 25, 5)
    u, _ = solve_variational(g, labels, 4.0, schedule=None,
                             cfg=NewtonConfig(tol=1e-13))
    unl = labels.unlabeled(25)
    sys_ = assemble_newton_system(g, u[unl], labels, 4.0)
    u1, _ = newton_step(sys_, u[unl], 4.0)
    assert np.max(np.abs(u1 - u[unl])) < 1e-9


def test_path_symmetry_all_p():
    g = path_graph([1.0, 1.0])
    labels = LabelSet([0, 2], [0.0, 1.0])
    for p in (2.5, 3.0, 6.0, 20.0):
        u, _ = solve_variational(g, labels, p, schedule=None,
                                 cfg=NewtonConfig(tol=1e-12))
        assert u[1] == pytest.approx(0.5, abs=1e-10)


def test_disconnected_rejected(rng):
    from scipy import sparse

    from plaplearn import WeightedGraph

    W = sparse.block_diag([np.array([[0, 1], [1, 0]])] * 2, format="csr").astype(float)
    g = WeightedGraph(W, sigma=0.5, dim=1)
    with pytest.raises(ValueError):
        solve_variational(g, LabelSet([0], [1.0]), 3.0)


def test_asymmetric_rejected(rng):
    from plaplearn import knn_kernel_graph
    from plaplearn.continuum import gaussian_bump

    g = knn_kernel_graph(rng.random((20, 2)), 3, gaussian_bump, mode="nonsymmetric")
    with pytest.raises(ValueError):
        solve_variational(g, LabelSet([0], [1.0]), 3.0)


def test_maximum_principle(rng):
    for trial in range(5):
        g = random_connected_graph(rng, 40)
        labels = random_labels(rng, 40, 6)
        u, _ = solve_variational(g, labels, 5.0, cfg=NewtonConfig(tol=1e-11))
        assert u.min() >= labels.values.min() - 1e-9
        assert u.max() <= labels.values.max() + 1e-9


def test_homotopy_path_independence(rng):
    # Both ladders must land on the same minimizer: energies agree to
    # round-off; the sup-norm gap is bounded through the energy curvature,
    # which flattens as p grows (near-zero coefficients on small-difference
    # edges), so the pointwise comparison is run at a moderate p.
    g = random_connected_graph(rng, 50)
    labels = random_labels(rng, 50, 6)
    cfg = NewtonConfig(tol=1e-13)
    u1, _ = solve_variational(g, labels, 6.0, schedule="auto", cfg=cfg)
    u2, _ = solve_variational(g, labels, 6.0,
                              schedule=HomotopySchedule((3.0, 4.5, 6.0)), cfg=cfg)
    assert np.max(np.abs(u1 - u2)) < 1e-8
    e1, e2 = energy(g, u1, 6.0), energy(g, u2, 6.0)
    assert abs(e1 - e2) <= 1e-14 * max(abs(e1), 1e-30)

    u1, _ = solve_variational(g, labels, 9.0, schedule="auto", cfg=cfg)
    u2, _ = solve_variational(g, labels, 9.0,
                              schedule=HomotopySchedule((3.0, 5.0, 9.0)), cfg=cfg)
    e1, e2 = energy(g, u1, 9.0), energy(g, u2, 9.0)
    assert abs(e1 - e2) <= 1e-14 * max(abs(e1), 1e-30)


def test_scaled_residual_recomputed_below_tol(rng):
    g = random_connected_graph(rng, 40)
    labels = random_labels(rng, 40, 5)
    tol = 1e-11
    u, rep = solve_variational(g, labels, 9.0, cfg=NewtonConfig(tol=tol))
    res = variational_scaled_residual(g, u, labels, 9.0, dim=2)
    assert res <= tol
    assert rep.stages[-1].residuals[-1] <= tol


def test_positive_definiteness_with_distinct_values(rng):
    # Connected coefficient graph plus one labeled coupling keeps the
    # Newton matrix positive definite when all field values are distinct.
    for trial in range(20):
        n = int(rng.integers(10, 60))
        g = random_connected_graph(rng, n)
        labels = random_labels(rng, n, max(1, n // 10))
        unl = labels.unlabeled(n)
        u = rng.standard_normal(unl.size)
        sys_ = assemble_newton_system(g, u, labels, 3.0)
        eigs = np.linalg.eigvalsh(sys_.L.toarray())
        assert eigs[0] > 0


def test_default_ladder_shapes():
    lad = default_ladder(50.0).ladder
    assert lad == (3.0, 4.0, 6.0, 8.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0, 50.0)
    lad = default_ladder(12.0).ladder
    assert lad[-1] == 12.0 and all(b > a for a, b in zip(lad, lad[1:]))
    lad = default_ladder(80.0).ladder
    assert lad[-1] == 80.0 and 50.0 in lad
    with pytest.raises(ValueError):
        default_ladder(2.5)
    with pytest.raises(ValueError):
        HomotopySchedule((2.5, 3.0))
    with pytest.raises(ValueError):
        HomotopySchedule((4.0, 3.0))


def test_nonconvergence_carries_partial_report(rng):
    g = random_connected_graph(rng, 30)
    labels = random_labels(rng, 30, 4)
    with pytest.raises(SolverError) as err:
        solve_variational(g, labels, 30.0, schedule=None,
                          cfg=NewtonConfig(tol=1e-13, max_outer=2))
    assert err.value.report is not None
    assert err.value.report.stages[0].iterations == 2


def test_report_json_round_trip(rng):
    import json

    g = random_connected_graph(rng, 20)
    labels = random_labels(rng, 20, 3)
    _, rep = solve_variational(g, labels, 4.0, cfg=NewtonConfig(tol=1e-10, seed=11))
    payload = json.loads(rep.to_json())
    assert payload["method"] == "newton"
    assert payload["seed"] == 11
    assert payload["stages"][0]["iterations"] == len(payload["stages"][0]["residuals"])
