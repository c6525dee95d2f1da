import numpy as np
import pytest

from plaplearn import (
    LabelSet,
    energy,
    game_operator,
    graph_infinity,
    graph_laplacian_2,
    variational_residual,
)

from conftest import path_graph, random_connected_graph, random_labels


def test_energy_constant_field_zero(rng):
    g = random_connected_graph(rng, 20)
    for p in (2.0, 3.0, 7.0, np.inf):
        assert energy(g, np.full(20, 3.7), p) == 0.0


def test_energy_hand_values():
    g = path_graph([1.0, 1.0])
    u = np.array([0.0, 0.5, 1.0])
    assert energy(g, u, 2.0) == pytest.approx(0.25)
    assert energy(g, u, np.inf) == pytest.approx(0.5)


def test_energy_rejects_p_below_2(rng):
    g = path_graph([1.0])
    with pytest.raises(ValueError):
        energy(g, np.zeros(2), 1.5)


def test_energy_checks_label_constraints():
    g = path_graph([1.0, 1.0])
    labels = LabelSet([0, 2], [0.0, 1.0])
    u = np.array([0.0, 0.5, 0.7])
    with pytest.raises(ValueError):
        energy(g, u, 3.0, labels=labels)
    energy(g, np.array([0.0, 0.5, 1.0]), 3.0, labels=labels)


def test_variational_residual_hand_values():
    g = path_graph([1.0, 1.0])
    u = np.array([0.0, 0.5, 1.0])
    for p in (3.0, 5.0, 9.0):
        assert variational_residual(g, u, p)[1] == 0.0
    w = 0.37
    g2 = path_graph([w])
    assert variational_residual(g2, np.array([0.0, 1.0]), 7.0)[0] == pytest.approx(w)


def test_variational_residual_matches_p2_laplacian(rng):
    g = random_connected_graph(rng, 25)
    u = rng.random(25)
    assert np.array_equal(variational_residual(g, u, 2.0), graph_laplacian_2(g, u))


def test_laplacian2_hand_values():
    g = path_graph([1.0])
    assert np.allclose(graph_laplacian_2(g, np.array([0.0, 1.0])), [1.0, -1.0])
    g3 = random_connected_graph(np.random.default_rng(0), 10)
    assert np.allclose(graph_laplacian_2(g3, np.full(10, 2.0)), 0.0)


def test_infinity_hand_values():
    g = path_graph([1.0, 1.0])
    assert np.allclose(graph_infinity(g, np.array([0.0, 0.0, 1.0]))[1], 1.0)
    assert np.allclose(graph_infinity(g, np.array([0.0, 1.0, 1.0]))[1], -1.0)
    assert np.allclose(graph_infinity(g, np.full(3, 5.0)), 0.0)


def test_infinity_include_zero_clamps():
    g = path_graph([1.0, 1.0])
    u = np.array([0.0, -1.0, -2.0])  # strictly decreasing: all diffs at 1 positive/negative
    mid_default = graph_infinity(g, u)[1]
    mid_clamped = graph_infinity(g, u, include_zero=True)[1]
    # neighbor diffs at vertex 1: (0-(-1))=1 and (-2-(-1))=-1; both agree here
    assert mid_default == mid_clamped
    end_default = graph_infinity(g, u)[0]      # only neighbor diff is -1
    end_clamped = graph_infinity(g, u, include_zero=True)[0]
    assert end_default == pytest.approx(-2.0)  # min + max = -1 + -1
    assert end_clamped == pytest.approx(-1.0)  # max clamped at 0


def test_infinity_isolated_vertex_errors():
    from scipy import sparse

    from plaplearn import WeightedGraph

    W = sparse.csr_matrix((3, 3))
    W[0, 1] = W[1, 0] = 1.0
    g = WeightedGraph(sparse.csr_matrix(W))
    with pytest.raises(ValueError):
        graph_infinity(g, np.zeros(3))


def test_game_operator_hand_value_and_limits():
    g = path_graph([1.0, 1.0])
    u = np.array([0.0, 1.0, 1.0])
    assert game_operator(g, u, 3.0)[1] == pytest.approx(-0.5)
    assert np.allclose(game_operator(g, u, 2.0), graph_laplacian_2(g, u) / (2 * g.degrees))
    assert np.allclose(game_operator(g, u, np.inf), graph_infinity(g, u))
    assert np.allclose(game_operator(g, u, np.inf, lam=2.5), 2.5 * graph_infinity(g, u))


def test_translation_invariance(rng):
    # Exact in real arithmetic; u + c re-rounds each entry in floats, so the
    # comparison allows last-ulp noise.
    g = random_connected_graph(rng, 30)
    u = rng.random(30)
    for c in (-3.0, 0.7, 12.0):
        assert np.allclose(
            variational_residual(g, u + c, 4.0), variational_residual(g, u, 4.0),
            rtol=1e-11, atol=1e-12,
        )
        assert np.allclose(
            game_operator(g, u + c, 5.0), game_operator(g, u, 5.0),
            rtol=1e-11, atol=1e-12,
        )


def test_homogeneity(rng):
    g = random_connected_graph(rng, 30)
    u = rng.standard_normal(30)
    p = 4.0
    for c in (-2.0, 0.5, 3.0):
        lhs = variational_residual(g, c * u, p)
        rhs = np.sign(c) * abs(c) ** (p - 1) * variational_residual(g, u, p)
        assert np.allclose(lhs, rhs, rtol=1e-12)
    for c in (0.5, 3.0):
        assert np.allclose(
            game_operator(g, c * u, p), c * game_operator(g, u, p), rtol=1e-12
        )


def test_gradient_identity_finite_differences(rng):
    g = random_connected_graph(rng, 20)
    labels = random_labels(rng, 20, 4)
    unl = labels.unlabeled(20)
    f = rng.standard_normal(20)
    p = 3.5
    u = labels.full_field(20)
    u[unl] = rng.random(unl.size)
    h = 1e-6
    res = variational_residual(g, u, p)
    for i in unl[:8]:
        up, um = u.copy(), u.copy()
        up[i] += h
        um[i] -= h
        fd = (energy(g, up, p, source=f) - energy(g, um, p, source=f)) / (2 * h)
        assert fd == pytest.approx(-res[i] + f[i], rel=1e-6, abs=1e-6)


def test_infinity_weight_scaling_one_homogeneous(rng):
    g = random_connected_graph(rng, 25)
    u = rng.random(25)
    for c in (0.3, 2.0):
        assert np.allclose(
            graph_infinity(g.scaled(c), u), c * graph_infinity(g, u), rtol=1e-12
        )


def test_label_set_validation():
    with pytest.raises(ValueError):
        LabelSet([], [])
    with pytest.raises(ValueError):
        LabelSet([1, 1], [0.0, 1.0])
    with pytest.raises(ValueError):
        LabelSet([0, 1], [0.0])
    ls = LabelSet([3, 1], [0.3, 0.1])
    assert np.array_equal(ls.indices, [1, 3])
    assert np.array_equal(ls.values, [0.1, 0.3])
    with pytest.raises(ValueError):
        ls.validate_for(3)
