import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from immpnn.autodiff import Tensor
from immpnn.erf import pascal_contributions
from immpnn.graph import GraphInputError, empty_graph, grid_graph, path_graph
from immpnn.layers import (
    BackboneKind,
    GcnLayer,
    backbone_forward,
    gcn_forward,
    sum_mlp_forward,
    uniform_propagate,
)

from test_graph import random_graphs


def fixed_layer(W, b=None, activation=True):
    W = np.asarray(W, dtype=float)
    b = np.zeros((1, W.shape[1])) if b is None else np.asarray(b, dtype=float).reshape(1, -1)
    return GcnLayer(Tensor(W), Tensor(b), activation)


def test_gcn_p2_identity():
    out = gcn_forward(fixed_layer(np.eye(1), activation=False), path_graph(2), Tensor([[1.0], [0.0]]))
    np.testing.assert_allclose(out.values, [[0.5], [0.5]])


def test_gcn_zero_weights():
    out = gcn_forward(fixed_layer(np.zeros((3, 2))), grid_graph(3), Tensor(np.ones((9, 3))))
    np.testing.assert_array_equal(out.values, 0.0)


def test_gcn_isolated_node_sees_only_itself():
    W = np.array([[2.0, -1.0]])
    out = gcn_forward(fixed_layer(W, activation=False), empty_graph(1), Tensor([[3.0]]))
    np.testing.assert_allclose(out.values, [[6.0, -3.0]])


def test_sum_mlp_examples():
    W, b = np.array([[1.0, -2.0]]), np.array([0.5, 0.5])
    out = sum_mlp_forward(fixed_layer(W, b), empty_graph(1), Tensor([[1.5]]))
    np.testing.assert_allclose(out.values, np.maximum(1.5 * W + b, 0))
    out = sum_mlp_forward(fixed_layer(np.eye(1)), path_graph(3), Tensor([[1.0], [2.0], [4.0]]))
    assert out.values[1, 0] == 7.0


def test_shape_mismatch():
    with pytest.raises(GraphInputError):
        gcn_forward(fixed_layer(np.eye(1)), path_graph(3), Tensor(np.ones((2, 1))))
    with pytest.raises(GraphInputError):
        sum_mlp_forward(fixed_layer(np.eye(1)), path_graph(3), Tensor(np.ones((4, 1))))


@settings(max_examples=40, deadline=None)
@given(random_graphs(), st.integers(0, 10_000), st.sampled_from(list(BackboneKind)))
def test_permutation_equivariance(g, seed, kind):
    rng = np.random.default_rng(seed)
    layer = GcnLayer.init(rng, 3, 4)
    x = rng.standard_normal((g.n, 3))
    perm = rng.permutation(g.n)
    x_perm = np.empty_like(x)
    x_perm[perm] = x
    out = backbone_forward(kind, layer, g, Tensor(x)).values
    out_perm = backbone_forward(kind, layer, g.relabel(perm), Tensor(x_perm)).values
    np.testing.assert_allclose(out_perm[perm], out, atol=1e-12)


def test_uniform_propagate_examples():
    x = np.zeros(7, dtype=np.int64)
    x[3] = 1
    g = path_graph(7)
    assert uniform_propagate(g, x, 2).tolist() == [0, 1, 0, 2, 0, 1, 0]
    assert uniform_propagate(g, x, 3).tolist() == [1, 0, 3, 0, 3, 0, 1]
    assert uniform_propagate(g, x, 0).tolist() == x.tolist()


@pytest.mark.parametrize("ell", range(21))
def test_uniform_propagate_is_pascal(ell):
    n = 2 * ell + 1
    x = np.zeros(n, dtype=np.int64)
    x[ell] = 1
    y = uniform_propagate(path_graph(n), x, ell)
    assert y[::2].tolist() == pascal_contributions(ell)
    assert not y[1::2].any()


def test_uniform_propagate_exact_beyond_int64():
    x = np.zeros(141, dtype=np.int64)
    x[70] = 1
    y = uniform_propagate(path_graph(141), x, 70)
    assert y[::2].tolist() == pascal_contributions(70)


@settings(max_examples=40, deadline=None)
@given(random_graphs(), st.integers(0, 10_000))
def test_gcn_linf_bound(g, seed):
    rng = np.random.default_rng(seed)
    layer = GcnLayer.init(rng, 3, 2, activation=False)
    x = rng.standard_normal((g.n, 3)) * 4
    out = gcn_forward(layer, g, Tensor(x)).values
    W = layer.W.values
    bound = np.abs(x).max() * np.abs(W).sum(axis=0).max() + np.abs(layer.b.values).max()
    assert np.abs(out).max() <= bound + 1e-12
