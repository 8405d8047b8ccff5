import math

import numpy as np
import pytest

from src.network.domains import Box, LpBall, Polyhedron, Query
from src.network.model import Activation, DimensionError, Layer, Network, activate
from src.network.variables import LinearConstraint, Var, all_vars, output_at_least


def test_forward_trace_of_running_example(running_net):
    out, trace = running_net.forward([0.4, -0.6])
    assert out == pytest.approx([22.1])
    np.testing.assert_allclose(trace.pre[1], [1.4, 2.6, -0.6])
    np.testing.assert_allclose(trace.post[1], [1.4, 2.6, 0.6])
    np.testing.assert_allclose(trace.pre[2], [3.4, 0.2])
    np.testing.assert_allclose(trace.post[2], [3.4, 0.2])
    np.testing.assert_allclose(trace.output, [22.1])


def test_network_shape(running_net):
    assert running_net.depth == 3
    assert running_net.widths == [2, 3, 2, 1]
    assert list(running_net.hidden_layers()) == [1, 2]
    assert running_net.layer(1).activation == Activation.ABS
    with pytest.raises(IndexError):
        running_net.layer(0)


def test_negated_flips_only_the_output(running_net):
    neg = running_net.negated()
    assert neg(np.array([0.4, -0.6])) == pytest.approx([-22.1])
    assert neg.layers[:-1] == running_net.layers[:-1]


def test_activations():
    x = np.array([-2.0, 0.0, 3.0])
    np.testing.assert_allclose(activate(Activation.RELU, x), [0.0, 0.0, 3.0])
    np.testing.assert_allclose(activate(Activation.LEAKY_RELU, x, 0.1), [-0.2, 0.0, 3.0])
    np.testing.assert_allclose(activate(Activation.ABS, x), [2.0, 0.0, 3.0])
    np.testing.assert_allclose(activate(Activation.IDENTITY, x), x)


def test_layer_validation():
    with pytest.raises(DimensionError):
        Layer(weights=[[1.0, 2.0]], bias=[0.0, 1.0])
    with pytest.raises(ValueError):
        Layer(weights=[[np.nan]], bias=[0.0])
    with pytest.raises(ValueError):
        Layer(weights=[[1.0]], bias=[0.0], activation=Activation.LEAKY_RELU, slope=1.5)


def test_network_validation():
    hidden = Layer(weights=[[1.0, 0.0], [0.0, 1.0]], bias=[0.0, 0.0], activation=Activation.RELU)
    with pytest.raises(DimensionError):
        Network(layers=(hidden, Layer(weights=[[1.0, 1.0, 1.0]], bias=[0.0])))
    with pytest.raises(ValueError, match="identity"):
        Network(layers=(hidden,))
    with pytest.raises(DimensionError):
        Network(layers=())


def test_forward_rejects_wrong_input_size(running_net):
    with pytest.raises(DimensionError):
        running_net([1.0, 2.0, 3.0])


def test_canonical_query(running_query):
    canon = running_query.canonical()
    assert canon.direction == ">"
    assert canon.threshold == 0.0
    x = np.array([0.4, -0.6])
    assert canon.network(x)[0] == pytest.approx(-running_query.network(x)[0])
    gt = Query(running_query.network, running_query.input_domain, threshold=20.0, direction=">")
    assert gt.canonical() is gt


def test_is_violated_by(running_net, unit_box):
    gt = Query(running_net, unit_box, threshold=20.0, direction=">")
    assert gt.is_violated_by(np.array([0.4, -0.6]))
    assert not gt.is_violated_by(np.array([1.5, 0.0]))
    lt = Query(running_net, unit_box, threshold=0.0, direction="<")
    assert not lt.is_violated_by(np.array([0.4, -0.6]))


def test_query_validation(running_net):
    with pytest.raises(ValueError):
        Query(running_net, Box([-1, -1], [1, 1]), direction=">=")
    with pytest.raises(DimensionError):
        Query(running_net, Box([-1], [1]))


def test_domains():
    with pytest.raises(ValueError):
        Box([1.0], [0.0])
    ball = LpBall(center=[0.0, 0.0], radius=1.0, p=2.0)
    assert ball.dual_norm_order == 2.0
    np.testing.assert_allclose(ball.project(np.array([3.0, 4.0])), [0.6, 0.8])
    assert ball.as_box() is None
    linf = LpBall(center=[1.0, 1.0], radius=0.5, p=math.inf)
    assert linf.dual_norm_order == 1.0
    box = linf.as_box()
    np.testing.assert_allclose(box.lower, [0.5, 0.5])
    with pytest.raises(ValueError):
        LpBall(center=[0.0], radius=0.0)

    # x >= 0, y >= 0, x + y <= 1
    tri = Polyhedron(A=[[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], b=[0.0, 0.0, -1.0])
    assert tri.contains(np.array([0.2, 0.3]))
    assert not tri.contains(np.array([0.8, 0.3]))
    lo, hi = tri.bounding_box()
    np.testing.assert_allclose(lo, [0.0, 0.0], atol=1e-9)
    np.testing.assert_allclose(hi, [1.0, 1.0], atol=1e-9)


def test_linear_constraint(running_net):
    row = LinearConstraint.of({Var.pre(2, 1): 2.0, Var.hat(1, 0): -1.0, Var.hat(1, 2): 0.0}, 3.0)
    assert row.variables() == [Var.hat(1, 0), Var.pre(2, 1)]
    assert row.layers() == (1, 2)
    _, trace = running_net.forward([0.4, -0.6])
    assert row.lhs(trace.pre, trace.post) == pytest.approx(2 * 0.2 - 1.4)
    assert LinearConstraint.of({}, 1.0).layers() == (0, 0)


def test_variable_order(running_net):
    variables = all_vars(running_net)
    assert len(variables) == 2 + 3 + 3 + 2 + 2 + 1
    assert variables[0] == Var.hat(0, 0)
    assert variables[2] == Var.pre(1, 0)
    assert variables[-1] == Var.pre(3, 0)
    assert Var.from_dict(Var.hat(1, 2).to_dict()) == Var.hat(1, 2)
    with pytest.raises(ValueError):
        Var(layer=1, kind="post", index=0)


def test_output_at_least(running_net):
    row = output_at_least(running_net, 20.0)
    assert row.terms == ((Var.pre(3, 0), -1.0),)
    assert row.rhs == -20.0
