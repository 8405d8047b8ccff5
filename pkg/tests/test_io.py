import json
import math

import numpy as np
import pytest

from src.network.domains import Box, LpBall, Polyhedron
from src.network.io import (
    ParseError,
    load_network,
    load_query,
    parse_network,
    parse_query,
    serialize_network,
    serialize_query,
)


def _net_doc(**overrides):
    doc = {
        "layers": [
            {"weights": [[1, 0], [0, 1]], "bias": [0, 0], "activation": "relu"},
            {"weights": [[1, -1]], "bias": [0.5]},
        ]
    }
    doc["layers"][0].update(overrides)
    return doc


def test_fixtures_parse(fixtures_dir, running_net):
    net = load_network(str(fixtures_dir / "running_example" / "network.json"))
    assert net == running_net
    query = load_query(str(fixtures_dir / "running_example" / "query.json"), net)
    assert query.direction == "<"
    assert query.threshold == 0.0
    assert isinstance(query.input_domain, Box)
    gt = load_query(str(fixtures_dir / "running_example" / "query_gt.json"), net)
    assert (gt.direction, gt.threshold) == (">", 20.0)


def test_network_round_trip(running_net):
    assert parse_network(serialize_network(running_net)) == running_net


def test_query_with_embedded_network(running_query):
    text = serialize_query(running_query, embed_network=True)
    query = parse_query(text)
    assert query.network == running_query.network
    np.testing.assert_allclose(query.input_domain.lower, [-1.0, -1.0])


def test_query_without_network_fails():
    text = json.dumps({"input": {"kind": "box", "lower": [0], "upper": [1]}})
    with pytest.raises(ParseError) as err:
        parse_query(text)
    assert err.value.path == "network"


def test_bias_length_mismatch():
    doc = _net_doc(bias=[0, 0, 0])
    with pytest.raises(ParseError) as err:
        parse_network(json.dumps(doc))
    assert err.value.path == "layers.0.bias"


def test_width_mismatch():
    doc = _net_doc()
    doc["layers"][1]["weights"] = [[1, 1, 1]]
    with pytest.raises(ParseError) as err:
        parse_network(json.dumps(doc))
    assert err.value.path == "layers.1.weights"


def test_unknown_activation():
    with pytest.raises(ParseError) as err:
        parse_network(json.dumps(_net_doc(activation="tanh")))
    assert err.value.path == "layers.0.activation"


def test_ragged_weights():
    with pytest.raises(ParseError):
        parse_network(json.dumps(_net_doc(weights=[[1, 0], [1]])))


def test_non_identity_output_layer():
    doc = _net_doc()
    doc["layers"][1]["activation"] = "relu"
    with pytest.raises(ParseError):
        parse_network(json.dumps(doc))


def test_malformed_json():
    with pytest.raises(ParseError):
        parse_network("{not json")


def test_linf_domains(running_net):
    ball = parse_query(json.dumps({"input": {"kind": "linf", "center": [0, 0], "eps": 0.5}}), running_net)
    assert isinstance(ball.input_domain, LpBall)
    assert math.isinf(ball.input_domain.p)
    clipped = parse_query(
        json.dumps({"input": {"kind": "linf", "center": [0.9, 0], "eps": 0.5, "clip": [-1, 1]}}), running_net
    )
    assert isinstance(clipped.input_domain, Box)
    np.testing.assert_allclose(clipped.input_domain.upper, [1.0, 0.5])
    np.testing.assert_allclose(clipped.input_domain.lower, [0.4, -0.5])


def test_lp_ball_and_polyhedron(running_net):
    q = parse_query(json.dumps({"input": {"kind": "lp_ball", "center": [0, 0], "radius": 1, "p": 2}}), running_net)
    assert q.input_domain.p == 2.0
    poly = parse_query(
        json.dumps({"input": {"kind": "polyhedron", "A": [[1, 0], [-1, 0], [0, 1], [0, -1]], "b": [-1, -1, -1, -1]}}),
        running_net,
    )
    assert isinstance(poly.input_domain, Polyhedron)
    assert parse_query(serialize_query(poly), running_net).input_domain.A.shape == (4, 2)


def test_domain_dimension_mismatch(running_net):
    with pytest.raises(ParseError) as err:
        parse_query(json.dumps({"input": {"kind": "box", "lower": [0], "upper": [1]}}), running_net)
    assert err.value.path == "input"


def test_inverted_box(running_net):
    with pytest.raises(ParseError):
        parse_query(json.dumps({"input": {"kind": "box", "lower": [1, 1], "upper": [0, 0]}}), running_net)
