import json
import math
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from src.network.domains import Box, InputDomain, LpBall, Polyhedron, Query
from src.network.model import Activation, Layer, Network


class ParseError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


SUPPORTED_ACTIVATIONS = {a.value for a in Activation}


class LayerDoc(BaseModel):
    model_config = ConfigDict(allow_inf_nan=False, extra="forbid")

    weights: List[List[float]]
    bias: List[float]
    activation: str = "identity"
    slope: float = 0.0

    @field_validator("activation")
    @classmethod
    def _known_activation(cls, v: str) -> str:
        v = v.strip().lower()
        if v not in SUPPORTED_ACTIVATIONS:
            raise ValueError(f"unsupported activation {v!r}")
        return v

    @field_validator("weights")
    @classmethod
    def _rectangular(cls, v: List[List[float]]) -> List[List[float]]:
        if not v or not v[0]:
            raise ValueError("weights must be a non-empty matrix")
        if any(len(row) != len(v[0]) for row in v):
            raise ValueError("weight rows differ in length")
        return v


class NetworkDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    layers: List[LayerDoc] = Field(min_length=1)


class BoxDoc(BaseModel):
    model_config = ConfigDict(allow_inf_nan=False)

    kind: Literal["box"]
    lower: List[float]
    upper: List[float]


class LinfDoc(BaseModel):
    model_config = ConfigDict(allow_inf_nan=False)

    kind: Literal["linf"]
    center: List[float]
    eps: float = Field(gt=0)
    clip: Optional[List[float]] = None


class LpBallDoc(BaseModel):
    kind: Literal["lp_ball"]
    center: List[float]
    radius: float = Field(gt=0)
    p: Union[float, Literal["inf"]] = 2.0


class PolyhedronDoc(BaseModel):
    model_config = ConfigDict(allow_inf_nan=False)

    kind: Literal["polyhedron"]
    A: List[List[float]]
    b: List[float]


class OutputDoc(BaseModel):
    direction: Literal[">", "<"] = ">"
    threshold: float = 0.0


class QueryDoc(BaseModel):
    input: Union[BoxDoc, LinfDoc, LpBallDoc, PolyhedronDoc] = Field(discriminator="kind")
    output: OutputDoc = OutputDoc()
    network: Optional[NetworkDoc] = None


def _path(loc) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def _reraise(err: ValidationError, prefix: str = "") -> ParseError:
    first = err.errors()[0]
    path = _path(first.get("loc", ()))
    if prefix:
        path = f"{prefix}.{path}" if path != "<root>" else prefix
    return ParseError(path, first.get("msg", "invalid value"))


def _build_network(doc: NetworkDoc, prefix: str = "layers") -> Network:
    layers: List[Layer] = []
    for k, ld in enumerate(doc.layers):
        if len(ld.bias) != len(ld.weights):
            raise ParseError(f"{prefix}.{k}.bias", f"length {len(ld.bias)} does not match {len(ld.weights)} weight rows")
        if layers and len(ld.weights[0]) != layers[-1].out_dim:
            raise ParseError(
                f"{prefix}.{k}.weights",
                f"expects {len(ld.weights[0])} inputs but the previous layer has width {layers[-1].out_dim}",
            )
        try:
            layers.append(Layer(ld.weights, ld.bias, Activation(ld.activation), ld.slope))
        except ValueError as e:
            raise ParseError(f"{prefix}.{k}", str(e)) from e
    try:
        return Network(tuple(layers))
    except ValueError as e:
        raise ParseError(prefix, str(e)) from e


def parse_network(text: Union[str, bytes]) -> Network:
    try:
        doc = NetworkDoc.model_validate_json(text)
    except ValidationError as e:
        raise _reraise(e) from e
    return _build_network(doc)


def _build_domain(doc) -> InputDomain:
    try:
        if isinstance(doc, BoxDoc):
            return Box(doc.lower, doc.upper)
        if isinstance(doc, LinfDoc):
            if doc.clip is None:
                return LpBall(doc.center, doc.eps, math.inf)
            center = np.asarray(doc.center, dtype=float)
            lo, hi = doc.clip
            return Box(np.maximum(center - doc.eps, lo), np.minimum(center + doc.eps, hi))
        if isinstance(doc, LpBallDoc):
            p = math.inf if doc.p == "inf" else float(doc.p)
            return LpBall(doc.center, doc.radius, p)
        return Polyhedron(doc.A, doc.b)
    except ValueError as e:
        raise ParseError("input", str(e)) from e


def parse_query(text: Union[str, bytes], network: Optional[Network] = None) -> Query:
    """Parse a query document; the network comes from the argument or an embedded "network" key."""
    try:
        doc = QueryDoc.model_validate_json(text)
    except ValidationError as e:
        raise _reraise(e) from e
    if network is None:
        if doc.network is None:
            raise ParseError("network", "no network given and none embedded in the query")
        network = _build_network(doc.network, prefix="network.layers")
    domain = _build_domain(doc.input)
    try:
        return Query(network, domain, threshold=doc.output.threshold, direction=doc.output.direction)
    except ValueError as e:
        raise ParseError("input", str(e)) from e


def network_to_dict(net: Network) -> dict:
    layers = []
    for layer in net.layers:
        entry = {
            "weights": layer.weights.tolist(),
            "bias": layer.bias.tolist(),
            "activation": layer.activation.value,
        }
        if layer.activation == Activation.LEAKY_RELU:
            entry["slope"] = layer.slope
        layers.append(entry)
    return {"layers": layers}


def serialize_network(net: Network) -> str:
    return json.dumps(network_to_dict(net), indent=2)


def domain_to_dict(domain: InputDomain) -> dict:
    if isinstance(domain, Box):
        return {"kind": "box", "lower": domain.lower.tolist(), "upper": domain.upper.tolist()}
    if isinstance(domain, LpBall):
        p = "inf" if math.isinf(domain.p) else domain.p
        return {"kind": "lp_ball", "center": domain.center.tolist(), "radius": domain.radius, "p": p}
    return {"kind": "polyhedron", "A": domain.A.tolist(), "b": domain.b.tolist()}


def serialize_query(query: Query, embed_network: bool = False) -> str:
    doc = {
        "input": domain_to_dict(query.input_domain),
        "output": {"direction": query.direction, "threshold": query.threshold},
    }
    if embed_network:
        doc["network"] = network_to_dict(query.network)
    return json.dumps(doc, indent=2)


def load_network(path: str) -> Network:
    with open(path, "rb") as f:
        return parse_network(f.read())


def load_query(path: str, network: Optional[Network] = None) -> Query:
    with open(path, "rb") as f:
        return parse_query(f.read(), network)
