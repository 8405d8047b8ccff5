import numpy as np
import pytest

from src.bounds.dualopt import (
    ConstraintPolyhedron,
    Objective,
    PgdConfig,
    dual_value,
    infimum_over_domain,
    maximize_dual,
    output_lower_bound,
)
from src.bounds.posttighten import RelaxedEncoding, objective_vector
from src.bounds.relax import alpha_range
from src.bounds.sbt import deeppoly
from src.bounds.simplex import LpStatus, UnboundedLpError, solve
from src.network.domains import Box, LpBall, Polyhedron
from src.network.model import Activation
from src.network.variables import LinearConstraint, Var


def _layer_terms(rng, layer: int, width: int):
    terms = {}
    for j in range(width):
        terms[Var.hat(layer, j)] = float(rng.normal())
        terms[Var.pre(layer, j)] = float(rng.normal())
    return terms


def _trace_row(rng, net, x, layer: int, slack: float = 0.5) -> LinearConstraint:
    """A random row over one layer that the trace of x satisfies with the given slack."""
    _, trace = net.forward(x)
    row = LinearConstraint.of(_layer_terms(rng, layer, net.widths[layer]), 0.0)
    return LinearConstraint.of(dict(row.terms), row.lhs(trace.pre, trace.post) + slack)


def _lp_minimum(net, din, bounds, relax, rows, terms) -> float:
    lp = RelaxedEncoding(net, bounds, relax, rows, din).program()[0]
    out = solve(lp.with_objective(objective_vector(net, terms)))
    assert out.status == LpStatus.OPTIMAL
    return out.value


def test_zero_gamma_is_back_substitution(running_net, unit_box):
    bounds, relax = deeppoly(running_net, unit_box)
    assert output_lower_bound(running_net, unit_box, relax) == pytest.approx(-0.15, abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_zero_gamma_matches_deeppoly_on_random_networks(make_random_query, seed):
    query = make_random_query(seed, hidden=(4, 3))
    net, din = query.network, query.input_domain
    bounds, relax = deeppoly(net, din)
    assert output_lower_bound(net, din, relax) == pytest.approx(bounds.output_bounds()[0], abs=1e-8)
    assert -output_lower_bound(net.negated(), din, deeppoly(net.negated(), din)[1]) == pytest.approx(
        bounds.output_bounds()[1], abs=1e-8
    )


@pytest.mark.parametrize("seed", range(6))
def test_weak_duality_against_the_lp(running_net, unit_box, seed):
    rng = np.random.default_rng(seed)
    net = running_net.negated()
    bounds, relax = deeppoly(net, unit_box, refine_with_intervals=True)
    x = rng.uniform(-1.0, 1.0, size=2)
    rows = [_trace_row(rng, net, x, 1), _trace_row(rng, net, x, 2)]
    poly = ConstraintPolyhedron(list(rows))
    terms = _layer_terms(rng, 2, 2)
    obj = Objective.from_terms(net, terms)
    lp_min = _lp_minimum(net, unit_box, bounds, relax, rows, terms)

    gamma = rng.uniform(0.0, 1.0, size=len(rows))
    value, state = dual_value(net, unit_box, relax, poly, obj, gamma=gamma)
    assert value <= lp_min + 1e-6
    assert state.gamma.shape == (2,)

    start, _ = dual_value(net, unit_box, relax, poly, obj)
    best, best_state = maximize_dual(net, unit_box, relax, poly, obj, PgdConfig(iters=80))
    assert best >= start - 1e-9
    assert best <= lp_min + 1e-6
    assert np.all(best_state.gamma >= 0.0)


@pytest.mark.parametrize("seed", range(10))
def test_weak_duality_with_random_slopes(make_random_query, seed):
    rng = np.random.default_rng(1000 + seed)
    query = make_random_query(seed, hidden=(3, 3), activations=[Activation.RELU, Activation.LEAKY_RELU, Activation.ABS])
    net, din = query.network, query.input_domain
    bounds, relax = deeppoly(net, din, refine_with_intervals=True)
    alpha = [a.copy() for a in relax.alpha]
    for i, j in relax.unfixed_neurons():
        layer = net.layer(i)
        alpha[i][j] = rng.uniform(*alpha_range(layer.activation, layer.slope))
    relaxed = relax.with_alpha(alpha)

    x = rng.uniform(din.lower, din.upper)
    rows = [_trace_row(rng, net, x, 1), _trace_row(rng, net, x, 2)]
    terms = _layer_terms(rng, 2, net.widths[2])
    lp_min = _lp_minimum(net, din, bounds, relaxed, rows, terms)
    gamma = rng.uniform(0.0, 2.0, size=len(rows))
    value, _ = dual_value(
        net, din, relaxed, ConstraintPolyhedron(list(rows)), Objective.from_terms(net, terms), gamma=gamma, alpha=alpha
    )
    assert value <= lp_min + 1e-6


def test_plane_multiplier_closes_the_gap(running_net, unit_box):
    net = running_net.negated()
    _, relax = deeppoly(net, unit_box, refine_with_intervals=True)
    neg = Objective.from_terms(net, {Var.hat(2, 0): -1.0, Var.hat(2, 1): -3.0})
    without, _ = dual_value(net, unit_box, relax, ConstraintPolyhedron(), neg)
    assert without == pytest.approx(-26.25)
    # every trace has ĥ(2,0) + 3 ĥ(2,1) <= 14; γ = 1 cancels the objective exactly
    cut = LinearConstraint.of({Var.hat(2, 0): 1.0, Var.hat(2, 1): 3.0}, 14.0)
    exact, state = dual_value(net, unit_box, relax, ConstraintPolyhedron([cut]), neg, gamma=[1.0])
    assert exact == pytest.approx(-14.0)
    assert not np.any(state.nu[2])
    best, _ = maximize_dual(net, unit_box, relax, ConstraintPolyhedron([cut]), neg, PgdConfig(iters=150))
    assert without - 1e-9 <= best <= -14.0 + 1e-6


def test_invalid_duals_are_rejected(running_net, unit_box):
    bounds, relax = deeppoly(running_net, unit_box)
    poly = ConstraintPolyhedron([LinearConstraint.of({Var.hat(1, 1): 1.0}, 5.0)])
    obj = Objective.output(running_net)
    with pytest.raises(ValueError, match="negative"):
        dual_value(running_net, unit_box, relax, poly, obj, gamma=[-0.5])
    with pytest.raises(ValueError):
        dual_value(running_net, unit_box, relax, poly, obj, gamma=[0.1, 0.2])
    alpha = [a.copy() for a in relax.alpha]
    alpha[1][1] = 2.0
    with pytest.raises(ValueError, match="alpha"):
        dual_value(running_net, unit_box, relax, poly, obj, alpha=alpha)


def test_infimum_over_domain():
    assert infimum_over_domain([1.0, -1.0], Box([-1.0, -1.0], [1.0, 1.0])) == pytest.approx(-2.0)
    assert infimum_over_domain([3.0, 4.0], LpBall([0.0, 0.0], 1.0, 2.0)) == pytest.approx(-5.0)
    assert infimum_over_domain([3.0, -4.0], LpBall([1.0, 0.0], 0.5, np.inf)) == pytest.approx(3.0 - 3.5)
    # x0 >= 2, x1 free
    half_plane = Polyhedron([[-1.0, 0.0]], [2.0])
    assert infimum_over_domain([1.0, 0.0], half_plane) == pytest.approx(2.0)
    with pytest.raises(UnboundedLpError):
        infimum_over_domain([-1.0, 0.0], half_plane)


def test_objective_helpers(running_net):
    obj = Objective.from_terms(running_net, {Var.hat(2, 1): 2.0, Var.pre(3, 0): -1.0})
    assert obj.hat[2][1] == 2.0
    assert obj.pre[3][0] == -1.0
    assert Objective.zeros(running_net).is_zero()
    assert not obj.is_zero()
