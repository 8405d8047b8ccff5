"""Branch-hybrid optimization of plane biases.

Each plane's bias comes from three candidates: the dual bound over the whole
relaxation, the worst dual bound among the phase branches of the group, and
the interval fallback. Planes are optimized one after another; each finished
plane joins the constraint polyhedron of the next.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from src.bounds.dualopt import ConstraintPolyhedron, Objective, PgdConfig, maximize_dual
from src.bounds.relax import phases
from src.bounds.sbt import BoundsState, NeuronId, SingleRelax, restrict_to_phases
from src.network.domains import InputDomain
from src.network.model import Network
from src.network.variables import LinearConstraint, Var
from src.pmnr.planes import HyperPlane, initial_planes, lhs_interval
from src.pmnr.selection import NeuronGroup
from src.settings import SOUNDNESS_TOL


logger = logging.getLogger(__name__)


@dataclass
class InfeasibleBranch:
    layer: int
    neurons: Tuple[int, ...]
    phases: Tuple[int, ...]

    def fixings(self) -> Dict[NeuronId, int]:
        return {(self.layer, j): p for j, p in zip(self.neurons, self.phases)}

    def to_dict(self) -> Dict:
        return {"layer": self.layer, "neurons": list(self.neurons), "phases": list(self.phases)}


@dataclass
class GenerationResult:
    planes: List[HyperPlane] = field(default_factory=list)
    infeasible: List[InfeasibleBranch] = field(default_factory=list)


def phase_restriction_rows(fixings: Dict[NeuronId, int]) -> List[LinearConstraint]:
    """x <= 0 for negative-phase neurons and -x <= 0 for positive-phase ones."""
    rows = []
    for (i, j), phase_id in sorted(fixings.items()):
        sign = 1.0 if phase_id == 0 else -1.0
        rows.append(LinearConstraint.of({Var.pre(i, j): sign}, 0.0))
    return rows


def branch_combinations(net: Network, bounds: BoundsState, group: NeuronGroup) -> List[Tuple[int, ...]]:
    layer = net.layer(group.layer)
    options = []
    for j in group.neurons:
        l, u = float(bounds.pre_lower[group.layer][j]), float(bounds.pre_upper[group.layer][j])
        options.append([p.id for p in phases(layer.activation, l, u, layer.slope)])
    return list(itertools.product(*options))


def _negated_objective(net: Network, plane: HyperPlane) -> Objective:
    return Objective.from_terms(net, {var: -coeff for var, coeff in plane.terms})


def generate_pmnr(
    net: Network,
    din: InputDomain,
    bounds: BoundsState,
    relax: SingleRelax,
    group: NeuronGroup,
    prior: Sequence[LinearConstraint] = (),
    pgd: Optional[PgdConfig] = None,
    tol: float = SOUNDNESS_TOL,
) -> GenerationResult:
    """Planes for one neuron group, biases tightened by dual ascent on the whole relaxation and per branch.

    prior holds constraints already known to hold (earlier planes, the
    output region); the generated planes are valid wherever prior is.
    """
    pgd = pgd or PgdConfig()
    result = GenerationResult()
    combos = branch_combinations(net, bounds, group)
    branch_setup = []
    for combo in combos:
        fixings = {(group.layer, j): p for j, p in zip(group.neurons, combo)}
        branch_setup.append(
            (
                combo,
                restrict_to_phases(net, bounds, fixings),
                relax.with_phase(net, bounds, fixings),
                phase_restriction_rows(fixings),
            )
        )

    poly = ConstraintPolyhedron(list(prior))
    flagged = set()
    for plane in initial_planes(net, bounds, relax, group.ids):
        obj = _negated_objective(net, plane)
        t_optim, _ = maximize_dual(net, din, relax, poly, obj, pgd)
        branch_values = []
        for combo, b_bounds, b_relax, rows in branch_setup:
            t_b, _ = maximize_dual(net, din, b_relax, poly.extended(rows), obj, pgd)
            branch_values.append(t_b)
            lo_b, _ = lhs_interval(net, plane.terms, b_bounds)
            if t_b > -lo_b + tol and combo not in flagged:
                flagged.add(combo)
                result.infeasible.append(InfeasibleBranch(group.layer, group.neurons, tuple(combo)))
                logger.info("branch %s of layer %d neurons %s is infeasible", combo, group.layer, group.neurons)
        t = max(t_optim, min(branch_values)) if branch_values else t_optim
        plane.dual_bound = t_optim
        plane.branch_bounds = branch_values
        plane.bias = min(-t, plane.feasibility_bias)
        poly.add(plane.constraint())
        result.planes.append(plane)
        logger.debug(
            "plane %s eps=%s: dual %.4f, branches %s, fallback %.4f -> bias %.4f",
            plane.template, plane.epsilon, -t_optim, [round(-v, 4) for v in branch_values], plane.feasibility_bias, plane.bias,
        )
    return result
