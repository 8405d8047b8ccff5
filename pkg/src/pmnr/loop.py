"""The outer tightening loop: single-neuron bounds, plane generation, LP post-tightening, repeat."""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from src.bounds.dualopt import ConstraintPolyhedron, Objective, PgdConfig, maximize_dual
from src.bounds.posttighten import count_revisions, post_tighten
from src.bounds.sbt import BoundsState, SingleRelax, deeppoly
from src.bounds.simplex import LpConfig
from src.network.domains import InputDomain, Query
from src.network.model import Network
from src.network.variables import LinearConstraint, output_at_least
from src.pmnr.bhso import InfeasibleBranch, generate_pmnr
from src.pmnr.planes import HyperPlane, merge_planes
from src.pmnr.selection import NeuronGroup, NothingToSelect, nsse_scores, pmnr_all_groups, select_neurons, span_scores
from src.settings import PMNR_DEFAULTS


logger = logging.getLogger(__name__)


class PmnrConfig(BaseModel):
    variant: Literal["pmnr", "pmnr_random", "pmnr_all"] = Field(default_factory=lambda: PMNR_DEFAULTS["variant"])
    group_size: int = Field(default_factory=lambda: PMNR_DEFAULTS["group_size"], ge=2, le=3)
    iterations: int = Field(default_factory=lambda: PMNR_DEFAULTS["iterations"], ge=1)
    scorer: Literal["nsse", "span"] = Field(default_factory=lambda: PMNR_DEFAULTS["scorer"])
    seed: int = Field(default_factory=lambda: PMNR_DEFAULTS["seed"])
    stop_on_no_revision: bool = Field(default_factory=lambda: PMNR_DEFAULTS["stop_on_no_revision"])
    use_output_constraint: bool = Field(default_factory=lambda: PMNR_DEFAULTS["use_output_constraint"])
    refine_with_intervals: bool = Field(default_factory=lambda: PMNR_DEFAULTS["refine_with_intervals"])
    alpha_final_steps: int = Field(default_factory=lambda: PMNR_DEFAULTS["alpha_final_steps"], ge=0)
    pgd: PgdConfig = Field(default_factory=PgdConfig)
    lp: LpConfig = Field(default_factory=LpConfig)


@dataclass
class IterationRecord:
    iteration: int
    groups: List[NeuronGroup]
    planes_added: int
    revisions: int
    output_bounds: Tuple[float, float]
    seconds: float


@dataclass
class PmnrResult:
    """Bounds and planes of the canonical ('>') query; negated tells whether the output was flipped."""

    bounds: BoundsState
    initial_bounds: BoundsState
    planes: List[HyperPlane] = field(default_factory=list)
    infeasible: List[InfeasibleBranch] = field(default_factory=list)
    history: List[IterationRecord] = field(default_factory=list)
    negated: bool = False

    @property
    def contradiction(self) -> bool:
        return self.bounds.contradiction

    @property
    def iterations(self) -> int:
        return len(self.history)

    def output_bounds(self) -> Tuple[float, float]:
        """Output interval in the query's own orientation."""
        lo, hi = self.bounds.output_bounds()
        return (-hi, -lo) if self.negated else (lo, hi)

    def planes_to_dict(self) -> Dict:
        return {
            "planes": [p.to_dict() for p in self.planes],
            "infeasible_branches": [b.to_dict() for b in self.infeasible],
        }


def pick_alphas(
    net: Network, din: InputDomain, relax: SingleRelax, steps: int
) -> Tuple[List[np.ndarray], List[np.ndarray], List[np.ndarray]]:
    """(α_select, α_gener, α_final): the first two are the relaxation's own slopes,
    the last one comes from a short ascent on the output lower bound."""
    initial = [a.copy() for a in relax.alpha]
    if steps == 0:
        return initial, [a.copy() for a in initial], [a.copy() for a in initial]
    pgd = PgdConfig(iters=steps, optimize_alpha=True)
    _, state = maximize_dual(net, din, relax, ConstraintPolyhedron(), Objective.output(net), pgd)
    final = [np.zeros(0)] + [state.alpha[i] for i in range(1, net.depth)] + [relax.alpha[net.depth].copy()]
    return initial, [a.copy() for a in initial], final


def _output_closed(bounds: BoundsState, threshold: float) -> bool:
    return bounds.output_bounds()[1] <= threshold


def _groups_for(net: Network, bounds: BoundsState, relax: SingleRelax, config: PmnrConfig, rng) -> List[NeuronGroup]:
    if config.variant == "pmnr_all":
        return pmnr_all_groups(net, bounds, config.group_size)
    scores = nsse_scores(net, bounds, relax) if config.scorer == "nsse" else span_scores(net, bounds)
    try:
        group = select_neurons(scores, config.group_size, config.variant, rng)
    except NothingToSelect:
        return []
    return [group] if len(group) >= 2 else []


def pmnr_loop(query: Query, config: Optional[PmnrConfig] = None) -> PmnrResult:
    """Tighten every neuron bound of the query's network over its input domain.

    With use_output_constraint the bounds (and planes) hold on the part of
    the input domain whose output reaches the threshold; a contradiction then
    means no input does.
    """
    config = config or PmnrConfig()
    canon = query.canonical()
    net, din = canon.network, canon.input_domain
    dout: Optional[LinearConstraint] = output_at_least(net, canon.threshold) if config.use_output_constraint else None
    rng = np.random.default_rng(config.seed)

    planes: List[HyperPlane] = []
    infeasible: List[InfeasibleBranch] = []
    history: List[IterationRecord] = []
    state: Optional[BoundsState] = None
    initial: Optional[BoundsState] = None

    for it in range(1, config.iterations + 1):
        started = time.monotonic()
        bounds, relax = deeppoly(net, din, prior=state, refine_with_intervals=config.refine_with_intervals)
        if initial is None:
            initial = bounds.copy()
        if dout is not None and not bounds.contradiction and _output_closed(bounds, canon.threshold):
            bounds.mark_contradiction()
        if bounds.contradiction:
            state = bounds
            history.append(IterationRecord(it, [], 0, 0, bounds.output_bounds(), time.monotonic() - started))
            break

        _, alpha_gener, alpha_final = pick_alphas(net, din, relax, config.alpha_final_steps)
        relax_gener = relax.with_alpha(alpha_gener)
        groups = _groups_for(net, bounds, relax, config, rng)
        known = [p.constraint() for p in planes] + ([dout] if dout is not None else [])
        added: List[HyperPlane] = []
        for group in groups:
            generated = generate_pmnr(net, din, bounds, relax_gener, group, known, config.pgd)
            added.extend(generated.planes)
            infeasible.extend(b for b in generated.infeasible if b not in infeasible)
        fresh = merge_planes(planes, added)

        relax_final = relax.with_alpha(alpha_final)
        tightened = post_tighten(net, din, bounds, relax_final, [p.constraint() for p in planes], dout, config.lp)
        if dout is not None and not tightened.contradiction and _output_closed(tightened, canon.threshold):
            tightened.mark_contradiction()
        revisions = count_revisions(bounds, tightened)
        state = tightened
        history.append(IterationRecord(it, groups, fresh, revisions, tightened.output_bounds(), time.monotonic() - started))
        logger.info(
            "pmnr iteration %d: %d groups, %d planes, %d revisions, output %s%s",
            it, len(groups), fresh, revisions, tightened.output_bounds(),
            " (contradiction)" if tightened.contradiction else "",
        )
        if tightened.contradiction or (config.stop_on_no_revision and revisions == 0):
            break

    return PmnrResult(
        bounds=state,
        initial_bounds=initial,
        planes=planes,
        infeasible=infeasible,
        history=history,
        negated=query.direction == "<",
    )

