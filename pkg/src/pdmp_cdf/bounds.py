"""CDF bounds under interval-uncertain, time-varying switching rates.

Rates are allowed to change over time within entrywise intervals
[lower_ij, upper_ij]; nature plays against (or for) the process by picking
the rate matrix pointwise.  Because each semi-Lagrangian update is affine
in the rates, the pointwise optimizer is bang-bang and known in closed
form, so the bound sweep costs the same as a fixed-rate solve.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cdf_solver import SemiLagrangianStep, _sweep, causal_tau, check_causality, solve_cdf, solve_min_cost
from .errors import ConfigError, NumericsError
from .model import CdfField, Grid, MinCostField, ProblemSpec, RateBounds, RateMatrix


@dataclass(frozen=True)
class BoundPair:
    """Pointwise lower and upper CDF envelopes for rates roaming the bounds."""

    lower: CdfField
    upper: CdfField
    rate_bounds: RateBounds


@dataclass(frozen=True)
class MinCostBounds:
    """Minimal-cost field with attainment-probability envelopes."""

    s0: np.ndarray
    w0_upper: np.ndarray
    w0_lower: np.ndarray
    grid: Grid

    def upper_field(self) -> MinCostField:
        return MinCostField(self.grid, self.s0, self.w0_upper)

    def lower_field(self) -> MinCostField:
        return MinCostField(self.grid, self.s0, self.w0_lower)


def optimal_rates_pointwise(
    diffs: np.ndarray, bounds: RateBounds, sense: str, mode: int
) -> np.ndarray:
    """Bang-bang optimal rates for one node update.

    ``diffs[j]`` is the interpolated value gap w_j - w_i at the step foot.
    Minimizing picks the upper rate where the gap is nonpositive (drain as
    much as possible) and the lower rate otherwise; maximizing flips the
    inequalities.  Ties at zero gap take the upper rate in both senses; the
    update value is unaffected there.
    """
    d = np.asarray(diffs, dtype=float)
    lo = bounds.lower[mode]
    hi = bounds.upper[mode]
    if sense == "min":
        return np.where(d <= 0.0, hi, lo)
    if sense == "max":
        return np.where(d >= 0.0, hi, lo)
    raise ConfigError(f"unknown optimization sense {sense!r}")


def _bound_update(step: SemiLagrangianStep, bounds: RateBounds, sense: str):
    """Level-update closure for one bound field."""
    grid = step.grid
    i = step.mode
    step_len = np.full(grid.n_nodes, step.tau)
    if step.cap_nodes.size:
        step_len[step.cap_nodes] = step.cap_theta_tau

    def update(st: SemiLagrangianStep, w: np.ndarray, n: int) -> np.ndarray:
        src = st.per_source_values(w, n)
        base = src[i]
        acc = base.copy()
        for j in range(src.shape[0]):
            if j == i:
                continue
            diff = src[j] - base
            rate = np.where(
                (diff <= 0.0) if sense == "min" else (diff >= 0.0),
                bounds.upper[i, j],
                bounds.lower[i, j],
            )
            acc = acc + step_len * rate * diff
        acc[st.esc_nodes] = 0.0
        return acc

    return update


def solve_bounds(
    spec: ProblemSpec,
    grid: Grid,
    tau: float | None = None,
    restrict: MinCostBounds | None = None,
) -> BoundPair:
    """Upper and lower CDF envelopes by adversarial-rate sweeps.

    The per-node optimizer uses only previous-level values, consistent with
    the causal sweep, so no within-level iteration is needed.  The implied
    one-step probabilities must stay valid: tau times the largest total
    upper rate may not exceed one.
    """
    rb = spec.require_rate_bounds()
    node_costs = np.array([spec.modes[i].cost.at(grid, grid.points) for i in range(spec.n_modes)])
    if tau is None:
        tau = causal_tau(spec, grid, node_costs)
    check_causality(tau, float(node_costs.min()), grid.ds)
    max_total = float(rb.upper.sum(axis=1).max())
    if tau * max_total > 1.0 + 1e-12:
        raise NumericsError(
            f"tau * max total upper rate = {tau * max_total:.6g} exceeds 1; "
            "the adversarial update would leave [0, 1]"
        )
    steps = [
        SemiLagrangianStep(spec, grid, tau, i, costs=node_costs[i], rates=None)
        for i in range(spec.n_modes)
    ]
    fields = {}
    for sense, name in (("max", "upper"), ("min", "lower")):
        updates = [_bound_update(st, rb, sense) for st in steps]
        mc = None
        if restrict is not None:
            mc = restrict.upper_field() if sense == "max" else restrict.lower_field()
        w = _sweep(spec, grid, steps, mc, lambda st, w_arr, n, _u=updates: _u[st.mode](st, w_arr, n))
        fields[name] = CdfField(grid, w, spec=spec, tau=tau, variant=f"rate-bounds-{name}")
    return BoundPair(lower=fields["lower"], upper=fields["upper"], rate_bounds=rb)


def solve_min_cost_bounds(spec: ProblemSpec, grid: Grid) -> MinCostBounds:
    """Minimal attainable cost with envelope attainment probabilities.

    The minimal cost itself is rate-independent; only the probability
    transport term is extremized within the bounds.
    """
    spec.require_rate_bounds()
    up = solve_min_cost(spec, grid, rate_sense="upper")
    lo = solve_min_cost(spec, grid, rate_sense="lower")
    return MinCostBounds(s0=up.s0, w0_upper=up.w0, w0_lower=lo.w0, grid=grid)


def default_rate_grid(levels=(1.0, 2.0, 3.0, 4.0)) -> list[RateMatrix]:
    """Two-mode sweep grid over all rate pairs in ``levels`` x ``levels``."""
    out = []
    for l12 in levels:
        for l21 in levels:
            out.append(RateMatrix([[0.0, l12], [l21, 0.0]]))
    return out


def fixed_rate_sweep(
    spec: ProblemSpec,
    grid: Grid,
    rate_grid: list[RateMatrix],
    tau: float | None = None,
    restrict: bool = False,
    max_workers: int = 1,
) -> list[CdfField]:
    """Fixed-rate CDFs for a list of candidate rate matrices.

    Every matrix must respect the problem's rate bounds when bounds are
    given.  These solves sample the fixed-unknown-rates uncertainty model;
    they are labeled as samples, not bounds, in exported data.
    """
    rb = spec.rates if isinstance(spec.rates, RateBounds) else None
    for k, rm in enumerate(rate_grid):
        if rm.n_modes != spec.n_modes:
            raise ConfigError(f"rate matrix {k} has the wrong mode count")
        if rb is not None and not rb.contains(rm):
            raise ConfigError(f"rate matrix {k} lies outside the problem's rate bounds")

    def one(rm: RateMatrix) -> CdfField:
        mc = None
        if restrict:
            mc = solve_min_cost(_fixed(spec, rm), grid)
        return solve_cdf(spec, grid, tau=tau, restrict=mc, rates=rm)

    if max_workers <= 1 or len(rate_grid) <= 1:
        return [one(rm) for rm in rate_grid]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(one, rate_grid))


def _fixed(spec: ProblemSpec, rates: RateMatrix) -> ProblemSpec:
    return ProblemSpec(
        dim=spec.dim, lo=spec.lo, hi=spec.hi, exit_set=spec.exit_set,
        modes=spec.modes, rates=rates, controls=spec.controls, name=spec.name,
    )
