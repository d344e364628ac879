"""Continuous-state solvers for the uncontrolled exit-cost problem.

The CDF solver discretizes the coupled transport system

    grad w_i . f_i  -  C_i dw_i/ds  +  sum_{j != i} rate_ij (w_j - w_i) = 0

with a first-order semi-Lagrangian step: at every node the update traces
the mode-i characteristic for a pseudo-timestep tau and reads the
multilinearly interpolated field at the foot point and at threshold
s - tau*C_i, mixing modes with the one-step transition probabilities.
Positivity of the running cost makes the sweep causal in s, so a single
upward pass suffices.

Steps whose characteristic reaches the boundary are capped at the exact
crossing: the crossing fraction theta is charged theta*tau*C_i of cost and
the boundary condition is evaluated at the crossing point.  Segments that
leave the domain off the exit set contribute zero (immediate failure).

The minimal attainable cost s0 (free mode switching) and its attainment
probability w0 are computed by iterated upwind sweeps in 1D and by
Dijkstra-like label setting (or vectorized monotone sweeps, for large
control sets) in 2D; their conservatively rounded-up levels restrict the
CDF computation and remove smearing at the lower envelope.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError, NumericsError
from .model import (
    CdfField,
    Grid,
    MinCostField,
    ProblemSpec,
    RateMatrix,
    transition_probabilities,
)

ESCAPE_COST = 1e30  # expected-cost sentinel for trajectories leaving off the exit set


def causal_tau(spec: ProblemSpec, grid: Grid, costs: np.ndarray | None = None) -> float:
    """Default pseudo-timestep: smallest tau keeping the sweep causal.

    Equality tau * min C = ds makes the threshold foot land exactly on the
    previous level whenever the running cost is constant, which removes all
    interpolation in s for the built-in problems.
    """
    c_min = float(np.min(costs)) if costs is not None else spec.min_cost_rate()
    if c_min <= 0.0:
        raise NumericsError("running cost must be positive")
    return grid.ds / c_min


def check_causality(tau: float, min_cost: float, ds: float) -> None:
    if tau * min_cost < ds * (1.0 - 1e-9):
        raise NumericsError(
            f"step tau={tau:.6g} with min running cost {min_cost:.6g} reads "
            f"threshold levels above the current one (needs tau*C >= ds={ds:.6g})"
        )


# ---------------------------------------------------------------------------
# one-step semi-Lagrangian kernel
# ---------------------------------------------------------------------------


def _segment_exit(spec: ProblemSpec, x: np.ndarray, disp: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First boundary event along the segments x -> x + disp.

    Returns (theta, is_exit, crossing_point) with theta = inf where the
    segment stays inside the closed box and enters no exit box.
    """
    n = x.shape[0]
    theta = np.full(n, np.inf)
    hit_exit = np.zeros(n, dtype=bool)
    exit_faces = set(spec.exit_set.face_names(spec.dim)) if spec.exit_set.kind in ("boundary", "faces") else set()
    names_min = ("x_min", "y_min")
    names_max = ("x_max", "y_max")
    for a in range(spec.dim):
        for side, bound, name in ((0, spec.lo[a], names_min[a]), (1, spec.hi[a], names_max[a])):
            d = disp[:, a]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (bound - x[:, a]) / d
            moving = d < 0 if side == 0 else d > 0
            t = np.where(moving, t, np.inf)
            t = np.maximum(t, 0.0)
            better = t < theta - 1e-15
            theta = np.where(better, t, theta)
            hit_exit = np.where(better, name in exit_faces, hit_exit)
    if spec.exit_set.kind == "boxes":
        for box in spec.exit_set.boxes:
            t_in = np.zeros(n)
            t_out = np.full(n, np.inf)
            inside_possible = np.ones(n, dtype=bool)
            for a, (b_lo, b_hi) in enumerate(box):
                d = disp[:, a]
                with np.errstate(divide="ignore", invalid="ignore"):
                    t0 = (b_lo - x[:, a]) / d
                    t1 = (b_hi - x[:, a]) / d
                swap = d < 0
                lo_t = np.where(swap, t1, t0)
                hi_t = np.where(swap, t0, t1)
                stuck = np.abs(d) < 1e-300
                in_slab = (x[:, a] >= b_lo) & (x[:, a] <= b_hi)
                lo_t = np.where(stuck, np.where(in_slab, 0.0, np.inf), lo_t)
                hi_t = np.where(stuck, np.where(in_slab, np.inf, -np.inf), hi_t)
                t_in = np.maximum(t_in, lo_t)
                t_out = np.minimum(t_out, hi_t)
                inside_possible &= np.isfinite(lo_t) | in_slab
            enters = inside_possible & (t_in <= t_out) & (t_in >= 0.0)
            better = enters & (t_in < theta - 1e-15)
            theta = np.where(better, t_in, theta)
            hit_exit = np.where(better, True, hit_exit)
    with np.errstate(invalid="ignore", over="ignore"):
        cross = np.where(np.isfinite(theta)[:, None], x + theta[:, None] * disp, x)
    return theta, hit_exit, cross


class SemiLagrangianStep:
    """Precomputed one-step update data for one (mode, action) pair.

    Nodes are classified once: *regular* steps stay in the domain and read
    the interpolated previous solution, *capped* steps reach the exit set
    at a fraction theta of the step and evaluate the boundary condition at
    the crossing, and *escaping* steps leave the domain off the exit set.
    """

    def __init__(
        self,
        spec: ProblemSpec,
        grid: Grid,
        tau: float,
        mode: int,
        action: np.ndarray | None = None,
        velocities: np.ndarray | None = None,
        costs: np.ndarray | None = None,
        prob_method: str = "first_order",
        rates: RateMatrix | None = None,
    ):
        self.spec = spec
        self.grid = grid
        self.tau = float(tau)
        self.mode = mode
        m = spec.n_modes
        pts = grid.points
        vel = velocities if velocities is not None else spec.modes[mode].dynamics.at(grid, pts, action)
        cost = costs if costs is not None else spec.modes[mode].cost.at(grid, pts, action)
        self.node_cost = np.asarray(cost, dtype=float)
        disp = tau * np.asarray(vel, dtype=float)
        if rates is None and spec.fixed_rates:
            rates = spec.rates
        self.rates = rates
        self.probs = transition_probabilities(rates, tau, prob_method)[mode] if rates is not None else None

        theta, hit_exit, cross = _segment_exit(spec, pts, disp)
        live = ~grid.exit_mask
        capped = live & hit_exit & (theta <= 1.0 + 1e-12)
        escaped = live & ~hit_exit & (theta <= 1.0 + 1e-12)
        regular = live & ~capped & ~escaped

        self.reg_nodes = np.where(regular)[0]
        self.cap_nodes = np.where(capped)[0]
        self.esc_nodes = np.where(escaped)[0]

        foot = np.clip(pts[self.reg_nodes] + disp[self.reg_nodes], grid.lo, grid.hi)
        self.reg_idx, self.reg_w = grid.spatial_stencil(foot) if self.reg_nodes.size else (
            np.zeros((1 << grid.dim, 0), dtype=int), np.zeros((1 << grid.dim, 0)))
        off = tau * self.node_cost[self.reg_nodes] / grid.ds
        shift = np.ceil(off - 1e-12).astype(int)
        frac = shift - off
        frac[frac < 1e-12] = 0.0
        # within the causality tolerance off may sit a hair below 1; snap so no
        # weight ever lands on the level being written
        frac[shift <= 1] = 0.0
        if np.any(shift < 1):
            raise NumericsError("causality violated: some step reads its own threshold level")
        self.reg_shift = shift
        self.reg_frac = frac
        # group regular nodes by level shift so each group is one vector gather
        self.reg_groups = [np.where(shift == s)[0] for s in np.unique(shift)]

        # capped steps: transition probabilities over the shortened interval
        th = np.clip(theta[self.cap_nodes], 0.0, 1.0)
        self.cap_theta_tau = th * tau
        self.cap_ds = self.cap_theta_tau * self.node_cost[self.cap_nodes]
        qx = cross[self.cap_nodes]
        self.cap_q = np.column_stack(
            [spec.modes[j].exit_cost.at(grid, qx) for j in range(m)]
        ) if self.cap_nodes.size else np.zeros((0, m))
        if rates is None:
            self.cap_probs = None
        elif prob_method == "first_order":
            qrow = rates.matrix[mode]
            self.cap_probs = np.zeros((self.cap_nodes.size, m))
            self.cap_probs[:, mode] = 1.0
            self.cap_probs += self.cap_theta_tau[:, None] * qrow[None, :]
        else:
            rows = []
            for t_k in self.cap_theta_tau:
                rows.append(transition_probabilities(rates, float(t_k), "exact")[mode])
            self.cap_probs = np.array(rows).reshape(self.cap_nodes.size, m)

    def _interp_one(self, w_level: np.ndarray, sel: np.ndarray) -> np.ndarray:
        return np.einsum("cn,cn->n", self.reg_w[:, sel], w_level[self.reg_idx[:, sel]])

    def per_source_values(self, w: np.ndarray, n: int) -> np.ndarray:
        """Interpolated W_j at this mode's foot points, shape (M, n_nodes).

        Capped nodes carry the per-final-mode boundary indicator; escaping
        nodes carry zero.  Exit-node columns are left at zero (callers
        overwrite them with boundary values).
        """
        m = w.shape[0]
        out = np.zeros((m, self.grid.n_nodes))
        for sel in self.reg_groups:
            shift = int(self.reg_shift[sel[0]])
            lo_lvl = n - shift
            frac = self.reg_frac[sel]
            nodes = self.reg_nodes[sel]
            if lo_lvl < 0:
                continue  # threshold foot below zero: flat zero extension
            for j in range(m):
                vals = (1.0 - frac) * self._interp_one(w[j, lo_lvl], sel)
                if lo_lvl + 1 <= n and np.any(frac > 0.0):
                    vals = vals + frac * self._interp_one(w[j, lo_lvl + 1], sel)
                out[j, nodes] = vals
        if self.cap_nodes.size:
            s_at_cross = n * self.grid.ds - self.cap_ds
            bc = (s_at_cross[:, None] >= self.cap_q - 1e-15).astype(float)
            out[:, self.cap_nodes] = bc.T
        return out

    def cdf_values(self, w: np.ndarray, n: int) -> np.ndarray:
        """Fixed-rate CDF update for every node at level n."""
        src = self.per_source_values(w, n)
        vals = np.einsum("j,jk->k", self.probs, src)
        if self.cap_nodes.size:
            s_at_cross = n * self.grid.ds - self.cap_ds
            bc = (s_at_cross[:, None] >= self.cap_q - 1e-15).astype(float)
            vals[self.cap_nodes] = np.einsum("kj,kj->k", self.cap_probs, bc)
        vals[self.esc_nodes] = 0.0
        return vals

    def expectation_values(self, v: np.ndarray, n: int) -> np.ndarray:
        """Companion expected-cost update (used by the control synthesis)."""
        m = v.shape[0]
        out = np.zeros(self.grid.n_nodes)
        tau_cost = self.tau * self.node_cost
        for sel in self.reg_groups:
            shift = int(self.reg_shift[sel[0]])
            lo_lvl = n - shift
            frac = self.reg_frac[sel]
            nodes = self.reg_nodes[sel]
            acc = np.zeros(sel.size)
            for j in range(m):
                if lo_lvl < 0:
                    vals = self._interp_one(v[j, 0], sel)  # flat extension below level zero
                else:
                    vals = (1.0 - frac) * self._interp_one(v[j, lo_lvl], sel)
                    if np.any(frac > 0.0):
                        vals = vals + frac * self._interp_one(v[j, lo_lvl + 1], sel)
                acc += self.probs[j] * vals
            out[nodes] = tau_cost[nodes] + acc
        if self.cap_nodes.size:
            out[self.cap_nodes] = self.cap_ds + np.einsum("kj,kj->k", self.cap_probs, self.cap_q)
        out[self.esc_nodes] = ESCAPE_COST
        return out


def boundary_values(spec: ProblemSpec, grid: Grid, mode: int, s: float) -> np.ndarray:
    """Exit-node CDF values at threshold s (zero elsewhere)."""
    vals = np.zeros(grid.n_nodes)
    ex = grid.exit_mask
    if np.any(ex):
        q = spec.modes[mode].exit_cost.at(grid, grid.points[ex])
        vals[ex] = (s >= q - 1e-15).astype(float)
    return vals


# ---------------------------------------------------------------------------
# CDF sweep
# ---------------------------------------------------------------------------


def solve_cdf(
    spec: ProblemSpec,
    grid: Grid,
    tau: float | None = None,
    restrict: MinCostField | None = None,
    prob_method: str = "first_order",
    velocities: np.ndarray | None = None,
    costs: np.ndarray | None = None,
    rates: RateMatrix | None = None,
) -> CdfField:
    """Solve for the exit-cost CDF of an uncontrolled problem.

    ``velocities``/``costs`` (shape (M, n_nodes, d) and (M, n_nodes)) replace
    the per-mode fields when given; this is how policy-frozen dynamics are
    evaluated.  ``restrict`` zeroes all levels below the rounded-up minimal
    attainable cost and seeds the first active level with its attainment
    probability, which both speeds up the sweep and removes smearing at the
    lower envelope.
    """
    if rates is not None:
        spec = _with_rates(spec, rates)
    spec.require_fixed_rates()
    if spec.controlled and velocities is None:
        raise ConfigError("controlled problems need the control module (or frozen fields)")
    node_costs = costs if costs is not None else np.array(
        [spec.modes[i].cost.at(grid, grid.points) for i in range(spec.n_modes)]
    )
    if tau is None:
        tau = causal_tau(spec, grid, node_costs)
    check_causality(tau, float(node_costs.min()), grid.ds)
    steps = [
        SemiLagrangianStep(
            spec, grid, tau, i,
            velocities=None if velocities is None else velocities[i],
            costs=node_costs[i],
            prob_method=prob_method,
        )
        for i in range(spec.n_modes)
    ]
    w = _sweep(spec, grid, steps, restrict, lambda step, w_arr, n: step.cdf_values(w_arr, n))
    return CdfField(grid, w, spec=spec, tau=tau, variant="fixed-rates")


def _with_rates(spec: ProblemSpec, rates: RateMatrix) -> ProblemSpec:
    return ProblemSpec(
        dim=spec.dim, lo=spec.lo, hi=spec.hi, exit_set=spec.exit_set,
        modes=spec.modes, rates=rates, controls=spec.controls, name=spec.name,
    )


def _sweep(spec, grid, steps, restrict, update) -> np.ndarray:
    m = spec.n_modes
    w = np.zeros((m, grid.n_levels, grid.n_nodes))
    first_level = restrict.first_level() if restrict is not None else None
    for i in range(m):
        w[i, 0] = boundary_values(spec, grid, i, 0.0)
    for n in range(1, grid.n_levels):
        s = n * grid.ds
        for i in range(m):
            vals = update(steps[i], w, n)
            if first_level is not None:
                vals = np.where(n < first_level, 0.0, vals)
                vals = np.where(n == first_level, restrict.w0[i], vals)
                # the seeded envelope is an O(ds) approximation, so the first
                # updates above it can dip below the seed; keep the CDF shape
                vals = np.maximum(vals, w[i, n - 1])
            bc = boundary_values(spec, grid, i, s)
            vals[grid.exit_mask] = bc[grid.exit_mask]
            w[i, n] = vals
    return w


# ---------------------------------------------------------------------------
# expected cost
# ---------------------------------------------------------------------------


def solve_expected(
    spec: ProblemSpec,
    grid: Grid,
    tol: float = 1e-8,
    max_iter: int = 20000,
    tau: float | None = None,
) -> np.ndarray:
    """Expected exit cost u[mode, node] by Gauss-Seidel sweeps.

    Sweeps run in axis-lexicographic node order, alternating direction
    every sweep, until the sup-norm change drops below ``tol``.
    """
    spec.require_fixed_rates()
    if spec.controlled:
        raise ConfigError("use the control module for controlled problems")
    if tau is None:
        speed = spec.max_speed()
        tau = grid.dx.min() / speed if speed > 0 else grid.ds
    steps = [SemiLagrangianStep(spec, grid, tau, i) for i in range(spec.n_modes)]
    m, n_nodes = spec.n_modes, grid.n_nodes
    u = np.zeros((m, n_nodes))
    q_exit = np.array([spec.modes[i].exit_cost.node_values(grid) for i in range(m)])
    for i in range(m):
        u[i, grid.exit_mask] = q_exit[i, grid.exit_mask]

    # flatten per-step data for scalar Gauss-Seidel updates
    plans = []
    for i, st in enumerate(steps):
        kind = np.zeros(n_nodes, dtype=np.int8)
        kind[st.cap_nodes] = 1
        kind[st.esc_nodes] = 2
        cap_val = np.zeros(n_nodes)
        if st.cap_nodes.size:
            cap_val[st.cap_nodes] = st.cap_ds + np.einsum("kj,kj->k", st.cap_probs, st.cap_q)
        reg_pos = np.full(n_nodes, -1, dtype=int)
        reg_pos[st.reg_nodes] = np.arange(st.reg_nodes.size)
        plans.append((kind, cap_val, reg_pos, st))

    interior = np.where(~grid.exit_mask)[0]
    orders = (interior, interior[::-1])
    for it in range(max_iter):
        delta = 0.0
        for k in orders[it % 2]:
            for i in range(m):
                kind, cap_val, reg_pos, st = plans[i]
                if kind[k] == 2:
                    new = ESCAPE_COST
                elif kind[k] == 1:
                    new = cap_val[k]
                else:
                    r = reg_pos[k]
                    foot = u[:, st.reg_idx[:, r]] @ st.reg_w[:, r]
                    new = st.tau * st.node_cost[k] + float(st.probs @ foot)
                delta = max(delta, abs(new - u[i, k]))
                u[i, k] = new
        if delta < tol:
            return u
    raise ConvergenceError(
        f"expected-cost sweeps did not converge in {max_iter} iterations", residual=delta
    )


# ---------------------------------------------------------------------------
# minimal attainable cost
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Candidate:
    """Upwind update candidate for one (mode, action): step time and foot stencil."""

    mode: int
    h: np.ndarray            # (n_nodes,) step duration to the first cell face
    cost: np.ndarray         # (n_nodes,) running cost at the node
    foot_a: np.ndarray       # (n_nodes,) first stencil node (flat, -1 if none)
    foot_b: np.ndarray       # (n_nodes,) second stencil node (flat, -1 if none)
    frac: np.ndarray         # (n_nodes,) weight of foot_b
    h_at_foot: np.ndarray    # (n_nodes,) step duration evaluated with foot-point speed


def _min_cost_candidates(spec: ProblemSpec, grid: Grid) -> list[_Candidate]:
    actions: list[np.ndarray | None]
    if spec.controlled:
        actions = [spec.controls.action(a) for a in range(spec.controls.n_actions)]
    else:
        actions = [None]
    pts = grid.points
    n = grid.n_nodes
    shape = grid.shape
    multi = np.array(np.unravel_index(np.arange(n), shape)).T
    cands = []
    for i in range(spec.n_modes):
        for act in actions:
            vel = spec.modes[i].dynamics.at(grid, pts, act)
            cost = spec.modes[i].cost.at(grid, pts, act)
            with np.errstate(divide="ignore"):
                t_axis = np.where(np.abs(vel) > 0, grid.dx / np.abs(vel), np.inf)
            h = t_axis.min(axis=1)
            ok = np.isfinite(h)
            axis = np.argmin(t_axis, axis=1)
            step_dir = np.sign(vel[np.arange(n), axis]).astype(int)
            nb = multi.copy()
            nb[np.arange(n), axis] += step_dir
            in_range = ok & np.all((nb >= 0) & (nb < np.array(shape)), axis=1)
            foot_a = np.where(in_range, grid.flat_index(np.clip(nb, 0, np.array(shape) - 1)), -1)
            foot_b = np.full(n, -1, dtype=int)
            frac = np.zeros(n)
            if spec.dim == 2:
                other = 1 - axis
                v_other = vel[np.arange(n), other]
                frac_val = np.abs(v_other) * h / grid.dx[other]
                frac_val = np.clip(np.where(np.isfinite(frac_val), frac_val, 0.0), 0.0, 1.0)
                nb2 = nb.copy()
                nb2[np.arange(n), other] += np.sign(v_other).astype(int)
                ok2 = in_range & (frac_val > 1e-15) & np.all((nb2 >= 0) & (nb2 < np.array(shape)), axis=1)
                foot_b = np.where(ok2, grid.flat_index(np.clip(nb2, 0, np.array(shape) - 1)), -1)
                frac = np.where(ok2, frac_val, 0.0)
            # duration evaluated with the foot-point (neighbor) speed, used for
            # the probability transport term of the first-order recursion
            h_foot = h.copy()
            if spec.modes[i].dynamics.kind == "tabulated":
                vel_at = np.where(in_range[:, None], vel[np.clip(foot_a, 0, n - 1)], vel)
                with np.errstate(divide="ignore"):
                    t_axis_f = np.where(np.abs(vel_at) > 0, grid.dx / np.abs(vel_at), np.inf)
                h_foot = t_axis_f.min(axis=1)
            cands.append(_Candidate(i, h, cost, foot_a, foot_b, frac, h_foot))
    return cands


def _foot_value(vals: np.ndarray, cand: _Candidate, k: int) -> float:
    a = cand.foot_a[k]
    if a < 0:
        return math.inf
    v = (1.0 - cand.frac[k]) * vals[a]
    b = cand.foot_b[k]
    if cand.frac[k] > 0.0:
        if b < 0:
            return math.inf
        v += cand.frac[k] * vals[b]
    return float(v)


def _w0_update(
    spec: ProblemSpec, w0: np.ndarray, cand: _Candidate, k: int,
    rate_pick,
) -> float:
    """First-order transport of the attainment probability along one step."""
    a, b, frac = cand.foot_a[k], cand.foot_b[k], cand.frac[k]
    i = cand.mode
    vals = w0[:, a] * (1.0 - frac)
    if frac > 0.0:
        vals = vals + frac * w0[:, b]
    h = float(cand.h_at_foot[k])
    coupling = 0.0
    for j in range(spec.n_modes):
        if j == i:
            continue
        diff = float(vals[j] - vals[i])
        coupling += rate_pick(i, j, diff) * diff
    return float(vals[i] + h * coupling)


def _rate_picker(spec: ProblemSpec, sense: str | None):
    if sense is None:
        lam = spec.require_fixed_rates().off_diagonal()
        return lambda i, j, diff: lam[i, j]
    rb = spec.require_rate_bounds()
    if sense == "upper":
        return lambda i, j, diff: rb.upper[i, j] if diff >= 0.0 else rb.lower[i, j]
    if sense == "lower":
        return lambda i, j, diff: rb.lower[i, j] if diff >= 0.0 else rb.upper[i, j]
    raise ConfigError(f"unknown rate sense {sense!r}")


def solve_min_cost(
    spec: ProblemSpec, grid: Grid, rate_sense: str | None = None,
    argmin_rtol: float = 1e-9, max_sweeps: int | None = None,
    method: str = "auto",
) -> MinCostField:
    """Minimal attainable cost s0 and its attainment probability per mode.

    ``rate_sense`` selects the probability transport rates: ``None`` uses
    the fixed rate matrix, ``"upper"``/``"lower"`` extremize within rate
    bounds term by term.  s0 itself never depends on the rates.

    In 2D the default is label setting; large candidate sets (many
    control directions) switch to vectorized fixed-point sweeps, which
    reach the same fixed point at far lower per-node overhead.
    """
    cands = _min_cost_candidates(spec, grid)
    rate_pick = _rate_picker(spec, rate_sense)
    n = grid.n_nodes
    m = spec.n_modes
    s0 = np.full(n, math.inf)
    q_min = np.full(n, math.inf)
    ex = np.where(grid.exit_mask)[0]
    for i in range(m):
        q_min[ex] = np.minimum(q_min[ex], spec.modes[i].exit_cost.at(grid, grid.points[ex]))
    s0[ex] = q_min[ex]
    if ex.size == 0:
        raise ConfigError("minimal-cost computation needs a nonempty exit set")

    if method == "auto":
        if grid.dim == 1:
            method = "sweep_1d"
        elif len(cands) * n > 2_000_000:
            method = "sweep"
        else:
            method = "label_setting"
    elif method == "label_setting" and grid.dim == 1:
        method = "sweep_1d"

    if method == "sweep_1d":
        s0 = _min_cost_sweep_1d(grid, cands, s0, max_sweeps)
    elif method == "label_setting":
        s0 = _min_cost_dijkstra(grid, cands, s0)
    elif method == "sweep":
        s0 = _min_cost_sweep_vec(grid, cands, s0)
    else:
        raise ConfigError(f"unknown minimal-cost method {method!r}")

    if not np.all(np.isfinite(s0[~grid.exit_mask])) and np.any(~grid.exit_mask):
        bad = np.where(~np.isfinite(s0) & ~grid.exit_mask)[0]
        if bad.size == n - ex.size:
            raise NumericsError("no node can reach the exit set (all speeds vanish?)")

    w0 = np.zeros((m, n))
    exit_argmin = np.zeros((m, ex.size), dtype=bool)
    for i in range(m):
        qi = spec.modes[i].exit_cost.at(grid, grid.points[ex])
        exit_argmin[i] = qi <= q_min[ex] + argmin_rtol * np.maximum(1.0, q_min[ex])
    w0[:, ex] = np.where(exit_argmin, 1.0, 0.0)

    if method == "sweep" or len(cands) * n > 2_000_000:
        _w0_fixed_point(spec, grid, cands, s0, w0, rate_pick, argmin_rtol)
    else:
        _w0_ordered(spec, grid, cands, s0, w0, rate_pick, argmin_rtol)
    return MinCostField(grid, s0, w0)


def _w0_ordered(spec, grid, cands, s0, w0, rate_pick, argmin_rtol):
    """Attainment probabilities filled in increasing-s0 (accepted) order."""
    interior = np.where(~grid.exit_mask & np.isfinite(s0))[0]
    order = interior[np.argsort(s0[interior], kind="stable")]
    for k in order:
        best = math.inf
        per_mode_best: dict[int, tuple[float, _Candidate]] = {}
        for cand in cands:
            val = cand.cost[k] * cand.h[k] + _foot_value(s0, cand, k)
            if not math.isfinite(val):
                continue
            prev = per_mode_best.get(cand.mode)
            if prev is None or val < prev[0]:
                per_mode_best[cand.mode] = (val, cand)
            best = min(best, val)
        if not math.isfinite(best):
            continue
        tol = argmin_rtol * max(1.0, abs(best))
        for i, (val, cand) in per_mode_best.items():
            if val <= best + tol:
                w0[i, k] = np.clip(_w0_update(spec, w0, cand, k, rate_pick), 0.0, 1.0)


def _cand_values_vec(cand: _Candidate, s0: np.ndarray) -> np.ndarray:
    """Vectorized update values of one candidate at every node."""
    with np.errstate(invalid="ignore"):
        ok = cand.foot_a >= 0
        fa = np.where(ok, cand.foot_a, 0)
        base = (1.0 - cand.frac) * s0[fa]
        need_b = cand.frac > 0.0
        fb_ok = cand.foot_b >= 0
        fb = np.where(fb_ok, cand.foot_b, 0)
        extra = np.where(need_b, cand.frac * s0[fb], 0.0)
        vals = cand.cost * cand.h + base + extra
        vals = np.where(ok & (~need_b | fb_ok), vals, np.inf)
    return np.where(np.isnan(vals), np.inf, vals)


def _min_cost_sweep_vec(grid: Grid, cands, s0: np.ndarray, max_iter: int = 100000) -> np.ndarray:
    live = ~grid.exit_mask
    for _ in range(max_iter):
        best = s0.copy()
        for cand in cands:
            vals = _cand_values_vec(cand, s0)
            np.minimum(best, np.where(live, vals, s0), out=best)
        if not np.any(best < s0 - 1e-15):
            return best
        s0 = best
    raise ConvergenceError("minimal-cost sweeps did not reach a fixed point")


def _w0_fixed_point(spec, grid, cands, s0, w0, rate_pick, argmin_rtol, max_iter=100000):
    """Vectorized transport of the attainment probability to its fixed point.

    The update graph is acyclic (feet have strictly smaller s0), so plain
    iteration converges in at most the longest chain length.
    """
    m = spec.n_modes
    n = grid.n_nodes
    live = ~grid.exit_mask & np.isfinite(s0)
    per_mode = []
    all_vals = np.stack([_cand_values_vec(c, s0) for c in cands])
    best_all = all_vals.min(axis=0)
    for i in range(m):
        idx = [c_idx for c_idx, c in enumerate(cands) if c.mode == i]
        vals_i = all_vals[idx]
        pick = np.argmin(vals_i, axis=0)
        cols = np.arange(n)
        best_i = vals_i[pick, cols]
        member = live & (best_i <= best_all + argmin_rtol * np.maximum(1.0, np.abs(best_all)))
        sub = [cands[j] for j in idx]
        fa = np.stack([c.foot_a for c in sub])[pick, cols]
        fb = np.stack([c.foot_b for c in sub])[pick, cols]
        frac = np.stack([c.frac for c in sub])[pick, cols]
        h = np.stack([c.h_at_foot for c in sub])[pick, cols]
        per_mode.append((member, np.maximum(fa, 0), np.maximum(fb, 0), frac, h))
    for _ in range(max_iter):
        w_new = w0.copy()
        for i, (member, fa, fb, frac, h) in enumerate(per_mode):
            foot = (1.0 - frac)[None, :] * w0[:, fa] + frac[None, :] * w0[:, fb]
            coupling = np.zeros(n)
            for j in range(m):
                if j == i:
                    continue
                diff = foot[j] - foot[i]
                lam = np.where(diff >= 0.0, rate_pick(i, j, 1.0), rate_pick(i, j, -1.0))
                coupling += lam * diff
            cand_val = np.clip(foot[i] + h * coupling, 0.0, 1.0)
            w_new[i] = np.where(member, cand_val, np.where(grid.exit_mask, w0[i], 0.0))
        if np.abs(w_new - w0).max() <= 1e-15:
            return
        w0[:] = w_new
    raise ConvergenceError("attainment-probability sweeps did not converge")


def _min_cost_sweep_1d(grid: Grid, cands, s0: np.ndarray, max_sweeps: int | None) -> np.ndarray:
    n = grid.n_nodes
    limit = max_sweeps if max_sweeps is not None else n + 2
    for sweep in range(limit):
        changed = False
        order = range(n) if sweep % 2 == 0 else range(n - 1, -1, -1)
        for k in order:
            if grid.exit_mask[k]:
                continue
            best = s0[k]
            for cand in cands:
                val = cand.cost[k] * cand.h[k] + _foot_value(s0, cand, k)
                if val < best - 1e-15:
                    best = val
            if best < s0[k] - 1e-15:
                s0[k] = best
                changed = True
        if not changed:
            break
    else:
        raise ConvergenceError("minimal-cost sweeps did not reach a fixed point")
    return s0


def _min_cost_dijkstra(grid: Grid, cands, s0: np.ndarray) -> np.ndarray:
    n = grid.n_nodes
    shape = np.array(grid.shape)
    final = np.zeros(n, dtype=bool)
    heap = [(s0[k], int(k)) for k in np.where(np.isfinite(s0))[0]]
    heapq.heapify(heap)
    # upstream nodes whose stencil can contain k: all nodes within one cell
    offsets = []
    for da in (-1, 0, 1):
        for db in (-1, 0, 1):
            if (da, db) != (0, 0):
                offsets.append((da, db))

    def relax(k: int) -> None:
        best = s0[k]
        for cand in cands:
            val = cand.cost[k] * cand.h[k] + _foot_value(s0, cand, k)
            if val < best - 1e-15:
                best = val
        if best < s0[k] - 1e-15:
            s0[k] = best
            heapq.heappush(heap, (best, k))

    multi_all = np.array(np.unravel_index(np.arange(n), grid.shape)).T
    while heap:
        val, k = heapq.heappop(heap)
        if final[k] or val > s0[k] + 1e-15:
            continue
        final[k] = True
        mk = multi_all[k]
        for off in offsets:
            nb = mk + off
            if np.any(nb < 0) or np.any(nb >= shape):
                continue
            k2 = int(grid.flat_index(nb))
            if not final[k2] and not grid.exit_mask[k2]:
                relax(k2)
    # safety net: iterate to the exact fixed point (no-op for axis-aligned dynamics)
    for _ in range(16):
        changed = False
        for k in np.where(~grid.exit_mask)[0]:
            best = s0[k]
            for cand in cands:
                val = cand.cost[k] * cand.h[k] + _foot_value(s0, cand, k)
                if val < best - 1e-12:
                    best = val
            if best < s0[k] - 1e-12:
                s0[k] = best
                changed = True
        if not changed:
            break
    return s0


def restrict_domain(mc: MinCostField, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Per-node first active threshold level and the seed probabilities.

    The level is the conservative ceiling of s0/ds (an exact multiple maps
    to its own level); seeding the first level with w0 introduces an O(ds)
    error but removes the smeared lower envelope entirely.
    """
    if mc.grid is not grid and (mc.grid.shape != grid.shape or mc.grid.ds != grid.ds):
        raise ConfigError("restriction field was computed on a different grid")
    return mc.first_level(), mc.w0


# ---------------------------------------------------------------------------
# Eulerian cross-check
# ---------------------------------------------------------------------------


def eulerian_step(field: CdfField, n: int, mode: int) -> np.ndarray:
    """Upwind finite-difference form of the level update (1D cross-check).

    Valid for d = 1, unit running cost, strictly positive mode velocity and
    tau = ds; under those conditions it reproduces the semi-Lagrangian level
    update exactly (up to roundoff).  The coupling terms are evaluated at
    the shifted point x + f*ds; evaluating them at the node itself would
    destroy monotonicity.
    """
    spec, grid = field.spec, field.grid
    if spec is None or grid.dim != 1:
        raise NumericsError("eulerian step needs a 1D field with its problem attached")
    mode_spec = spec.modes[mode]
    if mode_spec.cost.kind != "constant" or abs(mode_spec.cost.value - 1.0) > 1e-15:
        raise NumericsError("eulerian step requires a unit running cost")
    if field.tau is None or abs(field.tau - grid.ds) > 1e-15 * max(1.0, grid.ds):
        raise NumericsError("eulerian step requires tau = ds")
    vel = mode_spec.dynamics.at(grid, grid.points)[:, 0]
    if np.any(vel[~grid.exit_mask] <= 0.0):
        raise NumericsError("eulerian step requires a strictly positive velocity")
    if not grid.exit_mask[-1]:
        raise NumericsError("eulerian step requires the right boundary in the exit set")
    ds, dx = grid.ds, grid.dx[0]
    lam = spec.require_fixed_rates().off_diagonal()[mode]
    w_n = field.values[:, n, :]
    out = w_n[mode].copy()
    k = np.where(~grid.exit_mask)[0]
    theta = vel[k] * ds / dx
    if np.any(theta > 1.0 + 1e-12):
        raise NumericsError("eulerian step violates its CFL bound f*ds <= dx")
    upwind = w_n[mode, k] + theta * (w_n[mode, np.minimum(k + 1, grid.n_nodes - 1)] - w_n[mode, k])
    coupling = np.zeros(k.size)
    shifted = np.clip(grid.points[k, 0] + vel[k] * ds, grid.lo[0], grid.hi[0])[:, None]
    idx, wts = grid.spatial_stencil(shifted)
    for j in range(spec.n_modes):
        if j == mode:
            continue
        diff_nodes = w_n[j] - w_n[mode]
        coupling += lam[j] * np.einsum("cn,cn->n", wts, diff_nodes[idx])
    out[k] = upwind + ds * coupling
    out[grid.exit_mask] = boundary_values(spec, grid, mode, (n + 1) * grid.ds)[grid.exit_mask]
    return out
