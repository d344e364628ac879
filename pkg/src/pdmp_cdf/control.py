"""Controlled problems: expectation-optimal and threshold-optimal synthesis.

Two value problems are solved on the same grids.  The expectation problem
iterates the semi-Lagrangian form of the coupled Bellman system

    u_i(x) <- min_a { tau C_i(x,a) + sum_j p_ij(tau) u_j(x + tau f_i(x,a)) }

to a fixed point.  The threshold problem maximizes the probability of
keeping the cumulative cost under each threshold level simultaneously,

    W_i(x, s) = max_a sum_j p_ij(tau) W_j(x + tau f_i(x,a), s - tau C_i(x,a)),

swept upward in s exactly like the uncontrolled CDF.  Where several
actions tie for the maximum (always on the hopeless region, typically on
the surely-successful one) the tie is broken by the smallest companion
expected cost V, then by action index.  On the hopeless region V is pinned
to the expectation-optimal value so the stored action coincides with the
expectation-optimal policy there.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass

import numpy as np

from .cdf_solver import (
    ESCAPE_COST,
    SemiLagrangianStep,
    boundary_values,
    check_causality,
    solve_cdf,
)
from .errors import ConfigError, ConvergenceError, NumericsError
from .model import CdfField, ControlSet, Grid, MinCostField, ProblemSpec

TIE_TOL = 1e-9  # probability slack for membership in the maximizing action set


@dataclass(frozen=True)
class ValueField:
    """Expectation-optimal value u[mode, node]."""

    grid: Grid
    u: np.ndarray

    def evaluate(self, mode: int, x) -> float:
        return float(self.grid.interp_nodes(self.u[mode], np.atleast_2d(np.asarray(x, float)))[0])


class Policy:
    """Feedback control law stored as action indices per (mode, level, node).

    A threshold policy is level-dependent: simulated trajectories look it
    up at the remaining budget (threshold minus cost so far), taking the
    containing cell's lower-corner node, and fall back to the
    expectation-optimal action once the budget is spent.  An
    expectation-optimal policy stores a single level.
    """

    def __init__(self, control_set: ControlSet, actions: np.ndarray, fallback: np.ndarray,
                 lo: np.ndarray, dx: np.ndarray, shape: tuple[int, ...], ds: float,
                 provenance: str):
        self.control_set = control_set
        self.actions = np.ascontiguousarray(actions, dtype=np.int16)
        self.fallback = np.ascontiguousarray(fallback, dtype=np.int16)
        self.lo = np.asarray(lo, dtype=float)
        self.dx = np.asarray(dx, dtype=float)
        self.shape = tuple(int(v) for v in shape)
        self.ds = float(ds)
        self.provenance = provenance
        if self.actions.max(initial=0) >= control_set.n_actions:
            raise ConfigError("policy stores an action index outside its control set")
        self._strides = np.array(
            [int(np.prod(self.shape[a + 1:], dtype=int)) for a in range(len(self.shape))], dtype=int
        )

    @property
    def s_dependent(self) -> bool:
        return self.actions.shape[1] > 1

    @property
    def n_levels(self) -> int:
        return self.actions.shape[1]

    def cell_of(self, x) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        cell = np.floor((pts - self.lo) / self.dx + 1e-12).astype(int)
        return np.clip(cell, 0, np.array(self.shape) - 1)

    def action_index_at_cell(self, mode, s_cell, flat_node):
        """Vectorized lookup from integer cell coordinates."""
        below = s_cell < 0
        lvl = np.clip(s_cell, 0, self.n_levels - 1)
        idx = self.actions[mode, lvl, flat_node]
        if np.ndim(idx) == 0:
            return int(self.fallback[mode, flat_node]) if below else int(idx)
        return np.where(below, self.fallback[mode, flat_node], idx)

    def action_index(self, mode: int, x, s_remaining: float | None = None) -> int:
        cell = self.cell_of(x)[0]
        flat = int(cell @ self._strides)
        if not self.s_dependent:
            return int(self.actions[mode, 0, flat])
        if s_remaining is None:
            raise ConfigError("level-dependent policy lookup needs the remaining budget")
        if s_remaining < 0.0:
            return int(self.fallback[mode, flat])
        s_cell = int(np.floor(s_remaining / self.ds + 1e-12))
        return self.action_index_at_cell(mode, s_cell, flat)

    def action_vector(self, mode: int, x, s_remaining: float | None = None) -> np.ndarray:
        return self.control_set.action(self.action_index(mode, x, s_remaining))


@dataclass(frozen=True)
class ThresholdValue:
    """Optimal success probability W, companion expectation V, chosen actions."""

    grid: Grid
    spec: ProblemSpec
    w: CdfField
    v: np.ndarray
    actions: np.ndarray
    u: np.ndarray          # expectation-optimal value used on the hopeless region
    a_star: np.ndarray     # expectation-optimal action indices
    tau: float


# ---------------------------------------------------------------------------
# expectation-optimal value and policy
# ---------------------------------------------------------------------------


def _controlled_steps(spec, grid, tau, prob_method="first_order"):
    steps = []
    for i in range(spec.n_modes):
        row = []
        for a in range(spec.controls.n_actions):
            row.append(SemiLagrangianStep(spec, grid, tau, i, action=spec.controls.action(a),
                                          prob_method=prob_method))
        steps.append(row)
    return steps


def _spatial_expectation(step: SemiLagrangianStep, u: np.ndarray) -> np.ndarray:
    """One Bellman application of a single (mode, action) step to u[mode, node]."""
    out = np.zeros(step.grid.n_nodes)
    if step.reg_nodes.size:
        acc = np.zeros(step.reg_nodes.size)
        for j in range(u.shape[0]):
            acc += step.probs[j] * np.einsum("cn,cn->n", step.reg_w, u[j][step.reg_idx])
        out[step.reg_nodes] = step.tau * step.node_cost[step.reg_nodes] + acc
    if step.cap_nodes.size:
        out[step.cap_nodes] = step.cap_ds + np.einsum("kj,kj->k", step.cap_probs, step.cap_q)
    out[step.esc_nodes] = ESCAPE_COST
    return out


def solve_hjb_expectation(
    spec: ProblemSpec,
    grid: Grid,
    tol: float = 1e-8,
    max_iter: int = 100000,
    tau: float | None = None,
    method: str = "auto",
    initial: np.ndarray | None = None,
) -> tuple[ValueField, Policy]:
    """Expectation-optimal value and feedback policy.

    ``method`` picks the iteration flavor: ``gauss_seidel`` sweeps with
    alternating direction (1D default), vectorized ``jacobi`` value
    iteration, or ``policy_iteration`` (2D default) which alternates a
    full minimization pass with an exact sparse evaluation of the frozen
    policy; the latter converges in a handful of passes where plain value
    iteration needs thousands.  A coarse-grid solution can be passed
    through ``initial`` to warm-start.
    """
    spec.require_fixed_rates()
    if spec.controls.empty:
        raise ConfigError("expectation-optimal synthesis needs a control set")
    if tau is None:
        speed = spec.max_speed()
        tau = grid.dx.min() / speed if speed > 0 else grid.ds
    steps = _controlled_steps(spec, grid, tau)
    m, n_nodes, n_act = spec.n_modes, grid.n_nodes, spec.controls.n_actions
    u = np.zeros((m, n_nodes)) if initial is None else np.array(initial, dtype=float)
    for i in range(m):
        q = spec.modes[i].exit_cost.node_values(grid)
        u[i, grid.exit_mask] = q[grid.exit_mask]

    if method == "auto":
        method = "gauss_seidel" if grid.dim == 1 else "policy_iteration"

    if method == "policy_iteration":
        u = _howard(spec, grid, steps, u, tol, max_iter)
    elif method == "jacobi":
        interior = ~grid.exit_mask
        for it in range(max_iter):
            best = np.full((m, n_nodes), np.inf)
            for i in range(m):
                for a in range(n_act):
                    np.minimum(best[i], _spatial_expectation(steps[i][a], u), out=best[i])
            delta = float(np.max(np.abs(best[:, interior] - u[:, interior]))) if interior.any() else 0.0
            u[:, interior] = best[:, interior]
            if delta < tol:
                break
        else:
            raise ConvergenceError(f"value iteration did not converge in {max_iter} sweeps",
                                   residual=delta)
    elif method == "gauss_seidel":
        plans = []
        for i in range(m):
            row = []
            for a in range(n_act):
                st = steps[i][a]
                kind = np.zeros(n_nodes, dtype=np.int8)
                kind[st.cap_nodes] = 1
                kind[st.esc_nodes] = 2
                cap_val = np.zeros(n_nodes)
                if st.cap_nodes.size:
                    cap_val[st.cap_nodes] = st.cap_ds + np.einsum(
                        "kj,kj->k", st.cap_probs, st.cap_q)
                reg_pos = np.full(n_nodes, -1, dtype=int)
                reg_pos[st.reg_nodes] = np.arange(st.reg_nodes.size)
                row.append((kind, cap_val, reg_pos, st))
            plans.append(row)
        interior = np.where(~grid.exit_mask)[0]
        orders = (interior, interior[::-1])
        for it in range(max_iter):
            delta = 0.0
            for k in orders[it % 2]:
                for i in range(m):
                    best = np.inf
                    for kind, cap_val, reg_pos, st in plans[i]:
                        if kind[k] == 2:
                            val = ESCAPE_COST
                        elif kind[k] == 1:
                            val = cap_val[k]
                        else:
                            r = reg_pos[k]
                            foot = u[:, st.reg_idx[:, r]] @ st.reg_w[:, r]
                            val = st.tau * st.node_cost[k] + float(st.probs @ foot)
                        if val < best:
                            best = val
                    delta = max(delta, abs(best - u[i, k]))
                    u[i, k] = best
            if delta < tol:
                break
        else:
            raise ConvergenceError(f"Gauss-Seidel sweeps did not converge in {max_iter} sweeps",
                                   residual=delta)
    else:
        raise ConfigError(f"unknown iteration method {method!r}")

    actions = _argmin_actions(steps, u)
    fill = _nearest_interior(grid)
    actions[:, grid.exit_mask] = actions[:, fill[grid.exit_mask]]
    policy = Policy(spec.controls, actions[:, None, :], actions, grid.lo, grid.dx,
                    grid.shape, grid.ds, provenance="expectation")
    return ValueField(grid, u), policy


def _argmin_actions(steps, u: np.ndarray) -> np.ndarray:
    m = len(steps)
    n_nodes = u.shape[1]
    actions = np.zeros((m, n_nodes), dtype=np.int16)
    for i in range(m):
        vals = np.stack([_spatial_expectation(st, u) for st in steps[i]])
        actions[i] = np.argmin(vals, axis=0).astype(np.int16)
    return actions


def _nearest_interior(grid: Grid) -> np.ndarray:
    """Map every node to the closest non-exit node (itself when interior).

    Updates at exit nodes are pure boundary data and carry no meaningful
    action, but cell-based policy lookups can land on them (the lower
    corner of a boundary cell); redirecting those entries to the adjacent
    interior node keeps the stored law sensible everywhere.
    """
    from collections import deque

    n = grid.n_nodes
    mapping = np.arange(n)
    interior = ~grid.exit_mask
    if interior.all() or not interior.any():
        return mapping
    shape = grid.shape
    strides = grid._strides
    multi = np.array(np.unravel_index(np.arange(n), shape)).T
    seen = interior.copy()
    queue = deque(int(k) for k in np.where(interior)[0])
    while queue:
        k = queue.popleft()
        mk = multi[k]
        for a in range(grid.dim):
            for d in (-1, 1):
                j = mk[a] + d
                if 0 <= j < shape[a]:
                    k2 = k + d * strides[a]
                    if not seen[k2]:
                        seen[k2] = True
                        mapping[k2] = mapping[k]
                        queue.append(k2)
    return mapping


def _howard(spec, grid, steps, u, tol, max_iter):
    """Policy iteration: minimization pass + exact evaluation of the frozen policy.

    Evaluation solves the sparse linear fixed point of the policy-frozen
    semi-Lagrangian operator directly; a failed factorization (improper
    policy) falls back to iterating the operator.
    """
    from scipy import sparse
    from scipy.sparse.linalg import splu

    m, n_nodes = u.shape
    size = m * n_nodes
    ex = grid.exit_mask
    q_rows = np.array([spec.modes[i].exit_cost.node_values(grid) for i in range(m)])
    delta = math.inf
    for sweep in range(max(2, max_iter // 100)):
        best = np.full((m, n_nodes), np.inf)
        actions = np.zeros((m, n_nodes), dtype=np.int32)
        for i in range(m):
            for a, st in enumerate(steps[i]):
                vals = _spatial_expectation(st, u)
                better = vals < best[i]
                best[i][better] = vals[better]
                actions[i][better] = a
        best[:, ex] = q_rows[:, ex]
        delta = float(np.max(np.abs(best - u)))
        u = best
        if delta < tol:
            return u
        # assemble I*u - P_policy*u = rhs for the frozen policy
        rows, cols, vals, rhs = [], [], [], np.zeros(size)
        diag = np.ones(size)
        for i in range(m):
            base = i * n_nodes
            rhs[base:base + n_nodes][ex] = q_rows[i, ex]
            for a, st in enumerate(steps[i]):
                chosen = np.zeros(n_nodes, dtype=bool)
                chosen[~ex] = actions[i, ~ex] == a
                if st.cap_nodes.size:
                    cap_sel = chosen[st.cap_nodes]
                    nodes = st.cap_nodes[cap_sel]
                    rhs[base + nodes] = (st.cap_ds + np.einsum(
                        "kj,kj->k", st.cap_probs, st.cap_q))[cap_sel]
                if st.esc_nodes.size:
                    rhs[base + st.esc_nodes[chosen[st.esc_nodes]]] = ESCAPE_COST
                reg_sel = np.where(chosen[st.reg_nodes])[0]
                if reg_sel.size == 0:
                    continue
                nodes = st.reg_nodes[reg_sel]
                rhs[base + nodes] = st.tau * st.node_cost[nodes]
                for j in range(m):
                    for corner in range(st.reg_idx.shape[0]):
                        rows.append(base + nodes)
                        cols.append(j * n_nodes + st.reg_idx[corner, reg_sel])
                        vals.append(np.full(reg_sel.size, -st.probs[j]) * st.reg_w[corner, reg_sel])
        mat = sparse.coo_matrix(
            (np.concatenate([diag, *vals]),
             (np.concatenate([np.arange(size), *rows]),
              np.concatenate([np.arange(size), *cols]))),
            shape=(size, size),
        ).tocsc()
        try:
            u = splu(mat).solve(rhs).reshape(m, n_nodes)
        except RuntimeError:
            for _ in range(50):  # improper interim policy: fall back to operator iteration
                nxt = np.empty_like(u)
                for i in range(m):
                    per = np.stack([_spatial_expectation(st, u) for st in steps[i]])
                    nxt[i] = per[actions[i], np.arange(n_nodes)]
                nxt[:, ex] = q_rows[:, ex]
                u = nxt
        u[:, ex] = q_rows[:, ex]
    raise ConvergenceError("policy iteration did not converge", residual=delta)


def prolong(values: np.ndarray, coarse: Grid, fine: Grid) -> np.ndarray:
    """Multilinear prolongation of per-mode node values onto a finer grid."""
    m = values.shape[0]
    out = np.empty((m, fine.n_nodes))
    for i in range(m):
        out[i] = coarse.interp_nodes(values[i], fine.points)
    return out


# ---------------------------------------------------------------------------
# threshold-optimal value and policy
# ---------------------------------------------------------------------------


def solve_threshold(
    spec: ProblemSpec,
    grid: Grid,
    tau: float | None = None,
    restrict: MinCostField | None = None,
    prob_method: str = "first_order",
    hjb: tuple[ValueField, Policy] | None = None,
    hjb_tol: float = 1e-8,
) -> ThresholdValue:
    """Maximal success probability for every threshold level at once.

    The sweep needs the expectation-optimal solution for tie-breaking; it
    is computed here unless passed in.  ``restrict`` (minimal-cost field of
    the controlled problem) zeroes hopeless levels exactly and seeds the
    first attainable one.
    """
    spec.require_fixed_rates()
    if spec.controls.empty:
        raise ConfigError("threshold synthesis needs a nonempty control set")
    if hjb is None:
        hjb = solve_hjb_expectation(spec, grid, tol=hjb_tol)
    value, exp_policy = hjb
    u = value.u
    a_star = exp_policy.fallback

    min_cost = min(
        spec.modes[i].cost.min_value() for i in range(spec.n_modes)
    )
    if tau is None:
        tau = grid.ds / min_cost
    check_causality(tau, min_cost, grid.ds)
    rm = spec.rates
    if prob_method == "first_order" and tau * float(rm.total_rates().max()) > 1.0 + 1e-12:
        raise NumericsError("tau too large for first-order transition probabilities")

    steps = _controlled_steps(spec, grid, tau, prob_method)
    m, n_nodes, n_act = spec.n_modes, grid.n_nodes, spec.controls.n_actions
    ns = grid.n_levels
    w = np.zeros((m, ns, n_nodes))
    v = np.zeros((m, ns, n_nodes))
    actions = np.zeros((m, ns, n_nodes), dtype=np.int16)
    q_exit = np.array([spec.modes[i].exit_cost.node_values(grid) for i in range(m)])
    first_level = restrict.first_level() if restrict is not None else None

    ex = grid.exit_mask
    for i in range(m):
        w[i, 0] = boundary_values(spec, grid, i, 0.0)
        v[i, 0] = np.where(ex, q_exit[i], u[i])
        actions[i, 0] = a_star[i]

    for n in range(1, ns):
        s = n * grid.ds
        for i in range(m):
            vals = np.stack([steps[i][a].cdf_values(w, n) for a in range(n_act)])
            wmax = vals.max(axis=0)
            vcand = np.stack([steps[i][a].expectation_values(v, n) for a in range(n_act)])
            tied = vals >= wmax[None, :] - TIE_TOL
            vmasked = np.where(tied, vcand, np.inf)
            a_hat = np.argmin(vmasked, axis=0)
            cols = np.arange(n_nodes)
            v_new = vmasked[a_hat, cols]
            w_new = wmax
            hopeless = w_new <= 0.0
            a_new = np.where(hopeless, a_star[i], a_hat).astype(np.int16)
            v_new = np.where(hopeless, u[i], v_new)
            if first_level is not None:
                below = n < first_level
                at = n == first_level
                w_new = np.where(below, 0.0, np.where(at, restrict.w0[i], w_new))
                a_new = np.where(below | at, a_star[i].astype(np.int16), a_new)
                v_new = np.where(below | at, u[i], v_new)
                # guard the CDF shape against the O(ds) envelope seeding
                w_new = np.maximum(w_new, w[i, n - 1])
            bc = boundary_values(spec, grid, i, s)
            w_new = np.where(ex, bc, w_new)
            v_new = np.where(ex, q_exit[i], v_new)
            w[i, n] = w_new
            v[i, n] = v_new
            actions[i, n] = a_new

    # boundary-cell lookups read the exit-node entries; give them the law of
    # the nearest interior node instead of meaningless boundary updates
    fill = _nearest_interior(grid)
    if np.any(ex):
        actions[:, :, ex] = actions[:, :, fill[ex]]

    wf = CdfField(grid, w, spec=spec, tau=tau, variant="threshold-optimal")
    return ThresholdValue(grid=grid, spec=spec, w=wf, v=v, actions=actions,
                          u=u, a_star=a_star, tau=tau)


def synthesize_policy(tv: ThresholdValue, spec: ProblemSpec, grid: Grid) -> Policy:
    """Package the per-level maximizing actions as a feedback policy.

    Ties were already broken during the sweep (smallest companion
    expectation, then action index); on the hopeless region the stored
    action is the expectation-optimal one.
    """
    if tv.grid.shape != grid.shape or tv.grid.ds != grid.ds:
        raise ConfigError("threshold value was computed on a different grid")
    return Policy(spec.controls, tv.actions, tv.a_star, grid.lo, grid.dx,
                  grid.shape, grid.ds, provenance="threshold")


def evaluate_policy_cdf(
    policy: Policy,
    spec: ProblemSpec,
    grid: Grid,
    tau: float | None = None,
    restrict: MinCostField | None = None,
) -> CdfField:
    """Exit-cost CDF of a level-independent feedback policy.

    The policy freezes per-node dynamics and running costs, reducing the
    problem to an uncontrolled solve.  Level-dependent policies have no
    such reduction (their success probability is threshold-specific), so
    they must be evaluated by simulation instead.
    """
    if policy.s_dependent:
        raise ConfigError(
            "level-dependent policies must be evaluated by Monte-Carlo simulation"
        )
    if tuple(policy.shape) != grid.shape:
        raise ConfigError("policy was synthesized on a different grid")
    m = spec.n_modes
    vels = np.empty((m, grid.n_nodes, grid.dim))
    costs = np.empty((m, grid.n_nodes))
    for i in range(m):
        a_idx = policy.actions[i, 0]
        a_vec = policy.control_set.vectors[a_idx]
        dyn = spec.modes[i].dynamics
        if dyn.kind == "control_offset":
            vels[i] = a_vec + dyn.vector[None, :]
        else:
            vels[i] = dyn.at(grid, grid.points)
        costs[i] = spec.modes[i].cost.at(grid, grid.points)
    return solve_cdf(spec, grid, tau=tau, restrict=restrict, velocities=vels, costs=costs)


# ---------------------------------------------------------------------------
# policy file format
# ---------------------------------------------------------------------------

POLICY_FORMAT = "pdmp-policy/1"


def save_policy(policy: Policy, path: str) -> None:
    """Write a policy as a self-describing JSON document.

    The action array is row-major (mode, level, node) int16, little-endian,
    base64-encoded; the header carries the grid descriptor and control set
    so the file can be simulated without the original problem object.
    """
    doc = {
        "format": POLICY_FORMAT,
        "provenance": policy.provenance,
        "grid": {
            "lo": policy.lo.tolist(),
            "dx": policy.dx.tolist(),
            "shape": list(policy.shape),
            "ds": policy.ds,
            "n_levels": policy.n_levels,
        },
        "control_set": _control_to_json(policy.control_set),
        "dtype": "int16",
        "byte_order": "little",
        "actions_b64": base64.b64encode(
            policy.actions.astype("<i2").tobytes()
        ).decode("ascii"),
        "fallback_b64": base64.b64encode(
            policy.fallback.astype("<i2").tobytes()
        ).decode("ascii"),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_policy(path: str) -> Policy:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != POLICY_FORMAT:
        raise ConfigError(f"not a policy file (format {doc.get('format')!r})")
    g = doc["grid"]
    shape = tuple(int(v) for v in g["shape"])
    n_nodes = int(np.prod(shape))
    cs = _control_from_json(doc["control_set"])
    n_modes_total = len(base64.b64decode(doc["fallback_b64"])) // (2 * n_nodes)
    actions = np.frombuffer(base64.b64decode(doc["actions_b64"]), dtype="<i2").reshape(
        n_modes_total, int(g["n_levels"]), n_nodes
    )
    fallback = np.frombuffer(base64.b64decode(doc["fallback_b64"]), dtype="<i2").reshape(
        n_modes_total, n_nodes
    )
    return Policy(cs, actions.copy(), fallback.copy(), np.array(g["lo"]), np.array(g["dx"]),
                  shape, float(g["ds"]), provenance=doc.get("provenance", "unknown"))


def _control_to_json(cs: ControlSet) -> dict:
    if cs.kind == "unit_circle":
        return {"kind": "unit_circle", "n_angles": cs.n_angles}
    if cs.kind == "list":
        return {"kind": "list", "vectors": cs.vectors.tolist()}
    return {"kind": "none"}


def _control_from_json(doc: dict) -> ControlSet:
    if doc["kind"] == "unit_circle":
        return ControlSet.unit_circle(int(doc["n_angles"]))
    if doc["kind"] == "list":
        return ControlSet.from_list(doc["vectors"])
    return ControlSet.none()
