"""Monte-Carlo oracle: exact-event simulation of switching trajectories.

Between switches the motion is deterministic, so for piecewise-constant
velocities every trajectory is integrated in closed form: exit times come
from exact segment/boundary intersections and the only randomness is the
exponential switch clock and the successor-mode draw.  Tabulated velocity
fields fall back to a classical 4-stage one-step integrator with step
length bounded by dx/|f|.

Randomness contract: sample ``i`` of a run with master seed ``seed``
consumes the counter-based stream Philox(key=(seed, i)) in a fixed order
(one exponential per switch clock, one uniform per successor draw), so
samples are independent, reproducible bitwise, and parallelizable by
splitting the index range.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .control import Policy
from .errors import ConfigError, NumericsError
from .model import Grid, ProblemSpec

_CHUNK = 16          # random values pre-drawn per sample between refills
_MAX_EVENTS = 2_000_000


@dataclass
class TrajectorySample:
    """One simulated run with its event history."""

    start_x: np.ndarray
    start_mode: int
    switch_times: list[float] = field(default_factory=list)
    modes: list[int] = field(default_factory=list)
    cost: float = math.inf
    exit_time: float | None = None
    exit_point: np.ndarray | None = None
    exited: bool = False
    escaped: bool = False
    censored: bool = False
    cost_checkpoints: list[tuple[float, float]] = field(default_factory=list)

    @property
    def n_switches(self) -> int:
        return len(self.switch_times)


@dataclass
class BatchResult:
    """Aggregated outcome arrays of a Monte-Carlo run."""

    start_x: np.ndarray
    start_mode: int
    seed: int
    costs: np.ndarray
    exited: np.ndarray
    escaped: np.ndarray
    censored: np.ndarray
    switch_counts: np.ndarray
    exit_times: np.ndarray
    occupancy: np.ndarray  # (n, M) time spent per mode
    samples: list[TrajectorySample] | None = None

    @property
    def n(self) -> int:
        return self.costs.size


def default_horizon(spec: ProblemSpec) -> float:
    """50 domain diameters at the slowest mode's top speed."""
    speeds = [m.dynamics.max_speed(spec.controls) for m in spec.modes]
    slowest = min(speeds)
    if slowest <= 0.0:
        raise ConfigError("a mode cannot move; pass an explicit horizon cap")
    return 50.0 * spec.diameter() / slowest


class _Streams:
    """Per-sample counter-based random streams with chunked refills."""

    def __init__(self, seed: int, n: int, offset: int = 0):
        self.gens = [np.random.Generator(np.random.Philox(key=[seed, offset + i])) for i in range(n)]
        self.exp_buf = np.vstack([g.standard_exponential(_CHUNK) for g in self.gens])
        self.uni_buf = np.vstack([g.random(_CHUNK) for g in self.gens])
        self.exp_ptr = np.zeros(n, dtype=int)
        self.uni_ptr = np.zeros(n, dtype=int)

    def exponential(self, idx: np.ndarray) -> np.ndarray:
        need = np.where(self.exp_ptr[idx] >= self.exp_buf.shape[1])[0]
        for j in need:
            i = idx[j]
            self.exp_buf[i] = self.gens[i].standard_exponential(_CHUNK)
            self.exp_ptr[i] = 0
        out = self.exp_buf[idx, self.exp_ptr[idx]]
        self.exp_ptr[idx] += 1
        return out

    def uniform(self, idx: np.ndarray) -> np.ndarray:
        need = np.where(self.uni_ptr[idx] >= self.uni_buf.shape[1])[0]
        for j in need:
            i = idx[j]
            self.uni_buf[i] = self.gens[i].random(_CHUNK)
            self.uni_ptr[i] = 0
        out = self.uni_buf[idx, self.uni_ptr[idx]]
        self.uni_ptr[idx] += 1
        return out


def _exit_face_names(spec: ProblemSpec) -> set[str]:
    if spec.exit_set.kind in ("boundary", "faces"):
        return set(spec.exit_set.face_names(spec.dim))
    return set()


def _in_exit_box(spec: ProblemSpec, pts: np.ndarray) -> np.ndarray:
    hit = np.zeros(pts.shape[0], dtype=bool)
    if spec.exit_set.kind != "boxes":
        return hit
    for box in spec.exit_set.boxes:
        inside = np.ones(pts.shape[0], dtype=bool)
        for a, (b_lo, b_hi) in enumerate(box):
            inside &= (pts[:, a] >= b_lo - 1e-12) & (pts[:, a] <= b_hi + 1e-12)
        hit |= inside
    return hit


def _jump_tables(spec: ProblemSpec) -> tuple[np.ndarray, np.ndarray]:
    """Total departure rates and cumulative successor distributions."""
    rm = spec.require_fixed_rates()
    off = rm.off_diagonal()
    totals = rm.total_rates()
    m = spec.n_modes
    cum = np.zeros((m, m))
    for i in range(m):
        if totals[i] > 0:
            cum[i] = np.cumsum(off[i] / totals[i])
        else:
            cum[i] = 1.0
    return totals, cum


def run_batch(
    spec: ProblemSpec,
    start: tuple,
    n: int,
    seed: int,
    policy: Policy | None = None,
    threshold: float | None = None,
    horizon_cap: float | None = None,
    record: bool = False,
    grid: Grid | None = None,
    stream_offset: int = 0,
) -> BatchResult:
    """Simulate ``n`` independent trajectories from one start configuration.

    Constant (or control-offset) velocities and constant running/exit costs
    are integrated exactly; the whole batch advances in lockstep over
    events, so the cost is a few vector operations per generated event.
    """
    x0 = np.array(start[0], dtype=float).reshape(-1)
    mode0 = int(start[1])
    if x0.size != spec.dim:
        raise ConfigError("start point has the wrong dimension")
    if any(ms.dynamics.kind == "tabulated" for ms in spec.modes):
        if policy is not None:
            raise ConfigError("policies over tabulated dynamics are not supported")
        return _run_batch_tabulated(spec, x0, mode0, n, seed, horizon_cap, record, grid,
                                    stream_offset)
    for ms in spec.modes:
        if ms.cost.kind != "constant" or ms.exit_cost.kind != "constant":
            raise ConfigError("batch simulation needs constant running and exit costs")
    if policy is not None and policy.s_dependent and threshold is None:
        raise ConfigError("a level-dependent policy needs a cost threshold")
    cap = horizon_cap if horizon_cap is not None else default_horizon(spec)
    if cap <= 0:
        raise ConfigError("horizon cap must be positive")

    m = spec.n_modes
    d = spec.dim
    totals, cum = _jump_tables(spec)
    cost_rate = np.array([ms.cost.value for ms in spec.modes])
    q_exit = np.array([ms.exit_cost.value for ms in spec.modes])
    exit_faces = _exit_face_names(spec)
    whole_boundary = spec.exit_set.kind == "boundary"
    offsets = np.array([ms.dynamics.vector for ms in spec.modes])
    ctrl_vecs = policy.control_set.vectors if policy is not None else None

    streams = _Streams(seed, n, offset=stream_offset)
    x = np.tile(x0, (n, 1))
    mode = np.full(n, mode0, dtype=int)
    t = np.zeros(n)
    c = np.zeros(n)
    all_idx = np.arange(n)
    safe = np.where(totals[mode] > 0, totals[mode], 1.0)
    next_switch = np.where(totals[mode] > 0, streams.exponential(all_idx) / safe, np.inf)
    costs = np.full(n, np.inf)
    exited = np.zeros(n, dtype=bool)
    escaped = np.zeros(n, dtype=bool)
    censored = np.zeros(n, dtype=bool)
    switch_counts = np.zeros(n, dtype=int)
    exit_times = np.full(n, np.nan)
    exit_points = np.full((n, d), np.nan)
    occupancy = np.zeros((n, m))
    alive = np.ones(n, dtype=bool)

    use_cells = policy is not None
    if use_cells:
        cell = np.minimum(policy.cell_of(x), np.array(policy.shape) - 2)
        strides = policy._strides
        if policy.s_dependent:
            s_cell = np.full(n, int(math.floor(threshold / policy.ds + 1e-12)))
            s_cell = np.minimum(s_cell, policy.n_levels - 1)
        else:
            s_cell = np.zeros(n, dtype=int)
        # guards against zero-length event cycles at policy interfaces: first
        # slide along a re-crossed face, then freeze entirely until the next
        # switch (the stationary sliding-mode interpretation)
        prev_face_axis = np.full(n, -1, dtype=np.int8)
        slide_axis = np.full(n, -1, dtype=np.int8)
        zero_streak = np.zeros(n, dtype=np.int32)

    recs = [TrajectorySample(x0.copy(), mode0, modes=[mode0]) for _ in range(n)] if record else None

    for _ in range(_MAX_EVENTS):
        act = np.where(alive)[0]
        if act.size == 0:
            break
        xm = x[act]
        md = mode[act]
        if use_cells:
            flat = cell[act] @ strides
            sc = s_cell[act]
            below = sc < 0
            lvl = np.clip(sc, 0, policy.n_levels - 1)
            a_idx = np.where(below, policy.fallback[md, flat], policy.actions[md, lvl, flat])
            v = ctrl_vecs[a_idx] + offsets[md]
            sliding = slide_axis[act]
            if np.any(sliding >= 0):
                rows = np.where(sliding >= 0)[0]
                v = v.copy()
                v[rows, sliding[rows]] = 0.0
            stuck = zero_streak[act] >= 6
            if np.any(stuck):
                v = v.copy()
                v[stuck] = 0.0
        else:
            v = offsets[md]
        crate = cost_rate[md]

        dt_switch = next_switch[act] - t[act]
        dt_hor = cap - t[act]
        cands = [dt_switch, dt_hor]
        kinds = ["switch", "horizon"]
        if use_cells:
            if policy.s_dependent:
                s_rem = threshold - c[act]
                dt_s = np.where(s_cell[act] >= 0,
                                (s_rem - s_cell[act] * policy.ds) / crate, np.inf)
                cands.append(np.maximum(dt_s, 0.0))
                kinds.append("s_cell")
            for a in range(d):
                lo_face = policy.lo[a] + cell[act, a] * policy.dx[a]
                hi_face = lo_face + policy.dx[a]
                va = v[:, a]
                with np.errstate(divide="ignore", invalid="ignore"):
                    dt_a = np.where(va > 0, (hi_face - xm[:, a]) / va,
                                    np.where(va < 0, (lo_face - xm[:, a]) / va, np.inf))
                cands.append(np.maximum(dt_a, 0.0))
                kinds.append(f"face{a}")
        else:
            t_exit = np.full(act.size, np.inf)
            t_escape = np.full(act.size, np.inf)
            names_min = ("x_min", "y_min")
            names_max = ("x_max", "y_max")
            for a in range(d):
                va = v[:, a]
                for bound, name, toward in (
                    (spec.lo[a], names_min[a], va < 0),
                    (spec.hi[a], names_max[a], va > 0),
                ):
                    with np.errstate(divide="ignore", invalid="ignore"):
                        tt = np.where(toward, (bound - xm[:, a]) / va, np.inf)
                    tt = np.maximum(tt, 0.0)
                    if whole_boundary or name in exit_faces:
                        t_exit = np.minimum(t_exit, tt)
                    else:
                        t_escape = np.minimum(t_escape, tt)
            if spec.exit_set.kind == "boxes":
                for box in spec.exit_set.boxes:
                    t_in = np.zeros(act.size)
                    t_out = np.full(act.size, np.inf)
                    for a, (b_lo, b_hi) in enumerate(box):
                        va = v[:, a]
                        with np.errstate(divide="ignore", invalid="ignore"):
                            t0 = (b_lo - xm[:, a]) / va
                            t1 = (b_hi - xm[:, a]) / va
                        lo_t = np.where(va < 0, t1, t0)
                        hi_t = np.where(va < 0, t0, t1)
                        still = np.abs(va) < 1e-300
                        in_slab = (xm[:, a] >= b_lo) & (xm[:, a] <= b_hi)
                        lo_t = np.where(still, np.where(in_slab, 0.0, np.inf), lo_t)
                        hi_t = np.where(still, np.where(in_slab, np.inf, -np.inf), hi_t)
                        t_in = np.maximum(t_in, lo_t)
                        t_out = np.minimum(t_out, hi_t)
                    enters = (t_in <= t_out) & (t_in >= 0.0)
                    t_exit = np.minimum(t_exit, np.where(enters, t_in, np.inf))
            cands.extend([t_exit, t_escape])
            kinds.extend(["exit", "escape"])

        mat = np.vstack(cands)
        which = np.argmin(mat, axis=0)
        dt = mat[which, np.arange(act.size)]

        x[act] += v * dt[:, None]
        c[act] += crate * dt
        t[act] += dt
        occupancy[act, md] += dt
        if use_cells:
            # a strictly positive step clears the ping-pong memory
            moved = dt > 0.0
            prev_face_axis[act[moved]] = -1
            slide_axis[act[moved]] = -1
            zero_streak[act[moved]] = 0
            zero_streak[act[~moved]] += 1

        for k_id, kname in enumerate(kinds):
            hits = which == k_id
            sel = act[hits]
            if sel.size == 0:
                continue
            if kname == "switch":
                u_draw = streams.uniform(sel)
                new_modes = np.empty(sel.size, dtype=int)
                for pos, smp in enumerate(sel):
                    new_modes[pos] = int(np.searchsorted(cum[mode[smp]], u_draw[pos], side="right"))
                new_modes = np.minimum(new_modes, m - 1)
                mode[sel] = new_modes
                switch_counts[sel] += 1
                e_draw = streams.exponential(sel)
                rates_new = totals[new_modes]
                safe_new = np.where(rates_new > 0, rates_new, 1.0)
                next_switch[sel] = np.where(rates_new > 0, t[sel] + e_draw / safe_new, np.inf)
                if record:
                    for pos, smp in enumerate(sel):
                        recs[smp].switch_times.append(float(t[smp]))
                        recs[smp].modes.append(int(new_modes[pos]))
                        recs[smp].cost_checkpoints.append((float(t[smp]), float(c[smp])))
            elif kname == "horizon":
                censored[sel] = True
                alive[sel] = False
            elif kname == "s_cell":
                s_cell[sel] -= 1
            elif kname.startswith("face"):
                a = int(kname[4:])
                dt_sel = dt[hits]
                midpoint = policy.lo[a] + (cell[sel, a] + 0.5) * policy.dx[a]
                going_up = x[sel, a] >= midpoint
                new_face = np.where(going_up, cell[sel, a] + 1, cell[sel, a])
                x[sel, a] = policy.lo[a] + new_face * policy.dx[a]
                # zero-length re-crossing of the same axis: slide along the interface
                pingpong = (dt_sel <= 0.0) & (prev_face_axis[sel] == a)
                slide_axis[sel[pingpong]] = a
                prev_face_axis[sel] = a
                at_hi = going_up & (new_face >= policy.shape[a] - 1)
                at_lo = ~going_up & (new_face <= 0)
                names = (("x_min", "x_max"), ("y_min", "y_max"))[a]
                hi_exit = whole_boundary or names[1] in exit_faces
                lo_exit = whole_boundary or names[0] in exit_faces
                is_exit_face = (at_hi & hi_exit) | (at_lo & lo_exit)
                box_hit = _in_exit_box(spec, x[sel])
                done_exit = is_exit_face | box_hit
                done_escape = (at_hi | at_lo) & ~done_exit
                ex_sel = sel[done_exit]
                if ex_sel.size:
                    costs[ex_sel] = c[ex_sel] + q_exit[mode[ex_sel]]
                    exited[ex_sel] = True
                    exit_times[ex_sel] = t[ex_sel]
                    exit_points[ex_sel] = x[ex_sel]
                    alive[ex_sel] = False
                esc_sel = sel[done_escape]
                if esc_sel.size:
                    escaped[esc_sel] = True
                    alive[esc_sel] = False
                move = ~done_exit & ~done_escape
                mv = sel[move]
                if mv.size:
                    up = going_up[move]
                    cell[mv, a] = np.clip(cell[mv, a] + np.where(up, 1, -1),
                                          0, policy.shape[a] - 2)
            elif kname == "exit":
                costs[sel] = c[sel] + q_exit[mode[sel]]
                exited[sel] = True
                exit_times[sel] = t[sel]
                exit_points[sel] = x[sel]
                alive[sel] = False
            elif kname == "escape":
                escaped[sel] = True
                alive[sel] = False
    else:
        raise NumericsError("simulation exceeded its event budget; check the horizon cap")

    if record:
        for i, rec in enumerate(recs):
            rec.cost = float(costs[i])
            rec.exited = bool(exited[i])
            rec.escaped = bool(escaped[i])
            rec.censored = bool(censored[i])
            if exited[i]:
                rec.exit_time = float(exit_times[i])
                rec.exit_point = exit_points[i].copy()
    return BatchResult(
        start_x=x0, start_mode=mode0, seed=seed, costs=costs, exited=exited,
        escaped=escaped, censored=censored, switch_counts=switch_counts,
        exit_times=exit_times, occupancy=occupancy, samples=recs,
    )


def _run_batch_tabulated(spec, x0, mode0, n, seed, horizon_cap, record, grid, offset):
    if grid is None:
        raise ConfigError("tabulated velocity fields need the grid for interpolation")
    samples = [
        _sample_tabulated(spec, grid, x0, mode0, seed, offset + i, horizon_cap)
        for i in range(n)
    ]
    costs = np.array([s.cost for s in samples])
    m = spec.n_modes
    return BatchResult(
        start_x=x0, start_mode=mode0, seed=seed, costs=costs,
        exited=np.array([s.exited for s in samples]),
        escaped=np.array([s.escaped for s in samples]),
        censored=np.array([s.censored for s in samples]),
        switch_counts=np.array([s.n_switches for s in samples]),
        exit_times=np.array([s.exit_time if s.exit_time is not None else np.nan for s in samples]),
        occupancy=np.zeros((n, m)),
        samples=samples if record else None,
    )


def _sample_tabulated(spec, grid, x0, mode0, seed, index, horizon_cap):
    """One-step 4-stage integration path for space-varying velocities."""
    rng = np.random.Generator(np.random.Philox(key=[seed, index]))
    cap = horizon_cap if horizon_cap is not None else default_horizon(spec)
    rec = TrajectorySample(np.array(x0, float), mode0, modes=[mode0])
    x = np.array(x0, dtype=float)
    mode = mode0
    totals, cum = _jump_tables(spec)
    t = c = 0.0
    t_next = t + (rng.standard_exponential() / totals[mode] if totals[mode] > 0 else math.inf)
    dx_min = float(grid.dx.min())

    def vel(p, mode_now):
        return spec.modes[mode_now].dynamics.at(grid, p[None, :])[0]

    while t < cap:
        v = vel(x, mode)
        speed = float(np.linalg.norm(v))
        h = dx_min / speed if speed > 0 else cap - t
        h = min(h, cap - t, max(t_next - t, 1e-15))
        k1 = v
        k2 = vel(np.clip(x + 0.5 * h * k1, grid.lo, grid.hi), mode)
        k3 = vel(np.clip(x + 0.5 * h * k2, grid.lo, grid.hi), mode)
        k4 = vel(np.clip(x + h * k3, grid.lo, grid.hi), mode)
        step = (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        x_new = x + step
        inside = bool(np.all((x_new >= grid.lo) & (x_new <= grid.hi)))
        if not inside:
            lo_f, hi_f = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo_f + hi_f)
                p = x + mid * step
                if np.all((p >= grid.lo) & (p <= grid.hi)):
                    lo_f = mid
                else:
                    hi_f = mid
            x_new = np.clip(x + hi_f * step, grid.lo, grid.hi)
            h = h * hi_f
        c += float(spec.modes[mode].cost.at(grid, x[None, :])[0]) * h
        t += h
        x = x_new
        if not inside:
            if _point_on_exit(spec, grid, x):
                qv = float(spec.modes[mode].exit_cost.at(grid, x[None, :])[0])
                rec.cost = c + qv
                rec.exited = True
                rec.exit_time = t
                rec.exit_point = x.copy()
            else:
                rec.escaped = True
            return rec
        if t >= t_next:
            u = rng.random()
            mode = int(min(np.searchsorted(cum[mode], u, side="right"), spec.n_modes - 1))
            rec.switch_times.append(t)
            rec.modes.append(mode)
            rec.cost_checkpoints.append((t, c))
            t_next = t + (rng.standard_exponential() / totals[mode] if totals[mode] > 0 else math.inf)
    rec.censored = True
    return rec


def _point_on_exit(spec, grid, x) -> bool:
    tol = 1e-9 * float(grid.dx.min())
    if spec.exit_set.kind == "boundary":
        return bool(np.any(np.abs(x - spec.lo) <= tol) or np.any(np.abs(x - spec.hi) <= tol))
    if spec.exit_set.kind == "faces":
        for name in spec.exit_set.face_names(spec.dim):
            axis = 0 if name.startswith("x") else 1
            bound = spec.lo[axis] if name.endswith("min") else spec.hi[axis]
            if abs(x[axis] - bound) <= tol:
                return True
        return False
    return bool(_in_exit_box(spec, x[None, :])[0])


def sample_trajectory(
    spec: ProblemSpec,
    start: tuple,
    seed: int,
    index: int = 0,
    policy: Policy | None = None,
    threshold: float | None = None,
    horizon_cap: float | None = None,
    grid: Grid | None = None,
) -> TrajectorySample:
    """Simulate one trajectory on the stream Philox(key=(seed, index)).

    Identical to row ``index`` of a batch run with the same master seed.
    """
    batch = run_batch(spec, start, 1, seed, policy=policy, threshold=threshold,
                      horizon_cap=horizon_cap, record=True, grid=grid,
                      stream_offset=index)
    return batch.samples[0]


# ---------------------------------------------------------------------------
# empirical distribution
# ---------------------------------------------------------------------------


class EmpiricalCdf:
    """Right-continuous empirical distribution of finite sample costs.

    Censored or escaped samples count toward the total but never toward a
    finite threshold, so the curve tops out below one when they exist.
    """

    def __init__(self, finite_costs: np.ndarray, n_total: int, seed: int | None = None):
        if n_total < 1:
            raise ConfigError("empirical CDF needs at least one sample")
        self.costs = np.sort(np.asarray(finite_costs, dtype=float))
        self.n_total = int(n_total)
        self.seed = seed

    @classmethod
    def from_batch(cls, batch: BatchResult) -> "EmpiricalCdf":
        return cls(batch.costs[np.isfinite(batch.costs)], batch.n, seed=batch.seed)

    def evaluate(self, s):
        pos = np.searchsorted(self.costs, np.asarray(s, dtype=float), side="right")
        out = pos / self.n_total
        return float(out) if np.ndim(s) == 0 else out

    def __call__(self, s):
        return self.evaluate(s)

    def dkw_epsilon(self, alpha: float = 0.01) -> float:
        """Half-width of the distribution-free uniform confidence band."""
        if not 0.0 < alpha < 1.0:
            raise ConfigError("confidence level must be in (0, 1)")
        return math.sqrt(math.log(2.0 / alpha) / (2.0 * self.n_total))


def empirical_cdf(samples) -> EmpiricalCdf:
    """Build the empirical CDF from a sample list or a batch result."""
    if isinstance(samples, BatchResult):
        return EmpiricalCdf.from_batch(samples)
    costs = np.array([s.cost for s in samples], dtype=float)
    if costs.size == 0:
        raise ConfigError("empirical CDF needs at least one sample")
    return EmpiricalCdf(costs[np.isfinite(costs)], costs.size)


def estimate_mean(samples) -> tuple[float, float]:
    """Sample mean and standard error of the costs; rejects censored runs."""
    if isinstance(samples, BatchResult):
        costs = samples.costs
    else:
        costs = np.array([s.cost for s in samples], dtype=float)
    if costs.size == 0:
        raise ConfigError("mean estimation needs at least one sample")
    if not np.all(np.isfinite(costs)):
        raise ConfigError("mean estimation requires every sample to have exited")
    mean = float(np.mean(costs))
    se = float(np.std(costs, ddof=1) / math.sqrt(costs.size)) if costs.size > 1 else 0.0
    return mean, se


def write_samples_csv(batch: BatchResult, path: str) -> None:
    """One row per sample: stream index, start, outcome flags, cost, switches."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        coords = [f"x0_{a}" for a in range(batch.start_x.size)]
        writer.writerow(["sample", *coords, "mode0", "exited", "escaped", "censored",
                         "cost", "switches"])
        for i in range(batch.n):
            cost = batch.costs[i]
            writer.writerow([
                i, *[repr(float(v)) for v in batch.start_x], batch.start_mode + 1,
                int(batch.exited[i]), int(batch.escaped[i]), int(batch.censored[i]),
                repr(float(cost)) if np.isfinite(cost) else "inf",
                int(batch.switch_counts[i]),
            ])
