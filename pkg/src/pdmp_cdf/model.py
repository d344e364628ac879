"""Problem definitions, grids, rate matrices, and interpolation kernels.

A piecewise-deterministic Markov process is specified by a box domain, an
exit set, M deterministic modes (velocity field, running cost, exit cost
each), a switching-rate description (a fixed rate matrix or entrywise
interval bounds), and an optional control set.  Everything downstream
(solvers, bounds, control synthesis, simulation) consumes these types.

All types are immutable after construction and all operations here are
pure, so they are safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericsError

# Relative tolerance for snapping coordinates to grid nodes and for
# point-in-domain checks.
GEOM_RTOL = 1e-9

_FACE_NAMES_1D = ("x_min", "x_max")
_FACE_NAMES_2D = ("x_min", "x_max", "y_min", "y_max")


# ---------------------------------------------------------------------------
# switching rates
# ---------------------------------------------------------------------------


class RateMatrix:
    """Generator matrix of the mode-switching Markov chain.

    Off-diagonal entries are the switching rates (1/time); each diagonal
    entry is minus the sum of the off-diagonal entries in its row, so rows
    sum to zero.
    """

    def __init__(self, rates: np.ndarray | Sequence[Sequence[float]]):
        q = np.array(rates, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ConfigError("rate matrix must be square")
        off = q - np.diag(np.diag(q))
        if np.any(off < 0.0):
            raise ConfigError("off-diagonal switching rates must be nonnegative")
        np.fill_diagonal(off, 0.0)
        self._q = off - np.diag(off.sum(axis=1))
        self._q.setflags(write=False)

    @classmethod
    def uniform(cls, n_modes: int, rate: float) -> "RateMatrix":
        """All off-diagonal rates equal to ``rate``."""
        q = np.full((n_modes, n_modes), float(rate))
        return cls(q)

    @property
    def matrix(self) -> np.ndarray:
        return self._q

    @property
    def n_modes(self) -> int:
        return self._q.shape[0]

    def off_diagonal(self) -> np.ndarray:
        off = self._q.copy()
        np.fill_diagonal(off, 0.0)
        return off

    def total_rates(self) -> np.ndarray:
        """Per-mode total departure rates, sum_{j != i} rate(i, j)."""
        return -np.diag(self._q)

    def __repr__(self) -> str:  # pragma: no cover
        return f"RateMatrix({self._q.tolist()})"


@dataclass(frozen=True)
class RateBounds:
    """Entrywise interval bounds 0 <= lower <= upper on off-diagonal rates."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float)
        hi = np.array(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 2 or lo.shape[0] != lo.shape[1]:
            raise ConfigError("rate bounds must be two square matrices of equal shape")
        np.fill_diagonal(lo, 0.0)
        np.fill_diagonal(hi, 0.0)
        if np.any(lo < 0.0) or np.any(lo > hi):
            raise ConfigError("rate bounds must satisfy 0 <= lower <= upper entrywise")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def uniform(cls, n_modes: int, lo: float, hi: float) -> "RateBounds":
        return cls(np.full((n_modes, n_modes), float(lo)), np.full((n_modes, n_modes), float(hi)))

    @property
    def n_modes(self) -> int:
        return self.lower.shape[0]

    def contains(self, rates: RateMatrix, tol: float = 1e-12) -> bool:
        off = rates.off_diagonal()
        return bool(np.all(off >= self.lower - tol) and np.all(off <= self.upper + tol))

    def midpoint(self) -> RateMatrix:
        return RateMatrix(0.5 * (self.lower + self.upper))


def transition_probabilities(rates: RateMatrix, tau: float, method: str = "first_order") -> np.ndarray:
    """Mode-transition probabilities over a step of length ``tau``.

    ``first_order`` returns I + tau * Q, the linearization used inside the
    semi-Lagrangian sweeps.  ``exact`` returns the matrix exponential
    exp(tau * Q), computed by scaling-and-squaring on a truncated Taylor
    series (the mode count is small, so this is cheap and accurate to
    ~1e-12 relative).
    """
    if tau < 0.0:
        raise NumericsError("step length tau must be nonnegative")
    q = rates.matrix
    if method == "first_order":
        max_total = float(rates.total_rates().max(initial=0.0))
        if tau * max_total > 1.0 + 1e-12:
            raise NumericsError(
                f"first-order probabilities invalid: tau * max total rate = "
                f"{tau * max_total:.6g} exceeds 1"
            )
        return np.eye(rates.n_modes) + tau * q
    if method == "exact":
        return _expm(tau * q)
    raise ConfigError(f"unknown transition-probability method {method!r}")


def _expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring over a Taylor series."""
    norm = float(np.max(np.sum(np.abs(a), axis=1), initial=0.0))
    n_squarings = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0.5 else 0
    b = a / (2.0**n_squarings)
    result = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, 80):
        term = term @ b / k
        result = result + term
        if float(np.max(np.abs(term))) < 1e-16 * max(1.0, float(np.max(np.abs(result)))):
            break
    for _ in range(n_squarings):
        result = result @ result
    return result


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalarField:
    """Running or exit cost of one mode.

    ``constant`` carries a single value; ``tabulated`` carries one value per
    grid node (multilinearly interpolated).  Action-dependence is accepted in
    the call signature for forward compatibility but the built-in kinds do
    not use it.
    """

    kind: str  # "constant" | "tabulated"
    value: float = 0.0
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "tabulated"):
            raise ConfigError(f"unknown scalar field kind {self.kind!r}")
        if self.kind == "constant" and not math.isfinite(self.value):
            raise ConfigError("constant field value must be finite")
        if self.kind == "tabulated":
            if self.values is None:
                raise ConfigError("tabulated field needs node values")
            v = np.array(self.values, dtype=float)
            if not np.all(np.isfinite(v)):
                raise ConfigError("tabulated field values must be finite")
            v.setflags(write=False)
            object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value: float) -> "ScalarField":
        return cls("constant", value=float(value))

    def at(self, grid: "Grid", points: np.ndarray, action: np.ndarray | None = None) -> np.ndarray:
        pts = np.atleast_2d(points)
        if self.kind == "constant":
            return np.full(pts.shape[0], self.value)
        return grid.interp_nodes(self.values.reshape(-1), pts)

    def node_values(self, grid: "Grid") -> np.ndarray:
        if self.kind == "constant":
            return np.full(grid.n_nodes, self.value)
        return np.asarray(self.values, dtype=float).reshape(-1)

    def min_value(self) -> float:
        return self.value if self.kind == "constant" else float(self.values.min())

    def max_value(self) -> float:
        return self.value if self.kind == "constant" else float(self.values.max())


@dataclass(frozen=True)
class VectorField:
    """Velocity field of one mode.

    kinds:
      * ``constant``        -- f(x) = vector
      * ``control_offset``  -- f(x, a) = a + vector (controlled problems)
      * ``tabulated``       -- per-node vectors, multilinearly interpolated
    """

    kind: str
    vector: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "control_offset", "tabulated"):
            raise ConfigError(f"unknown vector field kind {self.kind!r}")
        if self.kind in ("constant", "control_offset"):
            v = np.array(self.vector, dtype=float).reshape(-1)
            if not np.all(np.isfinite(v)):
                raise ConfigError("velocity parameters must be finite")
            v.setflags(write=False)
            object.__setattr__(self, "vector", v)
        else:
            if self.values is None:
                raise ConfigError("tabulated velocity needs node values")
            v = np.array(self.values, dtype=float)
            if not np.all(np.isfinite(v)):
                raise ConfigError("tabulated velocity values must be finite")
            v.setflags(write=False)
            object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, vector: Sequence[float]) -> "VectorField":
        return cls("constant", vector=np.array(vector, dtype=float))

    @classmethod
    def control_offset(cls, offset: Sequence[float]) -> "VectorField":
        return cls("control_offset", vector=np.array(offset, dtype=float))

    @property
    def controlled(self) -> bool:
        return self.kind == "control_offset"

    @property
    def constant_in_space(self) -> bool:
        return self.kind in ("constant", "control_offset")

    def at(self, grid: "Grid", points: np.ndarray, action: np.ndarray | None = None) -> np.ndarray:
        pts = np.atleast_2d(points)
        if self.kind == "constant":
            return np.broadcast_to(self.vector, (pts.shape[0], self.vector.size)).copy()
        if self.kind == "control_offset":
            if action is None:
                raise ConfigError("control-offset velocity needs an action value")
            vec = np.asarray(action, dtype=float).reshape(-1) + self.vector
            return np.broadcast_to(vec, (pts.shape[0], vec.size)).copy()
        d = self.values.shape[-1]
        flat = self.values.reshape(-1, d)
        out = np.empty((pts.shape[0], d))
        for a in range(d):
            out[:, a] = grid.interp_nodes(flat[:, a], pts)
        return out

    def max_speed(self, controls: "ControlSet") -> float:
        if self.kind == "constant":
            return float(np.linalg.norm(self.vector))
        if self.kind == "control_offset":
            if controls.kind == "unit_circle":
                return float(np.linalg.norm(self.vector)) + 1.0
            return float(max(np.linalg.norm(a + self.vector) for a in controls.vectors))
        d = self.values.shape[-1]
        return float(np.linalg.norm(self.values.reshape(-1, d), axis=1).max())


@dataclass(frozen=True)
class ControlSet:
    """Admissible control values: empty, a finite list, or a sampled unit circle."""

    kind: str = "none"  # "none" | "list" | "unit_circle"
    vectors: np.ndarray | None = None
    n_angles: int = 0

    def __post_init__(self):
        if self.kind == "none":
            return
        if self.kind == "list":
            v = np.atleast_2d(np.array(self.vectors, dtype=float))
            if v.size == 0 or not np.all(np.isfinite(v)):
                raise ConfigError("control list must be nonempty and finite")
            v.setflags(write=False)
            object.__setattr__(self, "vectors", v)
        elif self.kind == "unit_circle":
            if self.n_angles < 2:
                raise ConfigError("unit-circle control set needs at least 2 angles")
            ang = 2.0 * np.pi * np.arange(self.n_angles) / self.n_angles
            v = np.column_stack([np.cos(ang), np.sin(ang)])
            v.setflags(write=False)
            object.__setattr__(self, "vectors", v)
        else:
            raise ConfigError(f"unknown control set kind {self.kind!r}")

    @classmethod
    def none(cls) -> "ControlSet":
        return cls("none")

    @classmethod
    def from_list(cls, vectors: Sequence[Sequence[float]] | Sequence[float]) -> "ControlSet":
        arr = np.array(vectors, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        return cls("list", vectors=arr)

    @classmethod
    def unit_circle(cls, n_angles: int) -> "ControlSet":
        return cls("unit_circle", n_angles=int(n_angles))

    @property
    def empty(self) -> bool:
        return self.kind == "none"

    @property
    def n_actions(self) -> int:
        return 0 if self.empty else self.vectors.shape[0]

    def action(self, index: int) -> np.ndarray:
        return self.vectors[index]


# ---------------------------------------------------------------------------
# exit set
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExitSpec:
    """Where the process terminates.

    ``boundary`` is the whole box boundary; ``faces`` lists box faces by name
    (x_min/x_max/y_min/y_max); ``boxes`` lists grid-aligned axis boxes inside
    the domain; ``none`` disables termination (simulation-only problems).
    """

    kind: str = "boundary"
    faces: tuple[str, ...] = ()
    boxes: tuple[tuple[tuple[float, float], ...], ...] = ()

    def __post_init__(self):
        if self.kind not in ("boundary", "faces", "boxes", "none"):
            raise ConfigError(f"unknown exit set kind {self.kind!r}")
        if self.kind == "faces" and not self.faces:
            raise ConfigError("face exit set must list at least one face")
        if self.kind == "boxes" and not self.boxes:
            raise ConfigError("box exit set must list at least one box")

    def face_names(self, dim: int) -> tuple[str, ...]:
        all_names = _FACE_NAMES_1D if dim == 1 else _FACE_NAMES_2D
        if self.kind == "boundary":
            return all_names
        if self.kind == "faces":
            for f in self.faces:
                if f not in all_names:
                    raise ConfigError(f"unknown face name {f!r} for dimension {dim}")
            return tuple(self.faces)
        return ()


def _face_axis_side(name: str) -> tuple[int, int]:
    axis = 0 if name.startswith("x") else 1
    side = 0 if name.endswith("min") else 1
    return axis, side


# ---------------------------------------------------------------------------
# problem spec
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModeSpec:
    dynamics: VectorField
    cost: ScalarField
    exit_cost: ScalarField


@dataclass(frozen=True)
class ProblemSpec:
    """Complete definition of one exit-cost problem."""

    dim: int
    lo: np.ndarray
    hi: np.ndarray
    exit_set: ExitSpec
    modes: tuple[ModeSpec, ...]
    rates: RateMatrix | RateBounds
    controls: ControlSet = field(default_factory=ControlSet.none)
    name: str = ""

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError("only 1D and 2D domains are supported")
        lo = np.array(self.lo, dtype=float).reshape(-1)
        hi = np.array(self.hi, dtype=float).reshape(-1)
        if lo.size != self.dim or hi.size != self.dim or np.any(hi <= lo):
            raise ConfigError("domain box must have hi > lo on every axis")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if not self.modes:
            raise ConfigError("at least one mode is required")
        if self.rates.n_modes != len(self.modes):
            raise ConfigError("rate description size does not match mode count")
        controlled = any(m.dynamics.controlled for m in self.modes)
        if controlled and self.controls.empty:
            raise ConfigError("controlled dynamics require a nonempty control set")
        for k, m in enumerate(self.modes):
            if m.cost.min_value() <= 0.0:
                raise ConfigError(f"running cost of mode {k} must be strictly positive")
            if m.exit_cost.min_value() < 0.0:
                raise ConfigError(f"exit cost of mode {k} must be nonnegative")

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def controlled(self) -> bool:
        return not self.controls.empty

    @property
    def fixed_rates(self) -> bool:
        return isinstance(self.rates, RateMatrix)

    def require_fixed_rates(self) -> RateMatrix:
        if not self.fixed_rates:
            raise ConfigError("this operation needs a fixed rate matrix, not rate bounds")
        return self.rates

    def require_rate_bounds(self) -> RateBounds:
        if self.fixed_rates:
            raise ConfigError("this operation needs rate bounds, not a fixed rate matrix")
        return self.rates

    def max_speed(self) -> float:
        return max(m.dynamics.max_speed(self.controls) for m in self.modes)

    def min_cost_rate(self) -> float:
        return min(m.cost.min_value() for m in self.modes)

    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))


def cfl_max_ds(spec: ProblemSpec, dx: float | Sequence[float]) -> float:
    """Largest cost-axis spacing admitting a single causal step length.

    Returns dx * min(running cost) / max(speed); this keeps one uniform
    pseudo-timestep both causal in the cost variable and inside the domain.
    """
    dxv = np.broadcast_to(np.array(dx, dtype=float).reshape(-1), (spec.dim,))
    c_min = spec.min_cost_rate()
    if c_min <= 0.0:
        raise NumericsError("minimum running cost must be positive")
    speed = spec.max_speed()
    if speed <= 0.0:
        return math.inf
    return float(dxv.min()) * c_min / speed


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


class Grid:
    """Regular node-centered grid over the domain box and the cost axis.

    Node ``k`` on axis ``a`` sits at ``lo[a] + k * dx[a]`` exactly; cost
    level ``n`` sits at ``n * ds``.  Spatial nodes are stored flattened in
    C order (axis 0 slowest).
    """

    def __init__(self, lo, dx, shape, ds, n_levels, exit_mask):
        self.lo = np.array(lo, dtype=float).reshape(-1)
        self.dx = np.array(dx, dtype=float).reshape(-1)
        self.shape = tuple(int(n) for n in shape)
        self.dim = len(self.shape)
        self.ds = float(ds)
        self.n_levels = int(n_levels)
        self.exit_mask = np.asarray(exit_mask, dtype=bool).reshape(-1)
        self.n_nodes = int(np.prod(self.shape))
        self.hi = self.lo + self.dx * (np.array(self.shape) - 1)
        axes = [self.lo[a] + self.dx[a] * np.arange(self.shape[a]) for a in range(self.dim)]
        self.axes = axes
        mesh = np.meshgrid(*axes, indexing="ij")
        self.points = np.column_stack([m.reshape(-1) for m in mesh])
        self.points.setflags(write=False)
        self.exit_mask.setflags(write=False)
        self._strides = np.array(
            [int(np.prod(self.shape[a + 1 :], dtype=int)) for a in range(self.dim)], dtype=int
        )

    @property
    def s_max(self) -> float:
        return (self.n_levels - 1) * self.ds

    @property
    def s_levels(self) -> np.ndarray:
        return np.arange(self.n_levels) * self.ds

    def flat_index(self, multi: np.ndarray) -> np.ndarray:
        return np.asarray(multi, dtype=int) @ self._strides

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        tol = GEOM_RTOL * self.dx
        return np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=1)

    def spatial_stencil(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Multilinear stencil (flat node indices and weights) for points in the box.

        Returns ``(idx, w)`` of shapes ``(2**dim, n)``; points are clamped to
        the box after a tolerance check, so callers must have validated
        domain membership already.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if not np.all(self.contains(pts)):
            bad = np.where(~self.contains(pts))[0][:3]
            raise NumericsError(f"points outside the domain box: {pts[bad].tolist()}")
        n = pts.shape[0]
        corners = 1 << self.dim
        idx = np.zeros((corners, n), dtype=int)
        w = np.ones((corners, n))
        for a in range(self.dim):
            rel = (pts[:, a] - self.lo[a]) / self.dx[a]
            rel = np.clip(rel, 0.0, self.shape[a] - 1)
            base = np.minimum(rel.astype(int), self.shape[a] - 2) if self.shape[a] > 1 else np.zeros(n, dtype=int)
            frac = rel - base
            for c in range(corners):
                hi_side = (c >> a) & 1
                idx[c] += (base + hi_side) * self._strides[a]
                w[c] *= np.where(hi_side, frac, 1.0 - frac)
        return idx, w

    def interp_nodes(self, node_values: np.ndarray, points: np.ndarray) -> np.ndarray:
        idx, w = self.spatial_stencil(points)
        vals = np.asarray(node_values, dtype=float).reshape(-1)
        return np.einsum("cn,cn->n", w, vals[idx])

    def snap_level(self, s: float) -> int:
        """Index of the first level at or above ``s`` (tolerant ceiling)."""
        return max(0, int(math.ceil(s / self.ds - GEOM_RTOL)))


def _axis_counts(lo: np.ndarray, hi: np.ndarray, dx: np.ndarray) -> list[int]:
    counts = []
    for a in range(lo.size):
        n_cells = (hi[a] - lo[a]) / dx[a]
        rounded = round(n_cells)
        if abs(n_cells - rounded) > GEOM_RTOL * max(1.0, abs(n_cells)) or rounded < 1:
            raise NumericsError(
                f"spacing {dx[a]:.6g} does not divide the axis-{a} extent "
                f"{hi[a] - lo[a]:.6g}"
            )
        counts.append(int(rounded) + 1)
    return counts


def _exit_mask(spec: ProblemSpec, axes: list[np.ndarray], shape: tuple[int, ...], dx: np.ndarray) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    es = spec.exit_set
    if es.kind == "none":
        return mask.reshape(-1)
    if es.kind in ("boundary", "faces"):
        for name in es.face_names(spec.dim):
            axis, side = _face_axis_side(name)
            sl = [slice(None)] * spec.dim
            sl[axis] = -1 if side == 1 else 0
            mask[tuple(sl)] = True
        return mask.reshape(-1)
    for box in es.boxes:
        if len(box) != spec.dim:
            raise ConfigError("exit box dimensionality does not match the domain")
        sel = np.ones(shape, dtype=bool)
        for a, (b_lo, b_hi) in enumerate(box):
            tol = GEOM_RTOL * dx[a]
            for edge in (b_lo, b_hi):
                rel = (edge - spec.lo[a]) / dx[a]
                if abs(rel - round(rel)) > GEOM_RTOL * max(1.0, abs(rel)):
                    raise NumericsError(f"exit box edge {edge:.6g} is not grid-aligned on axis {a}")
            ax_sel = (axes[a] >= b_lo - tol) & (axes[a] <= b_hi + tol)
            sh = [1] * spec.dim
            sh[a] = shape[a]
            sel &= ax_sel.reshape(sh)
        mask |= sel
    return mask.reshape(-1)


def build_grid(
    spec: ProblemSpec,
    dx: float | Sequence[float],
    ds: float,
    s_max: float,
) -> Grid:
    """Discretize the domain box and the cost axis.

    ``dx`` may be a scalar (same spacing on every axis) or per-axis values;
    each spacing must divide its axis extent, ``ds`` must divide ``s_max``,
    and the exit set must be grid-aligned.
    """
    dxv = np.broadcast_to(np.array(dx, dtype=float).reshape(-1), (spec.dim,)).astype(float)
    if np.any(dxv <= 0.0) or ds <= 0.0:
        raise NumericsError("grid spacings must be positive")
    counts = _axis_counts(spec.lo, spec.hi, dxv)
    n_s = s_max / ds
    n_s_round = round(n_s)
    if abs(n_s - n_s_round) > GEOM_RTOL * max(1.0, n_s) or n_s_round < 1:
        raise NumericsError(f"cost spacing {ds:.6g} does not divide the cost range {s_max:.6g}")
    axes = [spec.lo[a] + dxv[a] * np.arange(counts[a]) for a in range(spec.dim)]
    mask = _exit_mask(spec, axes, tuple(counts), dxv)
    return Grid(spec.lo, dxv, counts, ds, int(n_s_round) + 1, mask)


# ---------------------------------------------------------------------------
# grid fields
# ---------------------------------------------------------------------------


class CdfField:
    """Per-mode grid function W[mode, level, node] approximating a CDF.

    ``evaluate`` interpolates multilinearly in space and linearly in the
    cost threshold; queries below threshold zero return the flat extension
    (zero off the exit set, the exit-cost indicator on it).
    """

    def __init__(self, grid: Grid, values: np.ndarray, spec: ProblemSpec | None = None,
                 tau: float | None = None, variant: str = ""):
        self.grid = grid
        self.values = values
        self.spec = spec
        self.tau = tau
        self.variant = variant

    @property
    def n_modes(self) -> int:
        return self.values.shape[0]

    def level(self, mode: int, n: int) -> np.ndarray:
        return self.values[mode, n]

    def evaluate(self, mode: int, x, s: float) -> float:
        pt = np.atleast_2d(np.asarray(x, dtype=float))
        grid = self.grid
        if s < 0.0:
            if self.spec is None:
                return 0.0
            q = self.spec.modes[mode].exit_cost.node_values(grid)
            vals = np.where(grid.exit_mask & (s >= q - 1e-15), 1.0, 0.0)
            return float(grid.interp_nodes(vals, pt)[0])
        rel = min(s / grid.ds, grid.n_levels - 1)
        n_lo = min(int(rel), grid.n_levels - 2) if grid.n_levels > 1 else 0
        th = rel - n_lo
        lo_val = grid.interp_nodes(self.values[mode, n_lo], pt)[0]
        hi_val = grid.interp_nodes(self.values[mode, min(n_lo + 1, grid.n_levels - 1)], pt)[0]
        return float((1.0 - th) * lo_val + th * hi_val)

    def curve(self, mode: int, x) -> np.ndarray:
        """CDF values over all grid levels at one spatial point."""
        pt = np.atleast_2d(np.asarray(x, dtype=float))
        idx, w = self.grid.spatial_stencil(pt)
        return np.einsum("c,mc->m", w[:, 0], self.values[mode][:, idx[:, 0]])


class MinCostField:
    """Minimal attainable cost s0 per node and attainment probability per mode."""

    def __init__(self, grid: Grid, s0: np.ndarray, w0: np.ndarray):
        self.grid = grid
        self.s0 = s0
        self.w0 = w0

    def first_level(self) -> np.ndarray:
        """Conservatively rounded-up first active level per node."""
        ds = self.grid.ds
        lvl = np.ceil(self.s0 / ds - GEOM_RTOL)
        lvl = np.where(np.isfinite(lvl), np.maximum(lvl, 0.0), self.grid.n_levels + 1)
        return lvl.astype(int)
