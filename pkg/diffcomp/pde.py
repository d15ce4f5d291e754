"""
Explicit finite differences for the backward Kolmogorov equation

    dv/dt = sum a_ij v_,ij + sum b_i v_,i,    v(0, .) = f(<c, .>),   a = sigma sigma^T / 2

on [-radius, radius]^dim for dim 1 and 2, plus the derived quantities the
comparison argument needs (Hessian trace, convexity, monotonicity, the
difference field and its source term).
"""

import math
from typing import List, Literal, Optional, Tuple

import numpy as np
import psutil
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.interpolate import RegularGridInterpolator

from .config import CFL_SAFETY, MEMORY_CAP_FRACTION
from .convex import PayoffSpec
from .errors import DegenerateDiffusionError, GridError, SpecificationError
from .kernels import ConstKernel, gaussian_expectation
from .logger import log_event, log_warning
from .model import DiffusionModel, diffusion_matrix, is_constant

_BOUNDARY_KNOTS = 257


class GridSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    dim: Literal[1, 2]
    radius: float = Field(gt=0)
    nodes: int = Field(ge=16)
    time_steps: int = Field(default=1, ge=1)
    horizon: float = Field(gt=0)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.radius, self.radius, self.nodes)

    @property
    def spacing(self) -> float:
        return 2.0 * self.radius / (self.nodes - 1)

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.nodes,) * self.dim

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def refined(self) -> "GridSpec":
        """Halve the spacing while keeping every existing node."""
        return self.model_copy(update={"nodes": 2 * self.nodes - 1})

    def coarsened(self) -> "GridSpec":
        if self.nodes % 2 == 0:
            raise GridError("coarsening needs an odd node count so that nodes are shared")
        return self.model_copy(update={"nodes": (self.nodes + 1) // 2})


class ValueField(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    first: np.ndarray
    last: np.ndarray
    slices: Optional[np.ndarray] = None
    grid: GridSpec
    model_tag: str
    boundary: Literal["gaussian-exact", "frozen-data", "derived"]
    time_steps: int = 0

    @model_validator(mode="after")
    def _check_values(self):
        for name in ("first", "last"):
            arr = getattr(self, name)
            if arr.shape != self.grid.shape:
                raise ValueError(f"{name} slice has shape {arr.shape}, grid needs {self.grid.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} slice of {self.model_tag} is not finite")
        return self


class PropagationReport(BaseModel):
    min_trace: float
    min_convexity: float
    min_gradient: List[float]
    min_hessian_entry: float
    core_radius: float


def _generator(v: np.ndarray, a: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    """sum a_ij v_,ij + sum b_i v_,i on interior nodes; a and b already restricted to the interior."""
    if v.ndim == 1:
        vxx = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (h * h)
        vx = (v[2:] - v[:-2]) / (2.0 * h)
        return a[..., 0, 0] * vxx + b[..., 0] * vx
    c = v[1:-1, 1:-1]
    vxx = (v[2:, 1:-1] - 2.0 * c + v[:-2, 1:-1]) / (h * h)
    vyy = (v[1:-1, 2:] - 2.0 * c + v[1:-1, :-2]) / (h * h)
    vxy = (v[2:, 2:] - v[2:, :-2] - v[:-2, 2:] + v[:-2, :-2]) / (4.0 * h * h)
    vx = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2.0 * h)
    vy = (v[1:-1, 2:] - v[1:-1, :-2]) / (2.0 * h)
    return (a[..., 0, 0] * vxx + a[..., 1, 1] * vyy + (a[..., 0, 1] + a[..., 1, 0]) * vxy
            + b[..., 0] * vx + b[..., 1] * vy)


def _interior(arr: np.ndarray, dim: int) -> np.ndarray:
    return arr[(slice(1, -1),) * dim]


def _boundary_mask(grid: GridSpec) -> np.ndarray:
    mask = np.ones(grid.shape, dtype=bool)
    _interior(mask, grid.dim)[...] = False
    return mask


def _core_mask(grid: GridSpec) -> np.ndarray:
    pts = grid.points().reshape(grid.shape + (grid.dim,))
    return np.all(np.abs(pts) <= 0.5 * grid.radius + 1e-12, axis=-1)


def _stable_dt(a: np.ndarray, b: np.ndarray, h: float) -> float:
    # sum_ij |a_ij| bounds the centre weight of the cross stencil
    dt = CFL_SAFETY * h * h / (2.0 * float(np.max(np.abs(a).sum(axis=(-2, -1)))))
    drift2 = float(np.max(np.sum(b * b, axis=-1)))
    if drift2 > 0:
        lam = float(np.min(np.linalg.eigvalsh(a)[..., 0]))
        dt = min(dt, CFL_SAFETY * 2.0 * lam / drift2)
    return dt


def _boundary_values(model: DiffusionModel, payoff: PayoffSpec, grid: GridSpec, steps: int, dt: float):
    """Boundary node values as a function of the step index."""
    mask = _boundary_mask(grid)
    pts = grid.points()[mask.ravel()]
    if not is_constant(model):
        frozen = payoff.evaluate(pts)
        return "frozen-data", mask, lambda k: frozen
    a0 = diffusion_matrix(model, model.start)
    k = ConstKernel(a0, model.drift.evaluate(model.start))
    if steps + 1 <= _BOUNDARY_KNOTS:
        table = np.stack([gaussian_expectation(k, payoff, pts, j * dt) for j in range(steps + 1)])
        return "gaussian-exact", mask, lambda j: table[j]
    knots = np.linspace(0.0, steps * dt, _BOUNDARY_KNOTS)
    table = np.stack([gaussian_expectation(k, payoff, pts, t) for t in knots])

    def at(j):
        t = j * dt
        i = min(int(t / knots[1]), _BOUNDARY_KNOTS - 2)
        w = (t - knots[i]) / (knots[i + 1] - knots[i])
        return (1.0 - w) * table[i] + w * table[i + 1]

    return "gaussian-exact", mask, at


def solve_backward(model: DiffusionModel, payoff: PayoffSpec, grid: GridSpec,
                   store_all: bool = False, tag: Optional[str] = None) -> ValueField:
    """March v from t = 0 to the horizon with forward-time central-space steps.

    The step count is raised to satisfy the stability bound when the grid asks
    for fewer steps than it allows.
    """
    if model.n != grid.dim or payoff.dim != grid.dim:
        raise SpecificationError(f"grid dim {grid.dim}, model dim {model.n}, payoff dim {payoff.dim} disagree")
    pts = grid.points()
    a = diffusion_matrix(model, pts).reshape(grid.shape + (grid.dim, grid.dim))
    b = model.drift.evaluate(pts).reshape(grid.shape + (grid.dim,))
    lam = np.linalg.eigvalsh(a)
    if lam[..., 0].min() <= 0:
        raise DegenerateDiffusionError(f"diffusion matrix is degenerate on the grid "
                                       f"(lambda_min={lam[..., 0].min():.3e}); refusing to solve")

    h = grid.spacing
    dt_max = _stable_dt(a, b, h)
    steps = max(grid.time_steps, math.ceil(grid.horizon / dt_max))
    if steps > grid.time_steps:
        log_event(f"stability refinement: {grid.time_steps} -> {steps} time steps (dt <= {dt_max:.3e})")
    dt = grid.horizon / steps

    if store_all:
        need = (steps + 1) * int(np.prod(grid.shape)) * 8
        cap = MEMORY_CAP_FRACTION * psutil.virtual_memory().available
        if need > cap:
            raise GridError(f"storing {steps + 1} slices needs {need / 2**20:.0f} MiB, cap is {cap / 2**20:.0f} MiB")

    big_lam = float(2.0 * lam[..., -1].max())
    policy, mask, boundary = _boundary_values(model, payoff, grid, steps, dt)
    if policy == "frozen-data" and grid.radius < 8.0 * math.sqrt(big_lam * grid.horizon):
        log_warning(f"frozen boundary at radius {grid.radius} is inside 8 sqrt(Lambda T) "
                    f"= {8.0 * math.sqrt(big_lam * grid.horizon):.3f}; core values may be polluted")

    ai, bi = _interior(a, grid.dim), _interior(b, grid.dim)
    v = payoff.evaluate(pts).reshape(grid.shape)
    first = v.copy()
    kept = [first] if store_all else None
    for k in range(steps):
        nxt = v.copy()
        _interior(nxt, grid.dim)[...] += dt * _generator(v, ai, bi, h)
        nxt[mask] = boundary(k + 1)
        v = nxt
        if store_all:
            kept.append(v)
    if not np.all(np.isfinite(v)):
        raise GridError(f"explicit scheme blew up for {tag or 'model'}")

    log_event(f"solve_backward dim={grid.dim} nodes={grid.nodes} steps={steps} boundary={policy}")
    return ValueField(first=first, last=v, slices=np.stack(kept) if store_all else None, grid=grid,
                      model_tag=tag or "model", boundary=policy, time_steps=steps)


def probe_value(field: ValueField, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    grid = field.grid
    if x.shape != (grid.dim,):
        raise SpecificationError(f"probe point has shape {x.shape}, grid dim is {grid.dim}")
    if np.any(np.abs(x) > grid.radius * (1.0 + 1e-12)):
        raise GridError(f"probe point {x.tolist()} is outside [-{grid.radius}, {grid.radius}]^{grid.dim}")
    interp = RegularGridInterpolator((grid.axis,) * grid.dim, field.last, method="linear")
    return float(interp(np.clip(x, -grid.radius, grid.radius)[None, :])[0])


def _derivatives(field: ValueField) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Central-difference gradient and Hessian on core nodes, with the core node coordinates."""
    grid, v, h = field.grid, field.last, field.grid.spacing
    dim = grid.dim
    grad = np.zeros(grid.shape + (dim,))
    hess = np.zeros(grid.shape + (dim, dim))
    inner = (slice(1, -1),) * dim

    def shift(axis_shifts):
        idx = []
        for d in range(dim):
            s = axis_shifts.get(d, 0)
            idx.append(slice(1 + s, grid.nodes - 1 + s))
        return v[tuple(idx)]

    for i in range(dim):
        grad[inner + (i,)] = (shift({i: 1}) - shift({i: -1})) / (2.0 * h)
        hess[inner + (i, i)] = (shift({i: 1}) - 2.0 * v[inner] + shift({i: -1})) / (h * h)
        for j in range(i + 1, dim):
            cross = (shift({i: 1, j: 1}) - shift({i: 1, j: -1}) - shift({i: -1, j: 1})
                     + shift({i: -1, j: -1})) / (4.0 * h * h)
            hess[inner + (i, j)] = cross
            hess[inner + (j, i)] = cross
    core = _core_mask(grid)
    return grad[core], hess[core], grid.points()[core.ravel()]


def propagation_report(field: ValueField, model: DiffusionModel) -> PropagationReport:
    grad, hess, pts = _derivatives(field)
    a = diffusion_matrix(model, pts)
    trace = np.einsum("kij,kji->k", a, hess)
    if field.grid.dim == 1:
        convexity = float(hess[:, 0, 0].min())
    else:
        convexity = float(np.linalg.eigvalsh(hess)[:, 0].min())
    return PropagationReport(
        min_trace=float(trace.min()),
        min_convexity=convexity,
        min_gradient=grad.min(axis=0).tolist(),
        min_hessian_entry=float(hess.min()),
        core_radius=0.5 * field.grid.radius,
    )


def delta_field(field1: ValueField, field2: ValueField) -> Tuple[ValueField, float]:
    """field2 - field1 on the final slice (Y side minus X side) and its minimum over the core."""
    if field1.grid != field2.grid:
        raise GridError("delta_field needs fields on identical grids")
    if not np.array_equal(field1.first, field2.first):
        raise GridError("delta_field needs fields solved from identical data")
    diff = field2.last - field1.last
    delta = ValueField(first=np.zeros_like(diff), last=diff, grid=field1.grid,
                       model_tag=f"{field2.model_tag}-minus-{field1.model_tag}", boundary="derived")
    return delta, float(diff[_core_mask(field1.grid)].min())


def source_report(field_x: ValueField, model_x: DiffusionModel, model_y: DiffusionModel) -> float:
    """Core minimum of sum (a^Y - a^X)_ij v_,ij + sum (nu - mu)_i v_,i for the X-side value function."""
    grad, hess, pts = _derivatives(field_x)
    da = diffusion_matrix(model_y, pts) - diffusion_matrix(model_x, pts)
    db = model_y.drift.evaluate(pts) - model_x.drift.evaluate(pts)
    source = np.einsum("kij,kij->k", da, hess) + np.einsum("ki,ki->k", db, grad)
    return float(source.min())


def richardson_tolerance(model: DiffusionModel, payoff: PayoffSpec, grid: GridSpec, x=None) -> float:
    """10 |v_h - v_2h| at x (the origin by default), floored at rounding level."""
    x = np.zeros(grid.dim) if x is None else x
    # even node counts have no nested coarse grid
    fine_grid, coarse_grid = (grid, grid.coarsened()) if grid.nodes % 2 else (grid.refined(), grid)
    fine = probe_value(solve_backward(model, payoff, fine_grid), x)
    coarse = probe_value(solve_backward(model, payoff, coarse_grid), x)
    return max(10.0 * abs(fine - coarse), 1e-9)


def convergence_order(model: DiffusionModel, payoff: PayoffSpec, grid: GridSpec, x=None, levels: int = 3) -> float:
    """Empirical order of the probe at x under node doubling, from the last three levels."""
    if levels < 3:
        raise SpecificationError("convergence_order needs at least three levels")
    x = np.zeros(grid.dim) if x is None else x
    values = []
    g = grid
    for _ in range(levels):
        values.append(probe_value(solve_backward(model, payoff, g), x))
        g = g.refined()
    d1 = abs(values[-2] - values[-3])
    d2 = abs(values[-1] - values[-2])
    if d2 == 0.0:
        return math.inf
    order = math.log2(d1 / d2) if d1 > 0 else 0.0
    log_event(f"convergence order at {np.asarray(x).tolist()}: {order:.3f} (probes {values})")
    return order


def dump_field_csv(field: ValueField, path) -> None:
    pts = field.grid.points()
    header = "x,value" if field.grid.dim == 1 else "x,y,value"
    np.savetxt(path, np.column_stack([pts, field.last.ravel()]), delimiter=",", header=header,
               comments="", fmt="%.17g")
