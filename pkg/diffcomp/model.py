"""
Declarative diffusion pairs and sampled checks of the comparison hypotheses.

Coefficient fields come from a closed family (constant, affine-clamped,
trig-perturbed, table-interpolated) so that their sup bound and Lipschitz
constant can be computed from the parameters alone.  Parameter layouts, with
m the output size (n for drifts, n*n for dispersions, row-major):

    constant            [value(m)]
    affine-clamped      [base(m), slope(m*n), lo(m), hi(m)]
                        F(x) = clamp(base + slope @ x, lo, hi)
    trig-perturbed      [base(m), scale(m), wave(n), phase]
                        F(x) = base + scale * sin(<wave, x> + phase)
    table-interpolated  [K, direction(n), knots(K), values(K*m)]
                        F(x) = piecewise-linear in <direction, x>, flat outside the knots
"""

from functools import cached_property
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.stats import norm, qmc

from .config import TOL_LIPSCHITZ, TOL_ORDER
from .errors import HypothesisViolation, SpecificationError
from .logger import log_event, log_warning

FieldKind = Literal["constant", "affine-clamped", "trig-perturbed", "table-interpolated"]


class CoefficientField(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: FieldKind
    params: List[float]
    dim: int = Field(gt=0)
    shape: Literal["vector", "matrix"] = "vector"

    @property
    def out_shape(self) -> Tuple[int, ...]:
        return (self.dim,) if self.shape == "vector" else (self.dim, self.dim)

    @property
    def out_size(self) -> int:
        return int(np.prod(self.out_shape))

    @model_validator(mode="after")
    def _check_layout(self):
        m, n, p = self.out_size, self.dim, len(self.params)
        if self.kind == "constant":
            expected = m
        elif self.kind == "affine-clamped":
            expected = 3 * m + m * n
        elif self.kind == "trig-perturbed":
            expected = 2 * m + n + 1
        else:
            if p < 1 or int(self.params[0]) < 2:
                raise ValueError("table-interpolated field needs at least two knots")
            k = int(self.params[0])
            expected = 1 + n + k + k * m
        if p != expected:
            raise ValueError(f"{self.kind} field of dim {n} ({self.shape}) needs {expected} params, got {p}")
        if not np.all(np.isfinite(self.params)):
            raise ValueError("field parameters must be finite")
        if self.kind == "affine-clamped":
            parts = self._parts
            if np.any(parts["lo"] > parts["hi"]):
                raise ValueError("affine-clamped field has lo > hi")
        if self.kind == "table-interpolated" and np.any(np.diff(self._parts["knots"]) <= 0):
            raise ValueError("table knots must be strictly increasing")
        return self

    @cached_property
    def _parts(self) -> dict:
        m, n = self.out_size, self.dim
        p = np.asarray(self.params, dtype=float)
        if self.kind == "constant":
            return {"value": p}
        if self.kind == "affine-clamped":
            return {
                "base": p[:m],
                "slope": p[m:m + m * n].reshape(m, n),
                "lo": p[m + m * n:2 * m + m * n],
                "hi": p[2 * m + m * n:],
            }
        if self.kind == "trig-perturbed":
            return {"base": p[:m], "scale": p[m:2 * m], "wave": p[2 * m:2 * m + n], "phase": p[-1]}
        k = int(p[0])
        return {
            "direction": p[1:1 + n],
            "knots": p[1 + n:1 + n + k],
            "values": p[1 + n + k:].reshape(k, m),
        }

    def evaluate(self, x) -> np.ndarray:
        """Evaluate at one point (shape (n,)) or a batch (shape (P, n))."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if x.shape[-1] != self.dim or x.ndim not in (1, 2):
            raise SpecificationError(f"field expects points of dimension {self.dim}, got shape {x.shape}")
        xs = x.reshape(-1, self.dim)
        parts = self._parts
        if self.kind == "constant":
            flat = np.broadcast_to(parts["value"], (xs.shape[0], self.out_size))
        elif self.kind == "affine-clamped":
            flat = np.clip(parts["base"] + xs @ parts["slope"].T, parts["lo"], parts["hi"])
        elif self.kind == "trig-perturbed":
            wave = np.sin(xs @ parts["wave"] + parts["phase"])
            flat = parts["base"] + parts["scale"] * wave[:, None]
        else:
            s = xs @ parts["direction"]
            flat = np.column_stack([np.interp(s, parts["knots"], parts["values"][:, j])
                                    for j in range(self.out_size)])
        out = np.array(flat).reshape((xs.shape[0],) + self.out_shape)
        return out[0] if single else out

    def bounds(self) -> Tuple[float, float]:
        """(sup bound, Lipschitz constant C) in the Frobenius norm"""
        parts = self._parts
        if self.kind == "constant":
            return float(np.linalg.norm(parts["value"])), 0.0
        if self.kind == "affine-clamped":
            sup = np.linalg.norm(np.maximum(np.abs(parts["lo"]), np.abs(parts["hi"])))
            return float(sup), float(np.linalg.norm(parts["slope"]))
        if self.kind == "trig-perturbed":
            sup = np.linalg.norm(parts["base"]) + np.linalg.norm(parts["scale"])
            return float(sup), float(np.linalg.norm(parts["scale"]) * np.linalg.norm(parts["wave"]))
        values, knots = parts["values"], parts["knots"]
        sup = np.max(np.linalg.norm(values, axis=1))
        slopes = np.linalg.norm(np.diff(values, axis=0), axis=1) / np.diff(knots)
        return float(sup), float(np.max(slopes) * np.linalg.norm(parts["direction"]))

    @property
    def is_zero(self) -> bool:
        return self.kind == "constant" and not np.any(self._parts["value"])

    @classmethod
    def constant(cls, value, dim: Optional[int] = None) -> "CoefficientField":
        value = np.asarray(value, dtype=float)
        if value.ndim == 0:
            value = value.reshape(1)
        shape = "matrix" if value.ndim == 2 else "vector"
        return cls(kind="constant", params=value.ravel().tolist(), dim=dim or value.shape[0], shape=shape)


class DiffusionModel(BaseModel):
    """One side of a comparison pair: dX = drift(X) dt + dispersion(X) dW, X(0) = x0."""

    model_config = ConfigDict(frozen=True)

    n: int = Field(gt=0)
    x0: List[float]
    drift: CoefficientField
    dispersion: CoefficientField

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data):
        # scenario files may omit x0, a zero drift, and the dim/shape of each field
        if isinstance(data, dict) and "n" in data:
            data = dict(data)
            n = int(data["n"])
            data.setdefault("x0", [0.0] * n)
            data.setdefault("drift", {"kind": "constant", "params": [0.0] * n})
            for key, shape in (("drift", "vector"), ("dispersion", "matrix")):
                if isinstance(data.get(key), dict):
                    data[key] = {"dim": n, "shape": shape, **data[key]}
        return data

    @model_validator(mode="after")
    def _check_shapes(self):
        if len(self.x0) != self.n:
            raise ValueError(f"x0 has {len(self.x0)} entries, model dimension is {self.n}")
        if self.drift.dim != self.n or self.drift.shape != "vector":
            raise ValueError("drift must be an n-vector field")
        if self.dispersion.dim != self.n or self.dispersion.shape != "matrix":
            raise ValueError("dispersion must be an n x n matrix field")
        return self

    @property
    def start(self) -> np.ndarray:
        return np.asarray(self.x0, dtype=float)

    @classmethod
    def constant(cls, dispersion, drift=None, x0=None) -> "DiffusionModel":
        sigma = np.atleast_2d(np.asarray(dispersion, dtype=float))
        n = sigma.shape[0]
        mu = np.zeros(n) if drift is None else np.broadcast_to(np.asarray(drift, dtype=float), (n,))
        start = np.zeros(n) if x0 is None else np.broadcast_to(np.asarray(x0, dtype=float), (n,))
        return cls(n=n, x0=start.tolist(), drift=CoefficientField.constant(mu, n),
                   dispersion=CoefficientField.constant(sigma, n))


class EllipticityReport(BaseModel):
    lambda_min: float
    lambda_max: float
    sample_count: int
    region_radius: float

    @property
    def elliptic(self) -> bool:
        return self.lambda_min > 0


class OrderReport(BaseModel):
    diffusion_order_ok: bool
    drift_order_ok: bool
    worst_eigenvalue: float
    worst_drift_gap: float
    sample_points: List[List[float]]


def eval_dispersion(model: DiffusionModel, x) -> np.ndarray:
    return model.dispersion.evaluate(_point(model, x))


def eval_drift(model: DiffusionModel, x) -> np.ndarray:
    return model.drift.evaluate(_point(model, x))


def diffusion_matrix(model: DiffusionModel, x, halved: bool = True) -> np.ndarray:
    """sigma sigma^T at x (one point or a batch); halved gives the generator's a = sigma sigma^T / 2."""
    sigma = model.dispersion.evaluate(x)
    a = np.einsum("...ij,...kj->...ik", sigma, sigma)
    return a / 2.0 if halved else a


def field_bounds(field: CoefficientField) -> Tuple[float, float]:
    return field.bounds()


def is_constant(model: DiffusionModel) -> bool:
    return model.drift.kind == "constant" and model.dispersion.kind == "constant"


def loewner_leq(A, B, tol: float = 0.0) -> bool:
    """A <= B in the Loewner order: smallest eigenvalue of B - A is >= -tol."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape != B.shape or A.shape[0] != A.shape[1]:
        raise SpecificationError(f"loewner_leq needs square matrices of equal shape, got {A.shape} and {B.shape}")
    for name, M in (("A", A), ("B", B)):
        if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(M).max())):
            raise SpecificationError(f"loewner_leq: {name} is not symmetric")
    D = B - A
    return bool(np.linalg.eigvalsh((D + D.T) / 2.0)[0] >= -tol)


def ball_samples(n: int, radius: float, samples: int, seed: int) -> np.ndarray:
    """Scrambled Halton points spread over the ball of the given radius."""
    u = qmc.Halton(d=n + 1, scramble=True, seed=seed).random(samples)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    direction = norm.ppf(u[:, :n])
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return direction * (radius * u[:, n:] ** (1.0 / n))


def _scan_points(model: DiffusionModel, radius: float, samples: int, seed: int) -> np.ndarray:
    if samples < 1:
        raise SpecificationError("scans need at least one sample")
    pts = ball_samples(model.n, radius, samples, seed)
    return np.vstack([pts, np.zeros(model.n), model.start])


def order_scan(modelX: DiffusionModel, modelY: DiffusionModel, radius: float,
               samples: int, seed: int = 0) -> OrderReport:
    if modelX.n != modelY.n:
        raise SpecificationError(f"order_scan: dimensions differ ({modelX.n} vs {modelY.n})")
    pts = _scan_points(modelX, radius, samples, seed)
    gap = diffusion_matrix(modelY, pts, halved=False) - diffusion_matrix(modelX, pts, halved=False)
    worst_eig = float(np.linalg.eigvalsh((gap + np.swapaxes(gap, 1, 2)) / 2.0)[:, 0].min())
    worst_drift = float((modelY.drift.evaluate(pts) - modelX.drift.evaluate(pts)).min())
    report = OrderReport(
        diffusion_order_ok=worst_eig >= -TOL_ORDER,
        drift_order_ok=worst_drift >= -TOL_ORDER,
        worst_eigenvalue=worst_eig,
        worst_drift_gap=worst_drift,
        sample_points=pts.tolist(),
    )
    log_event(f"order_scan radius={radius} samples={samples}: worst eigenvalue {worst_eig:.3e}, "
              f"worst drift gap {worst_drift:.3e}")
    return report


def lipschitz_probe(field: CoefficientField, radius: float, pairs: int, seed: int = 0) -> float:
    """Largest sampled |F(x) - F(y)| / |x - y|; raises if it beats the declared constant."""
    if pairs < 1:
        raise SpecificationError("lipschitz_probe needs at least one pair")
    n = field.dim
    x = ball_samples(n, radius, pairs, seed)
    u = qmc.Halton(d=n + 1, scramble=True, seed=seed + 1).random(pairs)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    step = norm.ppf(u[:, :n])
    step /= np.linalg.norm(step, axis=1, keepdims=True)
    # half the pairs are close neighbours (local slope), half span the ball
    scale = np.where(np.arange(pairs) % 2 == 0, 1e-4 * radius, radius * u[:, n])
    y = x + step * np.maximum(scale, 1e-12)[:, None]

    fx = field.evaluate(x).reshape(pairs, -1)
    fy = field.evaluate(y).reshape(pairs, -1)
    ratios = np.linalg.norm(fx - fy, axis=1) / np.linalg.norm(x - y, axis=1)
    worst = int(np.argmax(ratios))
    estimate = float(ratios[worst])

    _, declared = field.bounds()
    if estimate > declared * (1.0 + TOL_LIPSCHITZ) + 1e-12:
        witness = {"x": x[worst].tolist(), "y": y[worst].tolist(), "ratio": estimate, "declared": declared}
        log_warning(f"Lipschitz constant of {field.kind} field exceeded: {witness}")
        raise HypothesisViolation(f"sampled Lipschitz ratio {estimate:.6g} exceeds declared {declared:.6g}", witness)
    return estimate


def ellipticity_scan(model: DiffusionModel, radius: float, samples: int, seed: int = 0) -> EllipticityReport:
    pts = _scan_points(model, radius, samples, seed)
    eigs = np.linalg.eigvalsh(diffusion_matrix(model, pts, halved=False))
    report = EllipticityReport(
        lambda_min=float(eigs[:, 0].min()),
        lambda_max=float(eigs[:, -1].max()),
        sample_count=int(pts.shape[0]),
        region_radius=float(radius),
    )
    if not report.elliptic:
        log_warning(f"degenerate diffusion: sampled lambda_min={report.lambda_min:.3e} "
                    f"(Monte Carlo still runs, the PDE solver will refuse)")
    return report


def _point(model: DiffusionModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != model.n:
        raise SpecificationError(f"expected a point of dimension {model.n}, got shape {x.shape}")
    return x
