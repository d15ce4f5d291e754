"""
Univariate data functions, weighted-sum payoffs and the convex mollifier.

A mollified function is built in three layers:

    F  = f * phi_h                 convolution with a compact triweight kernel of width h
    G  = F + gamma * (cosh(z/R) - 1)   strictly convex bump on the core ball
    g  = chi * G                   septic taper, chi = 1 on |z| <= R, 0 on |z| >= R + band

All derivatives of g are analytic in the sense that they come from the
representation itself: F' and F'' are integrals of f' against phi_h and phi_h',
computed by Gauss-Legendre quadrature split at the kinks of f, which is exact
for piecewise-linear data.
"""

import math
from dataclasses import dataclass
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import expit
from scipy.stats import norm

from .config import TAPER_BAND, TOL_CONV
from .errors import MollificationError, SpecificationError
from .logger import log_event

ScalarKind = Literal[
    "abs", "power-p", "relu", "softplus", "quadratic", "exp-scaled",
    "linear", "neg-linear", "neg-quadratic", "piecewise-linear",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(96)
_GH_WEIGHTS = _GH_WEIGHTS / math.sqrt(2.0 * math.pi)
_CHUNK = 16384
_BUMP_PEAK = math.cosh(1.0) - 1.0


class ScalarFunction(BaseModel):
    """A total function on the real line from a fixed family.

    params by kind: power-p [p], relu [strike] (optional), exp-scaled [k],
    piecewise-linear [z0, y0, z1, y1, ...] with strictly increasing knots and
    linear extrapolation; every other kind takes no parameters.
    """

    model_config = ConfigDict(frozen=True)

    kind: ScalarKind
    params: List[float] = []

    @model_validator(mode="after")
    def _check_params(self):
        p = self.params
        if self.kind == "power-p" and (len(p) != 1 or p[0] < 1.0):
            raise ValueError("power-p takes one exponent p >= 1")
        if self.kind == "exp-scaled" and len(p) != 1:
            raise ValueError("exp-scaled takes one rate k")
        if self.kind == "relu" and len(p) > 1:
            raise ValueError("relu takes at most a strike")
        if self.kind == "piecewise-linear":
            if len(p) < 4 or len(p) % 2:
                raise ValueError("piecewise-linear needs at least two (z, y) knots")
            if np.any(np.diff(p[0::2]) <= 0):
                raise ValueError("piecewise-linear knots must be strictly increasing")
        if self.kind not in ("power-p", "exp-scaled", "relu", "piecewise-linear") and p:
            raise ValueError(f"{self.kind} takes no parameters")
        return self

    @property
    def strike(self) -> float:
        return self.params[0] if self.params else 0.0

    @property
    def kinks(self) -> np.ndarray:
        if self.kind in ("abs", "power-p"):
            return np.zeros(1)
        if self.kind == "relu":
            return np.array([self.strike])
        if self.kind == "piecewise-linear":
            return np.asarray(self.params[0::2], dtype=float)
        return np.zeros(0)

    def _segments(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        knots = np.asarray(self.params[0::2], dtype=float)
        values = np.asarray(self.params[1::2], dtype=float)
        return knots, values, np.diff(values) / np.diff(knots)

    def value(self, z):
        z = np.asarray(z, dtype=float)
        k = self.kind
        if k == "abs":
            return np.abs(z)
        if k == "power-p":
            return np.abs(z) ** self.params[0]
        if k == "relu":
            return np.maximum(z - self.strike, 0.0)
        if k == "softplus":
            return np.logaddexp(0.0, z)
        if k == "quadratic":
            return z * z
        if k == "exp-scaled":
            return np.exp(self.params[0] * z)
        if k == "linear":
            return z.copy()
        if k == "neg-linear":
            return -z
        if k == "neg-quadratic":
            return -z * z
        knots, values, slopes = self._segments()
        inner = np.interp(z, knots, values)
        left = values[0] + slopes[0] * (z - knots[0])
        right = values[-1] + slopes[-1] * (z - knots[-1])
        return np.where(z < knots[0], left, np.where(z > knots[-1], right, inner))

    def derivative(self, z):
        """Right derivative (the classical one away from kinks)."""
        z = np.asarray(z, dtype=float)
        k = self.kind
        if k == "abs":
            return np.where(z >= 0, 1.0, -1.0)
        if k == "power-p":
            p = self.params[0]
            return p * np.abs(z) ** (p - 1.0) * np.where(z >= 0, 1.0, -1.0)
        if k == "relu":
            return np.where(z >= self.strike, 1.0, 0.0)
        if k == "softplus":
            return expit(z)
        if k == "quadratic":
            return 2.0 * z
        if k == "exp-scaled":
            return self.params[0] * np.exp(self.params[0] * z)
        if k == "linear":
            return np.ones_like(z)
        if k == "neg-linear":
            return -np.ones_like(z)
        if k == "neg-quadratic":
            return -2.0 * z
        knots, _, slopes = self._segments()
        idx = np.clip(np.searchsorted(knots, z, side="right") - 1, 0, len(slopes) - 1)
        return slopes[idx]

    def gaussian_mean(self, m, s: float):
        """E f(m + s Z) for standard normal Z; closed form where the family has one."""
        m = np.asarray(m, dtype=float)
        if s <= 0:
            return self.value(m)
        k = self.kind
        if k in ("linear", "neg-linear"):
            return m if k == "linear" else -m
        if k in ("quadratic", "neg-quadratic"):
            second = m * m + s * s
            return second if k == "quadratic" else -second
        if k == "exp-scaled":
            rate = self.params[0]
            return np.exp(rate * m + 0.5 * rate * rate * s * s)
        if k == "abs":
            d = m / s
            return s * 2.0 * norm.pdf(d) + m * (2.0 * norm.cdf(d) - 1.0)
        if k == "relu":
            return _call_value(m - self.strike, s)
        if k == "piecewise-linear":
            knots, values, slopes = self._segments()
            out = values[0] + slopes[0] * (m - knots[0])
            for j in range(1, len(slopes)):
                out = out + (slopes[j] - slopes[j - 1]) * _call_value(m - knots[j], s)
            return out
        return _hermite_mean(self.value, m, s)


def _call_value(d, s: float):
    """E max(d + s Z, 0)."""
    return d * norm.cdf(d / s) + s * norm.pdf(d / s)


def _hermite_mean(fn, m, s: float):
    pts = m[..., None] + s * _GH_NODES
    return (fn(pts) * _GH_WEIGHTS).sum(axis=-1)


def _triweight(u, h: float):
    t = u / h
    return np.where(np.abs(t) < 1.0, 35.0 / 32.0 * (1.0 - t * t) ** 3, 0.0) / h


def _triweight_slope(u, h: float):
    t = u / h
    return np.where(np.abs(t) < 1.0, -105.0 / 16.0 * t * (1.0 - t * t) ** 2, 0.0) / (h * h)


def _smoothed(fn, kernel, z: np.ndarray, h: float, kinks: np.ndarray) -> np.ndarray:
    """integral of fn(z - u) kernel(u) over [-h, h], split at the kinks of fn."""
    out = np.empty_like(z)
    for start in range(0, z.size, _CHUNK):
        zc = z[start:start + _CHUNK]
        cuts = np.clip(zc[:, None] - kinks[None, :], -h, h)
        edges = np.concatenate([np.full((zc.size, 1), -h), cuts, np.full((zc.size, 1), h)], axis=1)
        edges.sort(axis=1)
        half = 0.5 * (edges[:, 1:] - edges[:, :-1])
        mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
        u = mid[..., None] + half[..., None] * _GL_NODES
        vals = fn(zc[:, None, None] - u) * kernel(u, h)
        out[start:start + _CHUNK] = (vals * half[..., None] * _GL_WEIGHTS).sum(axis=(1, 2))
    return out


class MollifiedFunction(BaseModel):
    """f^{eps,R}: eps-close to `base` on |z| <= radius, strictly convex there, zero beyond radius + taper_band."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["mollified"] = "mollified"
    base: ScalarFunction
    epsilon: float = Field(gt=0)
    radius: float = Field(gt=0)
    width: float = Field(gt=0)
    gamma: float = Field(ge=0)
    taper_band: float = Field(default=TAPER_BAND, gt=0)

    @property
    def support(self) -> float:
        return self.radius + self.taper_band

    @property
    def breakpoints(self) -> np.ndarray:
        """Sorted points inside the support where a derivative of the representation may jump."""
        kinks = self.base.kinks
        r, s = self.radius, self.support
        pts = np.concatenate([kinks - self.width, kinks, kinks + self.width, [-s, -r, r, s]])
        return np.unique(pts[np.abs(pts) <= s])

    def _convolved(self, z, order: int):
        if order == 0:
            return _smoothed(self.base.value, _triweight, z, self.width, self.base.kinks)
        if order == 1:
            return _smoothed(self.base.derivative, _triweight, z, self.width, self.base.kinks)
        return _smoothed(self.base.derivative, _triweight_slope, z, self.width, self.base.kinks)

    def _taper(self, z):
        t = np.clip((np.abs(z) - self.radius) / self.taper_band, 0.0, 1.0)
        step = t ** 4 * (35.0 - 84.0 * t + 70.0 * t * t - 20.0 * t ** 3)
        slope = 140.0 * t ** 3 * (1.0 - t) ** 3
        curve = 420.0 * t * t * (1.0 - t) ** 2 * (1.0 - 2.0 * t)
        sign = np.sign(z)
        return 1.0 - step, -slope * sign / self.taper_band, -curve / self.taper_band ** 2

    def _evaluate(self, z, order: int):
        z = np.asarray(z, dtype=float)
        flat = z.ravel()
        out = np.zeros_like(flat)
        live = np.abs(flat) < self.support
        if np.any(live):
            zl = flat[live]
            r = self.radius
            g = [self._convolved(zl, 0) + self.gamma * (np.cosh(zl / r) - 1.0)]
            if order >= 1:
                g.append(self._convolved(zl, 1) + self.gamma * np.sinh(zl / r) / r)
            if order >= 2:
                g.append(self._convolved(zl, 2) + self.gamma * np.cosh(zl / r) / (r * r))
            chi = self._taper(zl)
            if order == 0:
                res = chi[0] * g[0]
            elif order == 1:
                res = chi[1] * g[0] + chi[0] * g[1]
            else:
                res = chi[2] * g[0] + 2.0 * chi[1] * g[1] + chi[0] * g[2]
            out[live] = res
        return out.reshape(z.shape)

    def value(self, z):
        return self._evaluate(z, 0)

    def derivative(self, z):
        return self._evaluate(z, 1)

    def second_derivative(self, z):
        return self._evaluate(z, 2)

    def gaussian_mean(self, m, s: float):
        m = np.asarray(m, dtype=float)
        if s <= 0:
            return self.value(m)
        return _hermite_mean(self.value, m, s)


DataFunction = Annotated[Union[ScalarFunction, MollifiedFunction], Field(discriminator="kind")]


class PayoffSpec(BaseModel):
    """f(sum_i c_i y_i) with declared shape metadata and growth bound |f(z)| <= A exp(B |z|).

    Scenario files may use the flat record {kind, params, weights, flags, growth}.
    """

    model_config = ConfigDict(frozen=True)

    weights: List[float]
    f: DataFunction
    declared_convex: bool = False
    declared_nondecreasing: bool = False
    growth: Tuple[float, float] = (1.0, 1.0)

    @model_validator(mode="before")
    @classmethod
    def _flat_record(cls, data):
        if isinstance(data, dict) and "f" not in data and "kind" in data:
            data = dict(data)
            f = {"kind": data.pop("kind")}
            for key in ("params", "base", "epsilon", "radius", "width", "gamma", "taper_band"):
                if key in data:
                    f[key] = data.pop(key)
            data["f"] = f
            flags = data.pop("flags", {}) or {}
            data.setdefault("declared_convex", flags.get("convex", False))
            data.setdefault("declared_nondecreasing", flags.get("nondecreasing", False))
        return data

    @field_validator("weights")
    @classmethod
    def _positive_weights(cls, v):
        if not v or any(c <= 0 for c in v):
            raise ValueError("payoff weights must be strictly positive")
        return v

    @field_validator("growth")
    @classmethod
    def _growth_pair(cls, v):
        if v[0] <= 0 or v[1] < 0:
            raise ValueError("growth needs A > 0 and B >= 0")
        return v

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def dim(self) -> int:
        return len(self.weights)

    def evaluate(self, states: np.ndarray) -> np.ndarray:
        """Payoff for a batch of terminal states of shape (P, n)."""
        states = np.asarray(states, dtype=float)
        if states.shape[-1] != self.dim:
            raise SpecificationError(f"payoff has {self.dim} weights, state has dimension {states.shape[-1]}")
        return self.f.value(states @ self.c)

    def with_f(self, f) -> "PayoffSpec":
        return self.model_copy(update={"f": f})


def eval_payoff(p: PayoffSpec, y) -> float:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.shape[0] != p.dim:
        raise SpecificationError(f"payoff has {p.dim} weights, got point of shape {y.shape}")
    return float(p.f.value(float(y @ p.c)))


@dataclass(frozen=True)
class CheckResult:
    ok: bool
    worst: float
    witness: Optional[float] = None

    def __bool__(self):
        return self.ok


def _ladder(lo: float, hi: float, samples: int):
    z = np.linspace(lo, hi, samples)
    base = (hi - lo) / (samples - 1)
    return z, [base * 2 ** k for k in range(6) if base * 2 ** k <= (hi - lo) / 2]


def convexity_check(f, lo: float, hi: float, samples: int = 401) -> CheckResult:
    """Midpoint second differences over a grid and a ladder of step sizes."""
    if not lo < hi or samples < 3:
        raise SpecificationError("convexity_check needs lo < hi and at least 3 samples")
    z, steps = _ladder(lo, hi, samples)
    worst, witness, worst_scaled = np.inf, None, np.inf
    for h in steps:
        zc = z[(z - h >= lo - 1e-12) & (z + h <= hi + 1e-12)]
        mid = f.value(zc)
        diff = f.value(zc - h) - 2.0 * mid + f.value(zc + h)
        scaled = diff / np.maximum(1.0, np.abs(mid))
        i = int(np.argmin(scaled))
        if scaled[i] < worst_scaled:
            worst, witness, worst_scaled = float(diff[i]), float(zc[i]), scaled[i]
    return CheckResult(ok=bool(worst_scaled >= -TOL_CONV), worst=worst, witness=witness)


def monotonicity_check(f, lo: float, hi: float, samples: int = 401) -> CheckResult:
    if not lo < hi or samples < 2:
        raise SpecificationError("monotonicity_check needs lo < hi and at least 2 samples")
    z, steps = _ladder(lo, hi, max(samples, 3))
    worst, witness, worst_scaled = np.inf, None, np.inf
    for h in steps:
        zc = z[z + h <= hi + 1e-12]
        left = f.value(zc)
        diff = f.value(zc + h) - left
        scaled = diff / np.maximum(1.0, np.abs(left))
        i = int(np.argmin(scaled))
        if scaled[i] < worst_scaled:
            worst, witness, worst_scaled = float(diff[i]), float(zc[i]), scaled[i]
    return CheckResult(ok=bool(worst_scaled >= -TOL_CONV), worst=worst, witness=witness)


def growth_check(f, A: float, B: float, radius: float, samples: int = 2001) -> CheckResult:
    """|f(z)| <= A exp(B |z|) on [-radius, radius]; witness is the worst offending z."""
    if A <= 0 or B < 0:
        raise SpecificationError("growth_check needs A > 0 and B >= 0")
    z = np.linspace(-radius, radius, samples)
    ratio = np.abs(f.value(z)) / (A * np.exp(B * np.abs(z)))
    i = int(np.argmax(ratio))
    ok = bool(ratio[i] <= 1.0 + 1e-12)
    return CheckResult(ok=ok, worst=float(ratio[i]), witness=None if ok else float(z[i]))


def _core_grid(f: ScalarFunction, radius: float) -> np.ndarray:
    z = np.linspace(-radius, radius, 2001)
    kinks = f.kinks[np.abs(f.kinks) <= radius]
    return np.concatenate([z, kinks])


def _convolution_error(f: ScalarFunction, width: float, z: np.ndarray) -> float:
    smooth = _smoothed(f.value, _triweight, z, width, f.kinks)
    return float(np.max(np.abs(smooth - f.value(z))))


def mollify(f: ScalarFunction, epsilon: float, radius: float, taper_band: float = TAPER_BAND,
            width: Optional[float] = None, gamma: Optional[float] = None) -> MollifiedFunction:
    """Build f^{eps,R}.

    The kernel width h is the largest value (found by bisection on log h) whose
    convolution error on the core is at most eps/2; the bump weight then takes
    what is left of 0.9 eps.  Passing both `width` and `gamma` skips tuning.
    """
    if not isinstance(f, ScalarFunction):
        raise MollificationError("mollify expects a plain scalar function")
    if epsilon <= 0 or radius <= 0:
        raise MollificationError("mollify needs epsilon > 0 and radius > 0")
    check = convexity_check(f, -radius - 2.0, radius + 2.0, 801)
    if not check.ok:
        raise MollificationError(f"{f.kind} is not convex on [-R-2, R+2] (worst second difference "
                                 f"{check.worst:.3e} at z={check.witness})")

    if width is not None and gamma is not None:
        return MollifiedFunction(base=f, epsilon=epsilon, radius=radius, width=width,
                                 gamma=gamma, taper_band=taper_band)

    z = _core_grid(f, radius)
    target = 0.5 * epsilon
    h_hi, h_lo = 1.0, 1e-8
    if _convolution_error(f, h_hi, z) <= target:
        h = h_hi
    else:
        if _convolution_error(f, h_lo, z) > target:
            raise MollificationError(f"cannot smooth {f.kind} within eps={epsilon}; try a larger epsilon")
        for _ in range(60):
            mid = math.sqrt(h_lo * h_hi)
            if _convolution_error(f, mid, z) <= target:
                h_lo = mid
            else:
                h_hi = mid
            if h_hi / h_lo < 1.0 + 1e-6:
                break
        h = h_lo
    err = _convolution_error(f, h, z)
    g = (0.9 * epsilon - err) / _BUMP_PEAK
    if g <= 0:
        raise MollificationError(f"no room for a positive bump at eps={epsilon}; try a larger epsilon")

    m = MollifiedFunction(base=f, epsilon=epsilon, radius=radius, width=h, gamma=g, taper_band=taper_band)
    sup_err = float(np.max(np.abs(m.value(z) - f.value(z))))
    if sup_err > epsilon:
        raise MollificationError(f"tuned mollifier misses eps={epsilon} (sup error {sup_err:.3e})")
    log_event(f"mollified {f.kind}: eps={epsilon} R={radius} h={h:.4g} gamma={g:.4g} sup error={sup_err:.3e}")
    return m


def second_derivative(m: MollifiedFunction, z):
    out = m.second_derivative(z)
    return float(out) if np.ndim(out) == 0 else out


def first_derivative(m: MollifiedFunction, z):
    out = m.derivative(z)
    return float(out) if np.ndim(out) == 0 else out
