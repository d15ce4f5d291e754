"""
Closed-form Gaussian fundamental solutions for constant coefficients.

For L = d/dt - sum a_ij d_i d_j - sum b_i d_i the fundamental solution is the
transition density of dX = b dt + sqrt(2A) dW:

    p(t, x; s, y)   = N(x - y + b (t - s); 2 A (t - s))      derivatives in x
    p*(s, y; t, x)  = N(y - x + b* (t - s); 2 A (t - s))     derivatives in y, b* = -b

so p and p* agree in value and Hessian, while first derivatives differ by a sign
(d/dx and d/dy of a function of x - y).
"""

import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy.stats import qmc

from .convex import MollifiedFunction, PayoffSpec
from .errors import SpecificationError
from .logger import log_event
from .model import ball_samples


@dataclass(frozen=True)
class ConstKernel:
    A: np.ndarray
    b: np.ndarray
    direction: Literal["forward", "adjoint"] = "forward"

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.broadcast_to(np.asarray(self.b, dtype=float), (A.shape[0],)).copy()
        if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, rtol=0.0, atol=1e-14):
            raise SpecificationError("kernel coefficient matrix must be square and symmetric")
        try:
            np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            raise SpecificationError("kernel coefficient matrix must be positive definite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def c_star(self) -> float:
        # c* = c + sum a_ij,ij - sum b_i,i vanishes for constant coefficients
        return 0.0

    def adjoint(self) -> "ConstKernel":
        if self.direction == "adjoint":
            return self
        return ConstKernel(self.A, -self.b, "adjoint")

    def forward(self) -> "ConstKernel":
        if self.direction == "forward":
            return self
        return ConstKernel(self.A, -self.b, "forward")


@dataclass(frozen=True)
class KernelEval:
    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray


def kernel(k: ConstKernel, t: float, x, s: float, y) -> KernelEval:
    """p(t,x;s,y) for a forward kernel, p*(s,y;t,x) for an adjoint one.

    x and y may be single points or batches of shape (M, n); derivatives are
    taken in x (forward) or y (adjoint).
    """
    if not s < t:
        raise SpecificationError(f"kernel needs s < t, got s={s}, t={t}")
    tau = t - s
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if k.direction == "forward":
        r = x - y + k.b * tau
    else:
        r = y - x + k.b * tau
    cov = 2.0 * k.A * tau
    prec = np.linalg.inv(cov)
    norm_const = 1.0 / math.sqrt((2.0 * math.pi) ** k.n * np.linalg.det(cov))
    pr = r @ prec
    value = norm_const * np.exp(-0.5 * np.sum(pr * r, axis=-1))
    grad = -pr * value[..., None]
    hess = (pr[..., :, None] * pr[..., None, :] - prec) * value[..., None, None]
    return KernelEval(value=value, grad=grad, hess=hess)


def _rel(a, b) -> float:
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))) / scale)


def lemma1_check(k: ConstKernel, t: float, x, s: float, y) -> float:
    """Worst relative discrepancy between p(t,x;s,y) and p*(s,y;t,x) over value, gradient and Hessian.

    The gradient comparison carries the sign of the odd-order identity.
    """
    fwd = kernel(k.forward(), t, x, s, y)
    adj = kernel(k.adjoint(), t, x, s, y)
    return max(_rel(fwd.value, adj.value), _rel(fwd.grad, -adj.grad), _rel(fwd.hess, adj.hess))


class KernelCheck(BaseModel):
    ok: bool
    worst: float
    witness: Dict[str, Any] = {}


def gaussian_bound_check(k: ConstKernel, C: float, lam: float, samples: int = 4096,
                         horizon: float = 1.0, offset_radius: float = 4.0, seed: int = 0) -> KernelCheck:
    """|p*(s,eta;t,xi)| <= C / sqrt(t-s)^n exp(-lam |eta-xi|^2 / (t-s)) on sampled (t-s, eta-xi)."""
    if C <= 0 or lam <= 0:
        raise SpecificationError("gaussian_bound_check needs C > 0 and lam > 0")
    n = k.n
    u = qmc.Halton(d=1, scramble=True, seed=seed).random(samples)[:, 0]
    taus = np.exp(np.log(1e-3) + u * (np.log(horizon) - np.log(1e-3)))
    offsets = ball_samples(n, offset_radius, samples, seed + 1)
    # the peak sits at zero offset: always include it
    taus = np.concatenate([taus, np.geomspace(1e-3, horizon, 16)])
    offsets = np.vstack([offsets, np.zeros((16, n))])

    adj = k.adjoint()
    values = np.array([kernel(adj, tau, np.zeros(n), 0.0, eta).value for tau, eta in zip(taus, offsets)])
    dist2 = np.sum(offsets ** 2, axis=1)
    bound = C / np.sqrt(taus) ** n * np.exp(-lam * dist2 / taus)
    with np.errstate(divide="ignore", over="ignore"):
        ratio = np.where(bound > 0, np.abs(values) / bound, np.where(values > 0, np.inf, 0.0))
    i = int(np.argmax(ratio))
    ok = bool(ratio[i] <= 1.0 + 1e-12)
    witness = {} if ok else {"tau": float(taus[i]), "offset": offsets[i].tolist(),
                             "value": float(values[i]), "bound": float(bound[i])}
    return KernelCheck(ok=ok, worst=float(ratio[i]), witness=witness)


def _panels(edges: np.ndarray, max_len: float, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights between consecutive edges, no panel longer than max_len."""
    gl_x, gl_w = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        cuts = np.linspace(lo, hi, max(1, math.ceil((hi - lo) / max_len)) + 1)
        half = 0.5 * np.diff(cuts)
        mid = 0.5 * (cuts[1:] + cuts[:-1])
        nodes.append((mid[:, None] + half[:, None] * gl_x).ravel())
        weights.append((half[:, None] * gl_w).ravel())
    return np.concatenate(nodes), np.concatenate(weights)


def ver_identity_check(k: ConstKernel, payoff: MollifiedFunction, weights: Sequence[float], t: float,
                       x, radius: Optional[float] = None, order: int = 16) -> float:
    """Worst |integral f(c.y) p_,ij(t,x;0,y) dy - c_i c_j integral f''(c.y) p*(0,y;t,x) dy| over (i, j).

    Quadrature runs in rotated coordinates y = u e + v e_perp with e = c / |c|.  The data only
    depends on u, so u-panels stop at its support and split at its breakpoints; v only sees the
    Gaussian.  `radius` is the half-width of the window around the kernel mean.
    """
    c = np.asarray(weights, dtype=float)
    n = c.size
    x = np.asarray(x, dtype=float)
    if n != k.n or x.shape != (n,):
        raise SpecificationError("weights, point and kernel dimensions disagree")
    if n > 2:
        raise SpecificationError("rotated quadrature is limited to n <= 2")
    if np.any(c <= 0):
        raise SpecificationError("weights must be strictly positive")
    eig = np.linalg.eigvalsh(k.A)
    spread = 10.0 * math.sqrt(2.0 * eig[-1] * t)
    if radius is None:
        radius = spread
    elif radius < spread:
        raise SpecificationError(f"quadrature radius {radius} does not cover the kernel tail ({spread:.3f})")
    panel = 0.5 * math.sqrt(2.0 * eig[0] * t)

    centre = x + k.b * t
    norm_c = float(np.linalg.norm(c))
    e = c / norm_c
    u_mid = float(e @ centre)
    lo = max(-payoff.support / norm_c, u_mid - radius)
    hi = min(payoff.support / norm_c, u_mid + radius)
    if hi <= lo:
        log_event(f"derivative-transfer identity n={n} t={t}: kernel window misses the data support")
        return 0.0
    breaks = payoff.breakpoints / norm_c
    u, wu = _panels(np.unique(np.concatenate([[lo, hi], breaks[(breaks > lo) & (breaks < hi)]])), panel, order)
    fu = payoff.value(norm_c * u)
    f2u = payoff.second_derivative(norm_c * u)

    if n == 1:
        Y, w, f, f2 = u[:, None] * e, wu, fu, f2u
    else:
        e_perp = np.array([-e[1], e[0]])
        v_mid = float(e_perp @ centre)
        v, wv = _panels(np.array([v_mid - radius, v_mid + radius]), panel, order)
        Y = (u[:, None, None] * e + v[None, :, None] * e_perp).reshape(-1, n)
        w = np.outer(wu, wv).ravel()
        f, f2 = np.repeat(fu, v.size), np.repeat(f2u, v.size)

    fwd = kernel(k.forward(), t, x, 0.0, Y)
    adj = kernel(k.adjoint(), t, x, 0.0, Y)
    lhs = np.einsum("m,m,mij->ij", w, f, fwd.hess)
    rhs = np.outer(c, c) * float(np.sum(w * f2 * adj.value))
    gap = float(np.max(np.abs(lhs - rhs)))
    log_event(f"derivative-transfer identity n={n} t={t}: discrepancy {gap:.3e}")
    return gap


def chapman_kolmogorov_check(k: ConstKernel, t: float, u: float, s: float, x: float, y: float,
                             nodes: int = 4001) -> float:
    """|integral p(t,x;u,z) p(u,z;s,y) dz - p(t,x;s,y)| in one dimension."""
    if k.n != 1:
        raise SpecificationError("chapman_kolmogorov_check is one-dimensional")
    if not s < u < t:
        raise SpecificationError("chapman_kolmogorov_check needs s < u < t")
    fwd = k.forward()
    spread = 10.0 * math.sqrt(2.0 * float(k.A[0, 0]) * (t - s)) + abs(float(k.b[0])) * (t - s)
    z = np.linspace(min(x, y) - spread, max(x, y) + spread, nodes)[:, None]
    inner = kernel(fwd, t, np.array([x]), u, z).value * kernel(fwd, u, z, s, np.array([y])).value
    direct = float(kernel(fwd, t, np.array([x]), s, np.array([y])).value)
    return abs(float(np.trapezoid(inner, z[:, 0])) - direct)


def adjoint_coefficients(a: Callable, b: Callable, c: Callable, x, h: float = 1e-3):
    """(a*, b*, c*) of the formal adjoint at x, coefficient derivatives by central differences.

    a*_ij = a_ij,  b*_i = 2 sum_j a_ij,j - b_i,  c* = c + sum_ij a_ij,ij - sum_i b_i,i
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    eye = np.eye(n) * h
    a0 = np.asarray(a(x), dtype=float)
    div_a = np.zeros(n)
    mixed = 0.0
    div_b = 0.0
    for j in range(n):
        da = (np.asarray(a(x + eye[j])) - np.asarray(a(x - eye[j]))) / (2.0 * h)
        div_a += da[:, j]
        div_b += (np.asarray(b(x + eye[j]))[j] - np.asarray(b(x - eye[j]))[j]) / (2.0 * h)
        for i in range(n):
            if i == j:
                second = (np.asarray(a(x + eye[i])) - 2.0 * a0 + np.asarray(a(x - eye[i]))) / (h * h)
            else:
                second = (np.asarray(a(x + eye[i] + eye[j])) - np.asarray(a(x + eye[i] - eye[j]))
                          - np.asarray(a(x - eye[i] + eye[j])) + np.asarray(a(x - eye[i] - eye[j]))) / (4.0 * h * h)
            mixed += second[i, j]
    b_star = 2.0 * div_a - np.asarray(b(x), dtype=float)
    c_star = float(c(x)) + mixed - div_b
    return a0, b_star, c_star


def gaussian_expectation(k: ConstKernel, payoff: PayoffSpec, x, t: float) -> np.ndarray:
    """E f(<c, X_t>) for X_t ~ N(x + b t, 2 A t), at one point or a batch of points."""
    x = np.asarray(x, dtype=float)
    c = payoff.c
    m = x @ c + float(c @ k.b) * t
    s = math.sqrt(max(2.0 * t * float(c @ k.A @ c), 0.0))
    return payoff.f.gaussian_mean(m, s)

