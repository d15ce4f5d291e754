"""
Coupled Euler-Maruyama Monte Carlo.

Randomness is counter based: path p belongs to block p // BLOCK_PATHS, and the
standard normals of step k for that block come from a Philox generator whose
key is derived from (seed, block) and whose counter starts at k in its third
word.  Any (seed, path, step) therefore maps to the same vector no matter how
the blocks are scheduled.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from threadpoolctl import threadpool_limits
from tqdm import tqdm

from .config import BLOCK_PATHS, FLAG_BUDGET
from .errors import SimulationError, SpecificationError
from .logger import log_event, log_warning
from .model import DiffusionModel


class SimPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    horizon: float = Field(gt=0)
    steps: int = Field(ge=1)
    paths: int = Field(ge=1)
    seed: int = Field(ge=0, lt=2 ** 64)
    scheme: Literal["euler"] = "euler"

    @property
    def dt(self) -> float:
        return self.horizon / self.steps


class PairedSample(NamedTuple):
    payoff_x: float
    payoff_y: float
    diff: float


@dataclass(frozen=True)
class PairedSamples:
    """Terminal payoffs of every path, in path order."""

    payoff_x: np.ndarray
    payoff_y: np.ndarray
    flagged: np.ndarray

    @property
    def diff(self) -> np.ndarray:
        return self.payoff_y - self.payoff_x

    @property
    def kept(self) -> np.ndarray:
        return ~self.flagged

    def __len__(self):
        return int(self.kept.sum())

    def __iter__(self) -> Iterator[PairedSample]:
        for x, y in zip(self.payoff_x[self.kept], self.payoff_y[self.kept]):
            yield PairedSample(float(x), float(y), float(y - x))


class MCEstimate(BaseModel):
    mean: float
    std_error: float = Field(ge=0)
    paths: int


def _block_key(seed: int, block: int) -> np.ndarray:
    return np.random.SeedSequence(seed, spawn_key=(block,)).generate_state(2, dtype=np.uint64)


def _block_normals(key: np.ndarray, step: int, dim: int) -> np.ndarray:
    counter = np.array([0, 0, step, 0], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
    return gen.standard_normal((BLOCK_PATHS, dim))


def brownian_increment(seed: int, path: int, step: int, dim: int) -> np.ndarray:
    """Standard normal vector for (seed, path, step); callers scale by sqrt(dt)."""
    block, row = divmod(path, BLOCK_PATHS)
    return _block_normals(_block_key(seed, block), step, dim)[row].copy()


def _blocks(paths: int):
    for block in range(math.ceil(paths / BLOCK_PATHS)):
        yield block, min(BLOCK_PATHS, paths - block * BLOCK_PATHS)


def _euler_step(state, drift, dispersion, dW, dt):
    return state + drift(state) * dt + np.einsum("bij,bj->bi", dispersion(state), dW)


def _pair_block(modelX: DiffusionModel, modelY: DiffusionModel, payoffX, payoffY,
                plan: SimPlan, block: int, rows: int):
    key = _block_key(plan.seed, block)
    n, dt = modelX.n, plan.dt
    root = math.sqrt(dt)
    X = np.tile(modelX.start, (rows, 1))
    Y = np.tile(modelY.start, (rows, 1))
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(plan.steps):
            dW = _block_normals(key, k, n)[:rows] * root
            X = _euler_step(X, modelX.drift.evaluate, modelX.dispersion.evaluate, dW, dt)
            Y = _euler_step(Y, modelY.drift.evaluate, modelY.dispersion.evaluate, dW, dt)
        px = payoffX.evaluate(X)
        py = payoffY.evaluate(Y)
    bad = ~(np.isfinite(X).all(axis=1) & np.isfinite(Y).all(axis=1) & np.isfinite(px) & np.isfinite(py))
    return px, py, bad


def simulate_pair(modelX: DiffusionModel, modelY: DiffusionModel, payoffX, payoffY, plan: SimPlan,
                  threads: int = 1, progress: bool = False) -> PairedSamples:
    """Advance X and Y with identical Brownian increments and return terminal payoffs.

    payoffX / payoffY are anything with `evaluate(states) -> values` on (P, n) batches.
    """
    if modelX.n != modelY.n or not np.array_equal(modelX.start, modelY.start):
        raise SpecificationError("coupled models must share dimension and starting point")

    def work(item):
        block, rows = item
        return _pair_block(modelX, modelY, payoffX, payoffY, plan, block, rows)

    items = list(_blocks(plan.paths))
    with threadpool_limits(limits=1):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(tqdm(pool.map(work, items), total=len(items), disable=not progress, desc="blocks"))
        else:
            parts = [work(item) for item in tqdm(items, disable=not progress, desc="blocks")]

    px = np.concatenate([p[0] for p in parts])
    py = np.concatenate([p[1] for p in parts])
    flagged = np.concatenate([p[2] for p in parts])
    n_bad = int(flagged.sum())
    if n_bad:
        log_warning(f"{n_bad} of {plan.paths} paths produced non-finite states")
        if n_bad > FLAG_BUDGET * plan.paths:
            raise SimulationError(f"{n_bad} diverged paths exceed the {FLAG_BUDGET:.2%} budget")
    log_event(f"simulated {plan.paths} coupled paths, {plan.steps} steps, seed {plan.seed}")
    return PairedSamples(payoff_x=px, payoff_y=py, flagged=flagged)


def estimate(samples: Union[PairedSamples, Sequence[float], np.ndarray],
             which: Literal["x", "y", "diff"] = "diff") -> MCEstimate:
    """Sample mean and standard error with correctly rounded sums."""
    if isinstance(samples, PairedSamples):
        values = {"x": samples.payoff_x, "y": samples.payoff_y, "diff": samples.diff}[which][samples.kept]
    else:
        values = np.asarray(samples, dtype=float)
    count = values.size
    if count < 2:
        raise SimulationError("estimate needs at least two samples")
    mean = math.fsum(values) / count
    var = math.fsum((values - mean) ** 2) / (count - 1)
    return MCEstimate(mean=mean, std_error=math.sqrt(var / count), paths=count)


def dump_samples(samples: PairedSamples, path) -> None:
    """Little-endian records (path index u64, payoff-x f64, payoff-y f64)."""
    records = np.zeros(samples.payoff_x.size, dtype=[("path", "<u8"), ("x", "<f8"), ("y", "<f8")])
    records["path"] = np.arange(samples.payoff_x.size, dtype=np.uint64)
    records["x"] = samples.payoff_x
    records["y"] = samples.payoff_y
    records.tofile(path)


class ProbeResult(BaseModel):
    kind: str
    steps: list
    errors: list
    slope: Optional[float] = None
    max_error: float


_PROBE_MODELS = {
    # (drift, dispersion, exact terminal value from W_T) for scalar closed-form SDEs
    "arith-bm": (
        lambda x, mu, sig: np.full_like(x, mu),
        lambda x, mu, sig: np.full(x.shape + (1,), sig),
        lambda x0, mu, sig, T, W: x0 + mu * T + sig * W,
    ),
    "gbm": (
        lambda x, mu, sig: mu * x,
        lambda x, mu, sig: (sig * x)[..., None],
        lambda x0, mu, sig, T, W: x0 * np.exp((mu - 0.5 * sig * sig) * T + sig * W),
    ),
}


def _ladder_errors(kind: str, ladder: Sequence[int], paths: int, seed: int, horizon: float,
                   x0: float, mu: float, sigma: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Step counts, mean |Euler - exact| and |mean(Euler - exact)| per level, on shared fine increments."""
    if kind not in _PROBE_MODELS:
        raise SpecificationError(f"unknown probe model {kind!r}")
    ladder = sorted(int(m) for m in ladder)
    finest = ladder[-1]
    if len(ladder) < 4 or any(finest % m for m in ladder):
        raise SpecificationError("probe ladders need at least 4 step counts dividing the finest")
    drift, disp, exact = _PROBE_MODELS[kind]
    a = lambda x: drift(x, mu, sigma)
    b = lambda x: disp(x, mu, sigma)
    strong = np.zeros(len(ladder))
    weak = np.zeros(len(ladder))
    root = math.sqrt(horizon / finest)
    for block, rows in _blocks(paths):
        key = _block_key(seed, block)
        fine = np.stack([_block_normals(key, k, 1)[:rows] for k in range(finest)]) * root
        truth = exact(x0, mu, sigma, horizon, fine.sum(axis=0)[:, 0])
        for i, m in enumerate(ladder):
            coarse = fine.reshape(m, finest // m, rows, 1).sum(axis=1)
            X = np.full((rows, 1), x0)
            for k in range(m):
                X = _euler_step(X, a, b, coarse[k], horizon / m)
            gap = X[:, 0] - truth
            strong[i] += math.fsum(np.abs(gap))
            weak[i] += math.fsum(gap)
    return np.asarray(ladder), strong / paths, np.abs(weak / paths)


def _slope(ladder: np.ndarray, errors: np.ndarray, horizon: float) -> float:
    return float(np.polyfit(np.log2(horizon / ladder), np.log2(errors), 1)[0])


def strong_error_probe(kind: Literal["arith-bm", "gbm"], ladder: Sequence[int] = (8, 16, 32, 64, 128),
                       paths: int = 20000, seed: int = 0, horizon: float = 1.0, x0: float = 1.0,
                       mu: float = 0.1, sigma: float = 0.2) -> ProbeResult:
    """Regression slope of log2 strong error against log2 dt.

    Euler is exact for arithmetic Brownian motion, so that probe reports the
    worst error and no slope.
    """
    steps, strong, _ = _ladder_errors(kind, ladder, paths, seed, horizon, x0, mu, sigma)
    slope = None if kind == "arith-bm" else _slope(steps, strong, horizon)
    log_event(f"strong error probe {kind}: errors {strong.tolist()} slope {slope}")
    return ProbeResult(kind=kind, steps=steps.tolist(), errors=strong.tolist(), slope=slope,
                       max_error=float(strong.max()))


def weak_error_probe(ladder: Sequence[int] = (4, 8, 16, 32, 64), paths: int = 100000, seed: int = 0,
                     horizon: float = 1.0, x0: float = 1.0, mu: float = 0.1, sigma: float = 0.2) -> ProbeResult:
    """Weak error of E X(T) for GBM, estimated on increments shared with the exact solution."""
    steps, _, weak = _ladder_errors("gbm", ladder, paths, seed, horizon, x0, mu, sigma)
    slope = _slope(steps, weak, horizon)
    log_event(f"weak error probe gbm: errors {weak.tolist()} slope {slope}")
    return ProbeResult(kind="gbm-weak", steps=steps.tolist(), errors=weak.tolist(), slope=slope,
                       max_error=float(weak.max()))


class IncrementMoments(BaseModel):
    draws: int
    mean: list
    variance: list
    correlation: float


def increment_moments(seed: int = 0, draws: int = 1_000_000, dim: int = 1, pairs: int = 100_000) -> IncrementMoments:
    """Moments of step-0 increments over consecutive paths, plus the lag-one path correlation."""
    blocks = math.ceil(draws / BLOCK_PATHS)
    z = np.concatenate([_block_normals(_block_key(seed, b), 0, dim) for b in range(blocks)])[:draws]
    even, odd = z[0:2 * pairs:2, 0], z[1:2 * pairs:2, 0]
    return IncrementMoments(
        draws=int(z.shape[0]),
        mean=z.mean(axis=0).tolist(),
        variance=z.var(axis=0, ddof=1).tolist(),
        correlation=float(np.corrcoef(even, odd)[0, 1]),
    )
