"""
Scenario orchestration: hypothesis checks, coupled Monte Carlo, the optional
PDE cross-check and the verdict, for single scenarios, bundled suites and the
counterexample battery.
"""

import csv
import math
import os
import time
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import AliasChoices, BaseModel, ConfigDict, Field, ValidationError, model_validator
from tqdm import tqdm

from .config import Z_CRIT
from .convex import (
    MollifiedFunction,
    PayoffSpec,
    ScalarFunction,
    convexity_check,
    growth_check,
    mollify,
    monotonicity_check,
)
from .errors import (
    DegenerateDiffusionError,
    DiffcompError,
    GridError,
    HypothesisViolation,
    MollificationError,
    SpecificationError,
    SuiteError,
)
from .logger import log_event, log_warning
from .model import (
    CoefficientField,
    DiffusionModel,
    EllipticityReport,
    OrderReport,
    ellipticity_scan,
    is_constant,
    lipschitz_probe,
    order_scan,
)
from .pde import (
    GridSpec,
    delta_field,
    dump_field_csv,
    probe_value,
    richardson_tolerance,
    solve_backward,
)
from .sde import SimPlan, dump_samples, estimate, simulate_pair

Verdict = Literal["holds", "indeterminate", "violated"]
CounterexampleKind = Literal["nonconvex", "nonmonotone-drift", "multivariate-payoff"]

SCAN_SAMPLES = 512
LIPSCHITZ_PAIRS = 512
SEARCH_BUDGET = 500
SEARCH_PATHS = 100_000
CONFIRM_Z = 5.0


class Scenario(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    model_x: DiffusionModel = Field(validation_alias=AliasChoices("model_x", "modelX"))
    model_y: DiffusionModel = Field(validation_alias=AliasChoices("model_y", "modelY"))
    payoff: PayoffSpec
    plan: SimPlan
    theorem: Literal["driftless", "drifted"]
    pde_crosscheck: bool = False
    pde: Optional[GridSpec] = None
    mollify: Optional[Tuple[float, float]] = None
    expect: Literal["holds", "violation"] = "holds"

    @model_validator(mode="after")
    def _check_bundle(self):
        if self.model_x.n != self.model_y.n or self.payoff.dim != self.model_x.n:
            raise ValueError("models and payoff weights must share one dimension")
        if self.model_x.x0 != self.model_y.x0:
            raise ValueError("both models must start from the same x0")
        if self.pde is not None and self.pde.dim != self.model_x.n:
            raise ValueError("pde grid dimension differs from the model dimension")
        if self.expect == "holds":
            if self.theorem == "driftless" and not (self.model_x.drift.is_zero and self.model_y.drift.is_zero):
                raise ValueError("driftless scenarios need both drifts identically zero")
            if self.theorem == "drifted" and not self.payoff.declared_nondecreasing:
                raise ValueError("drifted scenarios need a payoff declared nondecreasing")
        radius = self.mollify[1] if self.mollify else getattr(self.payoff.f, "radius", None)
        if radius is not None and self.pde_crosscheck and self.model_x.n <= 2:
            need = mollifier_reach(self)
            if radius < need:
                raise ValueError(f"mollifier radius {radius} leaves the PDE core within reach of the taper; "
                                 f"use a radius of at least {need:.2f}")
        return self

    def with_overrides(self, seed: Optional[int] = None, paths: Optional[int] = None) -> "Scenario":
        update = {k: v for k, v in (("seed", seed), ("paths", paths)) if v is not None}
        if not update:
            return self
        plan = SimPlan.model_validate({**self.plan.model_dump(), **update})
        return self.model_copy(update={"plan": plan})


class ComparisonReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    name: str
    theorem: Literal["driftless", "drifted"]
    expect: Literal["holds", "violation"] = "holds"
    seed: int
    paths: int
    flagged_paths: int = 0
    mean_x: float
    se_x: float
    mean_y: float
    se_y: float
    delta: float
    se_delta: float
    z_score: float
    verdict: Verdict
    hypotheses_ok: bool
    annotations: List[str] = []
    order: Optional[OrderReport] = None
    ellipticity_x: Optional[EllipticityReport] = None
    ellipticity_y: Optional[EllipticityReport] = None
    pde_x: Optional[float] = None
    pde_y: Optional[float] = None
    pde_delta: Optional[float] = None
    pde_delta_core_min: Optional[float] = None
    tol_pde: Optional[float] = None
    pde_agrees: Optional[bool] = None
    counterexample: Optional[Dict[str, Any]] = None
    runtime: float = 0.0

    def hashed_json(self) -> str:
        """Report content without wall-clock fields; identical runs give identical text."""
        return self.model_dump_json(exclude={"runtime"}, indent=2)


def decide_verdict(delta: float, se: float, hypotheses_ok: bool) -> Verdict:
    if delta < -Z_CRIT * se:
        return "violated"
    return "holds" if hypotheses_ok else "indeterminate"


def _z_score(delta: float, se: float) -> float:
    if se > 0:
        return delta / se
    return 0.0 if delta == 0 else math.copysign(math.inf, delta)


def _spread(s: Scenario) -> float:
    """Rough standard deviation scale of either process at the horizon."""
    T = s.plan.horizon
    sig = max(s.model_x.dispersion.bounds()[0], s.model_y.dispersion.bounds()[0])
    mu = max(s.model_x.drift.bounds()[0], s.model_y.drift.bounds()[0])
    return sig * math.sqrt(T) + mu * T


def default_grid(s: Scenario) -> GridSpec:
    n = s.model_x.n
    if n > 2:
        raise GridError("finite differences are limited to dimensions 1 and 2")
    reach = 6.0 if is_constant(s.model_x) and is_constant(s.model_y) else 8.0
    radius = float(np.max(np.abs(s.model_x.start))) + reach * _spread(s) + 1.0
    return GridSpec(dim=n, radius=radius, nodes=257 if n == 1 else 129, horizon=s.plan.horizon)


def mollifier_reach(s: Scenario) -> float:
    """Smallest mollifier radius whose convex core covers the PDE core plus eight standard deviations."""
    grid = s.pde or default_grid(s)
    return float(np.sum(s.payoff.c)) * (0.5 * grid.radius + 8.0 * _spread(s))


def _prepare_payoff(s: Scenario, notes: List[str]) -> PayoffSpec:
    if s.mollify is None or isinstance(s.payoff.f, MollifiedFunction):
        return s.payoff
    eps, radius = s.mollify
    try:
        return s.payoff.with_f(mollify(s.payoff.f, eps, radius))
    except MollificationError as e:
        notes.append(f"mollification-failed: {e}")
        return s.payoff


def _payoff_hypotheses(s: Scenario, payoff: PayoffSpec, notes: List[str]) -> bool:
    # a mollified payoff is convex only on its core; the hypotheses concern the data function
    f = payoff.f.base if isinstance(payoff.f, MollifiedFunction) else payoff.f
    c = payoff.c
    zr = float(np.sum(c)) * (float(np.max(np.abs(s.model_x.start))) + 6.0 * _spread(s)) + 1.0
    ok = True
    convex = convexity_check(f, -zr, zr)
    if not convex:
        notes.append(f"payoff-not-convex at z={convex.witness}")
        ok = False
        if payoff.declared_convex:
            notes.append("declared-convex-contradicted")
    if s.theorem == "drifted" or payoff.declared_nondecreasing:
        mono = monotonicity_check(f, -zr, zr)
        if not mono:
            if s.theorem == "drifted":
                notes.append(f"payoff-not-nondecreasing at z={mono.witness}")
                ok = False
            if payoff.declared_nondecreasing:
                notes.append("declared-nondecreasing-contradicted")
    A, B = payoff.growth
    growth = growth_check(f, A, B, zr)
    if not growth:
        notes.append(f"growth-bound-exceeded at z={growth.witness}")
        ok = False
    return ok


def _model_hypotheses(s: Scenario, notes: List[str]):
    ok = True
    if s.theorem == "driftless" and not (s.model_x.drift.is_zero and s.model_y.drift.is_zero):
        notes.append("drift-present")
        ok = False
    radius = float(np.max(np.abs(s.model_x.start))) + 4.0 * _spread(s) + 1.0
    order = order_scan(s.model_x, s.model_y, radius, SCAN_SAMPLES)
    if not order.diffusion_order_ok:
        notes.append(f"diffusion-order-violated (eigenvalue {order.worst_eigenvalue:.3e})")
        ok = False
    if s.theorem == "drifted" and not order.drift_order_ok:
        notes.append(f"drift-order-violated (gap {order.worst_drift_gap:.3e})")
        ok = False
    ell_x = ellipticity_scan(s.model_x, radius, SCAN_SAMPLES)
    ell_y = ellipticity_scan(s.model_y, radius, SCAN_SAMPLES)
    if not (ell_x.elliptic and ell_y.elliptic):
        notes.append("degenerate-diffusion")
        ok = False
    for label, fld in (("drift-x", s.model_x.drift), ("dispersion-x", s.model_x.dispersion),
                       ("drift-y", s.model_y.drift), ("dispersion-y", s.model_y.dispersion)):
        try:
            lipschitz_probe(fld, radius, LIPSCHITZ_PAIRS)
        except HypothesisViolation as e:
            notes.append(f"lipschitz-exceeded:{label} ratio={e.witness.get('ratio')}")
            ok = False
    return ok, order, ell_x, ell_y


def _pde_crosscheck(s: Scenario, payoff: PayoffSpec, hypotheses_ok: bool, est_x, est_y,
                    notes: List[str], dump_to: Optional[Path]) -> Dict[str, Any]:
    try:
        grid = s.pde or default_grid(s)
        fx = solve_backward(s.model_x, payoff, grid, tag="x")
        fy = solve_backward(s.model_y, payoff, grid, tag="y")
        delta, core_min = delta_field(fx, fy)
        tol = max(richardson_tolerance(s.model_x, payoff, grid, s.model_x.start),
                  richardson_tolerance(s.model_y, payoff, grid, s.model_x.start))
    except (DegenerateDiffusionError, GridError) as e:
        notes.append(f"pde-skipped: {e}")
        return {}
    x0 = s.model_x.start
    pde_x, pde_y = probe_value(fx, x0), probe_value(fy, x0)
    agrees = (abs(pde_x - est_x.mean) <= 4.0 * est_x.std_error + tol
              and abs(pde_y - est_y.mean) <= 4.0 * est_y.std_error + tol)
    if not agrees:
        notes.append("pde-mc-disagree")
        log_warning(f"scenario {s.name}: PDE ({pde_x:.6f}, {pde_y:.6f}) disagrees with MC "
                    f"({est_x.mean:.6f}, {est_y.mean:.6f}) beyond 4 SE + {tol:.2e}")
    if hypotheses_ok and core_min < -tol:
        notes.append(f"pde-delta-negative ({core_min:.3e})")
    if dump_to is not None:
        dump_to.mkdir(parents=True, exist_ok=True)
        for suffix, fld in (("x", fx), ("y", fy), ("delta", delta)):
            dump_field_csv(fld, dump_to / f"{s.name}_field_{suffix}.csv")
    return {"pde_x": pde_x, "pde_y": pde_y, "pde_delta": probe_value(delta, x0),
            "pde_delta_core_min": core_min, "tol_pde": tol, "pde_agrees": agrees}


def run_scenario(s: Scenario, threads: int = 1, progress: bool = False, pde: Optional[bool] = None,
                 dump_fields_to: Optional[Path] = None, dump_samples_to: Optional[Path] = None) -> ComparisonReport:
    """Check hypotheses, simulate the coupled pair and decide the verdict.

    Failed hypotheses are recorded in `annotations` and suppress a `holds`
    verdict; they never abort the run.
    """
    start = time.perf_counter()
    notes: List[str] = []
    payoff = _prepare_payoff(s, notes)
    payoff_ok = _payoff_hypotheses(s, payoff, notes)
    model_ok, order, ell_x, ell_y = _model_hypotheses(s, notes)
    hypotheses_ok = payoff_ok and model_ok and not any(n.startswith("mollification-failed") for n in notes)

    samples = simulate_pair(s.model_x, s.model_y, payoff, payoff, s.plan, threads=threads, progress=progress)
    if dump_samples_to is not None:
        dump_samples_to.mkdir(parents=True, exist_ok=True)
        dump_samples(samples, dump_samples_to / f"{s.name}_samples.bin")
    est = estimate(samples, "diff")
    est_x = estimate(samples, "x")
    est_y = estimate(samples, "y")

    extra: Dict[str, Any] = {}
    run_pde = s.pde_crosscheck if pde is None else pde
    if run_pde:
        if s.model_x.n <= 2:
            extra = _pde_crosscheck(s, payoff, hypotheses_ok, est_x, est_y, notes, dump_fields_to)
        else:
            notes.append("pde-skipped: dimension above 2")

    report = ComparisonReport(
        name=s.name, theorem=s.theorem, expect=s.expect, seed=s.plan.seed, paths=s.plan.paths,
        flagged_paths=int(samples.flagged.sum()),
        mean_x=est_x.mean, se_x=est_x.std_error, mean_y=est_y.mean, se_y=est_y.std_error,
        delta=est.mean, se_delta=est.std_error, z_score=_z_score(est.mean, est.std_error),
        verdict=decide_verdict(est.mean, est.std_error, hypotheses_ok), hypotheses_ok=hypotheses_ok,
        annotations=notes if hypotheses_ok else notes + ["hypotheses-unmet"],
        order=order, ellipticity_x=ell_x, ellipticity_y=ell_y,
        runtime=time.perf_counter() - start, **extra,
    )
    log_event(f"scenario {s.name}: delta={report.delta:.6f} se={report.se_delta:.2e} "
              f"z={report.z_score:.2f} verdict={report.verdict}")
    return report


def _constant_pair(name: str, sigma_x: float, sigma_y: float, mu_y: float, f: ScalarFunction,
                   theorem: str, paths: int, seed: int, flags: Dict[str, bool]) -> Scenario:
    return Scenario(
        name=name,
        model_x=DiffusionModel.constant([[sigma_x]]),
        model_y=DiffusionModel.constant([[sigma_y]], drift=[mu_y]),
        payoff=PayoffSpec(weights=[1.0], f=f, declared_convex=flags["convex"],
                          declared_nondecreasing=flags["nondecreasing"]),
        plan=SimPlan(horizon=1.0, steps=1, paths=paths, seed=seed),
        theorem=theorem,
        expect="violation",
    )


def counterexample_scenario(kind: CounterexampleKind, paths: int = 100_000, seed: int = 0) -> Scenario:
    if kind == "nonconvex":
        return _constant_pair("counterexample-nonconvex", 1.0, math.sqrt(2.0), 0.0,
                              ScalarFunction(kind="neg-quadratic"), "driftless", paths, seed,
                              {"convex": False, "nondecreasing": False})
    if kind == "nonmonotone-drift":
        return _constant_pair("counterexample-nonmonotone-drift", 1.0, 1.0, 1.0,
                              ScalarFunction(kind="neg-linear"), "drifted", paths, seed,
                              {"convex": True, "nondecreasing": False})
    raise SpecificationError(f"{kind} has no fixed scenario; use search_multivariate")


class MultivariatePayoff(BaseModel):
    """Convex on R^2: y^T Q y / 2 + max_k (<w_k, y> + b_k), Q positive semidefinite."""

    model_config = ConfigDict(frozen=True)

    quadratic: List[List[float]]
    slopes: List[List[float]]
    offsets: List[float]

    @property
    def dim(self) -> int:
        return len(self.quadratic)

    def evaluate(self, states) -> np.ndarray:
        s = np.asarray(states, dtype=float)
        Q = np.asarray(self.quadratic)
        quad = 0.5 * np.einsum("pi,ij,pj->p", s, Q, s)
        affine = s @ np.asarray(self.slopes).T + np.asarray(self.offsets)
        return quad + affine.max(axis=1)


class SearchResult(BaseModel):
    found: bool
    tried: int
    best_z: float
    model_x: Optional[DiffusionModel] = None
    model_y: Optional[DiffusionModel] = None
    payoff: Optional[MultivariatePayoff] = None
    plan: Optional[SimPlan] = None


def _trig_matrix(base: np.ndarray, scale: np.ndarray, wave: np.ndarray, phase: float) -> CoefficientField:
    params = [*base.ravel(), *scale.ravel(), *wave, phase]
    return CoefficientField(kind="trig-perturbed", params=[float(p) for p in params], dim=2, shape="matrix")


def _random_candidate(rng: np.random.Generator, index: int):
    """An ordered pair (one side state dependent) and a convex non-quadratic payoff."""
    wave = rng.normal(size=2) * 1.5
    phase = float(rng.uniform(0.0, 2.0 * math.pi))
    if index % 2 == 0:
        base = rng.normal(size=(2, 2)) * 0.6
        scale = rng.normal(size=(2, 2)) * 0.4
        top = np.linalg.norm(base, 2) + np.linalg.norm(scale, 2)
        extra = rng.normal(size=2)
        rho = np.linalg.cholesky((1.02 * top) ** 2 * np.eye(2) + 0.3 * np.outer(extra, extra))
        mx = DiffusionModel(n=2, dispersion=_trig_matrix(base, scale, wave, phase))
        my = DiffusionModel.constant(rho)
    else:
        while True:
            base = rng.normal(size=(2, 2)) * 0.5 + np.eye(2)
            scale = rng.normal(size=(2, 2)) * 0.3
            floor = np.linalg.svd(base, compute_uv=False)[-1] - np.linalg.norm(scale, 2)
            if floor > 0.1:
                break
        mx = DiffusionModel.constant(0.98 * floor * np.eye(2))
        my = DiffusionModel(n=2, dispersion=_trig_matrix(base, scale, wave, phase))
    L = rng.normal(size=(2, 2)) * 0.5
    k = int(rng.integers(2, 5))
    payoff = MultivariatePayoff(quadratic=(0.5 * L @ L.T).tolist(),
                                slopes=(rng.normal(size=(k, 2)) * 1.5).tolist(),
                                offsets=(rng.normal(size=k) * 0.5).tolist())
    return mx, my, payoff


def search_multivariate(budget: int = SEARCH_BUDGET, paths: int = SEARCH_PATHS, seed: int = 0,
                        threads: int = 1, progress: bool = False) -> SearchResult:
    """Random search for an ordered pair and a convex 2D payoff with E f(X) > E f(Y).

    Each candidate is screened on a tenth of the paths; survivors with z < -3
    are re-simulated on fresh seeds at the full path count and accepted at z <= -5.
    """
    rng = np.random.default_rng(seed)
    screen_paths = max(paths // 10, 1000)
    best = SearchResult(found=False, tried=0, best_z=math.inf)
    for i in tqdm(range(budget), disable=not progress, desc="search"):
        mx, my, payoff = _random_candidate(rng, i)
        plan = SimPlan(horizon=1.0, steps=16, paths=screen_paths, seed=seed + i)
        try:
            z = _z_of(simulate_pair(mx, my, payoff, payoff, plan, threads=threads))
        except DiffcompError as e:
            log_warning(f"search candidate {i} skipped: {e}")
            continue
        if z < best.best_z:
            best = SearchResult(found=False, tried=i + 1, best_z=z, model_x=mx, model_y=my, payoff=payoff, plan=plan)
        if z < -Z_CRIT:
            confirm = SimPlan(horizon=1.0, steps=16, paths=paths, seed=seed + 1_000_003 + i)
            zc = _z_of(simulate_pair(mx, my, payoff, payoff, confirm, threads=threads))
            log_event(f"search candidate {i}: screen z={z:.2f}, confirm z={zc:.2f}")
            if zc <= -CONFIRM_Z:
                return SearchResult(found=True, tried=i + 1, best_z=zc, model_x=mx, model_y=my,
                                    payoff=payoff, plan=confirm)
    log_event(f"multivariate search: no violation in {budget} candidates (best z {best.best_z:.2f})")
    return best.model_copy(update={"tried": budget})


def _z_of(samples) -> float:
    est = estimate(samples, "diff")
    return _z_score(est.mean, est.std_error)


def _search_report(result: SearchResult, threads: int) -> ComparisonReport:
    detail = {"found": result.found, "candidates_tried": result.tried, "best_z": result.best_z}
    if result.model_x is None:
        return ComparisonReport(name="counterexample-multivariate-payoff", theorem="driftless", expect="violation",
                                seed=0, paths=0, mean_x=0.0, se_x=0.0, mean_y=0.0, se_y=0.0, delta=0.0,
                                se_delta=0.0, z_score=0.0, verdict="indeterminate", hypotheses_ok=False,
                                annotations=["search-empty", "hypotheses-unmet"], counterexample=detail)
    detail["candidate"] = {"model_x": result.model_x.model_dump(), "model_y": result.model_y.model_dump(),
                           "payoff": result.payoff.model_dump(), "plan": result.plan.model_dump()}
    samples = simulate_pair(result.model_x, result.model_y, result.payoff, result.payoff, result.plan, threads=threads)
    est, est_x, est_y = estimate(samples, "diff"), estimate(samples, "x"), estimate(samples, "y")
    order = order_scan(result.model_x, result.model_y, 4.0, SCAN_SAMPLES)
    notes = ["multivariate-payoff", "hypotheses-unmet"]
    if not result.found:
        notes.insert(0, "not-found")
    return ComparisonReport(
        name="counterexample-multivariate-payoff", theorem="driftless", expect="violation",
        seed=result.plan.seed, paths=result.plan.paths, flagged_paths=int(samples.flagged.sum()),
        mean_x=est_x.mean, se_x=est_x.std_error, mean_y=est_y.mean, se_y=est_y.std_error,
        delta=est.mean, se_delta=est.std_error, z_score=_z_score(est.mean, est.std_error),
        verdict=decide_verdict(est.mean, est.std_error, False), hypotheses_ok=False,
        annotations=notes, order=order, counterexample=detail,
    )


def run_counterexample(kind: CounterexampleKind, paths: int = 100_000, seed: int = 0, threads: int = 1,
                       progress: bool = False, budget: int = SEARCH_BUDGET,
                       search_paths: int = SEARCH_PATHS) -> ComparisonReport:
    start = time.perf_counter()
    if kind == "multivariate-payoff":
        result = search_multivariate(budget, search_paths, seed, threads, progress)
        report = _search_report(result, threads)
        return report.model_copy(update={"runtime": time.perf_counter() - start})
    return run_scenario(counterexample_scenario(kind, paths, seed), threads=threads, progress=progress)


class SuiteEntry(BaseModel):
    scenario: Optional[Scenario] = None
    counterexample: Optional[CounterexampleKind] = None

    @property
    def name(self) -> str:
        return self.scenario.name if self.scenario else f"counterexample-{self.counterexample}"

    @property
    def expect(self) -> str:
        return self.scenario.expect if self.scenario else "violation"


class Suite(BaseModel):
    name: str
    entries: List[SuiteEntry] = []


def _read_yaml(path: Path) -> Any:
    try:
        with open(path, "r") as f:
            return yaml.safe_load(f)
    except OSError as e:
        raise SuiteError(f"cannot read {path}: {e}")
    except yaml.YAMLError as e:
        raise SuiteError(f"{path} is not valid YAML: {e}")


def resolve_input(path: Union[str, Path], kind: str = "scenarios") -> Path:
    """Accept a path with or without the .yaml suffix, relative to the cwd or the bundled directory."""
    path = Path(path)
    bundled = Path(__file__).resolve().parent.parent / kind
    for candidate in (path, path.with_suffix(".yaml"), bundled / path.name, bundled / f"{path.name}.yaml"):
        if candidate.is_file():
            return candidate
    raise SuiteError(f"no such {kind[:-1]} file: {path}")


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = resolve_input(path, "scenarios")
    data = _read_yaml(path)
    try:
        return Scenario.model_validate(data)
    except ValidationError as e:
        raise SuiteError(f"{path}: {e}")


def load_suite(path: Union[str, Path]) -> Suite:
    """Entries are scenario file names, {counterexample: kind} records or inline scenarios."""
    path = resolve_input(path, "suites")
    data = _read_yaml(path) or {}
    if not isinstance(data, dict):
        raise SuiteError(f"{path}: a suite is a mapping with `name` and `scenarios`")
    entries = []
    for item in data.get("scenarios") or []:
        if isinstance(item, str):
            target = path.parent / item
            if not target.suffix:
                target = target.with_suffix(".yaml")
            if not target.is_file():
                target = resolve_input(item, "scenarios")
            entries.append(SuiteEntry(scenario=load_scenario(target)))
        elif isinstance(item, dict) and "counterexample" in item:
            try:
                entries.append(SuiteEntry(counterexample=item["counterexample"]))
            except ValidationError as e:
                raise SuiteError(f"{path}: {e}")
        else:
            try:
                entries.append(SuiteEntry(scenario=Scenario.model_validate(item)))
            except ValidationError as e:
                raise SuiteError(f"{path}: {e}")
    return Suite(name=data.get("name", path.stem), entries=entries)


class SuiteSummary(BaseModel):
    name: str
    reports: List[ComparisonReport] = []
    exit_code: int = 0

    @property
    def counts(self) -> Dict[str, int]:
        out = {"holds": 0, "indeterminate": 0, "violated": 0}
        for r in self.reports:
            out[r.verdict] += 1
        return out


def run_suite(suite: Union[Suite, str, Path], threads: int = 1, progress: bool = False,
              pde: Optional[bool] = None, seed: Optional[int] = None, paths: Optional[int] = None,
              budget: int = SEARCH_BUDGET, search_paths: int = SEARCH_PATHS,
              dump_fields_to: Optional[Path] = None) -> SuiteSummary:
    """Run every entry in order; the exit code is 1 iff a scenario expected to hold is violated."""
    if not isinstance(suite, Suite):
        suite = load_suite(suite)
    reports = []
    for entry in tqdm(suite.entries, disable=not progress, desc=suite.name):
        if entry.scenario is not None:
            s = entry.scenario.with_overrides(seed, paths)
            reports.append(run_scenario(s, threads=threads, pde=pde, dump_fields_to=dump_fields_to))
        else:
            reports.append(run_counterexample(entry.counterexample, paths=paths or 100_000, seed=seed or 0,
                                              threads=threads, budget=budget, search_paths=search_paths))
    failed = [r.name for r in reports if r.expect == "holds" and r.verdict == "violated"]
    if failed:
        log_warning(f"suite {suite.name}: certified scenarios violated: {failed}")
    summary = SuiteSummary(name=suite.name, reports=reports, exit_code=1 if failed else 0)
    log_event(f"suite {suite.name}: {summary.counts}")
    return summary


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def write_report(report: ComparisonReport, out_dir: Union[str, Path]) -> Path:
    path = Path(out_dir) / f"{report.name}.json"
    _atomic_write(path, report.hashed_json())
    return path


def summary_rows(reports: List[ComparisonReport]) -> List[List[str]]:
    return [[r.name, repr(r.delta), repr(r.se_delta), repr(r.z_score), r.verdict] for r in reports]


def write_summary_csv(reports: List[ComparisonReport], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["name", "delta", "se", "z", "verdict"])
        writer.writerows(summary_rows(reports))
    os.replace(tmp, path)
    return path
