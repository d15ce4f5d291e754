#!/usr/bin/env python3
"""
Command line for the comparison lab: scenarios, suites, validation probes and
the acceptance battery.  Every command writes a manifest.json next to its
outputs; exit codes are 0 on success, 1 on a violated certified scenario or a
failed check, 2 on usage or input errors.
"""

import functools
import hashlib
import json
import math
import platform
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
import numpy as np

from .config import DIFFCOMP_OUT, DIFFCOMP_THREADS, TAPER_BAND
from .convex import PayoffSpec, ScalarFunction, mollify
from .errors import DiffcompError
from .harness import (
    SEARCH_BUDGET,
    SEARCH_PATHS,
    ComparisonReport,
    load_scenario,
    load_suite,
    run_counterexample,
    run_scenario,
    run_suite,
    write_report,
    write_summary_csv,
)
from .kernels import (
    ConstKernel,
    chapman_kolmogorov_check,
    gaussian_bound_check,
    lemma1_check,
    ver_identity_check,
)
from .logger import log_event
from .model import DiffusionModel
from .pde import GridSpec, propagation_report, solve_backward
from .sde import increment_moments, strong_error_probe, weak_error_probe

_PACKAGES = ("numpy", "scipy", "pydantic", "click", "PyYAML", "tqdm", "threadpoolctl", "psutil", "python-dotenv")


def _versions() -> Dict[str, str]:
    out = {"python": platform.python_version()}
    for pkg in _PACKAGES:
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_manifest(out: Path, command: str, config: Dict[str, Any], scenarios: List[Dict[str, Any]],
                   reports: List[ComparisonReport], extra: Optional[Dict[str, Any]] = None) -> Path:
    """Resolved inputs, versions and report digests; runtimes are kept apart from the hashed content."""
    manifest = {
        "command": command,
        "config": config,
        "scenarios": scenarios,
        "versions": _versions(),
        "reports": {r.name: {"file": f"{r.name}.json", "sha256": _digest(r.hashed_json())} for r in reports},
        "runtimes": {r.name: r.runtime for r in reports},
    }
    if extra:
        manifest.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
    return path


def _write_json(path: Path, payload: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=float)


def _guarded(fn):
    """Input and configuration errors end the command with exit code 2."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DiffcompError as e:
            click.echo(f"error: {e}", err=True)
            raise click.exceptions.Exit(2)

    return wrapper


def _common(fn):
    fn = click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=DIFFCOMP_OUT,
                      show_default=True, help="Output directory.")(fn)
    fn = click.option("--threads", type=click.IntRange(min=1), default=DIFFCOMP_THREADS, show_default=True)(fn)
    fn = click.option("--seed", type=click.IntRange(min=0, max=2 ** 64 - 1), default=None,
                      help="Override the scenario seed.")(fn)
    fn = click.option("--progress", is_flag=True, help="Show progress bars.")(fn)
    return fn


def _report_line(r: ComparisonReport) -> str:
    return (f"{r.name}: delta={r.delta:.6f} se={r.se_delta:.2e} z={r.z_score:.2f} "
            f"verdict={r.verdict}{' (expected violation)' if r.expect == 'violation' else ''}")


@click.group(help="Numerical verification lab for diffusion comparison theorems.")
def cli():
    pass


@cli.command(help="Run one scenario file and write its report.")
@click.argument("scenario")
@_common
@click.option("--paths", type=click.IntRange(min=2), default=None, help="Override the path count.")
@click.option("--pde/--no-pde", default=None, help="Force or suppress the PDE cross-check.")
@click.option("--dump-field", is_flag=True, help="Write CSV dumps of the PDE value and delta fields.")
@click.option("--dump-samples", is_flag=True, help="Write raw coupled payoffs as binary records.")
@click.pass_context
@_guarded
def run(ctx, scenario, out, threads, seed, progress, paths, pde, dump_field, dump_samples):
    s = load_scenario(scenario).with_overrides(seed, paths)
    report = run_scenario(s, threads=threads, progress=progress, pde=pde,
                          dump_fields_to=out if dump_field else None,
                          dump_samples_to=out if dump_samples else None)
    path = write_report(report, out)
    write_manifest(out, "run", {"threads": threads, "seed": seed, "paths": paths, "pde": pde},
                   [s.model_dump(mode="json")], [report])
    click.echo(_report_line(report))
    for note in report.annotations:
        click.echo(f"  note: {note}")
    click.echo(f"report: {path}")
    ctx.exit(1 if report.expect == "holds" and report.verdict == "violated" else 0)


@cli.command(help="Run every scenario of a suite file and write reports plus a CSV summary.")
@click.argument("suite")
@_common
@click.option("--paths", type=click.IntRange(min=2), default=None, help="Override every path count.")
@click.option("--pde/--no-pde", default=None)
@click.option("--dump-field", is_flag=True)
@click.option("--budget", type=click.IntRange(min=1), default=SEARCH_BUDGET, show_default=True,
              help="Candidates for the multivariate counterexample search.")
@click.pass_context
@_guarded
def suite(ctx, suite, out, threads, seed, progress, paths, pde, dump_field, budget):
    summary = _run_and_write_suite(suite, out, threads, seed, progress, paths, pde, dump_field, budget)
    ctx.exit(summary.exit_code)


def _run_and_write_suite(suite, out, threads, seed, progress, paths, pde, dump_field=False,
                         budget=SEARCH_BUDGET):
    loaded = load_suite(suite)
    summary = run_suite(loaded, threads=threads, progress=progress, pde=pde, seed=seed, paths=paths,
                        budget=budget, dump_fields_to=out if dump_field else None)
    for report in summary.reports:
        write_report(report, out)
    write_summary_csv(summary.reports, out / f"{summary.name}_summary.csv")
    resolved = [e.scenario.with_overrides(seed, paths).model_dump(mode="json") if e.scenario
                else {"counterexample": e.counterexample} for e in loaded.entries]
    write_manifest(out, f"suite {summary.name}", {"threads": threads, "seed": seed, "paths": paths, "pde": pde},
                   resolved, summary.reports)
    click.echo(f"=== {summary.name} ===")
    for report in summary.reports:
        click.echo(_report_line(report))
    click.echo(f"counts: {summary.counts}")
    return summary


def _check(ok: bool, value: Any) -> Dict[str, Any]:
    return {"ok": bool(ok), "value": value}


def sde_battery(paths: int = 20000, seed: int = 0) -> Dict[str, Dict[str, Any]]:
    gbm = strong_error_probe("gbm", paths=paths, seed=seed)
    abm = strong_error_probe("arith-bm", paths=paths, seed=seed)
    weak = weak_error_probe(paths=5 * paths, seed=seed)
    draws, pairs = 1_000_000, 100_000
    moments = increment_moments(seed=seed, draws=draws, pairs=pairs)
    return {
        "strong_slope_gbm": _check(0.35 <= gbm.slope <= 0.65, gbm.slope),
        "arith_bm_exact": _check(abm.max_error <= 1e-12, abm.max_error),
        "weak_slope_gbm": _check(weak.slope is not None and 0.7 <= weak.slope <= 1.3, weak.slope),
        "increment_mean": _check(abs(moments.mean[0]) <= 4.0 / np.sqrt(draws), moments.mean[0]),
        "increment_variance": _check(abs(moments.variance[0] - 1.0) <= 4.0 * np.sqrt(2.0 / draws),
                                     moments.variance[0]),
        "increment_correlation": _check(abs(moments.correlation) <= 4.0 / np.sqrt(pairs), moments.correlation),
    }


_MOLLIFIER_DATA = (
    ScalarFunction(kind="abs"),
    ScalarFunction(kind="relu"),
    ScalarFunction(kind="piecewise-linear", params=[-2, 2, -1, 0.5, 0, 0, 1, 0.5, 2, 2]),
)


def _random_spd(rng: np.random.Generator, n: int) -> np.ndarray:
    M = rng.normal(size=(n, n))
    return 0.5 * M @ M.T + 0.1 * np.eye(n)


def kernel_battery(seed: int = 0, samples: int = 4096) -> Dict[str, Dict[str, Any]]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(100):
        n = 1 + i % 2
        b = rng.normal(size=n) if i % 4 >= 2 else np.zeros(n)
        k = ConstKernel(_random_spd(rng, n), b)
        s = float(rng.uniform(0.0, 1.0))
        t = s + float(rng.uniform(0.05, 1.0))
        worst = max(worst, lemma1_check(k, t, rng.normal(size=n), s, rng.normal(size=n)))

    half = ConstKernel(np.array([[0.5]]), np.zeros(1))
    loose = gaussian_bound_check(half, 1.0, 0.25, samples=samples, seed=seed)
    tight = gaussian_bound_check(half, 1.0, 1.0, samples=samples, seed=seed)

    ver = 0.0
    for kind in ("quadratic", "abs", "relu"):
        m = mollify(ScalarFunction(kind=kind), 0.1, 4.0)
        ver = max(ver, ver_identity_check(half, m, [1.0], 1.0, np.zeros(1)))
    for f in _MOLLIFIER_DATA:
        for eps in (0.1, 0.01):
            for radius in (2.0, 5.0):
                ver = max(ver, ver_identity_check(half, mollify(f, eps, radius), [1.0], 1.0, np.zeros(1)))
    quad = mollify(ScalarFunction(kind="quadratic"), 0.1, 4.0)
    ver = max(ver, ver_identity_check(ConstKernel(0.5 * np.eye(2), np.zeros(2)), quad, [1.0, 1.0], 1.0,
                                      np.zeros(2)))
    ck = chapman_kolmogorov_check(ConstKernel(np.array([[0.5]]), np.array([0.3])), 1.0, 0.4, 0.0, 0.2, -0.3)
    return {
        "lemma1_duality": _check(worst <= 1e-10, worst),
        "gaussian_bound_holds": _check(loose.ok, loose.worst),
        "gaussian_bound_fails_tight": _check(not tight.ok and bool(tight.witness), tight.witness),
        "derivative_transfer": _check(ver <= 1e-5, ver),
        "chapman_kolmogorov": _check(ck <= 1e-6, ck),
    }


def mollifier_battery() -> Dict[str, Dict[str, Any]]:
    out = {}
    for f in _MOLLIFIER_DATA:
        for eps in (0.1, 0.01):
            for radius in (2.0, 5.0):
                m = mollify(f, eps, radius)
                core = np.linspace(-radius, radius, 20001)
                err = float(np.max(np.abs(m.value(core) - f.value(core))))
                curv = float(np.min(m.second_derivative(np.linspace(-radius, radius, 1000))))
                outer = np.linspace(radius + TAPER_BAND, radius + TAPER_BAND + 1.0, 101)
                outside = float(np.max(np.abs(m.value(np.concatenate([outer, -outer])))))
                out[f"{f.kind}_eps{eps}_R{radius:g}"] = _check(err <= eps and curv > 0 and outside == 0.0,
                                                               {"sup_error": err, "min_curvature": curv,
                                                                "outside": outside})
    return out


def _echo_checks(title: str, checks: Dict[str, Dict[str, Any]]) -> bool:
    click.echo(f"=== {title} ===")
    for name, c in checks.items():
        click.echo(f"{'PASS' if c['ok'] else 'FAIL'} {name}: {c['value']}")
    return all(c["ok"] for c in checks.values())


@cli.command("probe-sde", help="Euler strong/weak order probes and increment moment checks.")
@click.option("--paths", type=click.IntRange(min=100), default=20000, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=0)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=DIFFCOMP_OUT)
@click.pass_context
@_guarded
def probe_sde(ctx, paths, seed, out):
    checks = sde_battery(paths, seed)
    _write_json(out / "probe_sde.json", checks)
    write_manifest(out, "probe-sde", {"paths": paths, "seed": seed}, [], [])
    ctx.exit(0 if _echo_checks("sde probes", checks) else 1)


@cli.command("check-kernels", help="Duality, Gaussian bound, derivative-transfer and Chapman-Kolmogorov checks.")
@click.option("--seed", type=click.IntRange(min=0), default=0)
@click.option("--samples", type=click.IntRange(min=16), default=4096, show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=DIFFCOMP_OUT)
@click.pass_context
@_guarded
def check_kernels(ctx, seed, samples, out):
    checks = kernel_battery(seed, samples)
    _write_json(out / "check_kernels.json", checks)
    write_manifest(out, "check-kernels", {"seed": seed, "samples": samples}, [], [])
    ctx.exit(0 if _echo_checks("kernel checks", checks) else 1)


@cli.command("mollify-demo", help="Mollify one data function and write plot data.")
@click.option("--kind", default="abs", show_default=True)
@click.option("--param", "params", type=float, multiple=True, help="Function parameter (repeatable).")
@click.option("--epsilon", type=float, default=0.1, show_default=True)
@click.option("--radius", type=float, default=2.0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=DIFFCOMP_OUT)
@click.pass_context
@_guarded
def mollify_demo(ctx, kind, params, epsilon, radius, out):
    try:
        f = ScalarFunction(kind=kind, params=list(params))
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint="--kind/--param")
    m = mollify(f, epsilon, radius)
    reach = m.support + 1.0
    z = np.linspace(-reach, reach, 801)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"mollify_{kind}.csv"
    np.savetxt(path, np.column_stack([z, f.value(z), m.value(z), m.derivative(z), m.second_derivative(z)]),
               delimiter=",", header="z,f,mollified,first_derivative,second_derivative", comments="", fmt="%.17g")
    core = np.linspace(-radius, radius, 20001)
    err = float(np.max(np.abs(m.value(core) - f.value(core))))
    write_manifest(out, "mollify-demo", {"kind": kind, "params": list(params), "epsilon": epsilon,
                                         "radius": radius}, [], [], {"mollifier": m.model_dump()})
    click.echo(f"{kind}: width={m.width:.6g} gamma={m.gamma:.6g} sup error={err:.3e} (eps={epsilon})")
    click.echo(f"plot data: {path}")
    ctx.exit(0)


@cli.command("search-counterexample", help="Search convex 2D payoffs and ordered pairs for a violation.")
@_common
@click.option("--budget", type=click.IntRange(min=1), default=SEARCH_BUDGET, show_default=True)
@click.option("--paths", type=click.IntRange(min=100), default=SEARCH_PATHS, show_default=True)
@click.pass_context
@_guarded
def search_counterexample(ctx, out, threads, seed, progress, budget, paths):
    report = run_counterexample("multivariate-payoff", seed=seed or 0, threads=threads, progress=progress,
                                budget=budget, search_paths=paths)
    write_report(report, out)
    write_manifest(out, "search-counterexample", {"budget": budget, "paths": paths, "seed": seed or 0,
                                                  "threads": threads}, [], [report])
    found = bool(report.counterexample and report.counterexample.get("found"))
    click.echo(_report_line(report))
    click.echo(f"found: {found} after {report.counterexample.get('candidates_tried') if report.counterexample else 0} "
               f"candidates")
    ctx.exit(0)


# closed-form Y-minus-X deltas of bundled scenarios and counterexamples
CLOSED_FORM_DELTAS = {
    "thm1_abs_2d": math.sqrt(8.0 / math.pi) - math.sqrt(4.0 / math.pi),
    "thm1_quadratic_1d": 1.0,
    "thm2_relu_1d": 1.0833154705876864 - 1.0 / math.sqrt(2.0 * math.pi),
    "thm2_linear_1d": 0.5,
    "counterexample-nonconvex": -1.0,
    "counterexample-nonmonotone-drift": -1.0,
}
PDE_FAILURES = ("pde-delta-negative", "pde-mc-disagree")


def report_gates(reports: List[ComparisonReport]) -> Dict[str, Dict[str, Any]]:
    """Closed-form deltas within 4 SE, and PDE agreement on certified scenarios."""
    out = {}
    for r in reports:
        if r.name in CLOSED_FORM_DELTAS:
            expected = CLOSED_FORM_DELTAS[r.name]
            out[f"{r.name}_closed_form"] = _check(abs(r.delta - expected) <= 4.0 * r.se_delta,
                                                  {"delta": r.delta, "expected": expected, "se": r.se_delta})
        if r.pde_agrees is not None and r.hypotheses_ok:
            failed = [n for n in r.annotations if n.startswith(PDE_FAILURES)]
            ok = r.pde_agrees and r.pde_delta_core_min >= -r.tol_pde and not failed
            out[f"{r.name}_pde"] = _check(ok, {"core_min": r.pde_delta_core_min, "tol": r.tol_pde,
                                               "agrees": r.pde_agrees})
    return out


def propagation_battery() -> Dict[str, Dict[str, Any]]:
    """Convexity, trace and monotonicity of final slices, with mollifier radii clear of the grids."""
    one = DiffusionModel.constant([[1.0]])
    line = GridSpec(dim=1, radius=8.0, nodes=257, horizon=1.0)
    smooth_abs = PayoffSpec(weights=[1.0], f=mollify(ScalarFunction(kind="abs"), 0.1, 12.0), declared_convex=True)
    r1 = propagation_report(solve_backward(one, smooth_abs, line), one)

    two = DiffusionModel.constant(np.eye(2))
    square = GridSpec(dim=2, radius=6.0, nodes=129, horizon=1.0)
    smooth_sq = PayoffSpec(weights=[1.0, 1.0], f=mollify(ScalarFunction(kind="quadratic"), 0.1, 16.0),
                           declared_convex=True)
    r2 = propagation_report(solve_backward(two, smooth_sq, square), two)

    relu = PayoffSpec(weights=[1.0], f=ScalarFunction(kind="relu"), declared_convex=True,
                      declared_nondecreasing=True)
    r3 = propagation_report(solve_backward(one, relu, line), one)
    return {
        "convexity_1d": _check(r1.min_convexity >= -1e-5 and r1.min_trace >= -1e-5,
                               {"min_convexity": r1.min_convexity, "min_trace": r1.min_trace}),
        "convexity_2d": _check(r2.min_convexity >= -1e-5 and r2.min_trace >= -1e-5,
                               {"min_convexity": r2.min_convexity, "min_trace": r2.min_trace}),
        "monotonicity_1d": _check(min(r3.min_gradient) >= -1e-5, r3.min_gradient),
    }


def thread_battery(threads: int = 4, seed: Optional[int] = None,
                   paths: Optional[int] = None) -> Dict[str, Dict[str, Any]]:
    s = load_scenario("thm1_abs_2d").with_overrides(seed, paths)
    one = run_scenario(s, threads=1, pde=False).hashed_json()
    many = run_scenario(s, threads=threads, pde=False).hashed_json()
    return {f"threads_1_vs_{threads}": _check(one == many, _digest(one))}


@cli.command(help="Reproduce the full acceptance battery.")
@_common
@click.option("--paths", type=click.IntRange(min=2), default=None, help="Override suite path counts.")
@click.option("--budget", type=click.IntRange(min=1), default=SEARCH_BUDGET, show_default=True)
@click.pass_context
@_guarded
def acceptance(ctx, out, threads, seed, progress, paths, budget):
    results: Dict[str, Any] = {}
    ok = True
    certified: List[ComparisonReport] = []
    for name in ("theorem1_suite", "theorem2_suite"):
        summary = _run_and_write_suite(name, out / name, threads, seed, progress, paths, None)
        passed = summary.counts["holds"] == len(summary.reports)
        results[name] = _check(passed, summary.counts)
        ok &= passed
        certified.extend(summary.reports)
    negative = _run_and_write_suite("negative_suite", out / "negative_suite", threads, seed, progress, paths,
                                    None, budget=budget)
    fixed = [r for r in negative.reports if r.name != "counterexample-multivariate-payoff"]
    passed = all(r.verdict == "violated" and abs(r.z_score) >= 10 for r in fixed)
    results["negative_suite"] = _check(passed and negative.counts["violated"] >= 2, negative.counts)
    ok &= results["negative_suite"]["ok"]

    for title, battery in (("reports", lambda: report_gates(certified + fixed)),
                           ("propagation", propagation_battery),
                           ("kernels", lambda: kernel_battery(seed or 0)),
                           ("sde", lambda: sde_battery(seed=seed or 0)),
                           ("mollifier", mollifier_battery),
                           ("determinism", lambda: thread_battery(max(threads, 4), seed, paths))):
        checks = battery()
        ok &= _echo_checks(title, checks)
        results[title] = checks
    _write_json(out / "acceptance.json", results)
    log_event(f"acceptance battery: {'pass' if ok else 'FAIL'}")
    click.echo(f"acceptance: {'PASS' if ok else 'FAIL'}")
    ctx.exit(0 if ok else 1)


def main(argv: Optional[List[str]] = None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="diffcomp", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.UsageError as e:
        e.show()
        return 2
    except click.ClickException as e:
        e.show()
        return 2
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    return rv if isinstance(rv, int) else 0
