import hashlib
import json

from click.testing import CliRunner

from diffcomp.cli import cli, main, propagation_battery, report_gates, thread_battery
from diffcomp.harness import ComparisonReport


def invoke(*args):
    return CliRunner().invoke(cli, [str(a) for a in args])


def test_run_writes_report_and_manifest(out_dir):
    result = invoke("run", "thm1_relu_1d", "--paths", 5000, "--no-pde", "--out", out_dir)
    assert result.exit_code == 0, result.output
    assert "verdict=holds" in result.output
    report = out_dir / "thm1_relu_1d.json"
    manifest = json.loads((out_dir / "manifest.json").read_text())
    digest = hashlib.sha256(report.read_text().encode("utf-8")).hexdigest()
    assert manifest["reports"]["thm1_relu_1d"]["sha256"] == digest
    assert manifest["scenarios"][0]["plan"]["paths"] == 5000
    assert "runtime" not in json.loads(report.read_text())
    assert "thm1_relu_1d" in manifest["runtimes"]


def test_run_is_byte_identical_across_thread_counts(tmp_path):
    for threads in (1, 3):
        result = invoke("run", "thm1_abs_2d", "--paths", 9000, "--no-pde", "--threads", threads,
                        "--out", tmp_path / f"t{threads}")
        assert result.exit_code == 0, result.output
    one = (tmp_path / "t1" / "thm1_abs_2d.json").read_bytes()
    three = (tmp_path / "t3" / "thm1_abs_2d.json").read_bytes()
    assert one == three


def test_dump_options(out_dir):
    result = invoke("run", "thm1_quadratic_1d", "--paths", 2000, "--dump-samples", "--dump-field", "--out", out_dir)
    assert result.exit_code == 0, result.output
    assert (out_dir / "thm1_quadratic_1d_samples.bin").stat().st_size == 24 * 2000
    assert (out_dir / "thm1_quadratic_1d_field_delta.csv").read_text().startswith("x,value")


def test_usage_and_input_errors(out_dir):
    assert invoke("run", "thm1_relu_1d", "--bogus").exit_code == 2
    assert invoke("run", "no_such_scenario", "--out", out_dir).exit_code == 2
    assert invoke("suite", "no_such_suite", "--out", out_dir).exit_code == 2


def test_main_returns_exit_codes(out_dir):
    assert main(["--bogus"]) == 2
    assert main(["run", "no_such_scenario", "--out", str(out_dir)]) == 2
    assert main(["mollify-demo", "--kind", "relu", "--out", str(out_dir)]) == 0


def test_negative_suite_does_not_fail(out_dir):
    result = invoke("suite", "negative_suite", "--paths", 5000, "--budget", 1, "--out", out_dir)
    assert result.exit_code == 0, result.output
    header = (out_dir / "negative_suite_summary.csv").read_text().splitlines()[0]
    assert header == "name,delta,se,z,verdict"
    assert (out_dir / "counterexample-nonconvex.json").exists()


def test_mollify_demo_plot_data(out_dir):
    result = invoke("mollify-demo", "--kind", "abs", "--epsilon", 0.1, "--radius", 2.0, "--out", out_dir)
    assert result.exit_code == 0, result.output
    lines = (out_dir / "mollify_abs.csv").read_text().splitlines()
    assert lines[0] == "z,f,mollified,first_derivative,second_derivative"
    assert len(lines) == 802
    assert invoke("mollify-demo", "--kind", "neg-quadratic", "--out", out_dir).exit_code == 2
    assert invoke("mollify-demo", "--kind", "sideways", "--out", out_dir).exit_code == 2


def test_check_kernels(out_dir):
    result = invoke("check-kernels", "--samples", 256, "--out", out_dir)
    assert result.exit_code == 0, result.output
    checks = json.loads((out_dir / "check_kernels.json").read_text())
    assert all(c["ok"] for c in checks.values())


def test_probe_sde_runs(out_dir):
    result = invoke("probe-sde", "--paths", 2000, "--out", out_dir)
    assert result.exit_code in (0, 1), result.output
    assert "arith_bm_exact" in json.loads((out_dir / "probe_sde.json").read_text())


def test_search_counterexample_reports(out_dir):
    result = invoke("search-counterexample", "--budget", 1, "--paths", 1000, "--out", out_dir)
    assert result.exit_code == 0, result.output
    assert (out_dir / "counterexample-multivariate-payoff.json").exists()


def gated_report(name, delta, se=0.01, **extra):
    fields = dict(name=name, theorem="driftless", seed=0, paths=10, mean_x=0.0, se_x=0.0, mean_y=0.0, se_y=0.0,
                  delta=delta, se_delta=se, z_score=delta / se, verdict="holds", hypotheses_ok=True)
    fields.update(extra)
    return ComparisonReport(**fields)


def test_report_gates():
    gates = report_gates([
        gated_report("thm1_quadratic_1d", 1.02),
        gated_report("thm2_relu_1d", 0.6),
        gated_report("counterexample-nonconvex", -1.01, verdict="violated"),
        gated_report("plain", 0.3, pde_agrees=True, pde_delta_core_min=-1e-4, tol_pde=1e-3),
        gated_report("negative_core", 0.3, pde_agrees=True, pde_delta_core_min=-0.25, tol_pde=4e-3,
                     annotations=["pde-delta-negative (-2.500e-01)"]),
        gated_report("disagree", 0.3, pde_agrees=False, pde_delta_core_min=0.0, tol_pde=1e-3,
                     annotations=["pde-mc-disagree"]),
        gated_report("uncertified", 0.3, pde_agrees=False, pde_delta_core_min=-1.0, tol_pde=1e-3,
                     hypotheses_ok=False),
    ])
    assert gates["thm1_quadratic_1d_closed_form"]["ok"]
    assert not gates["thm2_relu_1d_closed_form"]["ok"]
    assert gates["counterexample-nonconvex_closed_form"]["ok"]
    assert gates["plain_pde"]["ok"]
    assert not gates["negative_core_pde"]["ok"]
    assert not gates["disagree_pde"]["ok"]
    assert "uncertified_pde" not in gates


def test_propagation_battery():
    checks = propagation_battery()
    assert set(checks) == {"convexity_1d", "convexity_2d", "monotonicity_1d"}
    assert all(c["ok"] for c in checks.values()), checks


def test_thread_battery():
    checks = thread_battery(threads=4, seed=3, paths=9000)
    assert checks["threads_1_vs_4"]["ok"]
