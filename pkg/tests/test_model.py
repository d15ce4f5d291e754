import numpy as np
import pytest
from pydantic import ValidationError

from diffcomp.errors import HypothesisViolation, SpecificationError
from diffcomp.model import (
    CoefficientField,
    DiffusionModel,
    diffusion_matrix,
    ellipticity_scan,
    eval_dispersion,
    eval_drift,
    field_bounds,
    is_constant,
    lipschitz_probe,
    loewner_leq,
    order_scan,
)

from conftest import const_model


def trig_1d(base=1.0, scale=0.3, wave=1.0, phase=0.0):
    return CoefficientField(kind="trig-perturbed", params=[base, scale, wave, phase], dim=1, shape="matrix")


def test_layout_is_validated():
    with pytest.raises(ValidationError):
        CoefficientField(kind="constant", params=[1.0, 2.0], dim=1)
    with pytest.raises(ValidationError):
        CoefficientField(kind="affine-clamped", params=[0.0, 1.0, 1.0, -1.0], dim=1)
    with pytest.raises(ValidationError):
        CoefficientField(kind="table-interpolated", params=[2, 1.0, 1.0, 0.0, 0.0, 1.0], dim=1)


def test_field_kinds_evaluate():
    affine = CoefficientField(kind="affine-clamped", params=[0.0, 2.0, -1.0, 1.0], dim=1)
    assert affine.evaluate(np.array([0.25])) == pytest.approx([0.5])
    assert affine.evaluate(np.array([3.0])) == pytest.approx([1.0])

    trig = trig_1d()
    x = np.array([[0.0], [np.pi / 2]])
    assert trig.evaluate(x)[:, 0, 0] == pytest.approx([1.0, 1.3])

    table = CoefficientField(kind="table-interpolated", params=[2, 1.0, 0.0, 2.0, 1.0, 3.0], dim=1)
    assert table.evaluate(np.array([1.0])) == pytest.approx([2.0])
    assert table.evaluate(np.array([-5.0])) == pytest.approx([1.0])


def test_field_bounds():
    assert CoefficientField.constant([0.5, -0.5]).bounds()[1] == 0.0
    affine = CoefficientField(kind="affine-clamped", params=[0.0, 0.0, 3.0, 4.0, 0.0, 0.0, -1.0, -1.0, 1.0, 1.0],
                              dim=2, shape="vector")
    assert affine.bounds()[1] == pytest.approx(5.0)
    assert trig_1d(scale=0.3, wave=2.0).bounds() == pytest.approx((1.3, 0.6))
    assert field_bounds(trig_1d(scale=0.3, wave=2.0)) == trig_1d(scale=0.3, wave=2.0).bounds()
    table = CoefficientField(kind="table-interpolated", params=[3, 2.0, 0.0, 1.0, 2.0, 0.0, 1.0, 3.0], dim=1)
    assert table.bounds()[1] == pytest.approx(4.0)


def test_model_defaults_and_shapes():
    m = DiffusionModel(n=2, dispersion={"kind": "constant", "params": [1.0, 0.0, 0.0, 1.0]})
    assert m.x0 == [0.0, 0.0]
    assert m.drift.is_zero
    assert is_constant(m)
    assert eval_dispersion(m, [1.0, 2.0]) == pytest.approx(np.eye(2))
    assert eval_drift(m, [1.0, 2.0]) == pytest.approx([0.0, 0.0])
    with pytest.raises(SpecificationError):
        eval_dispersion(m, [1.0, 2.0, 3.0])
    with pytest.raises(ValidationError):
        DiffusionModel(n=2, x0=[0.0], dispersion={"kind": "constant", "params": [1.0, 0.0, 0.0, 1.0]})


def test_diffusion_matrix_convention():
    m = const_model([[2.0]])
    assert diffusion_matrix(m, np.zeros(1)) == pytest.approx(np.array([[2.0]]))
    assert diffusion_matrix(m, np.zeros(1), halved=False) == pytest.approx(np.array([[4.0]]))


def test_loewner_order():
    assert loewner_leq([[1.0]], [[2.0]])
    assert loewner_leq(np.eye(2), np.eye(2))
    assert not loewner_leq(np.diag([1.0, 0.0]), np.diag([0.0, 1.0]))
    with pytest.raises(SpecificationError):
        loewner_leq([[1.0, 1.0], [0.0, 1.0]], np.eye(2))


def test_order_scan_detects_both_directions():
    small, big = const_model([[1.0]]), const_model([[1.5]])
    ok = order_scan(small, big, radius=3.0, samples=64)
    assert ok.diffusion_order_ok and ok.drift_order_ok
    bad = order_scan(big, small, radius=3.0, samples=64)
    assert not bad.diffusion_order_ok
    assert bad.worst_eigenvalue == pytest.approx(1.0 - 2.25)


def test_order_scan_state_dependent():
    x = DiffusionModel(n=1, dispersion=trig_1d())
    assert order_scan(x, const_model([[1.3]]), 5.0, 256).diffusion_order_ok
    assert not order_scan(x, const_model([[1.1]]), 5.0, 256).diffusion_order_ok


def test_lipschitz_probe_within_declared():
    field = trig_1d(scale=0.4, wave=2.0)
    estimate = lipschitz_probe(field, radius=4.0, pairs=256)
    assert 0.5 < estimate <= 0.8 * (1 + 1e-6)


def test_lipschitz_probe_reports_witness(monkeypatch):
    field = trig_1d(scale=0.4, wave=2.0)
    monkeypatch.setattr(CoefficientField, "bounds", lambda self: (1.4, 0.01))
    with pytest.raises(HypothesisViolation) as info:
        lipschitz_probe(field, radius=4.0, pairs=64)
    assert {"x", "y", "ratio", "declared"} <= set(info.value.witness)


def test_ellipticity_scan():
    rep = ellipticity_scan(const_model([[2.0, 0.0], [0.0, 0.5]]), 2.0, 32)
    assert rep.lambda_min == pytest.approx(0.25)
    assert rep.lambda_max == pytest.approx(4.0)
    assert rep.elliptic
    degenerate = ellipticity_scan(const_model([[0.0]]), 2.0, 32)
    assert not degenerate.elliptic


def test_lipschitz_probe_examples():
    assert lipschitz_probe(CoefficientField.constant([1.0, 2.0]), 3.0, 64) == 0.0
    clamp = CoefficientField(kind="affine-clamped", params=[0.0, 1.0, -1.0, 1.0], dim=1)
    assert lipschitz_probe(clamp, 3.0, 256) <= 1.0 + 1e-9
    wave = CoefficientField(kind="trig-perturbed", params=[0.0, 1.0, 2.0, 0.0], dim=1)
    assert 1.9 <= lipschitz_probe(wave, 4.0, 512) <= 2.0 + 1e-9


def test_dispersion_examples():
    m = DiffusionModel(n=2, dispersion={"kind": "affine-clamped",
                                        "params": [1.0, 0.0, 0.0, 1.0,
                                                   0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                                                   0.5, 0.0, 0.0, 1.0,
                                                   2.0, 0.0, 0.0, 1.0]})
    assert eval_dispersion(m, [0.0, 0.0]) == pytest.approx(np.eye(2))
    assert eval_dispersion(m, [20.0, 0.0])[0, 0] == pytest.approx(2.0)
    trig = DiffusionModel(n=1, dispersion={"kind": "trig-perturbed", "params": [1.0, 0.2, 1.0, 0.0]})
    assert eval_dispersion(trig, [np.pi / 2]) == pytest.approx(np.array([[1.2]]))


def test_drift_order_with_state_dependent_drift():
    x = const_model([[1.0]])
    y = DiffusionModel(n=1, drift={"kind": "trig-perturbed", "params": [1.0, 0.5, 1.0, 0.0]},
                       dispersion={"kind": "constant", "params": [1.0]})
    rep = order_scan(x, y, 4.0, 256)
    assert rep.drift_order_ok
    assert rep.worst_drift_gap >= 0.5 - 1e-10
    same = order_scan(y, y, 4.0, 64)
    assert same.diffusion_order_ok and same.drift_order_ok
    assert same.worst_eigenvalue >= -1e-12 and same.worst_drift_gap == 0.0


def test_trig_ellipticity_range():
    m = DiffusionModel(n=1, dispersion={"kind": "trig-perturbed", "params": [1.0, 0.2, 1.0, 0.0]})
    rep = ellipticity_scan(m, np.pi, 512)
    assert rep.lambda_min == pytest.approx(0.64, abs=1e-3)
    assert rep.lambda_max == pytest.approx(1.44, abs=1e-3)


def integer_spd(rng, n=3):
    M = rng.integers(-3, 4, size=(n, n)).astype(float)
    return M.T @ M + np.eye(n)


def test_loewner_order_is_a_partial_order():
    rng = np.random.default_rng(5)
    for _ in range(50):
        A = integer_spd(rng)
        B = A + integer_spd(rng)
        C = B + integer_spd(rng)
        assert loewner_leq(A, A) and loewner_leq(B, B)
        assert loewner_leq(A, B) and loewner_leq(B, C)
        assert loewner_leq(A, C)
        assert not loewner_leq(B, A)

        D = integer_spd(rng)
        if loewner_leq(A, D) and loewner_leq(D, A):
            assert np.max(np.abs(np.linalg.eigvalsh(D - A))) == 0.0
    A = integer_spd(rng)
    assert loewner_leq(A, A.copy()) and loewner_leq(A.copy(), A)
