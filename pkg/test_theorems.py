import math

import numpy as np
import pytest

from conftest import aligned_state
from inertial_spin.errors import AuditNotApplicable, HypothesisViolation
from inertial_spin.integrator import IntegratorConfig, Trajectory, simulate
from inertial_spin.kernels import ConstantMatrixKernel, MetricKernel, MultiplicativeKernel
from inertial_spin.model import ModelParams, SwarmState, cone_state
from inertial_spin.scenario import build_initial_state, build_integrator, build_kernel, build_params, load_preset
from inertial_spin.theorems import (dset_coefficients, fit_decay_rate, ha_multiplicative_check, thm1_c0, thm1_check,
                                    thm1_gron1_problem, thm2_check, thm2_envelope, thm2_gron2_problem,
                                    verify_invariance)


def preset_setup(name):
    scenario = load_preset(name)
    params = build_params(scenario)
    kernel = build_kernel(scenario)
    return scenario, params, kernel, build_initial_state(scenario, params, kernel)


@pytest.fixture(scope="module")
def thm1_preset():
    scenario, params, kernel, state = preset_setup("thm1-pass")
    trajectory = simulate(params, kernel, state, build_integrator(scenario))
    return scenario, params, kernel, state, trajectory


@pytest.fixture(scope="module")
def thm2_preset():
    scenario, params, kernel, state = preset_setup("thm2-pass")
    trajectory = simulate(params, kernel, state, build_integrator(scenario))
    return scenario, params, kernel, state, trajectory


def test_thm1_preset_passes(thm1_preset):
    scenario, params, kernel, state, trajectory = thm1_preset
    report = thm1_check(state, params, kernel, scenario.delta0, trajectory=trajectory)
    assert report.inputs["case"] == "i"
    assert report.value("C0") < 1.0 - scenario.delta0
    assert report.conclusions["invariance_held"]
    assert report.conclusions["decayed"]
    assert report.passed


def test_thm1_nu1_matches_gron1_mapping(thm1_preset):
    _, params, kernel, state, _ = thm1_preset
    c0 = thm1_c0(state, params, kernel, 0.5)
    problem = thm1_gron1_problem(state, params, kernel, 0.5)
    assert problem.distinct_roots
    assert c0.nu1 == pytest.approx(problem.nu1, rel=1e-12)


def test_thm1_fails_on_wide_cone():
    params = ModelParams(chi=1.0, gamma=10.0, k=2.0)
    state = cone_state(8, 1.4, seed=3)
    report = thm1_check(state, params, ConstantMatrixKernel.uniform(8), 0.5, simulate_conclusion=True,
                        config=IntegratorConfig(dt=0.01, t_end=1.0))
    assert not report.conditions["A0_above_delta0"]
    assert report.conclusions == {}
    assert not report.passed


def test_thm1_second_case_records_corollary_constants():
    params = ModelParams(chi=1.0, gamma=1.0, k=2.0)
    state = cone_state(4, 0.1, spin_scale=0.01, seed=1)
    report = thm1_check(state, params, ConstantMatrixKernel.uniform(4), 0.5)
    assert report.inputs["case"] == "ii"
    assert report.value("case_threshold") == pytest.approx(math.sqrt(8.0))
    assert "C0_corollary" in report.constants
    assert report.value("C0_envelope") <= report.value("C0") + 1e-15


def test_thm1_needs_constant_kernel(params):
    with pytest.raises(AuditNotApplicable):
        thm1_check(cone_state(3, 0.1), params, MetricKernel.cucker_smale(2.0), 0.5)


@pytest.mark.parametrize("delta0", [0.0, 1.0, -0.2])
def test_delta0_range(params, delta0):
    with pytest.raises(HypothesisViolation):
        thm1_c0(cone_state(3, 0.1), params, ConstantMatrixKernel.uniform(3), delta0)


def test_thm2_preset_constants(thm2_preset):
    scenario, params, _, state, _ = thm2_preset
    report = thm2_check(state, params, 1.0, 1.0, scenario.delta0)
    assert report.value("H1_threshold") == pytest.approx(math.sqrt(0.12))
    assert report.value("d_star") == pytest.approx(8.8)
    assert report.value("mu_star") == pytest.approx(0.0887, abs=2e-4)
    assert report.conditions == {"H1": True, "H2": True, "A0_above_delta0": True}


def test_thm2_cubic_matches_model_constants(thm2_preset):
    _, params, _, state, _ = thm2_preset
    problem = thm2_gron2_problem(state, params, 1.0, 1.0, 0.5)
    one, c2, c1, rhs = dset_coefficients(params, 1.0, 1.0, 0.5)
    for mu in (0.01, 0.05, 0.3):
        assert problem.cubic(mu) == pytest.approx(one * mu ** 3 + c2 * mu ** 2 + c1 * mu - rhs, rel=1e-12)


def test_thm2_preset_passes_with_trajectory(thm2_preset):
    scenario, params, _, state, trajectory = thm2_preset
    report = thm2_check(state, params, 1.0, 1.0, scenario.delta0, trajectory=trajectory)
    assert report.conclusions["envelope_dominates"]
    assert report.conclusions["decayed"]
    assert report.passed


def test_thm2_envelope(thm2_preset):
    scenario, params, kernel, state, _ = thm2_preset
    report = thm2_check(state, params, 1.0, 1.0, scenario.delta0)
    dv0 = report.value("Dv0")
    assert thm2_envelope(report, state, 0.0) == pytest.approx(dv0)
    later = thm2_envelope(report, state, np.array([10.0, 40.0]))
    assert later[1] < later[0]
    with pytest.raises(HypothesisViolation):
        thm2_envelope(thm1_check(state, params, kernel, 0.5), state, 1.0)


def test_thm2_fails_h1_for_small_gamma():
    params = ModelParams(chi=1.0, gamma=0.1, k=1.0)
    report = thm2_check(cone_state(4, 0.1, seed=2), params, 1.0, 1.0, 0.5)
    assert not report.conditions["H1"]
    assert report.value("mu_star") is None
    assert not report.passed


def test_thm2_rejects_bad_kernel_bounds(params):
    with pytest.raises(HypothesisViolation):
        thm2_check(cone_state(3, 0.1), params, 2.0, 1.0, 0.5)


def test_ha_preset_aligns():
    scenario, params, kernel, state = preset_setup("ha-pass")
    trajectory = simulate(params, kernel, state, build_integrator(scenario))
    report = ha_multiplicative_check(state, params, scenario.kernel["p"], trajectory=trajectory)
    assert report.value("threshold_ii") == pytest.approx(1.395)
    assert report.inputs["condition_ii"]
    assert report.conclusions["aligned"]
    assert report.passed


def test_ha_is_inconclusive_when_weighted_mean_vanishes():
    params = ModelParams(1.0, 1.0, 1.0)
    state0 = aligned_state(2)
    antipodal = SwarmState(t=1.0, x=[[0, 0, 0], [1, 0, 0]], v=[[1, 0, 0], [-1, 0, 0]], s=np.zeros((2, 3)))
    trajectory = Trajectory([state0, antipodal], params, MultiplicativeKernel([1.0, 1.0]),
                            IntegratorConfig(dt=1.0, t_end=1.0))
    report = ha_multiplicative_check(state0, params, [1.0, 1.0], trajectory=trajectory)
    assert report.inconclusive
    assert not report.passed


def test_ha_rejects_weight_count_mismatch(params):
    with pytest.raises(HypothesisViolation):
        ha_multiplicative_check(aligned_state(3), params, [1.0, 1.0])


def test_verify_invariance():
    antipodal = SwarmState(t=2.5, x=[[0, 0, 0], [1, 0, 0]], v=[[1, 0, 0], [-1, 0, 0]], s=np.zeros((2, 3)))
    assert verify_invariance([aligned_state(2)], 0.5).held
    result = verify_invariance([aligned_state(2), antipodal], 0.5)
    assert not result.held and result.first_violation == 2.5


def test_fit_decay_rate():
    t = np.linspace(0.0, 10.0, 101)
    assert fit_decay_rate(t, 3.0 * np.exp(-0.7 * t)) == pytest.approx(0.7)
    assert fit_decay_rate(t, 3.0 * np.exp(-0.7 * t), window=(5.0, 10.0)) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        fit_decay_rate(t, np.zeros_like(t))
    with pytest.raises(ValueError):
        fit_decay_rate(t, np.exp(-t), window=(20.0, 30.0))
