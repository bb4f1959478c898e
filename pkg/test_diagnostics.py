import math

import numpy as np
import pytest

from conftest import aligned_state, single_spin_state
from inertial_spin.config import FD_FLOOR
from inertial_spin.diagnostics import (CSV_COLUMNS, DiagnosticsObserver, InequalityAudit, diagnostics_frame, diameters,
                                       dissipation_audit, dv_dot, energy_functionals, extremal_pair, fd_budget,
                                       geometric_factor, inequality_audit, s_integral_audit)
from inertial_spin.errors import AuditNotApplicable, UndefinedFactorError
from inertial_spin.integrator import IntegratorConfig, Trajectory, simulate
from inertial_spin.kernels import ConstantMatrixKernel, MetricKernel, MultiplicativeKernel
from inertial_spin.model import ModelParams, SwarmState, cone_state


def antipodal_pair():
    return SwarmState(t=0.0, x=[[0, 0, 0], [1, 0, 0]], v=[[1, 0, 0], [-1, 0, 0]], s=np.zeros((2, 3)))


@pytest.fixture(scope="module")
def uniform_run():
    params = ModelParams(chi=1.0, gamma=0.8, k=1.2)
    kernel = ConstantMatrixKernel.uniform(8)
    state = cone_state(8, 0.6, spin_scale=0.2, seed=42)
    return simulate(params, kernel, state, IntegratorConfig(dt=0.01, t_end=6.0, sample_every=2))


def test_extremal_pair_breaks_ties_lexicographically():
    corners = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    value, i, j = extremal_pair(corners)
    assert value == pytest.approx(math.sqrt(2))
    assert (i, j) == (0, 3)


def test_diameters_of_aligned_flock_and_single_particle():
    assert diameters(aligned_state())[1:] == (0.0, 0.0)
    assert diameters(single_spin_state()) == (0.0, 0.0, 0.0)


def test_antipodal_pair_observables():
    state = antipodal_pair()
    assert diameters(state)[:2] == (1.0, 2.0)
    assert geometric_factor(state) == -1.0
    energy, spin, lyap = energy_functionals(state, ConstantMatrixKernel.uniform(2), ModelParams(1.0, 1.0, 1.0))
    assert energy == pytest.approx(2.0)
    assert spin == 0.0
    assert lyap == pytest.approx(1.0)


def test_geometric_factor_needs_two_particles():
    with pytest.raises(UndefinedFactorError):
        geometric_factor(single_spin_state())


def test_dv_dot_is_zero_when_aligned():
    assert dv_dot(aligned_state(), ModelParams(1.0, 1.0, 1.0)) == 0.0


def test_dv_dot_matches_finite_difference(uniform_run):
    params = uniform_run.params
    dv = np.array([diameters(s)[1] for s in uniform_run.states])
    h = uniform_run.spacing
    centered = (dv[6] - dv[4]) / (2 * h)
    assert dv_dot(uniform_run.states[5], params) == pytest.approx(centered, abs=1e-4)


def test_diagnostics_frame_columns(uniform_run):
    frame = diagnostics_frame(uniform_run)
    assert tuple(frame.columns) == CSV_COLUMNS
    assert len(frame) == len(uniform_run)
    assert frame["speed_drift"].max() <= 1e-6
    assert frame["sv_drift"].iloc[0] == 0.0


def test_observer_collects_one_record_per_sample(params):
    observer = DiagnosticsObserver(ConstantMatrixKernel.uniform(4), params)
    traj = simulate(params, ConstantMatrixKernel.uniform(4), aligned_state(),
                    IntegratorConfig(dt=0.1, t_end=1.0, sample_every=2), observers=[observer])
    frame = observer.frame()
    assert len(frame) == len(traj)
    assert (frame["Dv"] == 0.0).all()


def test_fd_budget():
    assert fd_budget(np.zeros(3), np.full(3, 1e-9)) == FD_FLOOR
    assert fd_budget(np.zeros(3), np.full(3, 3e-3)) == pytest.approx(4e-3)
    assert fd_budget(np.array([]), np.array([])) == FD_FLOOR


def test_dissipation_identity_holds(uniform_run):
    audit = dissipation_audit(uniform_run, uniform_run.kernel, uniform_run.params)
    assert audit.passed, audit.to_dict()


def test_dissipation_audit_detects_wrong_rate(uniform_run):
    wrong = ModelParams(chi=1.0, gamma=1.6, k=1.2)
    assert not dissipation_audit(uniform_run, uniform_run.kernel, wrong).passed


def test_dissipation_identity_with_multiplicative_weights():
    params = ModelParams(chi=0.7, gamma=1.0, k=1.0)
    kernel = MultiplicativeKernel([0.8, 1.0, 1.2, 0.9, 1.1])
    traj = simulate(params, kernel, cone_state(5, 0.7, spin_scale=0.3, seed=2),
                    IntegratorConfig(dt=0.01, t_end=4.0, sample_every=2))
    assert dissipation_audit(traj, kernel, params).passed


def test_audits_reject_metric_kernel(params):
    kernel = MetricKernel.cucker_smale(2.0)
    traj = simulate(params, kernel, cone_state(4, 0.5, seed=1), IntegratorConfig(dt=0.05, t_end=1.0))
    with pytest.raises(AuditNotApplicable):
        dissipation_audit(traj, kernel, params)
    with pytest.raises(AuditNotApplicable):
        s_integral_audit(traj, params)


def test_audits_need_five_samples(uniform_kernel, params, random_state):
    traj = simulate(params, uniform_kernel, random_state, IntegratorConfig(dt=0.1, t_end=0.3))
    with pytest.raises(AuditNotApplicable):
        dissipation_audit(traj, uniform_kernel, params)
    with pytest.raises(AuditNotApplicable):
        inequality_audit(traj, params)


def test_spin_integral_stays_below_bound(uniform_run):
    audit = s_integral_audit(uniform_run, uniform_run.params)
    assert audit.passed
    assert audit.details["integral"] <= audit.details["bound"]


def test_spin_integral_fails_with_understated_energy(uniform_run):
    assert not s_integral_audit(uniform_run, uniform_run.params, E0=0.0, S0=0.0).passed


def test_inequality_audit_with_uniform_weights(uniform_run):
    audit = inequality_audit(uniform_run, uniform_run.params, delta0=0.1)
    assert audit.rhs_convolution is not None
    assert audit.skipped == []
    assert audit.passed, audit.to_dict()
    # A(v) stays above delta0, so the delta0 form is the weaker one
    assert audit.margin_delta0 >= min(audit.margin_pointwise, audit.margin_convolution) - 1e-12
    assert audit.to_dict()["margin_delta0"] == audit.margin_delta0


def test_inequality_audit_without_delta0(uniform_run):
    audit = inequality_audit(uniform_run, uniform_run.params)
    assert audit.lhs_delta0 is None
    assert audit.margin_delta0 is None
    assert audit.to_dict()["margin_delta0"] is None


def test_delta0_form_can_decide_the_audit():
    common = dict(times=np.array([0.0, 1.0]), lhs=np.zeros(2), rhs_pointwise=np.ones(2), budget=1e-6)
    assert InequalityAudit(lhs_delta0=None, rhs_convolution=None, **common).passed
    assert InequalityAudit(lhs_delta0=np.array([0.5, 0.9]), rhs_convolution=None, **common).passed
    failing = InequalityAudit(lhs_delta0=np.array([0.5, 2.0]), rhs_convolution=None, **common)
    assert failing.margin_pointwise == 1.0
    assert failing.margin_delta0 == pytest.approx(-1.0)
    assert not failing.passed
    with_memory = InequalityAudit(lhs_delta0=np.array([0.5, 0.5]), rhs_convolution=np.array([2.0, 0.2]), **common)
    assert with_memory.margin_convolution == pytest.approx(0.2)
    assert with_memory.margin_delta0 == pytest.approx(-0.3)
    assert not with_memory.passed


def test_convolution_constant_scales_with_the_weight_bound():
    params = ModelParams(chi=1.0, gamma=0.8, k=1.2)
    heavy = simulate(params, ConstantMatrixKernel.uniform(6, value=3.0), cone_state(6, 0.4, spin_scale=0.2, seed=5),
                     IntegratorConfig(dt=0.01, t_end=2.0, sample_every=2))
    unit = Trajectory(heavy.states, params, ConstantMatrixKernel.uniform(6, value=1.0), heavy.config)
    audit_heavy = inequality_audit(heavy, params)
    audit_unit = inequality_audit(unit, params)
    s0 = heavy.states[0].s
    c2 = (4.0 / params.chi ** 2) * (extremal_pair(s0)[0] ** 2 + 2.0 * float(np.max(np.sum(s0 ** 2, axis=1))))
    initial_term = c2 * np.exp(-(params.gamma / params.chi) * audit_heavy.times)
    memory_heavy = audit_heavy.rhs_convolution - initial_term
    memory_unit = audit_unit.rhs_convolution - initial_term
    assert np.all(memory_unit > 0.0)
    # the memory constant is linear in psi_M: 4 k^2 psi_M / (gamma chi) (1 + D(v)^2)
    np.testing.assert_allclose(memory_heavy, 3.0 * memory_unit, rtol=1e-10)


def test_inequality_audit_skips_convolution_for_metric_kernel():
    params = ModelParams(chi=1.0, gamma=1.0, k=1.0)
    kernel = MetricKernel.cucker_smale(2.0)
    traj = simulate(params, kernel, cone_state(6, 0.5, spin_scale=0.2, seed=7),
                    IntegratorConfig(dt=0.01, t_end=3.0, sample_every=2))
    audit = inequality_audit(traj, params)
    assert audit.rhs_convolution is None
    assert audit.margin_convolution is None
    assert "not applicable" in audit.convolution_note
    assert audit.passed
