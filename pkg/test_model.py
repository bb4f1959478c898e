import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import aligned_state, single_spin_state
from inertial_spin.errors import KernelContractError, NumericInputError
from inertial_spin.integrator import IntegratorConfig, simulate
from inertial_spin.kernels import (ConstantMatrixKernel, MetricKernel, MultiplicativeKernel, TimeVaryingKernel,
                                   kernel_from_spec)
from inertial_spin.model import (ModelParams, SwarmState, cone_state, eval_accel_second_order, eval_rhs,
                                 kernel_weight, project_orthogonal, rotate_state, spin_rate_literal,
                                 validate_initial)


def random_orthogonal(seed):
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    return q * np.sign(np.diag(r))


@pytest.mark.parametrize("field", ["chi", "gamma", "k"])
@pytest.mark.parametrize("bad", [0.0, -1.0, math.nan, math.inf])
def test_params_reject_nonpositive_and_nonfinite(field, bad):
    values = {"chi": 1.0, "gamma": 1.0, "k": 1.0, field: bad}
    with pytest.raises(ValueError):
        ModelParams(**values)


def test_kbar_is_k_over_gamma():
    assert ModelParams(chi=0.5, gamma=4.0, k=2.0).kbar == 0.5


def test_state_shapes_are_checked():
    with pytest.raises(ValueError):
        SwarmState(t=0.0, x=[[0, 0, 0]], v=[[1, 0, 0], [1, 0, 0]], s=[[0, 0, 0]])
    with pytest.raises(ValueError):
        SwarmState(t=0.0, x=[[0, 0]], v=[[1, 0]], s=[[0, 0]])


def test_state_arrays_are_read_only():
    state = single_spin_state()
    with pytest.raises(ValueError):
        state.v[0, 0] = 2.0


def test_constant_kernel_weight_is_one():
    state = cone_state(3, 0.2, seed=1)
    kernel = ConstantMatrixKernel.uniform(3, 1.0)
    assert kernel_weight(kernel, 0, 2, state) == 1.0


def test_metric_kernel_at_unit_distance():
    state = SwarmState(t=0.0, x=[[0, 0, 0], [1, 0, 0]], v=[[1, 0, 0], [1, 0, 0]], s=np.zeros((2, 3)))
    assert kernel_weight(MetricKernel.cucker_smale(2.0), 0, 1, state) == pytest.approx(0.5, abs=1e-15)


def test_multiplicative_kernel_weight():
    state = SwarmState(t=0.0, x=np.zeros((2, 3)), v=[[1, 0, 0], [0, 1, 0]], s=np.zeros((2, 3)))
    assert kernel_weight(MultiplicativeKernel([2.0, 3.0]), 0, 1, state) == 6.0


def test_kernel_weight_index_out_of_range():
    state = single_spin_state()
    with pytest.raises(IndexError):
        kernel_weight(ConstantMatrixKernel.uniform(1), 0, 1, state)


def test_kernel_contracts():
    with pytest.raises(KernelContractError):
        ConstantMatrixKernel([[1.0, 2.0], [1.0, 1.0]])
    with pytest.raises(KernelContractError):
        ConstantMatrixKernel([[1.0, -1.0], [-1.0, 1.0]])
    with pytest.raises(KernelContractError):
        MultiplicativeKernel([1.0, 0.0])
    with pytest.raises(KernelContractError):
        MetricKernel.tabulated([0.0, 1.0, 2.0], [1.0, 0.5, 0.7])
    with pytest.raises(KernelContractError):
        TimeVaryingKernel(lambda t, i, j: 1.0, 0.0, 1.0)
    with pytest.raises(KernelContractError):
        kernel_from_spec({"type": "constant", "matrix": [[1.0]]}, 2)


def test_time_varying_sampler_outside_bounds_is_rejected():
    kernel = TimeVaryingKernel(lambda t, i, j: 3.0, 0.5, 2.0)
    with pytest.raises(KernelContractError):
        kernel.matrix(0.0, np.zeros((2, 3)))


def test_tabulated_kernel_interpolates():
    kernel = MetricKernel.tabulated([0.0, 1.0, 2.0], [1.0, 0.5, 0.25])
    assert kernel(0.5) == pytest.approx(0.75)
    assert kernel.primitive(2.0) == pytest.approx(1.125, rel=1e-10)
    assert kernel.tail(1.0) == math.inf


def test_cucker_smale_closed_forms():
    kernel = MetricKernel.cucker_smale(2.0)
    assert kernel.primitive(1.0) == pytest.approx(math.pi / 4)
    assert kernel.tail(1.0) == pytest.approx(math.pi / 4)
    numeric = MetricKernel.cucker_smale(3.0)
    assert numeric.tail(0.0) == pytest.approx(1.0, rel=1e-8)


@given(st.integers(min_value=2, max_value=6), st.floats(min_value=0.1, max_value=3.0), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_kernel_matrices_are_symmetric(n, omega, seed):
    x = np.random.default_rng(seed).uniform(0.0, 3.0, (n, 3))
    rng = np.random.default_rng(seed + 1)
    kernels = [
        MetricKernel.cucker_smale(1.5),
        MultiplicativeKernel(rng.uniform(0.5, 2.0, n)),
        TimeVaryingKernel.oscillating(0.5, 2.0, omega),
    ]
    for kernel in kernels:
        w = kernel.matrix(0.37 * seed, x)
        assert np.array_equal(w, w.T)
        assert np.all(w >= 0) and np.all(w <= kernel.psi_M + 1e-15)


def test_aligned_flock_is_a_fixed_point():
    state = aligned_state()
    rhs = eval_rhs(ModelParams(1.0, 1.0, 1.0), ConstantMatrixKernel.uniform(4), state)
    assert np.array_equal(rhs.dx, state.v)
    assert np.all(rhs.dv == 0) and np.all(rhs.ds == 0)


def test_single_particle_rhs_by_hand():
    sigma, chi, gamma = 0.7, 2.0, 3.0
    state = single_spin_state((0.0, 0.0, sigma))
    rhs = eval_rhs(ModelParams(chi, gamma, 1.0), ConstantMatrixKernel.uniform(1), state)
    np.testing.assert_allclose(rhs.dv[0], [0.0, sigma / chi, 0.0], atol=1e-15)
    np.testing.assert_allclose(rhs.ds[0], [0.0, 0.0, -gamma * sigma / chi], atol=1e-15)


def test_spin_rate_forms_agree(random_state, uniform_kernel):
    params = ModelParams(chi=0.7, gamma=1.3, k=2.1)
    expanded = eval_rhs(params, uniform_kernel, random_state).ds
    literal = spin_rate_literal(params, uniform_kernel, random_state)
    np.testing.assert_allclose(expanded, literal, atol=1e-12)


def test_spin_torque_is_orthogonal_to_velocity(random_state, uniform_kernel, params):
    rhs = eval_rhs(params, uniform_kernel, random_state)
    assert np.max(np.abs(np.sum(rhs.dv * random_state.v, axis=1))) <= 1e-14


def test_second_order_form_vanishes_on_aligned_flock():
    state = aligned_state(2)
    acc = eval_accel_second_order(ModelParams(1.0, 1.0, 1.0), ConstantMatrixKernel.uniform(2), state)
    assert np.all(acc == 0)


def test_second_order_form_matches_finite_difference(uniform_kernel):
    params = ModelParams(chi=1.0, gamma=0.5, k=1.0)
    state = cone_state(8, 0.6, spin_scale=0.2, seed=3)
    h = 1e-3
    traj = simulate(params, uniform_kernel, state, IntegratorConfig(dt=h / 4, t_end=2 * h, sample_every=4))
    dvs = [eval_rhs(params, uniform_kernel, s).dv for s in traj.states]
    centered = (dvs[2] - dvs[0]) / (2 * h)
    acc = eval_accel_second_order(params, uniform_kernel, traj.states[1])
    np.testing.assert_allclose(acc, centered, atol=1e-5)


def test_project_orthogonal_examples():
    e1, e2 = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    np.testing.assert_array_equal(project_orthogonal(e1, e1), [0, 0, 0])
    np.testing.assert_array_equal(project_orthogonal(e1, e2), [0, 1.0, 0])
    vj = np.array([math.sqrt(2) / 2, math.sqrt(2) / 2, 0.0])
    g = project_orthogonal(e1, vj)
    assert abs(g @ e1) <= 1e-16
    assert g @ g == pytest.approx(1.0 - (e1 @ vj) ** 2, abs=1e-15)


def test_project_orthogonal_rejects_nonfinite():
    with pytest.raises(NumericInputError):
        project_orthogonal([math.nan, 0, 0], [1.0, 0, 0])


def test_eval_rhs_rejects_nonfinite(params):
    state = SwarmState(t=0.0, x=[[math.inf, 0, 0]], v=[[1, 0, 0]], s=[[0, 0, 0]])
    with pytest.raises(NumericInputError):
        eval_rhs(params, ConstantMatrixKernel.uniform(1), state)


def test_validate_initial_reports():
    assert validate_initial(single_spin_state()).passed
    speed = validate_initial(SwarmState(t=0.0, x=[[0, 0, 0]], v=[[2, 0, 0]], s=[[0, 0, 0]]))
    assert speed.speed_violations == [0] and speed.speed_error[0] == pytest.approx(1.0)
    orth = validate_initial(SwarmState(t=0.0, x=[[0, 0, 0]], v=[[1, 0, 0]], s=[[1, 0, 0]]))
    assert orth.orth_violations == [0] and orth.orth_error[0] == pytest.approx(1.0)


def test_cone_state_is_admissible():
    state = cone_state(16, 1.2, spin_scale=0.5, seed=9)
    assert validate_initial(state).passed
    assert np.all(state.v @ np.array([1.0, 0.0, 0.0]) >= math.cos(1.2) - 1e-12)


@given(st.integers(0, 10_000), st.booleans())
@settings(max_examples=40, deadline=None)
def test_rhs_is_rotation_equivariant(seed, reflect):
    o = random_orthogonal(seed)
    if reflect:
        o = o @ np.diag([1.0, 1.0, -1.0])
    state = cone_state(5, 1.0, spin_scale=0.3, seed=seed)
    params = ModelParams(chi=0.8, gamma=1.1, k=1.7)
    kernel = MetricKernel.cucker_smale(2.0)
    det = np.sign(np.linalg.det(o))
    rotated = eval_rhs(params, kernel, rotate_state(state, o))
    base = eval_rhs(params, kernel, state)
    np.testing.assert_allclose(rotated.dv, base.dv @ o.T, atol=1e-12)
    np.testing.assert_allclose(rotated.ds, det * (base.ds @ o.T), atol=1e-12)
