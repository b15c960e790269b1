"""Flow and tangent-flow integration contracts."""

import numpy as np
import pytest
from scipy.linalg import expm

import lpflow.field as vf
import lpflow.flow as fl
from lpflow.errors import ConfigurationError, EscapeError


def _linear_spec():
    A = np.array([[-1.0, 2.0], [0.0, -3.0]])
    return A, vf.linear(A)


def test_linear_flow_matches_matrix_exponential():
    A, spec = _linear_spec()
    x0 = np.array([1.0, 1.0])
    for t in (0.3, 1.0, 2.5):
        assert np.allclose(fl.flow_map(spec, x0, t), expm(A * t) @ x0,
                           atol=1e-8)


def test_tangent_flow_matches_matrix_exponential():
    A, spec = _linear_spec()
    x0 = np.array([0.5, -0.2])
    M = fl.tangent_flow(spec, x0, 1.2)
    assert np.allclose(M, expm(A * 1.2), atol=1e-8)


def test_flow_composition():
    spec = vf.lorenz()
    x0 = np.array([1.0, 1.0, 1.0])
    a = fl.flow_map(spec, fl.flow_map(spec, x0, 0.7), 0.3)
    b = fl.flow_map(spec, x0, 1.0)
    assert np.allclose(a, b, atol=1e-6)


def test_backward_time_inverts_forward():
    spec = vf.hopf_cylinder()
    x0 = np.array([0.7, 0.2, 0.1])
    y = fl.flow_map(spec, x0, 1.5)
    assert np.allclose(fl.flow_map(spec, y, -1.5), x0, atol=1e-7)
    # strongly contracting systems amplify backward error by e^{|gap| t};
    # only a short horizon is numerically invertible
    lor = vf.lorenz()
    x0 = np.array([2.0, 3.0, 15.0])
    y = fl.flow_map(lor, x0, 0.2)
    assert np.allclose(fl.flow_map(lor, y, -0.2), x0, atol=1e-5)


def test_tangent_equivariance_on_field_direction():
    # Phi_t X(x) = X(phi_t(x))
    spec = vf.lorenz()
    rng = np.random.default_rng(3)
    for _ in range(5):
        x0 = rng.uniform(-10, 10, 3) + np.array([0.0, 0.0, 25.0])
        xt, M = fl.flow_and_tangent(spec, x0, 0.8)
        lhs = M @ vf.eval_field(spec, x0)
        rhs = vf.eval_field(spec, xt)
        assert np.linalg.norm(lhs - rhs) <= 1e-6 * np.linalg.norm(rhs)


def test_trajectory_sampling_and_interpolation():
    spec = vf.hopf_cylinder()
    traj = fl.integrate_flow(spec, np.array([1.0, 0.0, 0.0]), [0.0, 2.0])
    assert traj.t0 == 0.0 and traj.t1 == pytest.approx(2.0)
    assert np.all(np.diff(traj.ts) > 0)
    # interpolation agrees with an independent integration to mid time
    mid = traj.interpolate(1.234)
    direct = fl.flow_map(spec, np.array([1.0, 0.0, 0.0]), 1.234)
    assert np.allclose(mid, direct, atol=1e-7)
    with pytest.raises(ConfigurationError):
        traj.interpolate(5.0)


def test_trajectory_slice_and_csv(tmp_path):
    spec = vf.hopf_cylinder()
    traj = fl.integrate_flow(spec, np.array([1.0, 0.0, 0.0]), [0.0, 1.0])
    part = traj.slice(0.25, 0.75)
    assert part.t0 >= 0.25 - 1e-12 and part.t1 <= 0.75 + 1e-12
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (len(traj), 5)
    assert np.allclose(data[:, 0], traj.ts)


def test_escape_raises():
    spec = vf.linear(np.array([[2.0, 0.0], [0.0, 2.0]]))
    cfg = fl.IntegratorConfig(box=([-5.0, -5.0], [5.0, 5.0]))
    with pytest.raises(EscapeError) as err:
        fl.integrate_flow(spec, np.array([1.0, 1.0]), [0.0, 5.0], cfg)
    assert err.value.last_state is not None


def test_rk4_agrees_with_rk45():
    spec = vf.lorenz()
    x0 = np.array([1.0, 1.0, 1.0])
    cfg = fl.IntegratorConfig(method="rk4", h=0.001)
    a = fl.flow_map(spec, x0, 1.0, cfg)
    b = fl.flow_map(spec, x0, 1.0)
    assert np.allclose(a, b, atol=1e-5)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        fl.IntegratorConfig(h=-0.1)
    with pytest.raises(ConfigurationError):
        fl.IntegratorConfig(method="euler")
    spec = vf.lorenz()
    with pytest.raises(ConfigurationError):
        fl.integrate_flow(spec, np.array([1.0, 1.0, 1.0]), [1.0, 0.0])
