"""Vector field definitions, Jacobians, singularities, and JSON parsing."""

import math

import numpy as np
import pytest

import lpflow.field as vf
from lpflow.errors import ConfigurationError


def test_lorenz_field_at_reference_point():
    spec = vf.lorenz()
    out = vf.eval_field(spec, [1.0, 1.0, 1.0])
    assert np.allclose(out, [0.0, 26.0, -5.0 / 3.0])


def test_lorenz_jacobian_at_reference_point():
    spec = vf.lorenz()
    jac = vf.eval_jacobian(spec, [1.0, 1.0, 1.0])
    expected = np.array([[-10.0, 10.0, 0.0],
                         [27.0, -1.0, -1.0],
                         [1.0, 1.0, -8.0 / 3.0]])
    assert np.allclose(jac, expected)


def test_lorenz_singularities():
    spec = vf.lorenz()
    r = math.sqrt((8.0 / 3.0) * 27.0)
    sings = set(tuple(np.round(s, 10)) for s in spec.singularities)
    assert (0.0, 0.0, 0.0) in sings
    assert tuple(np.round((r, r, 27.0), 10)) in sings
    assert tuple(np.round((-r, -r, 27.0), 10)) in sings
    for s in spec.singularities:
        assert np.linalg.norm(vf.eval_field(spec, np.array(s))) < 1e-10


def test_hopf_cylinder_circle_is_invariant():
    spec = vf.hopf_cylinder()
    # on the unit circle the field is purely tangential with speed 1
    for th in np.linspace(0, 2 * np.pi, 7):
        x = np.array([np.cos(th), np.sin(th), 0.0])
        out = vf.eval_field(spec, x)
        assert abs(out @ x) < 1e-12           # no radial component
        assert abs(np.linalg.norm(out) - 1.0) < 1e-12


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(7)
    for spec in (vf.lorenz(), vf.hopf_cylinder(), vf.rossler()):
        for _ in range(5):
            x = rng.uniform(-2, 2, size=3)
            jac = vf.eval_jacobian(spec, x)
            h = 1e-6
            num = np.empty((3, 3))
            for j in range(3):
                e = np.zeros(3)
                e[j] = h
                num[:, j] = (vf.eval_field(spec, x + e)
                             - vf.eval_field(spec, x - e)) / (2 * h)
            assert np.allclose(jac, num, atol=1e-5)


def test_polynomial_field_and_linear():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    spec = vf.linear(A)
    x = np.array([0.3, -0.7])
    assert np.allclose(vf.eval_field(spec, x), A @ x)
    assert np.allclose(vf.eval_jacobian(spec, x), A)


def test_from_json_round_trip():
    spec = vf.from_json({"family": "lorenz", "params": {"rho": 20.0}})
    assert spec.param("rho") == 20.0
    assert spec.param("sigma") == 10.0
    poly = vf.from_json({"family": "polynomial", "dimension": 2,
                         "terms": [{"target": 0, "coeff": 2.0,
                                    "powers": [1, 0]}]})
    assert np.allclose(vf.eval_field(poly, [3.0, 0.0]), [6.0, 0.0])
    with pytest.raises(ConfigurationError):
        vf.from_json({"family": "unknown"})


def test_singularity_distance():
    spec = vf.lorenz()
    assert vf.singularity_distance(spec, [0.0, 0.0, 1.0]) == pytest.approx(1.0)
    empty = vf.polynomial(2, [(0, 1.0, (0, 0))])
    assert vf.singularity_distance(empty, [1.0, 1.0]) == math.inf


def test_field_bound_dominates_samples():
    spec = vf.lorenz()
    k0 = vf.field_bound(spec, n_points=2000)
    rng = np.random.default_rng(0)
    lo, hi = spec.default_box()
    for _ in range(50):
        x = lo + rng.random(3) * (hi - lo)
        assert np.linalg.norm(vf.eval_field(spec, x)) <= k0 * 1.05


def test_time_reverse_is_involution():
    spec = vf.lorenz()
    rev = vf.time_reverse(spec)
    x = np.array([1.0, 2.0, 3.0])
    assert np.allclose(vf.eval_field(rev, x), -vf.eval_field(spec, x))
    assert vf.time_reverse(rev) == spec
    assert rev.singularities == spec.singularities


def test_validation_errors():
    with pytest.raises(ConfigurationError):
        vf.VectorFieldSpec(dimension=1, family="polynomial")
    spec = vf.lorenz()
    with pytest.raises(ConfigurationError):
        vf.eval_field(spec, [1.0, 2.0])
    with pytest.raises(ConfigurationError):
        vf.eval_field(spec, [np.nan, 0.0, 0.0])
