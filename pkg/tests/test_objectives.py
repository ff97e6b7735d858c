"""Tests for the measurement models and composite objective wrappers.

Costs and gradients are checked against slow scalar-loop re-implementations
and central finite differences.
"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from proxicbo import prox as P
from proxicbo.errors import InvalidParameterError
from proxicbo.objectives import (CompositeObjective, LidarModel, OneBitModel,
                                 lidar_objective, onebit_objective,
                                 quadratic_objective)


# -- one-bit ---------------------------------------------------------------

def _onebit_cost_loop(model, x):
    total = 0.0
    for i in range(model.y.size):
        s = math.sin(model.omega * (float(model.A[i] @ x) + model.u[i]))
        total += 0.5 * (model.y[i] - s) ** 2
    return total


def _random_onebit(rng, m=40, d=6, omega=8.0):
    A = rng.normal(scale=1.0 / math.sqrt(d), size=(m, d))
    x0 = rng.normal(size=d)
    delta = 2.0 * math.pi / omega
    u = rng.uniform(-delta / 2, delta / 2, size=m)
    y = np.sign(np.sin(omega * (A @ x0 + u)))
    y[y == 0] = 1.0
    return OneBitModel(A, y, u, omega), x0


def test_onebit_cost_matches_scalar_loop():
    rng = np.random.default_rng(101)
    model, _ = _random_onebit(rng)
    for _ in range(10):
        x = rng.normal(size=model.dim)
        assert_allclose(model.cost(x), _onebit_cost_loop(model, x), rtol=1e-12)


def test_onebit_grad_matches_finite_differences():
    rng = np.random.default_rng(103)
    model, _ = _random_onebit(rng)
    h = 1e-6
    for _ in range(10):
        x = rng.normal(size=model.dim)
        g = model.cost_grad(x)
        fd = np.empty(model.dim)
        for j in range(model.dim):
            e = np.zeros(model.dim)
            e[j] = h
            fd[j] = (model.cost(x + e) - model.cost(x - e)) / (2 * h)
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(g))


def test_onebit_cost_periodicity():
    """With A = I the cost is periodic in each coordinate with period 2pi/omega."""
    rng = np.random.default_rng(107)
    omega = 9.0
    d = 5
    A = np.eye(d)
    u = rng.uniform(-math.pi / omega, math.pi / omega, size=d)
    y = np.sign(np.sin(omega * (rng.normal(size=d) + u)))
    y[y == 0] = 1.0
    model = OneBitModel(A, y, u, omega)
    x = rng.normal(size=d)
    period = 2.0 * math.pi / omega
    for j in range(d):
        shift = np.zeros(d)
        shift[j] = period
        assert_allclose(model.cost(x + shift), model.cost(x), rtol=1e-10)


def test_onebit_batch_matches_singles():
    rng = np.random.default_rng(109)
    model, _ = _random_onebit(rng)
    xs = rng.normal(size=(6, model.dim))
    costs = model.cost(xs)
    grads = model.cost_grad(xs)
    assert costs.shape == (6,)
    assert grads.shape == xs.shape
    for i in range(6):
        assert_allclose(costs[i], model.cost(xs[i]))
        assert_allclose(grads[i], model.cost_grad(xs[i]))


def test_onebit_zero_residual_at_consistent_point():
    """If sin(omega*(Ax+u)) happens to equal y exactly, the cost vanishes."""
    omega = 4.0
    A = np.eye(2)
    x = np.array([math.pi / (2 * omega), -math.pi / (2 * omega)])
    u = np.zeros(2)
    y = np.array([1.0, -1.0])
    model = OneBitModel(A, y, u, omega)
    assert model.cost(x) < 1e-28
    assert np.linalg.norm(model.cost_grad(x)) < 1e-13


def test_onebit_objective_wraps_model():
    rng = np.random.default_rng(113)
    model, _ = _random_onebit(rng)
    obj = onebit_objective(model, P.L1(0.3))
    x = rng.normal(size=model.dim)
    assert_allclose(obj.value(x), model.cost(x) + 0.3 * np.abs(x).sum())


# -- lidar -----------------------------------------------------------------

def _lidar_intensity_loop(model, theta, t):
    """Full (untruncated) intensity at a single time, scalar math."""
    s, b = theta[0], theta[1]
    sig = model.pulse_sigma
    total = 0.0
    for tk in model.pulse_times:
        if model.doppler:
            v = theta[3] * 1e-9
            center = (model.c * theta[2] + (model.c + v) * tk) / (model.c - v)
        else:
            center = theta[2] + tk
        z = (t - center) / sig
        total += math.exp(-0.5 * z * z) / (sig * math.sqrt(2 * math.pi))
    return s * total + b


def _lidar_nll_loop(model, theta):
    out = theta[0] * model.n_pulses + theta[1] * model.t_a
    for t in model.detections:
        out -= math.log(_lidar_intensity_loop(model, theta, t))
    return out


def _small_lidar(doppler=False):
    pulses = np.arange(20) * 50.0
    detections = np.array([3.65, 3.9, 12.0, 53.55, 53.8, 420.0, 703.72, 953.6])
    return LidarModel(pulses, detections, t_a=1000.0, pulse_sigma=0.1,
                      doppler=doppler)


def test_lidar_nll_matches_scalar_loop():
    model = _small_lidar()
    rng = np.random.default_rng(211)
    for _ in range(10):
        theta = np.array([rng.uniform(0.05, 2.0), rng.uniform(1e-3, 0.1),
                          rng.uniform(3.0, 4.5)])
        assert_allclose(model.nll(theta), _lidar_nll_loop(model, theta),
                        rtol=1e-10)


def test_lidar_doppler_nll_matches_scalar_loop():
    model = _small_lidar(doppler=True)
    rng = np.random.default_rng(223)
    for _ in range(10):
        theta = np.array([rng.uniform(0.05, 2.0), rng.uniform(1e-3, 0.1),
                          rng.uniform(3.0, 4.5), rng.uniform(-40.0, 40.0)])
        assert_allclose(model.nll(theta), _lidar_nll_loop(model, theta),
                        rtol=1e-10)


def _fd_grad(fun, theta, steps):
    fd = np.empty(theta.size)
    for j in range(theta.size):
        e = np.zeros(theta.size)
        e[j] = steps[j]
        fd[j] = (fun(theta + e) - fun(theta - e)) / (2 * steps[j])
    return fd


def test_lidar_grad_matches_finite_differences():
    model = _small_lidar()
    rng = np.random.default_rng(227)
    steps = np.array([1e-6, 1e-7, 1e-6])
    for _ in range(10):
        theta = np.array([rng.uniform(0.1, 2.0), rng.uniform(5e-3, 0.1),
                          rng.uniform(3.0, 4.5)])
        g = model.nll_grad(theta)
        fd = _fd_grad(model.nll, theta, steps)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))


def test_lidar_doppler_grad_matches_finite_differences():
    model = _small_lidar(doppler=True)
    rng = np.random.default_rng(229)
    steps = np.array([1e-6, 1e-7, 1e-7, 1e-2])
    for _ in range(10):
        theta = np.array([rng.uniform(0.1, 2.0), rng.uniform(5e-3, 0.1),
                          rng.uniform(3.0, 4.5), rng.uniform(-40.0, 40.0)])
        g = model.nll_grad(theta)
        fd = _fd_grad(model.nll, theta, steps)
        assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))


def test_lidar_doppler_at_zero_velocity_reduces_to_static():
    static = _small_lidar()
    moving = _small_lidar(doppler=True)
    theta3 = np.array([0.4, 0.02, 3.8])
    theta4 = np.append(theta3, 0.0)
    assert_allclose(moving.nll(theta4), static.nll(theta3), rtol=1e-12)
    g4 = moving.nll_grad(theta4)
    g3 = static.nll_grad(theta3)
    assert_allclose(g4[:3], g3, rtol=1e-9)


def test_lidar_batch_matches_singles():
    model = _small_lidar()
    rng = np.random.default_rng(233)
    thetas = np.column_stack([
        rng.uniform(0.1, 2.0, size=5),
        rng.uniform(5e-3, 0.1, size=5),
        rng.uniform(3.0, 4.5, size=5),
    ])
    nlls = model.nll(thetas)
    grads = model.nll_grad(thetas)
    for i in range(5):
        assert_allclose(nlls[i], model.nll(thetas[i]))
        assert_allclose(grads[i], model.nll_grad(thetas[i]))


def test_lidar_invalid_rows_get_infinite_nll():
    model = _small_lidar()
    bad = np.array([[0.0, 0.0, 3.7],      # zero intensity everywhere
                    [0.5, 0.01, 3.7]])
    out = model.nll(bad)
    assert out[0] == np.inf and np.isfinite(out[1])
    with pytest.raises(InvalidParameterError):
        model.nll_grad(np.array([0.0, 0.0, 3.7]))


def test_lidar_superluminal_velocity_is_infeasible():
    model = _small_lidar(doppler=True)
    theta = np.array([0.5, 0.01, 3.7, 3.1e8])
    assert model.nll(theta) == np.inf


def test_lidar_intensity_helper():
    model = _small_lidar()
    theta = np.array([0.4, 0.02, 3.8])
    times = np.array([3.8, 53.9, 500.0])
    lam = model.intensity(theta, times)
    want = [_lidar_intensity_loop(model, theta, t) for t in times]
    assert_allclose(lam, want, rtol=1e-12)
    # detections are untouched by the helper
    assert model.n_detections == 8


def test_lidar_objective_scaling_round_trip():
    model = _small_lidar()
    scales = np.array([1.0, 1e-2, 1.0])
    obj = lidar_objective(model, lower=[1e-8, 1e-8, 0.0],
                          upper=[10.0, 10.0, np.inf], scales=scales)
    theta = np.array([0.4, 0.02, 3.8])
    z = obj.from_external(theta)
    assert_allclose(obj.to_external(z), theta)
    assert_allclose(obj.f(z), model.nll(theta))
    # chain rule: dE/dz = scales * dE/dtheta
    assert_allclose(obj.grad_f(z), model.nll_grad(theta) * scales, rtol=1e-12)
    # the scaled box still admits the scaled point
    assert obj.g_value(z) == 0.0
    assert obj.g_value(obj.from_external(np.array([-1.0, 0.02, 3.8]))) == np.inf


def test_quadratic_objective():
    obj = quadratic_objective(np.array([1.0, -2.0]), weight=0.5)
    x = np.array([2.0, 0.0])
    assert_allclose(obj.value(x), 0.5 * (1 + 4))
    assert_allclose(obj.grad_f(x), [1.0, 2.0])
    batch = np.array([[2.0, 0.0], [1.0, -2.0]])
    assert_allclose(obj.f(batch), [2.5, 0.0])


def test_composite_objective_validates_scales():
    with pytest.raises(InvalidParameterError):
        CompositeObjective(2, lambda x: 0.0, lambda x: x, P.Zero(),
                           scales=np.array([1.0, -1.0]))
