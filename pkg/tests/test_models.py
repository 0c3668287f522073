import math

import numpy as np
import pytest

from adem.brownian import BrownianBatch
from adem.models import CATALOGUE, DriftDomainError, ModelError, langevin, make_model
from adem.schemes import UniformEM, integrate
from adem.stepcontrol import check_lower_bound, check_timestep_assumption, h_delta, sample_states

rng = np.random.default_rng(20240501)


def test_scalar_model_examples():
    gl = make_model("ginzburg_landau", eta=0.0, sigma=0.0, lam=1.0)
    assert gl.drift(np.array([[0.0]]))[0, 0] == 0.0
    assert gl.drift(np.array([[2.0]]))[0, 0] == -8.0
    sig = 0.7
    assert make_model("ginzburg_landau", sigma=sig).volatility(np.array([[1.0]]))[0, 0, 0] == sig
    v = make_model("verhulst", eta=1.0, sigma=0.0, lam=1.0)
    assert v.drift(np.array([[3.0]]))[0, 0] == -6.0
    assert v.drift(np.array([[0.0]]))[0, 0] == 0.0
    lam = 2.0
    v2 = make_model("verhulst", eta=1e-9, sigma=0.0, lam=lam)
    assert v2.drift(np.array([[-2.0]]))[0, 0] == pytest.approx(4 * lam, abs=1e-8)


def test_testcase_examples():
    assert make_model("testcase1").drift(np.array([[1.0]]))[0, 0] == -1.0
    assert make_model("testcase2").drift(np.array([[2.0]]))[0, 0] == -6.0
    tc3 = make_model("testcase3")
    np.testing.assert_array_equal(tc3.drift(np.zeros((1, 10))), np.zeros((1, 10)))
    np.testing.assert_array_equal(tc3.volatility(np.ones(10)), np.eye(10))
    assert (tc3.state_dim, tc3.noise_dim) == (10, 10)


def test_fene_examples_and_domain():
    f = make_model("fene")
    np.testing.assert_array_equal(f.drift(np.zeros((1, 3))), np.zeros((1, 3)))
    np.testing.assert_allclose(f.drift(np.array([[0.5, 0.0, 0.0]])), [[-2 / 3, 0.0, 0.0]], rtol=1e-15)
    assert h_delta(f.recommended_policy(0.1), np.zeros(3)) == pytest.approx(0.025, rel=1e-15)
    assert f.clamp_radius == 1 - 1e-10
    with pytest.raises(DriftDomainError):
        f.drift(np.array([[1.0, 0.0, 0.0]]))


def test_vdp_and_lorenz_examples():
    vdp = make_model("van_der_pol", beta=0.4)
    np.testing.assert_array_equal(vdp.drift(np.zeros(2)), np.zeros(2))
    for x in rng.normal(size=(5, 2)) * 10:
        np.testing.assert_array_equal(vdp.volatility(x), [[0.0], [0.4]])
    lz = make_model("lorenz")
    np.testing.assert_allclose(lz.drift(np.ones(3)), [0.0, 26.0, 1 - 8 / 3], rtol=1e-15)


def test_langevin_constructor():
    bm = langevin(lambda x: np.zeros_like(x), 2)
    np.testing.assert_array_equal(bm.drift(np.ones((3, 2))), np.zeros((3, 2)))
    ou = langevin(lambda x: x, 3)
    x = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(ou.drift(x), -x)
    dw = make_model("langevin", m=1)
    assert dw.drift(np.array([[1.0]]))[0, 0] == 0.0
    for m in (1, 4):
        mod = make_model("langevin", m=m)
        assert mod.state_dim == mod.noise_dim == m
        np.testing.assert_array_equal(mod.volatility(np.zeros(m)), np.eye(m))


# independently coded drifts, written from the model formulas
def _dup_testcase1(x):
    return np.array([-(v ** 5) for v in x])


def _dup_testcase2(x):
    return np.array([v - v * v * v for v in x])


def _dup_testcase3(x):
    r2 = sum(v * v for v in x)
    return np.array([v - r2 * v for v in x])


def _dup_fene(x):
    r2 = sum(v * v for v in x)
    return np.array([-v / (1 - r2) for v in x])


DUPLICATES = {"testcase1": (_dup_testcase1, 1, 3.0), "testcase2": (_dup_testcase2, 1, 3.0),
              "testcase3": (_dup_testcase3, 10, 1.5), "fene": (_dup_fene, 3, 0.99)}


@pytest.mark.parametrize("name", sorted(DUPLICATES))
def test_double_entry_drifts(name):
    dup, m, scale = DUPLICATES[name]
    model = make_model(name)
    x = rng.uniform(-1, 1, size=(100, m))
    if name == "fene":
        x *= scale / np.maximum(1.0, np.linalg.norm(x, axis=1, keepdims=True)) * rng.uniform(0, 1, (100, 1))
    else:
        x *= scale
    expected = np.array([dup(row) for row in x])
    np.testing.assert_allclose(model.drift(x), expected, rtol=1e-13, atol=1e-14)


@pytest.mark.parametrize("name", [n for n in CATALOGUE if n not in ("zero",)])
def test_analytic_jacobian_matches_finite_differences(name):
    model = make_model(name)
    if model.drift_jacobian is None:
        pytest.skip("no analytic Jacobian")
    m = model.state_dim
    local = np.random.default_rng(7)
    x = local.normal(size=(20, m)) * 1.5
    if model.domain_radius:
        x *= 0.9 * model.domain_radius * local.uniform(size=(20, 1)) / np.linalg.norm(x, axis=1, keepdims=True)
    J = model.drift_jacobian(x)
    eps = 1e-6
    for j in range(m):
        e = np.zeros(m)
        e[j] = eps
        fd = (model.drift(x + e) - model.drift(x - e)) / (2 * eps)
        np.testing.assert_allclose(J[:, :, j], fd, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("name", sorted(CATALOGUE))
def test_catalogue_passes_its_declared_conditions(name):
    model = make_model(name)
    radius = 1e3
    if model.clamp_radius is not None:
        radius = model.clamp_radius
    x = sample_states(model.state_dim, 10_000, radius, seed=3)
    pol = model.recommended_policy(1.0)
    ts = check_timestep_assumption(pol, model, model.growth, x)
    assert ts.passed, ts.worst()
    lb = check_lower_bound(pol, model.growth, x)
    assert lb.passed, lb.worst()


def test_shapes_and_construction_errors():
    with pytest.raises(ModelError):
        make_model("nonexistent")
    with pytest.raises(ModelError):
        make_model("gbm", rho=1.0)
    with pytest.raises(ModelError):
        make_model("ginzburg_landau", lam=-1.0)
    with pytest.raises(ModelError):
        make_model("testcase1", T=0.0)
    for name in CATALOGUE:
        model = make_model(name)
        g = model.volatility(np.zeros((4, model.state_dim)) + 0.1)
        assert g.shape == (4, model.state_dim, model.noise_dim)
        assert model.drift(np.zeros((4, model.state_dim)) + 0.1).shape == (4, model.state_dim)


def test_gbm_exact_solution():
    det = make_model("gbm", mu=0.3, sigma=0.0, x0=2.0)
    t = np.linspace(0, 1, 5)
    np.testing.assert_allclose(det.exact_solution(t, np.zeros((5, 1)))[:, 0], 2.0 * np.exp(0.3 * t), rtol=1e-15)
    g = make_model("gbm")
    assert g.exact_solution(np.array(0.0), np.zeros(1))[0] == 1.0


def test_gbm_fine_em_tracks_exact_solution():
    model = make_model("gbm", mu=0.0, sigma=1.0, x0=1.0)
    h = 2.0 ** -12
    res = integrate(model, UniformEM(h=h), BrownianBatch(1, 9, np.arange(200)), 200, exact=True)
    np.testing.assert_allclose(res.exact_T[:, 0], np.exp(res.W_T[:, 0] - 0.5), rtol=1e-12)
    err = np.sqrt(np.mean((res.x_T - res.exact_T) ** 2))
    assert err < 2 * math.sqrt(h)
