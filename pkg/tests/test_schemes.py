import numpy as np
import pytest

from conftest import GENSABR, HESTON, SABR, GeometricBrownian, multi_params
from nvsplit.drift import DriftShift
from nvsplit.flows import Diagnostics
from nvsplit.models import GenSabrModel, HestonModel, MultiSabrModel
from nvsplit.params import HestonParams
from nvsplit.qmc import TrajectoryDraw
from nvsplit.schemes import (euler_step, girsanov_step, girsanov_weight, nv_step, nvd_step, simulate_trajectory)

CATALOG = [HestonModel(HESTON, log=True), HestonModel(HESTON, log=False), GenSabrModel(SABR, name="sabr"),
           GenSabrModel(GENSABR), MultiSabrModel(multi_params())]


def start(model, m=3):
    x = np.empty((model.n_state, m))
    if model.name == "heston":
        x[0], x[1] = 0.1, 0.09
    else:
        x[0::2], x[1::2] = 1.0, 0.3
    return x


@pytest.mark.parametrize("model", CATALOG, ids=lambda m: m.name)
def test_euler_without_noise_is_drift_only(model):
    x = start(model)
    np.testing.assert_allclose(euler_step(model, x, 0.1, np.zeros((model.n_noise, 3))),
                               x + 0.1 * model.ito_drift(x), rtol=1e-15)


def test_euler_sabr_without_noise_stays_put():
    x = np.array([[1.0], [0.3]])
    np.testing.assert_array_equal(euler_step(GenSabrModel(SABR, name="sabr"), x, 0.25, np.zeros((2, 1))), x)


def test_euler_heston_hand_step():
    m = HestonModel(HestonParams(mu=0.0, kappa=2.0, theta=0.3, xi=0.5, rho=0.0), log=True)
    got = euler_step(m, np.array([[0.0], [0.04]]), 0.25, np.array([[1.0], [0.0]]))
    np.testing.assert_allclose(got[:, 0], [-0.02 * 0.25 + 0.5 * 0.2, 0.04 + 0.25 * 0.52], rtol=1e-14)


def test_euler_evaluates_fields_at_truncated_state():
    m = HestonModel(HESTON, log=False)
    x = np.array([[1.0], [-0.01]])
    got = euler_step(m, x, 0.1, np.array([[0.5], [0.5]]))
    np.testing.assert_allclose(got, x + 0.1 * m.ito_drift(m.truncate(x)), rtol=1e-15)


@pytest.mark.parametrize("model", CATALOG[:4], ids=lambda m: m.name)
def test_nv_without_noise_is_full_drift_flow(model):
    x = start(model)
    zero = np.zeros((model.n_noise, 3))
    got = nv_step(model, x, 0.2, zero, np.array([1, -1, 1]))
    # numerically solved drifts only compose up to the solver tolerance
    tol = 1e-12 if 0 in model.closed_flows else 1e-8
    np.testing.assert_allclose(got, model.flow(0, 0.2, x), rtol=tol)


@pytest.mark.parametrize("lam", [-1, 1])
def test_single_noise_order_coin_has_no_effect(lam):
    m = GeometricBrownian()
    x = np.array([[1.0, 2.0]])
    z = np.array([[0.3, -1.1]])
    ref = nv_step(m, x, 0.1, z, np.array([1, 1]))
    np.testing.assert_array_equal(nv_step(m, x, 0.1, z, np.array([lam, lam])), ref)
    # the composition is exact for commuting linear fields
    np.testing.assert_allclose(ref, x * np.exp((m.mu - 0.5 * m.sigma**2) * 0.1 + m.sigma * np.sqrt(0.1) * z))


def test_heston_step_matches_hand_composition():
    m = HestonModel(HESTON, log=True)
    x = np.array([[0.1, 0.0], [0.09, 0.05]])
    z = np.array([[0.7, -0.4], [-1.2, 0.3]])
    lam = np.array([-1, 1])
    dt = 0.25
    got = nv_step(m, x, dt, z, lam)
    h = np.sqrt(dt)
    for c in range(2):
        y = m.flow(0, 0.5 * dt, x[:, c])
        order = (2, 1) if lam[c] == -1 else (1, 2)
        for j in order:
            y = m.flow(j, h * z[j - 1, c], y)
        y = m.flow(0, 0.5 * dt, y)
        np.testing.assert_allclose(got[:, c], y, rtol=1e-14)


def test_zero_shift_nvd_equals_nv_bitwise():
    m = HestonModel(HESTON, log=True)
    x = start(m)
    z = np.random.default_rng(0).normal(size=(2, 3))
    lam = np.array([1, -1, 1])
    np.testing.assert_array_equal(nvd_step(m, DriftShift.zero(2), x, 0.1, z, lam), nv_step(m, x, 0.1, z, lam))


def test_gensabr_nvd_step_without_noise():
    m = GenSabrModel(GENSABR)
    x = np.array([[1.0], [0.2]])
    dt = 0.125
    got = nvd_step(m, m.shift, x, dt, np.zeros((2, 1)), np.array([-1]))
    y = m.modified_drift_flow(0.5 * dt, x)
    for j in (2, 1):
        y = m.flow(j, dt * m.shift.gamma[j - 1], y)
    y = m.modified_drift_flow(0.5 * dt, y)
    np.testing.assert_array_equal(got, y)
    assert np.isfinite(got[0, 0]) and got[0, 0] > 0


@pytest.mark.parametrize("model", CATALOG, ids=lambda m: m.name)
def test_nvd_needs_no_ode_solves(model):
    diag = Diagnostics()
    z = np.random.default_rng(1).normal(size=(model.n_noise, 3))
    nvd_step(model, model.shift, start(model), 0.1, z, np.array([1, -1, 1]), diag)
    assert diag.oracle_calls == 0


def test_nvd_rejects_foreign_shift():
    m = GenSabrModel(GENSABR)
    with pytest.raises(ValueError, match="closed-form"):
        nvd_step(m, DriftShift(np.array([0.1, 0.2])), start(m), 0.1, np.zeros((2, 3)), np.ones(3))


def test_girsanov_zero_shift_is_plain_nv():
    m = HestonModel(HESTON, log=True)
    x = start(m)
    z = np.random.default_rng(2).normal(size=(2, 3))
    lam = np.array([1, 1, -1])
    y, B = girsanov_step(m, DriftShift.zero(2), x, 0.1, z, lam, np.zeros((2, 3)))
    np.testing.assert_array_equal(y, nv_step(m, x, 0.1, z, lam))
    np.testing.assert_array_equal(girsanov_weight(DriftShift.zero(2), B, 1.0), np.ones(3))


def test_girsanov_weight_formula():
    g = DriftShift(np.array([0.5, -2.0]))
    B = np.array([[0.1], [0.3]])
    np.testing.assert_allclose(girsanov_weight(g, B, 0.4), [np.exp(0.05 - 0.6 - 0.5 * 4.25 * 0.4)], rtol=1e-15)


def _draw(model, K, m, seed=0):
    rng = np.random.default_rng(seed)
    return TrajectoryDraw(rng.normal(size=(K, model.n_noise, m)), np.where(rng.uniform(size=(K, m)) < 0.5, -1, 1))


@pytest.mark.parametrize("scheme", ["euler", "nv", "nvd", "nvg"])
def test_single_step_trajectory_equals_step(scheme):
    m = GenSabrModel(GENSABR)
    draw = _draw(m, 1, 4)
    x0 = np.array([1.0, 0.2])
    out = simulate_trajectory(scheme, m, 1, 0.5, x0, draw)
    xs = np.repeat(x0[:, None], 4, axis=1)
    if scheme == "euler":
        ref = euler_step(m, xs, 0.5, draw.Z[0])
    elif scheme == "nv":
        ref = nv_step(m, xs, 0.5, draw.Z[0], draw.Lambda[0])
    elif scheme == "nvd":
        ref = nvd_step(m, m.shift, xs, 0.5, draw.Z[0], draw.Lambda[0])
    else:
        ref, B = girsanov_step(m, m.shift, xs, 0.5, draw.Z[0], draw.Lambda[0], np.zeros((2, 4)))
        np.testing.assert_allclose(out.weight, girsanov_weight(m.shift, B, 0.5), rtol=1e-15)
    np.testing.assert_array_equal(out.terminal, ref)


def test_second_step_without_noise_is_shifted_drift_composition():
    m = GenSabrModel(GENSABR)
    draw = _draw(m, 2, 3)
    draw.Z[1] = 0.0
    x0 = np.array([1.0, 0.2])
    out = simulate_trajectory("nvd", m, 2, 1.0, x0, draw)
    mid = simulate_trajectory("nvd", m, 1, 0.5, x0, TrajectoryDraw(draw.Z[:1], draw.Lambda[:1])).terminal
    ref = nvd_step(m, m.shift, mid, 0.5, np.zeros((2, 3)), draw.Lambda[1])
    np.testing.assert_array_equal(out.terminal, ref)


@pytest.mark.parametrize("scheme", ["nv", "nvd", "nvg"])
@pytest.mark.parametrize("model", CATALOG[1:4], ids=lambda m: m.name)
def test_fusion_matches_unfused(scheme, model):
    draw = _draw(model, 6, 5)
    x0 = start(model, 1)[:, 0]
    a = simulate_trajectory(scheme, model, 6, 1.0, x0, draw)
    b = simulate_trajectory(scheme, model, 6, 1.0, x0, draw, fusion=True)
    tol = 1e-12 if scheme != "nv" or 0 in model.closed_flows else 1e-7
    np.testing.assert_allclose(b.terminal, a.terminal, rtol=tol, atol=tol)


def test_classical_nv_on_sabr_counts_two_solves_per_step():
    m = GenSabrModel(SABR, name="sabr")
    for K in (1, 2, 5):
        out = simulate_trajectory("nv", m, K, 1.0, np.array([1.0, 0.3]), _draw(m, K, 4))
        assert out.diagnostics.oracle_calls == 2 * K
        assert simulate_trajectory("nvd", m, K, 1.0, np.array([1.0, 0.3]), _draw(m, K, 4)).diagnostics.oracle_calls == 0


def test_trajectory_argument_checks():
    m = GenSabrModel(GENSABR)
    with pytest.raises(ValueError, match="steps"):
        simulate_trajectory("nv", m, 3, 1.0, np.array([1.0, 0.2]), _draw(m, 2, 2))
    with pytest.raises(ValueError, match="coins"):
        simulate_trajectory("nv", m, 2, 1.0, np.array([1.0, 0.2]), TrajectoryDraw(np.zeros((2, 2, 2))))
    with pytest.raises(ValueError, match="unknown"):
        simulate_trajectory("rk", m, 2, 1.0, np.array([1.0, 0.2]), _draw(m, 2, 2))
