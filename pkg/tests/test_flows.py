import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from conftest import GENSABR, HESTON, SABR, multi_params
from nvsplit import flows
from nvsplit.flows import Diagnostics, expm1_ratio, level_integral, power_ode_flow
from nvsplit.models import GenSabrModel, HestonModel, MultiSabrModel
from nvsplit.ode import ORACLE_CONFIG, integrate
from nvsplit.params import GenSabrParams, HestonParams, MultiSabrParams
from oracles import field_oracle, flow_draws, rel_gap

HALF = GenSabrParams(a=0.8, b=0.6, alpha=0.7, beta=0.5, kappa=1.0, theta=0.2, rho=0.3)
CURVED = GenSabrParams(a=0.9, b=0.5, alpha=0.5, beta=0.75, kappa=1.5, theta=0.4, rho=-0.4)


# ---------------------------------------------------------------- primitives

def test_power_ode_examples():
    assert power_ode_flow(0.5, 1.0, 0.0) == 1.0
    assert power_ode_flow(0.5, 1.0, -4.0) == 0.0
    assert power_ode_flow(0.9, 1.0, 2.0) == pytest.approx(6.1917364224, rel=1e-12)


def test_power_ode_against_rk4():
    # y' = h(t) y^beta with h(t) = cos(t): H(s) = sin(s)
    beta, s = 0.9, 1.3
    got = power_ode_flow(beta, 1.0, math.sin(s))
    ref = integrate(lambda t, y: np.cos(t) * y**beta, np.array([1.0]), s, ORACLE_CONFIG)[0]
    assert got == pytest.approx(ref, rel=1e-10)


def test_power_ode_rejects_bad_input():
    with pytest.raises(ValueError):
        power_ode_flow(1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        power_ode_flow(0.5, -1.0, 0.1)
    with pytest.raises(OverflowError):
        power_ode_flow(0.999, 10.0, 1e6)


@given(st.floats(-50, 50), st.floats(-2, 2))
def test_expm1_ratio_is_continuous(c, s):
    got = expm1_ratio(c, s)
    z = c * s
    # expm1(z)/c loses digits for subnormal c, so tiny z uses the Taylor series
    ref = s * (1.0 + z / 2.0 + z * z / 6.0) if abs(z) < 1e-6 else math.expm1(z) / c
    assert got == pytest.approx(ref, rel=1e-12, abs=1e-300)


def test_expm1_ratio_series_branch():
    assert expm1_ratio(1e-12, 0.3) == pytest.approx(0.3, rel=1e-12)
    assert expm1_ratio(0.0, 0.3) == 0.3


def test_level_integral_examples():
    assert level_integral(0.0, 0.5, 0.7, np.array(0.2)) == pytest.approx(0.7 * 0.2)
    assert level_integral(0.6, 0.5, 0.5, np.array(0.2)) == pytest.approx(0.175, rel=1e-14)


@given(st.floats(-0.5, 2.0), st.floats(0.5, 1.0), st.floats(0.0, 1.0), st.floats(0.05, 1.0))
def test_level_integral_matches_quadrature(kt, alpha, s, y):
    assume(kt * s + y > 0.01)
    ref = integrate(lambda t, v: (kt * t + y) ** (2 * alpha) + 0.0 * v, np.array([0.0]), s, ORACLE_CONFIG)[0]
    assert float(level_integral(kt, alpha, s, np.array(y))) == pytest.approx(ref, rel=1e-9, abs=1e-13)


# ------------------------------------------------------------- worked values

def test_heston_worked_values():
    p = HestonParams(0.0, 2.0, 0.3, 0.5, 0.0)
    np.testing.assert_allclose(flows.heston_flow(p, 2, 0.2, np.array([1.0, 0.04]), log=False), [1.0, 0.0625],
                               rtol=1e-14)
    y = flows.heston_flow(p, 0, 1.0, np.array([0.0, 0.04]))
    assert y[1] == pytest.approx((0.04 - 0.26875) * math.exp(-2.0) + 0.26875, rel=1e-14)
    assert y[1] == pytest.approx(0.2377920540, abs=1e-10)


@pytest.mark.parametrize("log", [True, False])
@pytest.mark.parametrize("j", [0, 1, 2])
def test_heston_zero_time_is_identity(j, log):
    x = np.array([0.3, 0.07])
    np.testing.assert_allclose(flows.heston_flow(HESTON, j, 0.0, x, log=log), x, rtol=1e-15, atol=0)


def test_sabr_diffusion_worked_value():
    p = GenSabrParams.sabr(beta=1.0, a=1.0, b=0.4, rho=-0.7)
    y = flows.gensabr_flow(p, 1, 0.1, np.array([1.0, 0.3]))
    assert y[0] == pytest.approx(math.exp(0.3 / -0.28 * math.expm1(-0.028)), rel=1e-14)
    assert y[0] == pytest.approx(1.0300258435, abs=1e-10)


def test_small_correlation_uses_series():
    p0 = GenSabrParams.sabr(beta=1.0, a=1.0, b=0.4, rho=1e-12)
    y = flows.gensabr_flow(p0, 1, 0.1, np.array([1.0, 0.3]))
    assert y[0] == pytest.approx(math.exp(0.3 * 0.1), rel=1e-12)


def test_modified_drift_worked_value():
    # beta = 1, alpha = 1/2, kappa*theta = 0.6: P(0.5) = 0.175, so x1 -> exp(-0.0875)
    p = GenSabrParams(a=1.0, b=0.5, alpha=0.5, beta=1.0, kappa=2.0, theta=0.3, rho=-0.7)
    y = flows.gensabr_flow(p, 0, 0.5, np.array([1.0, 0.2]), modified=True)
    assert y[0] == pytest.approx(math.exp(-0.0875), rel=1e-14)
    assert y[0] == pytest.approx(0.91621887, abs=1e-8)
    assert y[1] == pytest.approx(0.5, rel=1e-14)


@pytest.mark.parametrize("p", [SABR, GENSABR, HALF, CURVED], ids=["sabr", "gensabr", "half", "curved"])
def test_two_factor_zero_time_is_identity(p):
    x = np.array([1.1, 0.25])
    for j in (1, 2):
        np.testing.assert_allclose(flows.gensabr_flow(p, j, 0.0, x), x, rtol=1e-15)
    np.testing.assert_allclose(flows.gensabr_flow(p, 0, 0.0, x, modified=True), x, rtol=1e-15)
    np.testing.assert_allclose(flows.gensabr_flow(p, 0, 0.0, x), x, rtol=1e-15)


def test_clamp_counted():
    diag = Diagnostics()
    p = GenSabrParams(a=1.0, b=0.5, alpha=0.5, beta=0.5, kappa=0.0, theta=0.0, rho=0.0)
    y = flows.gensabr_flow(p, 0, np.array([0.1, 50.0]), np.array([[1.0, 1.0], [0.3, 0.3]]), modified=True,
                           diag=diag)
    assert y[0, 1] == 0.0 and y[0, 0] > 0
    assert diag.clamp_hits == 1


def test_inputs_not_mutated():
    x = np.array([[1.0, 0.8], [0.2, 0.3]])
    keep = x.copy()
    for j in (0, 1, 2):
        flows.gensabr_flow(GENSABR, j, 0.3, x)
    flows.gensabr_flow(GENSABR, 0, 0.3, x, modified=True)
    np.testing.assert_array_equal(x, keep)


# --------------------------------------------------- closed forms vs the oracle

FAMILIES = [
    ("heston", HestonModel(HESTON, log=True)),
    ("heston-plain", HestonModel(HESTON, log=False)),
    ("sabr", GenSabrModel(SABR, name="sabr")),
    ("gensabr", GenSabrModel(GENSABR)),
    ("gensabr-half", GenSabrModel(HALF)),
    ("gensabr-curved", GenSabrModel(CURVED)),
]


@pytest.mark.parametrize("name,model", FAMILIES, ids=[f[0] for f in FAMILIES])
def test_closed_flows_match_oracle(name, model):
    rng = np.random.default_rng(11)
    cases = [(j, False) for j in sorted(model.closed_flows)]
    if 0 not in model.closed_flows:
        cases.append((0, True))
    for j, modified in cases:
        x, s = flow_draws(model, j, rng, count=50, modified=modified, drift=(j == 0))
        got = model.modified_drift_flow(s, x) if modified else model.flow(j, s, x)
        assert rel_gap(got, field_oracle(model, j, s, x, modified)) <= 1e-8, (name, j, modified)


@given(st.floats(0.5, 2.0), st.floats(0.05, 1.0), st.floats(-0.4, 0.4), st.integers(1, 8))
def test_multisabr_diffusion_flows_match_oracle(price, vol, s, j):
    model = MULTI
    x = np.array([price, vol, 1.1, 0.4, 0.9, 0.6, 1.3, 0.2])
    got = model.flow(j, s, x)
    assume(np.all(got[0::2] > 1e-6))
    assert rel_gap(got, field_oracle(model, j, s, x)) <= 1e-8


MULTI = MultiSabrModel(multi_params())


def test_multisabr_modified_drift_matches_oracle():
    rng = np.random.default_rng(5)
    x, s = flow_draws(MULTI, 0, rng, count=50, modified=True, drift=True)
    assert rel_gap(MULTI.modified_drift_flow(s, x), field_oracle(MULTI, 0, s, x, True)) <= 1e-8


def test_multisabr_volatility_fields_scale_levels_only():
    x = np.array([1.0, 0.3, 1.2, 0.5, 0.8, 0.7, 1.1, 0.2])
    n = 4
    for j in range(n + 1, 2 * n + 1):
        y = MULTI.flow(j, 0.3, x)
        np.testing.assert_array_equal(y[0::2], x[0::2])
        expected = x[1::2] * np.exp(MULTI.params.b * MULTI.L[n:, j - 1] * 0.3)
        np.testing.assert_allclose(y[1::2], expected, rtol=1e-15)


def test_single_asset_multisabr_reproduces_two_factor_flows():
    p = GENSABR
    rho = np.array([[1.0, p.rho], [p.rho, 1.0]])
    multi = MultiSabrModel(MultiSabrParams(a=[p.a], b=[p.b], alpha=[p.alpha], beta=[p.beta], kappa=[p.kappa],
                                           theta=[p.theta], rho=rho))
    two = GenSabrModel(p)
    rng = np.random.default_rng(9)
    x = np.stack([rng.uniform(0.5, 2, 20), rng.uniform(0.05, 1, 20)])
    s = rng.uniform(-0.3, 0.3, 20)
    for j in (1, 2):
        np.testing.assert_allclose(multi.flow(j, s, x), two.flow(j, s, x), rtol=1e-13)
    sp = np.abs(s)
    np.testing.assert_allclose(multi.modified_drift_flow(sp, x), two.modified_drift_flow(sp, x), rtol=1e-13)
    np.testing.assert_allclose(multi.flow(0, sp, x), two.flow(0, sp, x), rtol=1e-9)


# ------------------------------------------------------- numeric drift solves

@pytest.mark.parametrize("p", [SABR, GENSABR, HALF, CURVED], ids=["sabr", "gensabr", "half", "curved"])
def test_compiled_and_generic_drift_solves_agree(p):
    rng = np.random.default_rng(4)
    x = np.stack([rng.uniform(0.3, 2.0, 200), rng.uniform(0.05, 1.0, 200)])
    s = rng.uniform(0.0, 0.5, 200)
    a = flows.gensabr_drift_flow_numeric(p, s, x, compiled=True)
    b = flows.gensabr_drift_flow_numeric(p, s, x, compiled=False)
    assert rel_gap(a, b) <= 1e-12


def test_multisabr_compiled_and_generic_drift_solves_agree():
    rng = np.random.default_rng(6)
    x = np.empty((8, 100))
    x[0::2] = rng.uniform(0.3, 2.0, (4, 100))
    x[1::2] = rng.uniform(0.05, 1.0, (4, 100))
    s = rng.uniform(0.0, 0.5, 100)
    a = flows.multisabr_drift_flow_numeric(MULTI.params, MULTI.L, s, x, compiled=True)
    b = flows.multisabr_drift_flow_numeric(MULTI.params, MULTI.L, s, x, compiled=False)
    assert rel_gap(a, b) <= 1e-12


def test_classical_drift_counts_one_oracle_call_per_solve():
    diag = Diagnostics()
    x = np.array([[1.0, 1.2], [0.3, 0.2]])
    GenSabrModel(SABR, name="sabr").flow(0, 0.1, x, diag)
    assert diag.oracle_calls == 1
    for j in (1, 2):
        GenSabrModel(SABR, name="sabr").flow(j, 0.1, x, diag)
    assert diag.oracle_calls == 1


def test_price_absorbed_at_zero():
    # strongly negative drift drives the price to zero before s
    p = GenSabrParams.sabr(beta=0.5, a=3.0, b=0.4, rho=0.0)
    diag = Diagnostics()
    y = flows.gensabr_drift_flow_numeric(p, 2.0, np.array([[0.05], [1.0]]), diag=diag)
    assert y[0, 0] == 0.0


SEMIGROUP_CASES = [(m, j, False) for _, m in FAMILIES for j in sorted(m.closed_flows)] + \
    [(m, 0, True) for _, m in FAMILIES if 0 not in m.closed_flows] + \
    [(MULTI, j, False) for j in (1, 4, 5, 8)] + [(MULTI, 0, True)]


@pytest.mark.parametrize("model,j,modified", SEMIGROUP_CASES,
                         ids=[f"{m.name}-{j}{'m' if mod else ''}" for m, j, mod in SEMIGROUP_CASES])
@given(st.floats(0.0, 0.25), st.floats(0.0, 0.25), st.integers(0, 2**31))
def test_closed_flows_are_semigroups(model, j, modified, s, t, seed):
    x = flow_draws(model, j, np.random.default_rng(seed), count=1, modified=modified, drift=True, s_max=0.01)[0]

    def flow(amount, y):
        return model.modified_drift_flow(amount, y) if modified else model.flow(j, amount, y)

    two = flow(s, flow(t, x))
    one = flow(s + t, x)
    assume(np.all(np.isfinite(one)) and np.all(np.abs(one) > 1e-6))
    assert rel_gap(two, one) <= 1e-10
