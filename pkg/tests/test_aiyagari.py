import json
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from marktail import matcore
from marktail.aiyagari import (AiyagariEconomy, bellman_residual, equilibrium_wage,
                               exponent_radii, growth_rates, market_clearing, benchmark_calibration,
                               returns, rouwenhorst, simulate_economy, solve_economy, tauchen,
                               value_coefficients, wealth_exponent)
from marktail.errors import NoEquilibriumError, ValidationError


@pytest.fixture(scope="module")
def bench():
    econ = benchmark_calibration()
    return econ, solve_economy(econ)


def one_state(**kw):
    return AiyagariEconomy(P=[[1.0]], A=[1.0], **kw)


def test_rouwenhorst_moments():
    x, P = rouwenhorst(9, 0.9, 0.1)
    pi = matcore.stationary_distribution(P)
    np.testing.assert_allclose(P.sum(axis=1), 1.0)
    assert pi @ x == pytest.approx(0.0, abs=1e-14)
    var = pi @ x ** 2
    assert var == pytest.approx(0.01 / (1 - 0.81), rel=1e-12)
    cov = pi @ (x * (P @ x))
    assert cov / var == pytest.approx(0.9, rel=1e-12)


def test_tauchen_rows():
    x, P = tauchen(7, 0.8, 0.2)
    np.testing.assert_allclose(P.sum(axis=1), 1.0)
    assert x[0] == pytest.approx(-x[-1]) and x[-1] == pytest.approx(3 * 0.2 / math.sqrt(1 - 0.64))


def test_returns_formula_and_monotone():
    e = one_state()
    a = 0.38
    ref = a * (1 - a) ** (1 / a - 1) * 1.5 ** (1 - 1 / a) + 0.92
    assert returns(e, 1.5)[0] == pytest.approx(ref, rel=1e-14)
    econ = benchmark_calibration()
    assert np.all(returns(econ, 1.2) > returns(econ, 1.3))
    assert returns(one_state(delta=1.0), 1e12)[0] < 1e-6
    with pytest.raises(ValidationError):
        returns(e, 0.0)


def test_log_utility_growth_is_beta_r(bench):
    econ, sol = bench
    np.testing.assert_allclose(sol.Gk, econ.disc_beta * sol.R, rtol=1e-14)


def test_scalar_value_coefficient():
    beta, eps = 0.9, 2.0
    e = one_state(disc_beta=beta, eps_eis=eps, gamma_rra=3.0)
    R = np.array([1.05])
    b = value_coefficients(e, R)[0]
    f = lambda x: x - ((1 - beta) ** eps + beta ** eps * (R[0] * x) ** (eps - 1)) ** (1 / (eps - 1))
    assert b == pytest.approx(brentq(f, 1e-6, 100, xtol=1e-15), rel=1e-10)
    closed = ((1 - beta) ** eps / (1 - beta ** eps * R[0] ** (eps - 1))) ** (1 / (eps - 1))
    assert b == pytest.approx(closed, rel=1e-10)


@pytest.mark.parametrize("eps,gam", [(2.0, 3.0), (0.5, 3.0), (2.0, 1.0), (1.0, 1.0), (1.0, 4.0)])
def test_random_economy_residual(eps, gam):
    r = np.random.default_rng(int(eps * 10 + gam))
    S = 4
    e = AiyagariEconomy(P=r.dirichlet(np.ones(S), size=S), A=r.uniform(0.5, 1.5, S),
                        disc_beta=0.9, eps_eis=eps, gamma_rra=gam)
    R = r.uniform(0.95, 1.05, S)
    b = value_coefficients(e, R)
    assert np.all(b > 0)
    assert np.max(np.abs(bellman_residual(e, R, b))) < 1e-10


def test_spectral_condition_violation():
    e = one_state(disc_beta=0.9, eps_eis=2.0, gamma_rra=3.0)
    with pytest.raises(NoEquilibriumError, match="spectral") as exc:
        value_coefficients(e, np.array([1.5]))
    assert exc.value.lambda_value >= 1


def test_scalar_equilibrium_wage():
    p, kappa, beta = 0.025, 0.8, 0.96 * 0.975
    e = one_state(disc_beta=beta, p_die=p, kappa=kappa)
    w = equilibrium_wage(e)
    R_star = (1 - p * kappa) / ((1 - p) * beta)
    a = 0.38
    w_closed = ((R_star - 0.92) / (a * (1 - a) ** (1 / a - 1))) ** (1 / (1 - 1 / a))
    assert w == pytest.approx(w_closed, rel=1e-10)


def test_phi_decreasing_and_limit(bench):
    econ, sol = bench
    ws = sol.omega_star * np.array([0.98, 1.0, 1.5, 3.0, 30.0])
    phis = [market_clearing(econ, w) for w in ws]
    assert np.all(np.diff(phis) < 0)
    # with full depreciation returns vanish as the wage grows, so phi -> p kappa
    full = econ.replace(delta=1.0)
    far = market_clearing(full, 1e8)
    assert far == pytest.approx(econ.p_die * econ.kappa, rel=1e-6)
    assert far < 1


def test_benchmark_calibration(bench):
    econ, sol = bench
    assert 1.50 <= sol.omega_star <= 1.65
    assert 1.00 <= sol.zeta <= 1.15
    assert abs(sol.phi_residual) <= 1e-9
    assert sol.b_residual <= 1e-10
    assert abs((1 - econ.p_die) * exponent_radii(econ, sol, sol.zeta)[0] - 1) <= 1e-9
    assert np.any(sol.Gk > 1)
    assert sol.zeta > 1


def test_tauchen_calibration_in_band():
    sol = solve_economy(benchmark_calibration("tauchen"))
    assert 1.50 <= sol.omega_star <= 1.65 and 1.00 <= sol.zeta <= 1.15


def test_capital_wealth_identity(bench):
    econ, sol = bench
    for z in np.linspace(0.1, 3.0, 15):
        a, b = exponent_radii(econ, sol, z)
        assert a == pytest.approx(b, rel=1e-10)


def test_kappa_one_rejected(bench):
    econ, sol = bench
    with pytest.raises(ValidationError, match="kappa"):
        wealth_exponent(econ.replace(kappa=1.0), sol)


def test_general_eis_equilibrium():
    econ = benchmark_calibration().replace(eps_eis=1.5, gamma_rra=4.0)
    sol = solve_economy(econ)
    assert abs(sol.phi_residual) < 1e-9 and sol.b_residual < 1e-10
    R = returns(econ, sol.omega_star)
    Gk, _ = growth_rates(econ, R, sol.b)
    np.testing.assert_allclose(Gk, sol.Gk)


def test_economy_config(tmp_path):
    cfg = {"ar1": {"rho": 0.9, "sigma": 0.1, "S": 9}, "beta_raw": 0.96, "p_die": 0.025,
           "kappa": 0.8, "gamma_rra": 2.0}
    e = AiyagariEconomy.from_dict(cfg)
    ref = benchmark_calibration()
    np.testing.assert_allclose(e.P, ref.P)
    assert e.disc_beta == pytest.approx(ref.disc_beta)
    p = tmp_path / "e.json"
    p.write_text(json.dumps(e.to_dict()))
    again = AiyagariEconomy.from_json(p)
    np.testing.assert_array_equal(again.A, e.A)
    with pytest.raises(ValidationError, match="unknown"):
        AiyagariEconomy.from_dict({**cfg, "colour": 1})
    with pytest.raises(ValidationError, match="P and A"):
        AiyagariEconomy.from_dict({"kappa": 0.5})
    with pytest.raises(ValidationError, match="kappa"):
        AiyagariEconomy.from_dict({**cfg, "kappa": 1.5})


def test_simulation_backends_and_degenerate(bench):
    econ, sol = bench
    a = simulate_economy(econ, sol, agents=2000, periods=50, seed=1, backend="numba")
    b = simulate_economy(econ, sol, agents=2000, periods=50, seed=1, backend="numpy")
    np.testing.assert_array_equal(a.state, b.state)
    np.testing.assert_allclose(a.capital, b.capital, rtol=1e-12)
    d = simulate_economy(econ, sol, agents=500, periods=20, seed=0, p_die=1.0)
    np.testing.assert_array_equal(d.capital, 1.0)
    assert d.tail is None


def test_simulation_tail_near_zeta(bench):
    econ, sol = bench
    sim = simulate_economy(econ, sol, agents=100_000, periods=1000, seed=0)
    assert abs(sim.tail.alpha_hat - sol.zeta) < 0.1


def test_simulation_csv(tmp_path, bench):
    econ, sol = bench
    sim = simulate_economy(econ, sol, agents=10, periods=5, seed=0)
    p = tmp_path / "w.csv"
    sim.write_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "agent_id,capital,wealth,state,age" and len(lines) == 11
