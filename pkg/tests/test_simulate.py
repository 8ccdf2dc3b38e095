import numpy as np
import pytest
from scipy.special import expit

from semicomp import (ConfigurationError, HazardSpec, SimulationConfig, assign_treatment, draw_covariates,
                      draw_event_times, oracle_incidence, setting_hazards, simulate_setting, split_seeds)
from semicomp.simulate import _draw_paths, oracle_spe_integral, treatment_probability


def test_covariate_support_and_means():
    x = draw_covariates(100_000, np.random.default_rng(0))
    assert set(np.unique(x)) == {0.5, 1.0}
    np.testing.assert_allclose(x.mean(axis=0), 0.75, atol=0.01)


def test_treatment_probability_at_one_one():
    assert treatment_probability(np.array([[1.0, 1.0]]))[0] == pytest.approx(expit(0.6))
    assert expit(0.6) == pytest.approx(0.6457, abs=1e-4)
    x = np.ones((100_000, 2))
    a = assign_treatment(x, np.random.default_rng(1))
    assert abs(a.mean() - 0.6457) < 0.005


def test_setting1_first_transition():
    specs = setting_hazards(1)
    n = 200_000
    x = np.ones((n, 2))
    t, r, direct = _draw_paths(specs, x, np.ones((n, 3)), np.random.default_rng(2))
    first = np.where(direct, t, r)
    assert abs(direct.mean() - 0.6) < 0.005
    assert abs(first.mean() - 2.0) < 0.02   # Exponential(0.5)


def test_setting3_sojourn_median():
    specs = setting_hazards(3)
    n = 200_000
    x = np.ones((n, 2))
    t, r, direct = _draw_paths(specs, x, np.ones((n, 3)), np.random.default_rng(3))
    soj = (t - r)[~direct]
    assert np.median(soj) == pytest.approx(np.sqrt(np.log(2) / 0.1), rel=0.01)
    assert np.sqrt(np.log(2) / 0.1) == pytest.approx(2.633, abs=1e-3)


def test_forced_arm_direct_incidence():
    cfg = SimulationConfig(setting_id=1, n=100_000, seed=4, censoring_rate=0.0, fixed_x=(1, 1), force_arm=1)
    ds = simulate_setting(cfg)
    direct = (ds.delta_t == 1) & (ds.delta_r == 0) & (ds.t_obs <= 2)
    target = 0.6 * (1 - np.exp(-1))
    assert target == pytest.approx(0.3793, abs=1e-4)
    assert abs(direct.mean() - target) < 0.01


def test_oracle_closed_form_matches_mc():
    # (1,0,1) at x=(1,1): rates 0.15(1+1), 0.1(1+0), 0.2(1+1)
    exact = oracle_incidence(1, (1, 0, 1), 2.0, x=(1, 1)).value
    l1, l2, l3 = 0.3, 0.1, 0.4
    f1 = l1 / (l1 + l2) * (1 - np.exp(-(l1 + l2) * 2))
    f2 = l2 / (l1 + l2) * (1 - np.exp(-(l1 + l2) * 2))
    # l1 + l2 == l3, so int_0^2 l2 e^{-(l1+l2) r} e^{-l3 (2-r)} dr = 2 l2 e^{-2 l3}
    f3 = f2 - 2 * l2 * np.exp(-l3 * 2)
    assert exact == pytest.approx(f1 + f3, abs=1e-12)
    mc = oracle_incidence(1, (1, 0, 1), 2.0, x=(1, 1), method="mc", n_mc=1_000_000)
    assert abs(mc.value - exact) < 4 * mc.se


@pytest.mark.parametrize("setting", [2, 3])
def test_quadrature_oracle_matches_mc(setting):
    t = np.array([2.0, 4.0, 6.0])
    ex = oracle_incidence(setting, (1, 0, 1), t).value
    mc = oracle_incidence(setting, (1, 0, 1), t, method="mc", n_mc=400_000, seed=5)
    assert np.all(np.abs(mc.value - ex) < 4 * mc.se + 1e-4)


def test_oracle_is_a_distribution_function():
    t = np.linspace(0, 10, 41)
    for setting in (1, 2, 3):
        for comp in ("F", "F1", "F2", "F3"):
            v = oracle_incidence(setting, (1, 0, 1), t, component=comp).value
            assert v[0] == 0.0
            assert np.all(np.diff(v) >= -1e-12)
            assert np.all((0 <= v) & (v <= 1))
        f = oracle_incidence(setting, (1, 1, 0), t)
        f1 = oracle_incidence(setting, (1, 1, 0), t, component="F1").value
        f3 = oracle_incidence(setting, (1, 1, 0), t, component="F3").value
        np.testing.assert_allclose(f.value, f1 + f3, atol=1e-12)


def test_oracle_null_has_no_arm_effect():
    a = oracle_incidence(2, (1, 1, 1), 4.0, null=True).value
    b = oracle_incidence(2, (0, 0, 0), 4.0, null=True).value
    assert a == pytest.approx(b, abs=1e-14)
    assert oracle_spe_integral(2, (1, 1, 1), (0, 0, 0), 10, null=True, n_grid=101) == pytest.approx(0.0, abs=1e-14)


def test_draw_event_times_paths():
    specs = setting_hazards(1)
    rng = np.random.default_rng(6)
    seen = set()
    for _ in range(50):
        t, r, path = draw_event_times(specs, [1.0, 1.0], (1, 1, 1), rng)
        seen.add(path)
        if path == "direct":
            assert np.isinf(r)
        else:
            assert r < t
    assert seen == {"direct", "indirect"}


def test_simulation_is_reproducible():
    cfg = SimulationConfig(setting_id=2, n=300, seed=9)
    assert simulate_setting(cfg) == simulate_setting(cfg)
    assert simulate_setting(cfg) != simulate_setting(SimulationConfig(setting_id=2, n=300, seed=10))


def test_censoring_at_tau():
    ds = simulate_setting(SimulationConfig(setting_id=1, n=2000, seed=7))
    assert ds.t_obs.max() <= 10.0
    assert np.all(ds.r_obs <= ds.t_obs)
    assert np.all(ds.r_obs[ds.delta_r == 0] == ds.t_obs[ds.delta_r == 0])


def test_custom_hazard_form():
    rate = HazardSpec("custom", rate_fn=lambda t, r, x, a: 0.2 * np.ones_like(np.asarray(t, float)),
                      cumulative_fn=lambda t, r, x, a: 0.2 * np.maximum(np.asarray(t, float) - r, 0.0))
    const = HazardSpec("constant", intercept=0.2)
    t = np.array([1.0, 3.0])
    a = oracle_incidence(None, (0, 0, 0), t, x=(1, 1), hazards=(rate, rate, rate)).value
    b = oracle_incidence(None, (0, 0, 0), t, x=(1, 1), hazards=(const, const, const)).value
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_bad_config():
    with pytest.raises(ConfigurationError):
        SimulationConfig(setting_id=4)
    with pytest.raises(ConfigurationError):
        SimulationConfig(n=0)
    with pytest.raises(ConfigurationError):
        HazardSpec("quadratic")


def test_split_seeds_independent_and_stable():
    s = split_seeds(0, 5)
    assert len(set(s)) == 5
    assert split_seeds(0, 3) == s[:3]
