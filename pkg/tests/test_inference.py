import numpy as np
import numpy.testing as npt
import pytest

from semicomp import (ConfigurationError, DegenerateTestError, SimulationConfig, arm_weights,
                      logrank_transition_test, propensity_scores, sensitivity_sweep, simulate_setting, spe_test_u,
                      u_statistic)
from semicomp.incidence import SPE_NAMES
from semicomp.inference import contrast_vectors, default_tau

from conftest import make_dataset

survdiff = pytest.importorskip("statsmodels.duration.survfunc").survdiff


@pytest.fixture(scope="module")
def data():
    return simulate_setting(SimulationConfig(setting_id=1, n=400, seed=61))


def unit(ds):
    return {a: (ds.arm == a).astype(float) for a in (0, 1)}


@pytest.mark.parametrize("transition,clock", [(1, "markov"), (2, "markov"), (3, "markov"), (3, "semimarkov")])
def test_unit_weights_match_statsmodels(data, transition, clock):
    res = logrank_transition_test(data, unit(data), transition, clock)
    dr = data.delta_r == 1
    dt = data.delta_t == 1
    if transition in (1, 2):
        time, status, group, entry = data.exit0, (dt & ~dr) if transition == 1 else dr, data.arm, None
    else:
        time = data.t_obs[dr] if clock == "markov" else (data.t_obs - data.r_eff)[dr]
        status, group = dt[dr], data.arm[dr]
        entry = data.r_eff[dr] if clock == "markov" else None
    chisq, p = survdiff(time, status.astype(float), group, entry=entry)
    assert res.statistic ** 2 / res.variance == pytest.approx(chisq, rel=1e-10)
    assert res.p_value == pytest.approx(p, rel=1e-8)


def test_hand_logrank():
    # arm 1 event at 1 (2 at risk of 4 total), arm 0 event at 2 (2 at risk of 3), arm 1 censored at 3
    ds = make_dataset([(1, 1.0, 1.0, 1, 0), (1, 3.0, 3.0, 0, 0), (0, 2.0, 2.0, 1, 0), (0, 4.0, 4.0, 0, 0)])
    res = logrank_transition_test(ds, unit(ds), 1)
    observed_minus_expected = (1 - 2 / 4) + (0 - 1 / 3)
    variance = (2 * 2 / 4 ** 2) + (1 * 2 / 3 ** 2)
    assert res.statistic == pytest.approx(observed_minus_expected)
    assert res.variance == pytest.approx(variance)


def test_tied_events_hypergeometric():
    ds = make_dataset([(1, 1.0, 1.0, 1, 0), (0, 1.0, 1.0, 1, 0), (1, 2.0, 2.0, 0, 0), (0, 3.0, 3.0, 0, 0)])
    res = logrank_transition_test(ds, unit(ds), 1)
    # one time with d=2 of n=4, two per arm: var = n1 n0 d (n-d) / (n^2 (n-1))
    assert res.variance == pytest.approx(2 * 2 * 2 * 2 / (16 * 3))
    assert res.statistic == 0.0 and res.p_value == 1.0


def test_degenerate(data):
    with pytest.raises(DegenerateTestError):
        ds = make_dataset([(1, 1.0, 1.0, 1, 0), (0, 2.0, 2.0, 0, 0)])
        logrank_transition_test(ds, unit(ds), 1)


def test_ipw_weights_change_variance(data):
    w = arm_weights(data, propensity_scores(data, "true"))
    res = logrank_transition_test(data, w, 2)
    assert res.method == "logrank-ipw" and res.variance > 0 and 0 <= res.p_value <= 1


def test_u_statistic_definition():
    fa = np.array([0.1, 0.3, 0.5])
    fb = np.array([0.0, 0.2, 0.2])
    s = fa + fb
    expected = 0.1 * s[0] + 0.1 * (s[1] - s[0]) + 0.3 * (s[2] - s[1])
    assert u_statistic(fa, fb) == pytest.approx(expected)
    assert u_statistic(fa, fb) == -u_statistic(fb, fa)
    assert u_statistic(fa, fa) == 0.0


class TestU:
    def test_antisymmetry(self, data):
        a = spe_test_u(data, (1, 1, 0), (1, 0, 0), B=20, seed=3)
        b = spe_test_u(data, (1, 0, 0), (1, 1, 0), B=20, seed=3)
        assert a.statistic == -b.statistic
        assert a.variance == pytest.approx(b.variance)
        assert a.p_value == pytest.approx(b.p_value)

    def test_same_vector(self, data):
        r = spe_test_u(data, (1, 0, 1), (1, 0, 1))
        assert r.statistic == 0.0 and r.p_value == 1.0

    def test_reproducible(self, data):
        a = spe_test_u(data, (1, 1, 1), (0, 0, 0), B=15, seed=8)
        b = spe_test_u(data, (1, 1, 1), (0, 0, 0), B=15, seed=8)
        assert a.to_dict() == b.to_dict()

    def test_zero_resamples(self, data):
        r = spe_test_u(data, (1, 1, 1), (0, 0, 0), B=0)
        assert np.isnan(r.p_value) and np.isfinite(r.statistic)

    def test_eif_variance(self, data):
        r = spe_test_u(data, (1, 1, 1), (0, 0, 0), method="eif", variance="eif")
        assert r.method == "u-eif" and r.variance > 0
        assert r.settings["tau"] <= default_tau(data)

    @pytest.mark.filterwarnings("ignore:.*bootstrap resamples were redrawn")
    def test_eif_variance_matches_bootstrap(self, data):
        e = spe_test_u(data, (1, 1, 0), (1, 0, 0), method="eif", variance="eif")
        b = spe_test_u(data, (1, 1, 0), (1, 0, 0), method="eif", B=200, seed=1, tau=e.settings["tau"])
        assert b.statistic == pytest.approx(e.statistic)
        assert 0.6 < b.variance / e.variance < 1.6

    def test_eif_variance_needs_eif(self, data):
        with pytest.raises(ConfigurationError):
            spe_test_u(data, (1, 1, 1), (0, 0, 0), variance="eif")

    def test_semimarkov_clock(self, data):
        r = spe_test_u(data, (1, 1, 1), (1, 1, 0), clock="semimarkov", B=10)
        assert r.settings["clock"] == "semimarkov"


def test_contrast_vectors():
    assert contrast_vectors("spe02") == ((1, 1, 0), (1, 0, 0))
    with pytest.raises(ConfigurationError):
        contrast_vectors("spe12")


def test_sweep_common_grid_and_endpoints(data):
    w = arm_weights(data, data.propensity)
    sweep = sensitivity_sweep(data, w, [0.0, 0.5, 1.0])
    assert set(sweep) == {0.0, 0.5, 1.0}
    grids = [s.curve.jump_times for k in sweep for s in sweep[k]]
    for g in grids[1:]:
        npt.assert_array_equal(g, grids[0])
    assert [s.name for s in sweep[0.5]] == list(SPE_NAMES)
    with pytest.raises(ConfigurationError):
        sensitivity_sweep(data, w, [1.2])


def test_sweep_kappa_invariance_constant_hazards():
    ds = simulate_setting(SimulationConfig(setting_id=1, n=10_000, seed=62))
    w = arm_weights(ds, ds.propensity)
    t = np.linspace(0.5, 8, 16)
    sweep = sensitivity_sweep(ds, w, [0.0, 0.25, 0.5, 0.75, 1.0], t_grid=t)
    base = sweep[0.0][1].at(t)
    from semicomp import estimate_incidences
    inc = estimate_incidences(ds, w, [(1, 1, 0), (1, 0, 0)])
    se = np.sqrt(inc[(1, 1, 0)].variance(t) + inc[(1, 0, 0)].variance(t))
    for k in sweep:
        assert np.all(np.abs(sweep[k][1].at(t) - base) < 3 * se)
