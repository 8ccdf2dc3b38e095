import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings, strategies as st

from semicomp import (ConfigurationError, SimulationConfig, StudyConfig, TruncationError, arm_weights,
                      estimate_incidences, fit_hazards, fit_incidence, oracle_incidence, propensity_scores,
                      run_study, simulate_setting, spe_decomposition, wald_interval)
from semicomp.incidence import SPE_NAMES, resolve_clock

from conftest import aalen_johansen, make_dataset


def unit_weights(ds):
    return {1: np.ones(ds.n)}


def records_of(ds):
    return list(zip(ds.t_obs, ds.r_obs, ds.delta_t, ds.delta_r))


def test_matches_aalen_johansen(small_uncensored):
    ds = small_uncensored
    inc = estimate_incidences(ds, unit_weights(ds), [(1, 1, 1)])[(1, 1, 1)]
    t = np.linspace(0, 8, 33)
    npt.assert_allclose(inc.total(t), aalen_johansen(records_of(ds), t), atol=1e-10)


@st.composite
def censored_rows(draw):
    n = draw(st.integers(2, 12))
    rows = []
    for _ in range(n):
        t = draw(st.sampled_from([0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0]))
        dr = draw(st.integers(0, 1))
        r = min(draw(st.sampled_from([0.25, 0.5, 1.0, 2.0, 3.0])), t) if dr else t
        rows.append((1, t, r, draw(st.integers(0, 1)), dr))
    return rows


@settings(max_examples=80, deadline=None)
@given(censored_rows())
def test_aalen_johansen_property(rows):
    ds = make_dataset(rows)
    inc = estimate_incidences(ds, unit_weights(ds), [(1, 1, 1)])[(1, 1, 1)]
    t = np.array([0.5, 1.0, 2.0, 3.0, 4.5, 5.0, 6.0])
    F1, F2, F3, F = inc.at(t)
    npt.assert_allclose(F, aalen_johansen(records_of(ds), t), atol=1e-10)
    npt.assert_array_equal(F, F1 + F3)
    assert np.all(F3 <= F2 + 1e-12)
    assert np.all(np.diff(F) >= -1e-12)
    assert np.all((F >= -1e-12) & (F <= 1 + 1e-12))


def textbook_km_variance(times_obs, events, t):
    """1 - KM with the Nelson-Aalen-based variance S(t)^2 sum d / Y^2."""
    out = []
    for tt in t:
        s, acc = 1.0, 0.0
        for u in sorted(set(times_obs[events == 1])):
            if u > tt:
                break
            y = np.sum(times_obs >= u)
            d = np.sum((times_obs == u) & (events == 1))
            s *= 1 - d / y
            acc += d / y ** 2
        out.append((1 - s, s ** 2 * acc))
    return np.array(out)


def test_single_transition_variance():
    t_obs = np.array([0.7, 1.2, 1.9, 2.4, 2.4, 3.3, 4.1, 4.8, 5.5, 6.0])
    ev = np.array([1, 0, 1, 1, 1, 0, 1, 0, 1, 0])
    ds = make_dataset([(1, t, t, d, 0) for t, d in zip(t_obs, ev)])
    inc = estimate_incidences(ds, unit_weights(ds), [(1, 1, 1)])[(1, 1, 1)]
    t = np.array([1.0, 2.4, 4.5, 5.9])
    ref = textbook_km_variance(t_obs, ev, t)
    npt.assert_allclose(inc.total(t), ref[:, 0], atol=1e-10)
    npt.assert_allclose(inc.variance(t), ref[:, 1], atol=1e-10)
    hz = fit_hazards(ds, unit_weights(ds), clocks=("semimarkov",))
    npt.assert_allclose(fit_incidence(hz, (1, 1, 1), 1.0).variance(t), ref[:, 1], atol=1e-10)


def test_no_terminal_after_intermediate():
    # Lambda3 = 0: F3 = 0 and F = F1 on both clocks
    rows = [(1, 3.0, 1.0, 0, 1), (1, 2.0, 2.0, 1, 0), (1, 4.0, 0.5, 0, 1), (1, 5.0, 5.0, 1, 0)]
    ds = make_dataset(rows)
    for clock in ("markov", "semimarkov"):
        inc = estimate_incidences(ds, unit_weights(ds), [(1, 1, 1)], clock)[(1, 1, 1)]
        F1, F2, F3, F = inc.at([1, 2, 3, 5])
        npt.assert_array_equal(F3, 0)
        npt.assert_array_equal(F, F1)


def test_wald_arithmetic():
    lo, hi = wald_interval(0.3, 0.02 ** 2)
    assert lo == pytest.approx(0.2608, abs=1e-4)
    assert hi == pytest.approx(0.3392, abs=1e-4)
    lo, hi = wald_interval([0.01, 0.99], [0.01, 0.01])
    npt.assert_array_equal(lo[0], 0.0)
    npt.assert_array_equal(hi[1], 1.0)
    lo, hi = wald_interval(0.3, 0.02 ** 2, scale="cloglog")
    assert lo < 0.3 < hi and 0 < lo
    with pytest.raises(ConfigurationError):
        wald_interval(0.3, 0.1, scale="logit")


def test_resolve_clock():
    assert resolve_clock("markov") == ("markov", 0.0)
    assert resolve_clock("semimarkov") == ("semimarkov", 1.0)
    assert resolve_clock("mixture", 0.4) == ("mixture", 0.4)
    for bad in (("markov", 0.5), ("mixture", None), ("mixture", 2.0), ("sojourn", None)):
        with pytest.raises(ConfigurationError):
            resolve_clock(*bad)


def test_mixture_has_no_analytic_variance(setting1_500):
    w = arm_weights(setting1_500, setting1_500.propensity)
    inc = estimate_incidences(setting1_500, w, [(1, 1, 1)], "mixture", 0.5)[(1, 1, 1)]
    with pytest.raises(ConfigurationError):
        inc.variance(2.0)


def test_truncation_raises(setting1_500):
    w = arm_weights(setting1_500, setting1_500.propensity)
    inc = estimate_incidences(setting1_500, w, [(1, 0, 1)])[(1, 0, 1)]
    with pytest.raises(TruncationError):
        inc.variance(inc.truncation_time + 1.0)
    assert inc.truncated(inc.truncation_time + 1.0)


@pytest.fixture(scope="module", params=["markov", "semimarkov"])
def spe(request, setting1_500):
    w = arm_weights(setting1_500, setting1_500.propensity)
    return spe_decomposition(setting1_500, w, request.param)


class TestSpe:
    def test_names(self, spe):
        assert tuple(s.name for s in spe) == SPE_NAMES

    def test_telescoping(self, spe):
        s = {x.name: x for x in spe}
        t = np.linspace(0, 10, 201)
        npt.assert_allclose(s["spe01"].at(t) + s["spe02"].at(t) + s["spe23"].at(t), s["total"].at(t), atol=1e-12)
        npt.assert_allclose(s["spe02"].at(t) + s["spe23"].at(t), s["spe03"].at(t), atol=1e-12)

    def test_curve_matches_at(self, spe):
        for s in spe:
            g = s.curve.jump_times
            npt.assert_allclose(s.curve(g), s.at(g), atol=1e-12)


def test_setting1_large_sample_accuracy(setting1_large):
    w = arm_weights(setting1_large, setting1_large.propensity)
    inc = estimate_incidences(setting1_large, w, [(1, 1, 1)])[(1, 1, 1)]
    assert abs(inc.total(2.0)[0] - oracle_incidence(1, (1, 1, 1), 2.0).value) < 0.02


@pytest.mark.slow
@pytest.mark.parametrize("setting,clock,a", [(2, "markov", (1, 0, 0)), (3, "semimarkov", (1, 0, 1))])
def test_variance_calibration(setting, clock, a):
    rep = run_study(StudyConfig(setting_id=setting, n=500, replications=500, seed=41, clock=clock,
                                vectors=(a,), times=(4.0,)))
    row = rep.row(a, 4.0)
    assert abs(row["emp_var"] / row["mean_var"] - 1) < 0.25


@pytest.mark.slow
def test_coverage_at_median_time():
    rep = run_study(StudyConfig(setting_id=1, n=500, replications=500, seed=42, vectors=((1, 1, 1),),
                                times=(3.0,)))
    # the median event time of F^(1,1,1) in Setting 1 is close to 3
    assert 0.4 < oracle_incidence(1, (1, 1, 1), 3.0).value < 0.6
    assert 0.92 <= rep.row((1, 1, 1), 3.0)["coverage"] <= 0.98


def test_clock_variances_agree():
    ds = simulate_setting(SimulationConfig(setting_id=1, n=10_000, seed=43))
    w = arm_weights(ds, propensity_scores(ds, "true"))
    vm = estimate_incidences(ds, w, [(1, 1, 1)], "markov")[(1, 1, 1)].variance(3.0)
    vs = estimate_incidences(ds, w, [(1, 1, 1)], "semimarkov")[(1, 1, 1)].variance(3.0)
    assert abs(vs / vm - 1) < 0.15
